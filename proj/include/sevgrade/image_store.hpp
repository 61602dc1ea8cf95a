#pragma once

#include <map>
#include <string>
#include <vector>

#include "sevgrade/dataset.hpp"
#include "sevgrade/image.hpp"

namespace sevgrade {

/// Decoded images keyed by sample id. Read-only after construction, so it can
/// be shared by concurrently training ensemble members.
class ImageStore {
 public:
  ImageStore() = default;

  /// Decodes every image referenced by the manifest.
  static ImageStore load(const Manifest& manifest);

  void insert(const std::string& id, Image image);
  bool contains(const std::string& id) const { return images_.count(id) > 0; }
  std::size_t size() const { return images_.size(); }

  const Image& original(const std::string& id) const;

  /// Image resampled to side×side when its stored size differs.
  Image get(const std::string& id, int side) const;

 private:
  std::map<std::string, Image> images_;
};

}  // namespace sevgrade
