#include "sevgrade/image_store.hpp"

#include "sevgrade/error.hpp"

namespace sevgrade {

ImageStore ImageStore::load(const Manifest& manifest) {
  ImageStore store;
  for (const auto& s : manifest.samples) {
    auto img = read_image(manifest.image_path(s));
    if (!img.square()) throw Error(ErrorKind::geometry, s.image_ref + " is not square");
    store.insert(s.id(), std::move(img));
  }
  return store;
}

void ImageStore::insert(const std::string& id, Image image) { images_[id] = std::move(image); }

const Image& ImageStore::original(const std::string& id) const {
  auto it = images_.find(id);
  if (it == images_.end()) throw Error(ErrorKind::io, "no image loaded for sample " + id);
  return it->second;
}

Image ImageStore::get(const std::string& id, int side) const {
  const auto& img = original(id);
  if (img.height == side && img.width == side) return img;
  return resize_bilinear(img, side, side);
}

}  // namespace sevgrade
