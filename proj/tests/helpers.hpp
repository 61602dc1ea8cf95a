#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sevgrade/error.hpp"
#include "sevgrade/image_store.hpp"
#include "sevgrade/synthetic.hpp"

#include <unistd.h>

namespace testing {

// Runs f and reports the kind of the sevgrade::Error it throws, if any.
inline std::optional<sevgrade::ErrorKind> error_kind(const std::function<void()>& f) {
  try {
    f();
  } catch (const sevgrade::Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

struct SmallCorpus {
  sevgrade::SyntheticCorpus corpus;
  sevgrade::ImageStore store;

  std::vector<std::string> ids_of_grade(int grade) const {
    std::vector<std::string> out;
    for (const auto& s : corpus.manifest.samples)
      if (s.kl_grade == grade) out.push_back(s.id());
    return out;
  }
};

inline SmallCorpus small_corpus(int n_per_grade = 6, int side = 32, std::uint64_t seed = 3) {
  sevgrade::SyntheticSpec spec;
  spec.n_per_grade = n_per_grade;
  spec.image_side = side;
  spec.rng_seed = seed;
  SmallCorpus c{sevgrade::generate_synthetic_images(spec), {}};
  for (std::size_t i = 0; i < c.corpus.images.size(); ++i)
    c.store.insert(c.corpus.manifest.samples[i].id(), c.corpus.images[i]);
  return c;
}

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("sevgrade_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace testing
