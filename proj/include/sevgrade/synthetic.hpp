#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sevgrade/dataset.hpp"
#include "sevgrade/image.hpp"

namespace sevgrade {

/// Smallest image side the generator accepts; below this the corruption
/// windows collapse to a few pixels.
inline constexpr int kMinSyntheticSide = 16;

struct SyntheticSpec {
  int n_per_grade = 20;
  std::vector<int> grades{0, 1, 2, 3, 4};
  int image_side = 64;
  std::uint64_t rng_seed = 0;
  /// Fraction of images receiving a metal-implant artefact unrelated to grade.
  double implant_fraction = 0.05;
  std::array<double, 3> split_fractions{0.6, 0.1, 0.3};
};

/// In-memory corpus. `artifact_similarity` plays the role of a vision-language
/// similarity to an implant statement: higher for images carrying an implant.
struct SyntheticCorpus {
  Manifest manifest;
  std::vector<Image> images;  // parallel to manifest.samples
  std::vector<bool> has_implant;
  std::map<std::string, double> artifact_similarity;
};

/// Grade-0 images share one textured knee template perturbed per patient;
/// grade g > 0 receives g localized corruptions whose extent grows with g.
SyntheticCorpus generate_synthetic_images(const SyntheticSpec& spec);

/// Writes images as 8-bit PGM under dir/images, the manifest as
/// dir/manifest.csv and the artefact table as dir/artifact_similarity.csv.
Manifest generate_synthetic_corpus(const SyntheticSpec& spec, const std::filesystem::path& dir);

}  // namespace sevgrade
