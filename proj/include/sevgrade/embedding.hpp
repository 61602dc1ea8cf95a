#pragma once

#include <span>
#include <vector>

namespace sevgrade {

using Embedding = std::vector<double>;

/// √p × √p grid of c-dimensional patch embeddings, stored patch-major.
struct PatchEmbeddingMap {
  int rows = 0;
  int cols = 0;
  int dim = 0;
  std::vector<double> values;

  PatchEmbeddingMap() = default;
  PatchEmbeddingMap(int r, int c, int d)
      : rows(r), cols(c), dim(d), values(static_cast<std::size_t>(r) * c * d, 0.0) {}

  int patch_count() const { return rows * cols; }
  std::span<const double> patch(int z, int k) const {
    return {values.data() + (static_cast<std::size_t>(z) * cols + k) * dim, static_cast<std::size_t>(dim)};
  }
  std::span<double> patch(int z, int k) {
    return {values.data() + (static_cast<std::size_t>(z) * cols + k) * dim, static_cast<std::size_t>(dim)};
  }
  std::span<const double> patch(int index) const {
    return {values.data() + static_cast<std::size_t>(index) * dim, static_cast<std::size_t>(dim)};
  }
};

/// 1 − a·b / (‖a‖‖b‖). Throws on dimension mismatch or a zero-norm input.
double cosine_distance(std::span<const double> a, std::span<const double> b);

/// Norm floor used on training paths instead of failing on dead activations.
inline constexpr double kNormFloor = 1e-12;

struct CosineGrad {
  double distance = 0.0;
  std::vector<double> d_a;
  std::vector<double> d_b;
};

/// Cosine distance with norms floored at kNormFloor, plus its gradient with
/// respect to both inputs.
CosineGrad cosine_distance_with_grad(std::span<const double> a, std::span<const double> b);

double cosine_distance_floored(std::span<const double> a, std::span<const double> b);

/// Mean of per-coordinate cosine distances between two equally shaped maps.
double mean_patch_distance(const PatchEmbeddingMap& a, const PatchEmbeddingMap& b);

}  // namespace sevgrade
