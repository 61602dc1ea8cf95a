#include "sevgrade/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sevgrade/error.hpp"
#include "sevgrade/geometry.hpp"

namespace sevgrade {
namespace {

void require_same_dim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::geometry, "embedding dimensions differ: " + std::to_string(a.size()) +
                                         " vs " + std::to_string(b.size()));
  }
}

struct Dots {
  double ab = 0, aa = 0, bb = 0;
};

Dots dots(std::span<const double> a, std::span<const double> b) {
  Dots d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d.ab += a[i] * b[i];
    d.aa += a[i] * a[i];
    d.bb += b[i] * b[i];
  }
  return d;
}

}  // namespace

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a, b);
  const auto d = dots(a, b);
  if (d.aa == 0.0 || d.bb == 0.0) throw Error(ErrorKind::numeric, "cosine distance of a zero-norm vector");
  const double cos = d.ab / (std::sqrt(d.aa) * std::sqrt(d.bb));
  return 1.0 - std::clamp(cos, -1.0, 1.0);
}

double cosine_distance_floored(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a, b);
  const auto d = dots(a, b);
  const double na = std::max(std::sqrt(d.aa), kNormFloor);
  const double nb = std::max(std::sqrt(d.bb), kNormFloor);
  return 1.0 - std::clamp(d.ab / (na * nb), -1.0, 1.0);
}

CosineGrad cosine_distance_with_grad(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a, b);
  const auto d = dots(a, b);
  const double ra = std::sqrt(d.aa), rb = std::sqrt(d.bb);
  const bool a_floored = ra < kNormFloor, b_floored = rb < kNormFloor;
  const double na = a_floored ? kNormFloor : ra;
  const double nb = b_floored ? kNormFloor : rb;
  const double cos = d.ab / (na * nb);
  CosineGrad g;
  g.distance = 1.0 - cos;
  g.d_a.resize(a.size());
  g.d_b.resize(b.size());
  // d(1 - cos)/da = -(b / (na nb) - cos · a / na²); the floored norm is constant
  for (std::size_t i = 0; i < a.size(); ++i) {
    g.d_a[i] = -(b[i] / (na * nb) - (a_floored ? 0.0 : cos * a[i] / (na * na)));
    g.d_b[i] = -(a[i] / (na * nb) - (b_floored ? 0.0 : cos * b[i] / (nb * nb)));
  }
  return g;
}

double mean_patch_distance(const PatchEmbeddingMap& a, const PatchEmbeddingMap& b) {
  if (a.rows != b.rows || a.cols != b.cols || a.dim != b.dim) {
    throw Error(ErrorKind::geometry, "patch maps have different shapes");
  }
  double s = 0.0;
  for (int i = 0; i < a.patch_count(); ++i) s += cosine_distance_floored(a.patch(i), b.patch(i));
  return s / a.patch_count();
}

ReceptiveField::ReceptiveField(std::vector<nn::LayerGeometry> layers, int input_side)
    : layers_(std::move(layers)), input_side_(input_side) {
  sides_.push_back(input_side);
  for (const auto& g : layers_) {
    const int next = (sides_.back() + 2 * g.padding - g.kernel) / g.stride + 1;
    if (next <= 0) throw Error(ErrorKind::geometry, "input side too small for the encoder");
    sides_.push_back(next);
  }
}

std::vector<bool> ReceptiveField::pixels_for_cells(int first, int last) const {
  std::vector<bool> mask(static_cast<std::size_t>(sides_.back()), false);
  for (int c = std::max(first, 0); c <= std::min(last, sides_.back() - 1); ++c) mask[static_cast<std::size_t>(c)] = true;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const auto& g = layers_[i];
    std::vector<bool> below(static_cast<std::size_t>(sides_[i]), false);
    for (int o = 0; o < static_cast<int>(mask.size()); ++o) {
      if (!mask[static_cast<std::size_t>(o)]) continue;
      for (int t = 0; t < g.kernel; ++t) {
        const int x = o * g.stride - g.padding + t;
        if (x >= 0 && x < sides_[i]) below[static_cast<std::size_t>(x)] = true;
      }
    }
    mask = std::move(below);
  }
  return mask;
}

Interval ReceptiveField::pixel_hull(int first, int last) const {
  const auto mask = pixels_for_cells(first, last);
  Interval iv{0, -1};
  for (int x = 0; x < static_cast<int>(mask.size()); ++x) {
    if (!mask[static_cast<std::size_t>(x)]) continue;
    if (iv.empty()) iv.lo = x;
    iv.hi = x;
  }
  return iv;
}

}  // namespace sevgrade
