#pragma once

#include <vector>

#include "sevgrade/nn.hpp"

namespace sevgrade {

/// Inclusive pixel or cell range.
struct Interval {
  int lo = 0;
  int hi = -1;
  bool empty() const { return hi < lo; }
  bool intersects(const Interval& o) const { return !empty() && !o.empty() && lo <= o.hi && o.lo <= hi; }
  bool operator==(const Interval&) const = default;
};

/// Maps feature cells back to input pixels by composing the kernel, stride
/// and padding of every layer in front of the feature map.
class ReceptiveField {
 public:
  ReceptiveField() = default;
  ReceptiveField(std::vector<nn::LayerGeometry> layers, int input_side);

  int input_side() const { return input_side_; }
  int feature_side() const { return sides_.back(); }

  /// Per-axis mask of input pixels that feed any feature cell in
  /// first..last. Padding positions are dropped at every level, so the mask
  /// stays exact when a stride exceeds its kernel.
  std::vector<bool> pixels_for_cells(int first, int last) const;

  /// Convex hull of pixels_for_cells.
  Interval pixel_hull(int first, int last) const;

 private:
  std::vector<nn::LayerGeometry> layers_;
  std::vector<int> sides_;  // sides_[i] = input side of layer i; back() = feature side
  int input_side_ = 0;
};

struct FeatureGeometry {
  int feature_h = 0;
  int feature_w = 0;
  int window = 1;
  ReceptiveField receptive_field;

  /// √p: number of stride-1 window positions per axis.
  int grid_rows() const { return feature_h - window + 1; }
  int grid_cols() const { return feature_w - window + 1; }
};

}  // namespace sevgrade
