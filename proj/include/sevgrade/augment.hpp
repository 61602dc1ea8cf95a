#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "sevgrade/geometry.hpp"
#include "sevgrade/image.hpp"

namespace sevgrade {

enum class TransformKind { identity, jitter, sharpness, brightness, crop_resize, cutpaste, posterise, rotate };

const char* to_string(TransformKind kind);
TransformKind parse_transform(const std::string& name);

/// Half-open pixel rectangle [r0, r1) × [c0, c1).
struct Rect {
  int r0 = 0, c0 = 0, r1 = 0, c1 = 0;
  int height() const { return r1 - r0; }
  int width() const { return c1 - c0; }
  bool empty() const { return r1 <= r0 || c1 <= c0; }
  bool inside(int side) const { return r0 >= 0 && c0 >= 0 && r1 <= side && c1 <= side; }
  bool operator==(const Rect&) const = default;
};

struct JitterParams { double contrast = 1.0; };
struct SharpnessParams { double factor = 1.0; };
struct BrightnessParams { double factor = 1.0; };
struct CropParams { Rect crop; };
struct CutPasteParams { Rect source; Rect destination; };
struct PosteriseParams { int bits = 2; };
struct RotateParams { double degrees = 180.0; };

using TransformParams = std::variant<std::monostate, JitterParams, SharpnessParams, BrightnessParams,
                                     CropParams, CutPasteParams, PosteriseParams, RotateParams>;

struct TransformSpec {
  TransformKind kind = TransformKind::identity;
  TransformParams params;
};

struct AffectedRegion {
  enum class Kind { none, whole_image, rect };
  Kind kind = Kind::none;
  Rect rect;

  static AffectedRegion none() { return {}; }
  static AffectedRegion whole() { return {Kind::whole_image, {}}; }
  static AffectedRegion of(Rect r) { return {Kind::rect, r}; }
  bool operator==(const AffectedRegion&) const = default;
};

struct AugmentedPair {
  Image x_i_image;
  Image x_j_image;
  TransformSpec applied_i;
  TransformSpec applied_j;
  AffectedRegion affected_region;
};

struct SdaConfig {
  std::vector<TransformKind> t_norm{TransformKind::identity, TransformKind::jitter, TransformKind::sharpness,
                                    TransformKind::brightness};
  std::vector<TransformKind> t_anom{TransformKind::identity, TransformKind::crop_resize, TransformKind::cutpaste};
  /// Selection weights parallel to t_norm / t_anom; empty means uniform.
  std::vector<double> t_norm_weights;
  std::vector<double> t_anom_weights;

  double jitter_strength = 0.1;      // contrast factor in [1-s, 1+s]
  double sharpness_strength = 0.1;   // sharpness factor in [1-s, 1+s]
  double brightness_strength = 0.1;  // brightness factor in [1-s, 1+s]
  double crop_area_min = 0.6;        // square crop, fraction of image area
  double crop_area_max = 0.9;
  double cutpaste_area_min = 0.02;
  double cutpaste_area_max = 0.15;
  double cutpaste_aspect_min = 0.3;
  double cutpaste_aspect_max = 3.3;
  int posterise_bits = 2;
  double rotate_min_degrees = 90.0;   // exclusive
  double rotate_max_degrees = 270.0;  // exclusive
};

void validate(const SdaConfig& config);

using SdaRng = std::mt19937_64;

/// Draws concrete parameters for one transform of the given kind.
TransformSpec draw_transform(TransformKind kind, int side, const SdaConfig& config, SdaRng& rng);

Image apply_transform(const Image& image, const TransformSpec& spec);

/// Input region whose pixels a transform changes: none for identity, the
/// destination rectangle for CutPaste, the whole image for everything else.
/// Only the paired sample's transform feeds the pair's region.
AffectedRegion affected_region(const TransformSpec& spec);

/// x_i gets a draw from T_norm, x_j a draw from T_anom.
AugmentedPair apply_sda(const Image& x_i, const Image& x_j, const SdaConfig& config, SdaRng& rng);

struct PatchLabelMap {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> labels;  // row-major, 0 or 1

  std::uint8_t at(int z, int k) const { return labels[static_cast<std::size_t>(z) * cols + k]; }
  bool operator==(const PatchLabelMap&) const = default;
};

/// Per-patch ground truth: a patch is anomalous iff the union of input-space
/// receptive fields of the feature cells in its window overlaps the region by
/// at least one pixel.
PatchLabelMap patch_label_map(const AffectedRegion& region, const FeatureGeometry& geometry);

}  // namespace sevgrade
