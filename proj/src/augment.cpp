#include "sevgrade/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sevgrade/error.hpp"

namespace sevgrade {
namespace {

double uniform(SdaRng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

TransformKind pick(const std::vector<TransformKind>& kinds, const std::vector<double>& weights, SdaRng& rng) {
  if (weights.empty()) {
    return kinds[std::uniform_int_distribution<std::size_t>(0, kinds.size() - 1)(rng)];
  }
  std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
  return kinds[dist(rng)];
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

Image adjust_sharpness(const Image& img, double factor) {
  // 3x3 smoothing kernel [[1,1,1],[1,5,1],[1,1,1]] / 13; border pixels untouched
  Image blurred = img;
  for (int r = 1; r + 1 < img.height; ++r) {
    for (int c = 1; c + 1 < img.width; ++c) {
      double s = 0.0;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) s += img.at(r + dr, c + dc) * ((dr == 0 && dc == 0) ? 5.0 : 1.0);
      blurred.at(r, c) = static_cast<float>(s / 13.0);
    }
  }
  Image out(img.height, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    out.pixels[i] = clamp01(factor * img.pixels[i] + (1.0 - factor) * blurred.pixels[i]);
  }
  return out;
}

Image rotate(const Image& img, double degrees) {
  Image out(img.height, img.width);
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cr = (img.height - 1) / 2.0, cc = (img.width - 1) / 2.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      // inverse mapping from output to source coordinates
      const double dy = r - cr, dx = c - cc;
      const double sy = cs * dy - sn * dx + cr;
      const double sx = sn * dy + cs * dx + cc;
      out.at(r, c) = sample_bilinear(img, sy, sx);
    }
  }
  return out;
}

Rect draw_cutpaste_rect(int side, const SdaConfig& cfg, SdaRng& rng) {
  const double area = uniform(rng, cfg.cutpaste_area_min, cfg.cutpaste_area_max) * side * side;
  // log-uniform aspect ratio, as in the original CutPaste recipe
  const double aspect = std::exp(uniform(rng, std::log(cfg.cutpaste_aspect_min), std::log(cfg.cutpaste_aspect_max)));
  const int h = std::min(side, static_cast<int>(std::lround(std::sqrt(area * aspect))));
  const int w = std::min(side, static_cast<int>(std::lround(std::sqrt(area / aspect))));
  if (h <= 0 || w <= 0) return Rect{};
  const int r0 = std::uniform_int_distribution<int>(0, side - h)(rng);
  const int c0 = std::uniform_int_distribution<int>(0, side - w)(rng);
  return Rect{r0, c0, r0 + h, c0 + w};
}

}  // namespace

const char* to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::identity: return "identity";
    case TransformKind::jitter: return "jitter";
    case TransformKind::sharpness: return "sharpness";
    case TransformKind::brightness: return "brightness";
    case TransformKind::crop_resize: return "crop_resize";
    case TransformKind::cutpaste: return "cutpaste";
    case TransformKind::posterise: return "posterise";
    case TransformKind::rotate: return "rotate";
  }
  return "identity";
}

TransformKind parse_transform(const std::string& name) {
  for (auto k : {TransformKind::identity, TransformKind::jitter, TransformKind::sharpness, TransformKind::brightness,
                 TransformKind::crop_resize, TransformKind::cutpaste, TransformKind::posterise, TransformKind::rotate}) {
    if (name == to_string(k)) return k;
  }
  throw Error(ErrorKind::config, "unknown transform '" + name + "'");
}

void validate(const SdaConfig& cfg) {
  if (cfg.t_anom.empty()) throw Error(ErrorKind::config, "T_anom must list at least one transform");
  if (cfg.t_norm.empty()) throw Error(ErrorKind::config, "T_norm must list at least one transform");
  auto check_weights = [](const std::vector<double>& w, std::size_t n, const char* what) {
    if (w.empty()) return;
    if (w.size() != n) throw Error(ErrorKind::config, std::string(what) + " weights do not match transform list");
    double total = 0.0;
    for (double x : w) {
      if (x < 0) throw Error(ErrorKind::config, std::string(what) + " weights must be non-negative");
      total += x;
    }
    if (total <= 0) throw Error(ErrorKind::config, std::string(what) + " weights sum to zero");
  };
  check_weights(cfg.t_norm_weights, cfg.t_norm.size(), "T_norm");
  check_weights(cfg.t_anom_weights, cfg.t_anom.size(), "T_anom");
  if (!(cfg.cutpaste_area_min > 0 && cfg.cutpaste_area_min <= cfg.cutpaste_area_max && cfg.cutpaste_area_max < 1)) {
    throw Error(ErrorKind::config, "cutpaste area range must satisfy 0 < min <= max < 1");
  }
  if (!(cfg.cutpaste_aspect_min > 0 && cfg.cutpaste_aspect_min <= cfg.cutpaste_aspect_max)) {
    throw Error(ErrorKind::config, "cutpaste aspect range invalid");
  }
  if (!(cfg.crop_area_min > 0 && cfg.crop_area_min <= cfg.crop_area_max && cfg.crop_area_max <= 1)) {
    throw Error(ErrorKind::config, "crop area range must satisfy 0 < min <= max <= 1");
  }
  if (cfg.posterise_bits < 1 || cfg.posterise_bits > 8) throw Error(ErrorKind::config, "posterise bits outside 1..8");
}

TransformSpec draw_transform(TransformKind kind, int side, const SdaConfig& cfg, SdaRng& rng) {
  TransformSpec spec{kind, std::monostate{}};
  switch (kind) {
    case TransformKind::identity: break;
    case TransformKind::jitter:
      spec.params = JitterParams{uniform(rng, 1 - cfg.jitter_strength, 1 + cfg.jitter_strength)};
      break;
    case TransformKind::sharpness:
      spec.params = SharpnessParams{uniform(rng, 1 - cfg.sharpness_strength, 1 + cfg.sharpness_strength)};
      break;
    case TransformKind::brightness:
      spec.params = BrightnessParams{uniform(rng, 1 - cfg.brightness_strength, 1 + cfg.brightness_strength)};
      break;
    case TransformKind::crop_resize: {
      const double frac = uniform(rng, cfg.crop_area_min, cfg.crop_area_max);
      const int s = std::clamp(static_cast<int>(std::lround(side * std::sqrt(frac))), 1, side);
      const int r0 = std::uniform_int_distribution<int>(0, side - s)(rng);
      const int c0 = std::uniform_int_distribution<int>(0, side - s)(rng);
      spec.params = CropParams{Rect{r0, c0, r0 + s, c0 + s}};
      break;
    }
    case TransformKind::cutpaste: {
      while (true) {
        Rect src = draw_cutpaste_rect(side, cfg, rng);
        if (src.empty()) continue;  // degenerate draw
        const int r0 = std::uniform_int_distribution<int>(0, side - src.height())(rng);
        const int c0 = std::uniform_int_distribution<int>(0, side - src.width())(rng);
        Rect dst{r0, c0, r0 + src.height(), c0 + src.width()};
        if (dst == src) continue;
        spec.params = CutPasteParams{src, dst};
        break;
      }
      break;
    }
    case TransformKind::posterise:
      spec.params = PosteriseParams{cfg.posterise_bits};
      break;
    case TransformKind::rotate: {
      double deg = uniform(rng, cfg.rotate_min_degrees, cfg.rotate_max_degrees);
      if (deg <= cfg.rotate_min_degrees) deg = std::nextafter(cfg.rotate_min_degrees, cfg.rotate_max_degrees);
      spec.params = RotateParams{deg};
      break;
    }
  }
  return spec;
}

Image apply_transform(const Image& img, const TransformSpec& spec) {
  switch (spec.kind) {
    case TransformKind::identity: return img;
    case TransformKind::jitter: {
      const double f = std::get<JitterParams>(spec.params).contrast;
      double mean = 0.0;
      for (float v : img.pixels) mean += v;
      mean /= static_cast<double>(std::max<std::size_t>(img.pixels.size(), 1));
      Image out = img;
      for (auto& v : out.pixels) v = clamp01(mean + f * (v - mean));
      return out;
    }
    case TransformKind::sharpness: return adjust_sharpness(img, std::get<SharpnessParams>(spec.params).factor);
    case TransformKind::brightness: {
      const double f = std::get<BrightnessParams>(spec.params).factor;
      Image out = img;
      for (auto& v : out.pixels) v = clamp01(v * f);
      return out;
    }
    case TransformKind::crop_resize: {
      const Rect r = std::get<CropParams>(spec.params).crop;
      if (r.empty() || !r.inside(img.height)) throw Error(ErrorKind::geometry, "crop rectangle outside image");
      Image crop(r.height(), r.width());
      for (int y = 0; y < r.height(); ++y)
        for (int x = 0; x < r.width(); ++x) crop.at(y, x) = img.at(r.r0 + y, r.c0 + x);
      return resize_bilinear(crop, img.height, img.width);
    }
    case TransformKind::cutpaste: {
      const auto& p = std::get<CutPasteParams>(spec.params);
      if (!p.source.inside(img.height) || !p.destination.inside(img.height) ||
          p.source.height() != p.destination.height() || p.source.width() != p.destination.width()) {
        throw Error(ErrorKind::geometry, "cutpaste rectangles invalid for image");
      }
      Image out = img;
      for (int y = 0; y < p.source.height(); ++y)
        for (int x = 0; x < p.source.width(); ++x)
          out.at(p.destination.r0 + y, p.destination.c0 + x) = img.at(p.source.r0 + y, p.source.c0 + x);
      return out;
    }
    case TransformKind::posterise: {
      const int bits = std::get<PosteriseParams>(spec.params).bits;
      const auto mask = static_cast<std::uint8_t>(0xFF << (8 - bits));
      Image out = img;
      for (auto& v : out.pixels) v = (to_byte(v) & mask) / 255.0f;
      return out;
    }
    case TransformKind::rotate: return rotate(img, std::get<RotateParams>(spec.params).degrees);
  }
  return img;
}

AffectedRegion affected_region(const TransformSpec& spec) {
  switch (spec.kind) {
    case TransformKind::identity: return AffectedRegion::none();
    case TransformKind::cutpaste: return AffectedRegion::of(std::get<CutPasteParams>(spec.params).destination);
    default: return AffectedRegion::whole();
  }
}

AugmentedPair apply_sda(const Image& x_i, const Image& x_j, const SdaConfig& config, SdaRng& rng) {
  validate(config);
  if (!x_i.square() || !x_j.square() || x_i.height != x_j.height) {
    throw Error(ErrorKind::geometry, "SDA expects equal-sized square images");
  }
  const int side = x_i.height;
  AugmentedPair pair;
  pair.applied_i = draw_transform(pick(config.t_norm, config.t_norm_weights, rng), side, config, rng);
  pair.applied_j = draw_transform(pick(config.t_anom, config.t_anom_weights, rng), side, config, rng);
  pair.x_i_image = apply_transform(x_i, pair.applied_i);
  pair.x_j_image = apply_transform(x_j, pair.applied_j);
  pair.affected_region = affected_region(pair.applied_j);
  return pair;
}

PatchLabelMap patch_label_map(const AffectedRegion& region, const FeatureGeometry& geo) {
  PatchLabelMap map;
  map.rows = geo.grid_rows();
  map.cols = geo.grid_cols();
  if (map.rows < 1 || map.cols < 1) throw Error(ErrorKind::geometry, "window exceeds feature map");
  map.labels.assign(static_cast<std::size_t>(map.rows) * map.cols, 0);
  switch (region.kind) {
    case AffectedRegion::Kind::none: return map;
    case AffectedRegion::Kind::whole_image:
      std::fill(map.labels.begin(), map.labels.end(), 1);
      return map;
    case AffectedRegion::Kind::rect: break;
  }
  const Rect& r = region.rect;
  const int side = geo.receptive_field.input_side();
  if (r.empty() || !r.inside(side)) throw Error(ErrorKind::geometry, "affected region outside image bounds");
  // receptive fields are separable, so overlap decomposes into row and column tests
  auto overlaps = [&](int first, int lo, int hi) {
    const auto mask = geo.receptive_field.pixels_for_cells(first, first + geo.window - 1);
    for (int x = lo; x < hi; ++x)
      if (mask[static_cast<std::size_t>(x)]) return true;
    return false;
  };
  std::vector<bool> row_hit(static_cast<std::size_t>(map.rows)), col_hit(static_cast<std::size_t>(map.cols));
  for (int z = 0; z < map.rows; ++z) row_hit[static_cast<std::size_t>(z)] = overlaps(z, r.r0, r.r1);
  for (int k = 0; k < map.cols; ++k) col_hit[static_cast<std::size_t>(k)] = overlaps(k, r.c0, r.c1);
  for (int z = 0; z < map.rows; ++z)
    for (int k = 0; k < map.cols; ++k)
      map.labels[static_cast<std::size_t>(z) * map.cols + k] = row_hit[static_cast<std::size_t>(z)] && col_hit[static_cast<std::size_t>(k)];
  return map;
}

}  // namespace sevgrade
