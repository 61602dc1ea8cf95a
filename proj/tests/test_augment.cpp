#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"
#include "sevgrade/augment.hpp"
#include "sevgrade/encoder.hpp"

using namespace sevgrade;

namespace {

Image gradient_image(int side) {
  Image img(side, side);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) img.at(r, c) = static_cast<float>((r * side + c) % 97) / 96.0f;
  return img;
}

FeatureGeometry geometry_for(std::vector<nn::LayerGeometry> layers, int side, int sw) {
  FeatureGeometry g;
  g.receptive_field = ReceptiveField(std::move(layers), side);
  g.feature_h = g.feature_w = g.receptive_field.feature_side();
  g.window = sw;
  return g;
}

}  // namespace

TEST_CASE("identity draws record no affected region") {
  SdaConfig cfg;
  cfg.t_norm = {TransformKind::identity};
  cfg.t_anom = {TransformKind::identity};
  SdaRng rng(1);
  const auto img = gradient_image(16);
  const auto pair = apply_sda(img, img, cfg, rng);
  CHECK(pair.affected_region == AffectedRegion::none());
  CHECK(pair.x_i_image == img);
  CHECK(pair.x_j_image == img);
}

TEST_CASE("cutpaste region is its destination rectangle") {
  SdaConfig cfg;
  cfg.t_anom = {TransformKind::cutpaste};
  SdaRng rng(2);
  const auto img = gradient_image(32);
  for (int i = 0; i < 50; ++i) {
    const auto pair = apply_sda(img, img, cfg, rng);
    const auto& p = std::get<CutPasteParams>(pair.applied_j.params);
    CHECK(pair.affected_region == AffectedRegion::of(p.destination));
    CHECK(p.source.inside(32));
    CHECK(p.destination.inside(32));
    CHECK_FALSE(p.destination.empty());
    const double area = p.destination.height() * p.destination.width() / (32.0 * 32.0);
    CHECK(area > 0.0);
    CHECK(area < 0.25);
    // pixels outside the destination are unchanged
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c) {
        const bool inside = r >= p.destination.r0 && r < p.destination.r1 && c >= p.destination.c0 && c < p.destination.c1;
        if (!inside) REQUIRE(pair.x_j_image.at(r, c) == img.at(r, c));
        else REQUIRE(pair.x_j_image.at(r, c) == img.at(r - p.destination.r0 + p.source.r0, c - p.destination.c0 + p.source.c0));
      }
  }
}

TEST_CASE("global strong transforms affect the whole image") {
  for (auto kind : {TransformKind::crop_resize, TransformKind::rotate, TransformKind::posterise}) {
    SdaConfig cfg;
    cfg.t_anom = {kind};
    SdaRng rng(3);
    const auto pair = apply_sda(gradient_image(16), gradient_image(16), cfg, rng);
    CHECK(pair.affected_region == AffectedRegion::whole());
  }
}

TEST_CASE("T_norm draws never set the affected region") {
  SdaConfig cfg;
  cfg.t_anom = {TransformKind::identity};
  SdaRng rng(4);
  const auto img = gradient_image(16);
  for (int i = 0; i < 40; ++i) {
    const auto pair = apply_sda(img, img, cfg, rng);
    CHECK(pair.affected_region == AffectedRegion::none());
    // weak transforms stay within a mild perturbation
    CHECK(mean_abs_difference(pair.x_i_image, img) < 0.1);
  }
}

TEST_CASE("SDA is deterministic under a fixed seed") {
  SdaConfig cfg;
  cfg.t_anom = {TransformKind::identity, TransformKind::crop_resize, TransformKind::cutpaste, TransformKind::rotate};
  const auto img = gradient_image(24);
  SdaRng a(99), b(99);
  for (int i = 0; i < 20; ++i) {
    const auto pa = apply_sda(img, img, cfg, a);
    const auto pb = apply_sda(img, img, cfg, b);
    CHECK(pa.x_i_image == pb.x_i_image);
    CHECK(pa.x_j_image == pb.x_j_image);
    CHECK(pa.affected_region == pb.affected_region);
  }
}

TEST_CASE("SDA rejects empty transform sets and unequal images") {
  SdaConfig cfg;
  cfg.t_anom.clear();
  SdaRng rng(0);
  const auto img = gradient_image(16);
  CHECK(testing::error_kind([&] { apply_sda(img, img, cfg, rng); }) == ErrorKind::config);
  CHECK(testing::error_kind([&] { apply_sda(img, gradient_image(8), SdaConfig{}, rng); }) == ErrorKind::geometry);
}

TEST_CASE("rotation draws stay strictly inside the open degree range") {
  SdaConfig cfg;
  SdaRng rng(5);
  for (int i = 0; i < 200; ++i) {
    const auto spec = draw_transform(TransformKind::rotate, 16, cfg, rng);
    const double d = std::get<RotateParams>(spec.params).degrees;
    CHECK(d > 90.0);
    CHECK(d < 270.0);
  }
}

TEST_CASE("posterise keeps the top bits only") {
  Image img(1, 4);
  img.pixels = {0.0f, 0.3f, 0.6f, 1.0f};
  const auto out = apply_transform(img, {TransformKind::posterise, PosteriseParams{2}});
  for (float v : out.pixels) {
    const int byte = static_cast<int>(std::lround(v * 255));
    CHECK((byte & 0x3F) == 0);
  }
}

TEST_CASE("label map: none is all zero, whole image is all one") {
  const auto geo = feature_geometry(EncoderConfig{"tiny", 5, true, 3, 12, {}});
  const auto none = patch_label_map(AffectedRegion::none(), geo);
  const auto whole = patch_label_map(AffectedRegion::whole(), geo);
  CHECK(none.rows == 4);
  CHECK(none.cols == 4);
  for (auto v : none.labels) CHECK(v == 0);
  for (auto v : whole.labels) CHECK(v == 1);
  CHECK(testing::error_kind([&] { patch_label_map(AffectedRegion::of(Rect{0, 0, 13, 4}), geo); }) == ErrorKind::geometry);
}

TEST_CASE("label map for the pixels feeding cell (2,2) of a 6x6 grid with sw=3") {
  // identity-like geometry: each feature cell sees exactly one input pixel
  const auto geo = geometry_for({{1, 1, 0}}, 6, 3);
  const auto map = patch_label_map(AffectedRegion::of(Rect{2, 2, 3, 3}), geo);
  REQUIRE(map.rows == 4);
  for (int z = 0; z < 4; ++z)
    for (int k = 0; k < 4; ++k) CHECK(map.at(z, k) == (z <= 2 && k <= 2 ? 1 : 0));
}

TEST_CASE("label map agrees with the brute-force oracle on random geometries") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> kern(1, 4), stride(1, 3), pad(0, 1), nlayers(1, 3), side_d(8, 30);
  int checked = 0;
  while (checked < 120) {
    std::vector<nn::LayerGeometry> layers;
    for (int i = nlayers(rng); i > 0; --i) {
      const int k = kern(rng);
      layers.push_back({k, stride(rng), std::min(pad(rng), k - 1)});
    }
    const int side = side_d(rng);
    int f = side;
    bool ok = true;
    for (const auto& g : layers) {
      f = (f + 2 * g.padding - g.kernel) / g.stride + 1;
      if (f < 1) ok = false;
    }
    if (!ok || f > 12) continue;
    const int sw = std::uniform_int_distribution<int>(1, std::min(3, f))(rng);
    const auto geo = geometry_for(layers, side, sw);
    REQUIRE(geo.feature_h == f);
    std::uniform_int_distribution<int> pos(0, side - 1);
    int a = pos(rng), b = pos(rng), c = pos(rng), d = pos(rng);
    const Rect rect{std::min(a, b), std::min(c, d), std::max(a, b) + 1, std::max(c, d) + 1};
    const auto got = patch_label_map(AffectedRegion::of(rect), geo);
    CHECK(got.labels == oracle::patch_labels(layers, side, rect, sw));
    ++checked;
  }
}

TEST_CASE("label map agrees with the oracle for every rectangle of a small image") {
  const int side = 8;
  const std::vector<nn::LayerGeometry> layers{{3, 1, 1}, {2, 2, 0}, {3, 1, 1}};
  const auto masks = oracle::pixel_cell_masks(layers, side);
  for (int sw = 1; sw <= 3; ++sw) {
    const auto geo = geometry_for(layers, side, sw);
    for (int r0 = 0; r0 < side; ++r0)
      for (int r1 = r0 + 1; r1 <= side; ++r1)
        for (int c0 = 0; c0 < side; ++c0)
          for (int c1 = c0 + 1; c1 <= side; ++c1) {
            const Rect rect{r0, c0, r1, c1};
            REQUIRE(patch_label_map(AffectedRegion::of(rect), geo).labels ==
                    oracle::patch_labels_from_masks(masks, side, geo.feature_h, rect, sw));
          }
  }
}
