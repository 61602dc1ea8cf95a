#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"
#include "sevgrade/trainer.hpp"

using namespace sevgrade;

namespace {

const testing::SmallCorpus& corpus() {
  static const auto c = testing::small_corpus(8, 32, 3);
  return c;
}

TrainConfig ssl_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.mode = TrainMode::ssl;
  cfg.n = 6;
  cfg.k = 1;
  cfg.lr = 3e-3;
  cfg.weight_decay = 1e-4;
  cfg.max_epochs = 60;
  cfg.rng_seed = seed;
  return cfg;
}

const EncoderConfig kSslEncoder{"tiny", 5, true, 1, 32, {}};
const EncoderConfig kDcrlEncoder{"tiny", 8, false, 1, 32, {}};

std::vector<std::string> first(std::vector<std::string> v, std::size_t n) {
  v.resize(std::min(n, v.size()));
  return v;
}

}  // namespace

TEST_CASE("BCE on a hand-fixed 2x2 grid") {
  const std::vector<double> yhat{0.1, 0.2, 0.7, 0.9}, y{0, 0, 1, 1};
  const double want = -0.25 * (std::log(0.9) + std::log(0.8) + std::log(0.7) + std::log(0.9));
  CHECK(std::abs(bce_loss(yhat, y).loss - want) < 1e-12);
}

TEST_CASE("BCE with all-zero labels is the mean of -log(1 - clamped prediction)") {
  const std::vector<double> yhat{0.0, 0.3, 1.2, 2.0}, y(4, 0.0);
  double want = 0;
  for (double p : yhat) want -= std::log(1 - std::clamp(p, kBceEpsilon, 1 - kBceEpsilon));
  want /= 4;
  const auto r = bce_loss(yhat, y);
  CHECK(r.loss == doctest::Approx(want).epsilon(1e-12));
  CHECK(std::isfinite(r.loss));
  CHECK(r.d_yhat[0] == 0.0);
  CHECK(r.d_yhat[3] == 0.0);
  CHECK(r.d_yhat[1] == doctest::Approx(1.0 / 0.7 / 4));
}

TEST_CASE("BCE gradient matches central differences away from the clamp") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int t = 0; t < 30; ++t) {
    std::vector<double> yhat(5), y(5);
    for (auto& v : yhat) v = u(rng);
    for (auto& v : y) v = static_cast<double>(rng() % 2);
    const auto r = bce_loss(yhat, y);
    for (std::size_t i = 0; i < yhat.size(); ++i) {
      auto hi = yhat, lo = yhat;
      hi[i] += 1e-6;
      lo[i] -= 1e-6;
      CHECK(r.d_yhat[i] == doctest::Approx((oracle::bce(hi, y, kBceEpsilon) - oracle::bce(lo, y, kBceEpsilon)) / 2e-6).epsilon(1e-5));
    }
  }
}

TEST_CASE("pair loss equals BCE of per-patch cosine predictions") {
  const auto& c = corpus();
  const auto ids = c.ids_of_grade(0);
  const auto enc = Encoder::create(EncoderConfig{"tiny", 5, true, 2, 32, {}}, 4);
  const auto a = c.store.get(ids[0], 32), b = c.store.get(ids[1], 32);
  const auto labels = patch_label_map(AffectedRegion::of(Rect{4, 4, 12, 20}), enc.geometry());
  const auto r = ssl_pair_loss(enc, a, b, labels);
  const auto ma = enc.encode_patches(a), mb = enc.encode_patches(b);
  std::vector<double> yhat, y;
  for (int z = 0; z < ma.rows; ++z)
    for (int k = 0; k < ma.cols; ++k) {
      yhat.push_back(oracle::cosine_distance(oracle::patch_vector(ma, z, k), oracle::patch_vector(mb, z, k)));
      y.push_back(labels.at(z, k));
    }
  CHECK(std::abs(r.loss - oracle::bce(yhat, y, kBceEpsilon)) < 1e-6);
}

TEST_CASE("centre examples") {
  PatchEmbeddingMap m(2, 2, 3);
  for (int p = 0; p < 4; ++p)
    for (int d = 0; d < 3; ++d) m.values[p * 3 + d] = d + 1.0;
  const auto c = compute_centre(std::span<const PatchEmbeddingMap>(&m, 1));
  CHECK(c == std::vector<double>{1, 2, 3});
  const std::vector<Embedding> e{{0, 2}, {2, 0}};
  CHECK(compute_centre(std::span<const Embedding>(e)) == std::vector<double>{1, 1});
  CHECK(testing::error_kind([] { compute_centre(std::span<const Embedding>()); }).has_value());
}

TEST_CASE("centre of 3 samples x 4 patches is the flat mean of 12 vectors") {
  std::mt19937_64 rng(5);
  std::vector<PatchEmbeddingMap> maps;
  for (int i = 0; i < 3; ++i) maps.push_back(oracle::random_map(rng, 2, 2, 5));
  const auto got = compute_centre(std::span<const PatchEmbeddingMap>(maps));
  const auto want = oracle::centre(maps);
  for (std::size_t d = 0; d < got.size(); ++d) CHECK(got[d] == doctest::Approx(want[d]).epsilon(1e-12));
}

TEST_CASE("cd_max examples") {
  const std::vector<Embedding> same{{1, 2}, {1, 2}, {2, 4}};
  CHECK(compute_cd_max(std::span<const Embedding>(same)) == doctest::Approx(0.0));
  const std::vector<Embedding> three{{1, 0}, {0, 1}, {-1, 0}};
  CHECK(compute_cd_max(std::span<const Embedding>(three)) == doctest::Approx(2.0));
  const std::vector<Embedding> one{{1, 0}};
  CHECK(testing::error_kind([&] { compute_cd_max(std::span<const Embedding>(one)); }).has_value());
  std::mt19937_64 rng(6);
  std::vector<PatchEmbeddingMap> maps;
  for (int i = 0; i < 5; ++i) maps.push_back(oracle::random_map(rng, 3, 3, 4));
  CHECK(compute_cd_max(std::span<const PatchEmbeddingMap>(maps)) == doctest::Approx(oracle::cd_max(maps)).epsilon(1e-12));
}

TEST_CASE("plateau detector") {
  SUBCASE("steady improvement keeps going") {
    PlateauDetector p({3, 1e-3}, false);
    for (int i = 0; i < 20; ++i) CHECK_FALSE(p.update(10.0 - i));
  }
  SUBCASE("flat loss stops once the window fills") {
    PlateauDetector p({3, 1e-3}, false);
    CHECK_FALSE(p.update(1.0));
    CHECK_FALSE(p.update(1.0));
    CHECK_FALSE(p.update(1.0));
    CHECK(p.update(1.0));
  }
  SUBCASE("maximising watches for increases") {
    PlateauDetector p({2, 1e-3}, true);
    CHECK_FALSE(p.update(0.1));
    CHECK_FALSE(p.update(0.2));
    CHECK_FALSE(p.update(0.3));
    CHECK_FALSE(p.update(0.4));
    CHECK_FALSE(p.update(0.2));  // 0.4 is still inside the window
    CHECK(p.update(0.2));
  }
  SUBCASE("gains below rel_tol count as a plateau") {
    PlateauDetector p({2, 0.1}, false);
    p.update(1.0);
    p.update(0.95);
    CHECK(p.update(0.95));
  }
}

TEST_CASE("derive_seed separates streams deterministically") {
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 10; ++s)
    for (std::uint64_t k = 0; k < 10; ++k) seen.insert(derive_seed(s, k));
  CHECK(seen.size() == 100);
}

TEST_CASE("training config validation") {
  auto cfg = ssl_config(0);
  cfg.lr = 0;
  CHECK(testing::error_kind([&] { validate(cfg); }) == ErrorKind::config);
  cfg = ssl_config(0);
  cfg.plateau.window_epochs = 0;
  CHECK(testing::error_kind([&] { validate(cfg); }) == ErrorKind::config);
}

TEST_CASE("SSL loss decreases and early stopping fires on the synthetic corpus") {
  const auto pool = first(corpus().ids_of_grade(0), 6);
  for (std::uint64_t seed : {0, 1, 2}) {
    auto cfg = ssl_config(seed);
    cfg.plateau = {20, 1e-3};
    cfg.max_epochs = 300;
    const auto stage = train_ssl_member(pool, cfg, kSslEncoder, SdaConfig{}, corpus().store, seed);
    REQUIRE(stage.loss_curve.size() >= 20);
    const auto& l = stage.loss_curve;
    const double leading = std::accumulate(l.begin(), l.begin() + 10, 0.0) / 10;
    const double trailing = std::accumulate(l.end() - 10, l.end(), 0.0) / 10;
    CHECK(trailing < leading);
    CHECK(stage.stopped_early);
    CHECK(static_cast<int>(l.size()) < cfg.max_epochs);
    CHECK(stage.c_norm.size() == 32);
    CHECK(stage.cd_max > 0);
    CHECK(stage.train_ids == pool);
  }
}

TEST_CASE("SSL training is bit-for-bit reproducible") {
  const auto pool = first(corpus().ids_of_grade(0), 5);
  auto cfg = ssl_config(7);
  cfg.max_epochs = 4;
  const auto a = train_ssl_member(pool, cfg, kSslEncoder, SdaConfig{}, corpus().store, 7);
  const auto b = train_ssl_member(pool, cfg, kSslEncoder, SdaConfig{}, corpus().store, 7);
  CHECK(a.loss_curve == b.loss_curve);
  CHECK(a.c_norm == b.c_norm);
  CHECK(a.cd_max == b.cd_max);
}

TEST_CASE("ensemble members train on distinct subsets, independent of worker count") {
  const auto pool = corpus().ids_of_grade(0);
  auto cfg = ssl_config(3);
  cfg.n = 4;
  cfg.k = 3;
  cfg.max_epochs = 2;
  const auto serial = train_ssl_ensemble(pool, cfg, kSslEncoder, SdaConfig{}, corpus().store);
  cfg.workers = 3;
  const auto parallel = train_ssl_ensemble(pool, cfg, kSslEncoder, SdaConfig{}, corpus().store);
  REQUIRE(serial.size() == 3);
  std::set<std::vector<std::string>> subsets;
  for (std::size_t k = 0; k < serial.size(); ++k) {
    CHECK(serial[k].train_ids.size() == 4);
    subsets.insert(serial[k].train_ids);
    CHECK(serial[k].loss_curve == parallel[k].loss_curve);
    CHECK(serial[k].train_ids == parallel[k].train_ids);
  }
  CHECK(subsets.size() == 3);
  cfg.n = 100;
  CHECK(testing::error_kind([&] { train_ssl_ensemble(pool, cfg, kSslEncoder, SdaConfig{}, corpus().store); }) ==
        ErrorKind::capacity);
}

TEST_CASE("DCRL centre distance is non-decreasing over the first plateau window") {
  const auto normals = first(corpus().ids_of_grade(0), 6);
  std::vector<std::string> anoms = first(corpus().ids_of_grade(4), 3);
  for (auto id : first(corpus().ids_of_grade(3), 3)) anoms.push_back(id);
  TrainConfig cfg;
  cfg.mode = TrainMode::dcrl;
  cfg.n = 6;
  cfg.lr = 1e-4;
  cfg.weight_decay = 1e-4;
  cfg.max_epochs = 100;
  cfg.plateau = {5, 1e-3};
  cfg.rng_seed = 2;
  int observed = 0;
  const auto stage = train_dcrl(normals, anoms, cfg, kDcrlEncoder, corpus().store,
                                [&](int epoch, const TrainedStage& s) {
                                  ++observed;
                                  CHECK(static_cast<int>(s.centre_distance_curve.size()) == epoch);
                                });
  const auto& cd = stage.centre_distance_curve;
  REQUIRE(cd.size() >= 5);
  for (std::size_t e = 1; e < 5; ++e) CHECK(cd[e] >= cd[e - 1]);
  CHECK(cd.back() > cd.front());
  CHECK(observed == static_cast<int>(cd.size()));
  CHECK(stage.c_anom.has_value());
  CHECK(stage.anomaly_ids == anoms);
  CHECK(stage.stopped_early);
}

TEST_CASE("DCRL input validation") {
  const auto normals = first(corpus().ids_of_grade(0), 3);
  TrainConfig cfg;
  cfg.mode = TrainMode::dcrl;
  cfg.max_epochs = 1;
  CHECK(testing::error_kind([&] { train_dcrl(normals, {}, cfg, kDcrlEncoder, corpus().store); }) == ErrorKind::config);
  CHECK(testing::error_kind([&] { train_dcrl(normals, normals, cfg, kSslEncoder, corpus().store); }) == ErrorKind::config);
}
