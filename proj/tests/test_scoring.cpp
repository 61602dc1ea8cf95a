#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"
#include "sevgrade/scoring.hpp"

using namespace sevgrade;

namespace {

TrainedStage ssl_stage(Embedding centre, double cd_max = 0.5) {
  TrainedStage s;
  s.mode = TrainMode::ssl;
  s.c_norm = std::move(centre);
  s.cd_max = cd_max;
  return s;
}

TrainedStage dcrl_stage(Embedding norm, Embedding anom) {
  TrainedStage s;
  s.mode = TrainMode::dcrl;
  s.c_norm = std::move(norm);
  s.c_anom = std::move(anom);
  return s;
}

}  // namespace

TEST_CASE("score_ssl examples") {
  const auto stage = ssl_stage({1, 2, 3});
  PatchEmbeddingMap same(2, 3, 3);
  for (int p = 0; p < 6; ++p)
    for (int d = 0; d < 3; ++d) same.values[p * 3 + d] = d + 1.0;
  CHECK(score_ssl(same, stage) == doctest::Approx(0.0).scale(1));

  // patches at CD 0.2 and 0.4 from the centre (1, 0)
  const auto at = [](double cd) { return std::vector<double>{1 - cd, std::sqrt(1 - (1 - cd) * (1 - cd))}; };
  PatchEmbeddingMap two(1, 2, 2);
  const auto a = at(0.2), b = at(0.4);
  two.values = {a[0], a[1], b[0], b[1]};
  CHECK(score_ssl(two, ssl_stage({1, 0})) == doctest::Approx(0.3));

  PatchEmbeddingMap wrong(1, 1, 2);
  wrong.values = {1, 1};
  CHECK(testing::error_kind([&] { score_ssl(wrong, stage); }) == ErrorKind::geometry);
}

TEST_CASE("score_ssl matches the per-patch loop oracle") {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 100; ++t) {
    const int rows = 1 + static_cast<int>(rng() % 12), dim = 1 + static_cast<int>(rng() % 16);
    const auto map = oracle::random_map(rng, rows, rows, dim);
    const auto centre = oracle::random_vector(rng, dim);
    const double got = score_ssl(map, ssl_stage(centre));
    REQUIRE(std::abs(got - oracle::score_ssl(map, centre)) < 1e-6);
    CHECK(got >= 0.0);
    CHECK(got <= 2.0);
  }
}

TEST_CASE("score_dcrl examples") {
  CHECK(score_dcrl(Embedding{1, 0}, dcrl_stage({1, 0}, {-1, 0})) == doctest::Approx(2.0));
  CHECK(score_dcrl(Embedding{1, 1}, dcrl_stage({1, 0}, {0, 1})) == doctest::Approx(0.0).scale(1));
  CHECK(testing::error_kind([] { score_dcrl(Embedding{1, 0}, ssl_stage({1, 0})); }) == ErrorKind::missing_stage);
  std::mt19937_64 rng(32);
  for (int t = 0; t < 100; ++t) {
    const int dim = 1 + static_cast<int>(rng() % 16);
    const auto e = oracle::random_vector(rng, dim), n = oracle::random_vector(rng, dim), a = oracle::random_vector(rng, dim);
    const double got = score_dcrl(e, dcrl_stage(n, a));
    REQUIRE(std::abs(got - oracle::score_dcrl(e, n, a)) < 1e-6);
    CHECK(got <= 2.0 + 1e-12);
  }
}

TEST_CASE("combined score branches") {
  CHECK(combine_scores(0.5, 0.2, 0.3) == doctest::Approx(1.5));
  CHECK(combine_scores(0.1, 0.2, 0.3) == doctest::Approx(0.2));
  CHECK(combine_scores(0.3, 0.2, 0.3) == doctest::Approx(0.2));
  bool clamped = false;
  CHECK(combine_scores(0.1, 1.7, 0.3, &clamped) == 1.0);
  CHECK(clamped);
  CHECK(testing::error_kind([] { combine_scores(0.1, 0.2, -1.0); }) == ErrorKind::config);
}

TEST_CASE("combined score range and branch consistency") {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int i = 0; i < 1000; ++i) {
    const double sev = u(rng), oa = u(rng), t = u(rng);
    const double out = combine_scores(sev, oa, t);
    CHECK((out > 1.0) == (sev > t));
    CHECK(out == oracle::combined(sev, oa, t));
    CHECK(((out >= 0.0 && out <= 1.0) || (out > 1.0 && out <= 3.0)));
  }
}

TEST_CASE("votes require every member") {
  const std::vector<double> cds{0.5 / 1.0, 0.5, 0.5};
  CHECK(vote(std::vector<double>{0.9, 0.8, 0.95}, cds, 1.0).is_anomaly);
  const auto one_no = vote(std::vector<double>{0.9, 0.4, 0.95}, cds, 1.0);
  CHECK_FALSE(one_no.is_anomaly);
  CHECK(one_no.votes == std::vector<bool>{true, false, true});
  const auto none = vote(std::vector<double>{0.1, 0.2, 0.3}, cds, 1.0);
  CHECK_FALSE(none.is_anomaly);
  CHECK(none.votes == std::vector<bool>{false, false, false});
  CHECK(testing::error_kind([] { vote(std::vector<double>{}, std::vector<double>{}, 1.0); }) == ErrorKind::config);
  CHECK(testing::error_kind([&] { vote(std::vector<double>{0.9, 0.8, 0.95}, cds, 0.5); }) == ErrorKind::config);
}

TEST_CASE("voting is monotone in m and no more permissive than any member") {
  std::mt19937_64 rng(34);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> s(4), c(4);
    for (auto& v : s) v = u(rng);
    for (auto& v : c) v = u(rng) * 0.5;
    const double m1 = 1.0 + u(rng), m2 = m1 + u(rng);
    const auto lo = vote(s, c, m1), hi = vote(s, c, m2);
    if (hi.is_anomaly) CHECK(lo.is_anomaly);
    for (std::size_t k = 0; k < s.size(); ++k)
      if (lo.is_anomaly) CHECK(lo.votes[k]);
  }
}

TEST_CASE("nearest-rank percentile") {
  std::vector<double> v;
  for (int i = 0; i < 100; ++i) v.push_back(i / 100.0);
  std::shuffle(v.begin(), v.end(), std::mt19937_64(1));
  CHECK(nearest_rank_percentile(v, 95) == doctest::Approx(0.94));
  CHECK(nearest_rank_percentile(std::vector<double>(7, 0.3), 95) == 0.3);
  CHECK(nearest_rank_percentile({0.42}, 95) == 0.42);
  CHECK(nearest_rank_percentile({1, 2, 3, 4}, 50) == 2);
  CHECK(nearest_rank_percentile({1, 2, 3, 4}, 100) == 4);
  CHECK(testing::error_kind([] { nearest_rank_percentile({}, 95); }) == ErrorKind::config);
}

TEST_CASE("score_combined on images follows the direct evaluation") {
  const auto c = testing::small_corpus(2, 16, 8);
  const EncoderConfig enc{"tiny", 8, false, 1, 16, {}};
  TrainedStage sev = dcrl_stage({}, {}), oa = dcrl_stage({}, {});
  sev.encoder = Encoder::create(enc, 1);
  oa.encoder = Encoder::create(enc, 2);
  std::mt19937_64 rng(35);
  sev.c_norm = oracle::random_vector(rng, 32);
  sev.c_anom = oracle::random_vector(rng, 32);
  oa.c_norm = oracle::random_vector(rng, 32);
  oa.c_anom = oracle::random_vector(rng, 32);
  for (const auto& s : c.corpus.manifest.samples) {
    const auto img = c.store.get(s.id(), 16);
    const auto es = sev.encoder.encode_global(img), eo = oa.encoder.encode_global(img);
    const double s_sev = oracle::score_dcrl(es, sev.c_norm, *sev.c_anom);
    const double s_oa = oracle::score_dcrl(eo, oa.c_norm, *oa.c_anom);
    for (double t : {0.0, s_sev, 0.5, 2.0}) {
      CHECK(std::abs(score_combined(img, sev, oa, t) - oracle::combined(s_sev, s_oa, t)) < 1e-6);
    }
  }
}

TEST_CASE("score files round-trip") {
  ScoreFile f;
  f.metadata = {{"run_id", "r"}, {"t", "0.25"}};
  f.reports.push_back({"a", 0.1, 0.2, 0.3, 0.3, std::vector<bool>{true, true, false}});
  f.reports.push_back({"b", std::nullopt, 0.9, 0.1, 1.9, std::nullopt});
  const auto text = format_scores(f);
  const auto back = parse_scores(text);
  CHECK(back.metadata == f.metadata);
  REQUIRE(back.reports.size() == 2);
  CHECK(back.reports[0].s_ssl == 0.1);
  CHECK(back.reports[0].votes->size() == 2);
  CHECK(!back.reports[1].s_ssl.has_value());
  CHECK(format_scores(back).size() == text.size());
  CHECK(testing::error_kind([] { parse_scores("x,y\n"); }) == ErrorKind::parse);
  CHECK(testing::error_kind([] { parse_scores(std::string(kScoreHeader) + "\na,nan,,,,\n"); }) == ErrorKind::parse);
}

TEST_CASE("scoring needs both stage-3 models together") {
  const auto c = testing::small_corpus(1, 16, 1);
  TrainedStage sev = dcrl_stage({1}, {1});
  ScoringInputs in;
  in.sev = &sev;
  CHECK(testing::error_kind([&] { score_samples({}, c.store, in); }) == ErrorKind::missing_stage);
}
