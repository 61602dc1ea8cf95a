#include "sevgrade/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "sevgrade/error.hpp"
#include "text_util.hpp"

namespace sevgrade {

double score_ssl(const PatchEmbeddingMap& map, const TrainedStage& stage) {
  if (map.dim != static_cast<int>(stage.c_norm.size())) {
    throw Error(ErrorKind::geometry, "patch dimension " + std::to_string(map.dim) + " does not match centre dimension " +
                                         std::to_string(stage.c_norm.size()));
  }
  if (map.patch_count() == 0) throw Error(ErrorKind::geometry, "empty patch map");
  double s = 0.0;
  for (int p = 0; p < map.patch_count(); ++p) s += cosine_distance_floored(map.patch(p), stage.c_norm);
  return s / map.patch_count();
}

double score_ssl(const Image& image, const TrainedStage& stage) {
  if (stage.mode != TrainMode::ssl) throw Error(ErrorKind::config, "score_ssl needs a stage-1 member");
  return score_ssl(stage.encoder.encode_patches(image), stage);
}

Vote vote(std::span<const double> scores, std::span<const double> cd_max, double m) {
  if (scores.empty()) throw Error(ErrorKind::config, "voting needs at least one ensemble member");
  if (scores.size() != cd_max.size()) throw Error(ErrorKind::geometry, "scores and cd_max differ in length");
  if (!(m >= 1.0)) throw Error(ErrorKind::config, "margin m must be >= 1");
  Vote v;
  v.is_anomaly = true;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    const bool yes = scores[k] > m * cd_max[k];
    v.votes.push_back(yes);
    v.is_anomaly = v.is_anomaly && yes;
  }
  return v;
}

double member_score(const Image& image, const TrainedStage& stage) {
  return stage.mode == TrainMode::ssl ? score_ssl(image, stage) : score_dcrl(image, stage);
}

Vote vote_anomaly(const Image& image, std::span<const TrainedStage> members, double m) {
  if (members.empty()) throw Error(ErrorKind::config, "voting needs at least one ensemble member");
  std::vector<double> scores, cds;
  for (const auto& s : members) {
    scores.push_back(member_score(image, s));
    cds.push_back(s.cd_max);
  }
  return vote(scores, cds, m);
}

double score_dcrl(const Embedding& embedding, const TrainedStage& stage) {
  if (!stage.c_anom) throw Error(ErrorKind::missing_stage, "stage has no anomaly centre; DCRL training required");
  const double d1 = cosine_distance_floored(embedding, stage.c_norm);
  const double d2 = cosine_distance_floored(embedding, *stage.c_anom);
  return std::abs(d1 - d2);
}

double score_dcrl(const Image& image, const TrainedStage& stage) {
  if (!stage.c_anom) throw Error(ErrorKind::missing_stage, "stage has no anomaly centre; DCRL training required");
  return score_dcrl(stage.encoder.encode_global(image), stage);
}

double combine_scores(double s_sev, double s_oa, double t, bool* clamped) {
  if (!(t >= 0.0)) throw Error(ErrorKind::config, "threshold t must be non-negative");
  if (clamped) *clamped = false;
  if (s_sev > t) return 1.0 + s_sev;
  const double c = std::clamp(s_oa, 0.0, 1.0);
  if (c != s_oa && clamped) *clamped = true;
  return c;
}

double score_combined(const Image& image, const TrainedStage& sev, const TrainedStage& oa, double t) {
  const double s_sev = score_dcrl(image, sev);
  if (s_sev > t) return combine_scores(s_sev, 0.0, t);
  bool clamped = false;
  const double s_oa = score_dcrl(image, oa);
  const double out = combine_scores(s_sev, s_oa, t, &clamped);
  if (clamped) spdlog::info("s_oa {:.6f} clamped to {:.6f}", s_oa, out);
  return out;
}

double nearest_rank_percentile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorKind::config, "percentile of an empty list");
  if (!(q > 0.0 && q <= 100.0)) throw Error(ErrorKind::config, "percentile must lie in (0, 100]");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

double calibrate_threshold_t(const TrainedStage& sev, const std::vector<std::string>& train_normals,
                             const ImageStore& images, double q) {
  if (train_normals.empty()) throw Error(ErrorKind::config, "threshold calibration needs training normals");
  std::vector<double> scores;
  for (const auto& id : train_normals) scores.push_back(score_dcrl(images.get(id, sev.encoder.config().input_side), sev));
  return nearest_rank_percentile(std::move(scores), q);
}

std::vector<ScoreReport> score_samples(const std::vector<std::string>& ids, const ImageStore& images,
                                       const ScoringInputs& in) {
  if ((in.sev == nullptr) != (in.oa == nullptr)) {
    throw Error(ErrorKind::missing_stage, "combined scoring needs both the sev and the oa stage");
  }
  std::vector<ScoreReport> out;
  int clamps = 0;
  for (const auto& id : ids) {
    ScoreReport r;
    r.sample_id = id;
    if (!in.members.empty()) {
      std::vector<double> scores, cds;
      for (const auto& mbr : in.members) {
        scores.push_back(member_score(images.get(id, mbr.encoder.config().input_side), mbr));
        cds.push_back(mbr.cd_max);
      }
      double mean = 0.0;
      for (double s : scores) mean += s;
      if (in.members.front().mode == TrainMode::ssl) r.s_ssl = mean / static_cast<double>(scores.size());
      r.votes = vote(scores, cds, in.m).votes;
    }
    if (in.sev) {
      r.s_sev = score_dcrl(images.get(id, in.sev->encoder.config().input_side), *in.sev);
      r.s_oa = score_dcrl(images.get(id, in.oa->encoder.config().input_side), *in.oa);
      bool clamped = false;
      r.s_comb = combine_scores(*r.s_sev, *r.s_oa, in.t, &clamped);
      clamps += clamped ? 1 : 0;
    }
    out.push_back(std::move(r));
  }
  if (clamps > 0) spdlog::info("s_oa clamped to [0, 1] for {} of {} samples", clamps, ids.size());
  return out;
}

namespace {

std::string field(const std::optional<double>& v) { return v ? detail::format_double(*v) : std::string(); }

std::optional<double> parse_field(std::string_view s, std::size_t row, const char* name) {
  if (detail::trim(s).empty()) return std::nullopt;
  auto v = detail::parse_double(s);
  if (!v || !std::isfinite(*v)) throw ParseError(row, std::string("invalid ") + name + " '" + std::string(s) + "'");
  return v;
}

}  // namespace

std::string format_scores(const ScoreFile& file) {
  std::ostringstream os;
  for (const auto& [k, v] : file.metadata) os << "# " << k << '=' << v << '\n';
  os << kScoreHeader << '\n';
  for (const auto& r : file.reports) {
    os << r.sample_id << ',' << field(r.s_ssl) << ',' << field(r.s_sev) << ',' << field(r.s_oa) << ','
       << field(r.s_comb) << ',';
    if (r.votes) os << std::count(r.votes->begin(), r.votes->end(), true);
    os << '\n';
  }
  return os.str();
}

ScoreFile parse_scores(const std::string& text) {
  ScoreFile file;
  bool header = false;
  std::size_t row = 0;
  for (auto line : detail::split_lines(text)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    if (line.front() == '#') {
      auto body = detail::trim(line.substr(1));
      const auto eq = body.find('=');
      if (eq != std::string_view::npos) {
        file.metadata[std::string(detail::trim(body.substr(0, eq)))] = std::string(detail::trim(body.substr(eq + 1)));
      }
      continue;
    }
    if (!header) {
      if (detail::trim(line) != kScoreHeader) throw ParseError(row, "expected header '" + std::string(kScoreHeader) + "'");
      header = true;
      continue;
    }
    const auto f = detail::split_fields(line);
    if (f.size() != 6) throw ParseError(row, "expected 6 fields, found " + std::to_string(f.size()));
    ScoreReport r;
    r.sample_id = std::string(f[0]);
    if (r.sample_id.empty()) throw ParseError(row, "empty sample_id");
    r.s_ssl = parse_field(f[1], row, "s_ssl");
    r.s_sev = parse_field(f[2], row, "s_sev");
    r.s_oa = parse_field(f[3], row, "s_oa");
    r.s_comb = parse_field(f[4], row, "s_comb");
    if (!detail::trim(f[5]).empty()) {
      // Only the count survives serialisation.
      const auto n = detail::parse_integer(f[5]);
      if (!n || *n < 0) throw ParseError(row, "invalid vote_count");
      r.votes = std::vector<bool>(static_cast<std::size_t>(*n), true);
    }
    file.reports.push_back(std::move(r));
  }
  if (!header) throw ParseError(row, "score file has no header");
  return file;
}

void save_scores(const std::filesystem::path& path, const ScoreFile& file) {
  detail::write_text_atomic(path, format_scores(file));
}

ScoreFile load_scores(const std::filesystem::path& path) { return parse_scores(detail::read_text_file(path)); }

}  // namespace sevgrade
