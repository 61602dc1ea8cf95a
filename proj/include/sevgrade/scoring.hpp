#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sevgrade/trainer.hpp"

namespace sevgrade {

struct ScoreReport {
  std::string sample_id;
  std::optional<double> s_ssl;  // mean over ensemble members
  std::optional<double> s_sev;
  std::optional<double> s_oa;
  std::optional<double> s_comb;
  std::optional<std::vector<bool>> votes;

  bool operator==(const ScoreReport&) const = default;
};

/// Mean CD of every patch to the member's centre.
double score_ssl(const PatchEmbeddingMap& map, const TrainedStage& stage);
double score_ssl(const Image& image, const TrainedStage& stage);

struct Vote {
  bool is_anomaly = false;
  std::vector<bool> votes;
};

/// vote_k = scores[k] > m · cd_max[k]; anomaly only when every member agrees.
Vote vote(std::span<const double> scores, std::span<const double> cd_max, double m);

/// Stage-1 members vote on patch scores, DCRL stages on their distance score.
Vote vote_anomaly(const Image& image, std::span<const TrainedStage> members, double m);

/// Score a stage uses for voting: score_ssl for SSL members, score_dcrl for DCRL.
double member_score(const Image& image, const TrainedStage& stage);

/// |CD(e, C_norm) − CD(e, C_anom)|.
double score_dcrl(const Embedding& embedding, const TrainedStage& stage);
double score_dcrl(const Image& image, const TrainedStage& stage);

/// Piecewise severity score; s_oa is clamped to [0, 1] on the lower branch.
double combine_scores(double s_sev, double s_oa, double t, bool* clamped = nullptr);
double score_combined(const Image& image, const TrainedStage& sev, const TrainedStage& oa, double t);

/// Nearest-rank percentile: the ⌈q/100 · n⌉-th smallest value.
double nearest_rank_percentile(std::vector<double> values, double q);

double calibrate_threshold_t(const TrainedStage& sev, const std::vector<std::string>& train_normals,
                             const ImageStore& images, double q = 95.0);

struct ScoringInputs {
  std::span<const TrainedStage> members;  // may be empty
  const TrainedStage* sev = nullptr;
  const TrainedStage* oa = nullptr;
  double m = 1.0;  // vote margin reported with the members' votes
  double t = 0.0;
};

std::vector<ScoreReport> score_samples(const std::vector<std::string>& ids, const ImageStore& images,
                                       const ScoringInputs& inputs);

struct ScoreFile {
  std::map<std::string, std::string> metadata;  // run_id, m, t
  std::vector<ScoreReport> reports;
};

inline constexpr const char* kScoreHeader = "sample_id,s_ssl,s_sev,s_oa,s_comb,vote_count";

std::string format_scores(const ScoreFile& file);
ScoreFile parse_scores(const std::string& text);
void save_scores(const std::filesystem::path& path, const ScoreFile& file);
ScoreFile load_scores(const std::filesystem::path& path);

}  // namespace sevgrade
