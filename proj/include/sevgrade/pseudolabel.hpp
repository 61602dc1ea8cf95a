#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sevgrade/dataset.hpp"
#include "sevgrade/image_store.hpp"
#include "sevgrade/trainer.hpp"

namespace sevgrade {

inline constexpr const char* kDefaultStatement = "there is a screw present in the image";

/// Image-text similarity source used to filter false anomalies.
class SimilarityProvider {
 public:
  virtual ~SimilarityProvider() = default;
  virtual double similarity(const std::string& sample_id, const std::string& statement) = 0;
  virtual std::string provider_id() const = 0;
};

/// Fixed lookup table; the statement is ignored. Unknown ids are a provider error.
class TableSimilarityProvider : public SimilarityProvider {
 public:
  explicit TableSimilarityProvider(std::map<std::string, double> table, std::string id = "table");
  /// CSV with header `sample_id,similarity`.
  static TableSimilarityProvider load(const std::filesystem::path& path);

  double similarity(const std::string& sample_id, const std::string& statement) override;
  std::string provider_id() const override { return id_; }

 private:
  std::map<std::string, double> table_;
  std::string id_;
};

/// Runs `<command> <image path> <statement>` and parses one number from stdout.
class CommandSimilarityProvider : public SimilarityProvider {
 public:
  CommandSimilarityProvider(std::string command, const Manifest& manifest);

  double similarity(const std::string& sample_id, const std::string& statement) override;
  std::string provider_id() const override { return "command:" + command_; }

 private:
  std::string command_;
  std::map<std::string, std::filesystem::path> paths_;
};

/// Append-only disk cache of `sample_id,statement_hash,similarity` rows in
/// front of another provider. Later rows win on identical keys.
class CachingSimilarityProvider : public SimilarityProvider {
 public:
  CachingSimilarityProvider(std::unique_ptr<SimilarityProvider> inner, std::filesystem::path cache_path);

  double similarity(const std::string& sample_id, const std::string& statement) override;
  std::string provider_id() const override { return inner_->provider_id(); }
  std::size_t cached() const { return cache_.size(); }

 private:
  std::unique_ptr<SimilarityProvider> inner_;
  std::filesystem::path path_;
  std::map<std::pair<std::string, std::string>, double> cache_;
  std::mutex mu_;
};

std::string statement_hash(const std::string& statement);

struct PseudoLabelSet {
  std::vector<std::string> accepted;             // X_d
  std::vector<std::string> rejected_by_denoise;
  double m_used = 1.0;
  std::string statement;
  std::optional<double> cutoff;  // absent when denoising was skipped
  std::string provider_id;
};

/// Ids whose every member score exceeds m · cd_max. scores[i][k] belongs to
/// ids[i] and member k.
std::vector<std::string> pseudo_label_from_scores(const std::vector<std::string>& ids,
                                                  const std::vector<std::vector<double>>& scores,
                                                  std::span<const double> cd_max, double m);

/// Throws a leakage error when any unlabelled id is a member's training id.
void check_disjoint(const std::vector<std::string>& unlabelled, std::span<const TrainedStage> members);

std::vector<std::string> pseudo_label(const std::vector<std::string>& unlabelled,
                                      std::span<const TrainedStage> members, double m, const ImageStore& images);

/// Per-member scores of each sample (SSL or DCRL score by member mode).
std::vector<std::vector<double>> member_scores(const std::vector<std::string>& ids,
                                               std::span<const TrainedStage> members, const ImageStore& images);

/// Smallest m ≥ 1 that keeps at most target_count samples, placed midway
/// between the target-th and (target+1)-th largest min_k scores[i][k]/cd_max[k].
double balanced_margin(const std::vector<std::vector<double>>& scores, std::span<const double> cd_max,
                       std::size_t target_count);

/// Candidates whose similarity exceeds the q-th percentile over the training
/// normals are moved to rejected_by_denoise.
PseudoLabelSet denoise(const std::vector<std::string>& candidates, SimilarityProvider& provider,
                       const std::string& statement, const std::vector<std::string>& train_normals, double q = 95.0);

/// Manifest-compatible listing: `image_ref,y,status` plus `# key=value` metadata.
std::string format_pseudo_labels(const PseudoLabelSet& set);
PseudoLabelSet parse_pseudo_labels(const std::string& text);
void save_pseudo_labels(const std::filesystem::path& path, const PseudoLabelSet& set);
PseudoLabelSet load_pseudo_labels(const std::filesystem::path& path);

}  // namespace sevgrade
