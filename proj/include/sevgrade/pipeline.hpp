#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sevgrade/config.hpp"
#include "sevgrade/eval.hpp"
#include "sevgrade/image_store.hpp"
#include "sevgrade/pseudolabel.hpp"
#include "sevgrade/scoring.hpp"

namespace sevgrade {

enum class Target { sev, oa };
const char* to_string(Target target);
Target parse_target(const std::string& name);

/// Where every artefact of a run lives.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path data_dir() const { return root / "data"; }
  std::filesystem::path seed_dir(std::uint64_t seed) const { return root / ("seed_" + std::to_string(seed)); }
  std::filesystem::path stage1_dir(std::uint64_t seed) const { return seed_dir(seed) / "stage1"; }
  std::filesystem::path pool_file(std::uint64_t seed) const { return stage1_dir(seed) / "pool.txt"; }
  std::filesystem::path pseudo_label_file(std::uint64_t seed, Target t, int iter) const {
    return seed_dir(seed) / "pseudolabels" / (std::string(to_string(t)) + "_iter_" + std::to_string(iter) + ".csv");
  }
  std::filesystem::path stage3_dir(std::uint64_t seed, Target t, int iter) const {
    return seed_dir(seed) / ("stage3_" + std::string(to_string(t))) / ("iter_" + std::to_string(iter));
  }
  std::filesystem::path scores_file(std::uint64_t seed) const { return seed_dir(seed) / "scores.csv"; }
  std::filesystem::path metrics_file(std::uint64_t seed) const { return seed_dir(seed) / "metrics.json"; }
};

/// Manifest plus decoded images for a configured run.
struct RunData {
  Manifest manifest;
  ImageStore images;
};

/// Version string recorded in provenance files.
std::string code_version();

/// Writes provenance.json (command, config hash, seed, code version) into dir.
void write_provenance(const std::filesystem::path& dir, const std::string& command, const RunConfig& config,
                      std::uint64_t seed);

/// Generates the synthetic corpus (or validates the configured manifest) and
/// returns the manifest in use.
Manifest cmd_prepare(const RunConfig& config);

/// Loads the prepared manifest and its images; fails when prepare has not run.
RunData load_run_data(const RunConfig& config);

std::vector<TrainedStage> cmd_train_stage1(const RunConfig& config, std::uint64_t seed, const RunData& data);

/// X_u: training-split samples outside the stage-1 pool.
std::vector<std::string> unlabelled_pool(const RunConfig& config, std::uint64_t seed, const RunData& data);
std::vector<std::string> labelled_pool(const RunConfig& config, std::uint64_t seed);

/// Pseudo-labels for one stage-3 target and iteration. Iteration 1 votes with
/// the stage-1 ensemble, later iterations with the previous stage-3 model.
PseudoLabelSet cmd_pseudo_label(const RunConfig& config, std::uint64_t seed, Target target, int iter,
                                const RunData& data);

TrainedStage cmd_train_stage3(const RunConfig& config, std::uint64_t seed, Target target, int iter,
                              const RunData& data, const EpochObserver& observer = {});

/// Latest completed stage-3 iteration for a target, or 0.
int latest_iteration(const RunConfig& config, std::uint64_t seed, Target target);

ScoreFile cmd_score(const RunConfig& config, std::uint64_t seed, const RunData& data);

std::vector<MetricsReport> cmd_evaluate(const RunConfig& config, std::uint64_t seed, const RunData& data);

struct RunSummary {
  std::vector<std::pair<std::string, std::vector<MetricsReport>>> rows;  // label -> per-seed
  std::string table;
  std::string json;
};

/// Every stage for every seed, then the aggregated report under output_dir.
RunSummary cmd_run_all(const RunConfig& config);

/// Named experiment preset; writes its report under output_dir/ablation_<preset>.
RunSummary cmd_ablation(const RunConfig& config, const std::string& preset);

}  // namespace sevgrade
