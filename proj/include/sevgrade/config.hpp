#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sevgrade/augment.hpp"
#include "sevgrade/dataset.hpp"
#include "sevgrade/encoder.hpp"
#include "sevgrade/synthetic.hpp"
#include "sevgrade/trainer.hpp"

namespace sevgrade {

using Json = nlohmann::ordered_json;

struct DatasetConfig {
  /// Existing manifest; when empty the synthetic corpus is generated instead.
  std::filesystem::path manifest;
  SyntheticSpec synthetic;
  /// `sample_id,similarity` table consulted by the table provider.
  std::filesystem::path similarity_table;
};

struct Stage1Config {
  TrainConfig train;
  std::size_t pool_size = 150;
};

struct Stage3Config {
  TrainConfig train;           // train.n = normals in the first iteration
  int n_later = 150;           // normals from the second iteration on
  int iterations = 2;
};

enum class MarginMode { fixed, balanced };

struct PseudoLabelConfig {
  MarginMode margin_mode = MarginMode::fixed;
  double m_oa = 1.184;
  double m_sev = 3.122;
  /// Pseudo-label counts targeted by the balanced mode.
  std::size_t target_oa = 30;
  std::size_t target_sev = 10;
  std::string statement = "there is a screw present in the image";
  double percentile = 95.0;
  bool denoise = true;
  /// "table", "command" or "none".
  std::string provider = "table";
  /// Environment variable holding the similarity command for the command provider.
  std::string command_env = "SEVGRADE_SIMILARITY_CMD";
  std::filesystem::path cache;  // relative to the seed directory when not absolute
};

struct EvalConfig {
  Split split = Split::test;
  int severe_min_grade = 4;
  bool allow_undefined = true;
};

struct RunConfig {
  std::string profile = "desk";
  std::filesystem::path output_dir = "runs/desk";
  std::vector<std::uint64_t> seeds{0};
  DatasetConfig dataset;
  EncoderConfig stage1_encoder;
  EncoderConfig stage3_encoder;
  SdaConfig sda;
  Stage1Config stage1;
  Stage3Config stage3;
  PseudoLabelConfig pseudolabel;
  double t_percentile = 95.0;
  EvalConfig eval;
};

RunConfig desk_profile();
RunConfig paper_profile();

void validate(const RunConfig& config);

Json to_json(const EncoderConfig& c);
EncoderConfig encoder_from_json(const Json& j);
Json to_json(const TrainConfig& c);
TrainConfig train_from_json(const Json& j);
Json to_json(const SdaConfig& c);
SdaConfig sda_from_json(const Json& j);
Json to_json(const RunConfig& c);
RunConfig run_config_from_json(const Json& j);

/// Reads a config document: `profile` selects the base profile, every other
/// key is merged over it. Relative paths resolve against the file's directory.
RunConfig load_run_config(const std::filesystem::path& path);
/// Applies a JSON merge patch on top of a config.
RunConfig apply_overrides(const RunConfig& base, const Json& patch);

/// Stable hash of the canonical JSON form.
std::string config_hash(const RunConfig& config);

}  // namespace sevgrade
