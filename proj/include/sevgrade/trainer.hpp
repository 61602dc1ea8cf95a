#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sevgrade/augment.hpp"
#include "sevgrade/embedding.hpp"
#include "sevgrade/encoder.hpp"
#include "sevgrade/image_store.hpp"

namespace sevgrade {

enum class TrainMode { ssl, dcrl };

const char* to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& name);

struct PlateauConfig {
  int window_epochs = 5;
  double rel_tol = 1e-3;
};

struct TrainConfig {
  TrainMode mode = TrainMode::ssl;
  int n = 30;  // samples per ensemble member (SSL) or normals drawn (DCRL)
  int k = 10;  // ensemble members (SSL only)
  double lr = 1e-6;
  double weight_decay = 0.1;
  int batch_size = 1;
  int max_epochs = 100;
  PlateauConfig plateau;
  std::uint64_t rng_seed = 0;
  int workers = 1;  // concurrent ensemble members
};

void validate(const TrainConfig& config);

struct TrainedStage {
  TrainMode mode = TrainMode::ssl;
  Encoder encoder;  // weights + encoder config
  Embedding c_norm;
  std::optional<Embedding> c_anom;
  double cd_max = 0.0;
  std::vector<std::string> train_ids;
  std::vector<std::string> anomaly_ids;
  std::vector<double> loss_curve;
  std::vector<double> centre_distance_curve;  // DCRL only, one entry per epoch
  bool stopped_early = false;
};

/// Stops when the best value of the last window fails to improve on the best
/// value seen before it by more than rel_tol (relative).
class PlateauDetector {
 public:
  PlateauDetector(PlateauConfig config, bool maximise) : config_(config), maximise_(maximise) {}

  /// Records one epoch; true when training should stop.
  bool update(double value);
  const std::vector<double>& history() const { return history_; }

 private:
  PlateauConfig config_;
  bool maximise_;
  std::vector<double> history_;
};

inline constexpr double kBceEpsilon = 1e-7;

struct BceResult {
  double loss = 0.0;
  std::vector<double> d_yhat;  // zero where the prediction was clamped
};

/// Mean binary cross entropy with predictions clamped to [ε, 1−ε].
BceResult bce_loss(std::span<const double> yhat, std::span<const double> y);

/// Per-patch cosine predictions of one SSL pair and the resulting loss.
struct PairLoss {
  std::vector<double> yhat;
  std::vector<double> labels;
  double loss = 0.0;
};

PairLoss ssl_pair_loss(const Encoder& encoder, const Image& x_i, const Image& x_j, const PatchLabelMap& labels);

/// Mean over every patch vector of every map (patch mode).
Embedding compute_centre(std::span<const PatchEmbeddingMap> maps);
/// Mean of whole-image embeddings (DCRL mode).
Embedding compute_centre(std::span<const Embedding> embeddings);

/// Largest pairwise distance; patch maps use the mean per-coordinate CD.
double compute_cd_max(std::span<const PatchEmbeddingMap> maps);
double compute_cd_max(std::span<const Embedding> embeddings);

/// Deterministic per-stream seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

TrainedStage train_ssl_member(const std::vector<std::string>& train_ids, const TrainConfig& cfg,
                              const EncoderConfig& enc, const SdaConfig& sda, const ImageStore& images,
                              std::uint64_t seed);

/// K members, each on its own seeded N-subset of the pool.
std::vector<TrainedStage> train_ssl_ensemble(const std::vector<std::string>& pool, const TrainConfig& cfg,
                                             const EncoderConfig& enc, const SdaConfig& sda,
                                             const ImageStore& images);

/// Called after every DCRL epoch with a snapshot whose centres and cd_max
/// reflect the current weights.
using EpochObserver = std::function<void(int epoch, const TrainedStage& snapshot)>;

TrainedStage train_dcrl(const std::vector<std::string>& normals, const std::vector<std::string>& pseudo_anoms,
                        const TrainConfig& cfg, const EncoderConfig& enc, const ImageStore& images,
                        const EpochObserver& observer = {});

/// Patch maps or global embeddings of samples under a stage's encoder.
std::vector<PatchEmbeddingMap> encode_patch_maps(const Encoder& encoder, const std::vector<std::string>& ids,
                                                 const ImageStore& images);
std::vector<Embedding> encode_globals(const Encoder& encoder, const std::vector<std::string>& ids,
                                      const ImageStore& images);

}  // namespace sevgrade
