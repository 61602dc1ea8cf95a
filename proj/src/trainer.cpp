#include "sevgrade/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "sevgrade/error.hpp"

namespace sevgrade {

const char* to_string(TrainMode mode) { return mode == TrainMode::ssl ? "ssl" : "dcrl"; }

TrainMode parse_train_mode(const std::string& name) {
  if (name == "ssl") return TrainMode::ssl;
  if (name == "dcrl") return TrainMode::dcrl;
  throw Error(ErrorKind::config, "unknown training mode '" + name + "'");
}

void validate(const TrainConfig& c) {
  if (c.n < 1) throw Error(ErrorKind::config, "N must be positive");
  if (c.mode == TrainMode::ssl && c.k < 1) throw Error(ErrorKind::config, "K must be positive");
  if (!(c.lr > 0) || !std::isfinite(c.lr)) throw Error(ErrorKind::config, "lr must be positive");
  if (c.weight_decay < 0) throw Error(ErrorKind::config, "weight_decay must be non-negative");
  if (c.batch_size < 1) throw Error(ErrorKind::config, "batch_size must be positive");
  if (c.max_epochs < 1) throw Error(ErrorKind::config, "max_epochs must be positive");
  if (c.plateau.window_epochs < 1) throw Error(ErrorKind::config, "plateau window must be positive");
  if (c.plateau.rel_tol < 0) throw Error(ErrorKind::config, "plateau rel_tol must be non-negative");
  if (c.workers < 1) throw Error(ErrorKind::config, "workers must be positive");
}

bool PlateauDetector::update(double value) {
  history_.push_back(value);
  const auto w = static_cast<std::size_t>(config_.window_epochs);
  if (history_.size() <= w) return false;
  const auto split = history_.end() - static_cast<std::ptrdiff_t>(w);
  auto best = [&](auto first, auto last) {
    return maximise_ ? *std::max_element(first, last) : *std::min_element(first, last);
  };
  const double before = best(history_.begin(), split);
  const double recent = best(split, history_.end());
  const double gain = maximise_ ? recent - before : before - recent;
  const double scale = std::abs(before) > 0 ? std::abs(before) : 1.0;
  return gain / scale <= config_.rel_tol;
}

BceResult bce_loss(std::span<const double> yhat, std::span<const double> y) {
  if (yhat.size() != y.size() || yhat.empty()) throw Error(ErrorKind::geometry, "BCE inputs differ in size or are empty");
  BceResult r;
  r.d_yhat.assign(yhat.size(), 0.0);
  const double n = static_cast<double>(yhat.size());
  for (std::size_t i = 0; i < yhat.size(); ++i) {
    const double p = std::clamp(yhat[i], kBceEpsilon, 1.0 - kBceEpsilon);
    r.loss -= y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
    if (p == yhat[i]) r.d_yhat[i] = -(y[i] / p - (1.0 - y[i]) / (1.0 - p)) / n;
  }
  r.loss /= n;
  return r;
}

namespace {

std::vector<double> label_values(const PatchLabelMap& labels) {
  return {labels.labels.begin(), labels.labels.end()};
}

std::vector<double> patch_predictions(const PatchEmbeddingMap& a, const PatchEmbeddingMap& b) {
  std::vector<double> yhat(static_cast<std::size_t>(a.patch_count()));
  for (int p = 0; p < a.patch_count(); ++p) yhat[static_cast<std::size_t>(p)] = cosine_distance_floored(a.patch(p), b.patch(p));
  return yhat;
}

void scale_gradients(nn::Gradients& grads, double factor) {
  for (auto& g : grads)
    for (auto& x : g) x = static_cast<float>(x * factor);
}

void clear(nn::Gradients& grads) {
  for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0f);
}

/// Adam step over a possibly partial batch.
class BatchStepper {
 public:
  BatchStepper(nn::Network& net, const TrainConfig& cfg)
      : net_(net),
        adam_(net, nn::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay}),
        grads_(net.zero_gradients()),
        batch_(cfg.batch_size) {}

  nn::Gradients& grads() { return grads_; }

  void sample_done() {
    if (++pending_ == batch_) flush();
  }

  void flush() {
    if (pending_ == 0) return;
    if (pending_ > 1) scale_gradients(grads_, 1.0 / pending_);
    adam_.step(net_, grads_);
    clear(grads_);
    pending_ = 0;
  }

 private:
  nn::Network& net_;
  nn::Adam adam_;
  nn::Gradients grads_;
  int batch_;
  int pending_ = 0;
};

[[noreturn]] void non_finite(TrainMode mode, int epoch, int iteration, const std::string& anchor,
                             const std::string& partner, const std::string& detail,
                             const std::vector<double>& curve) {
  std::ostringstream os;
  os << "non-finite loss in " << to_string(mode) << " training at epoch " << epoch << ", iteration " << iteration
     << " (anchor " << anchor << ", partner " << partner << detail << "); loss curve so far:";
  for (double v : curve) os << ' ' << v;
  throw Error(ErrorKind::numeric, os.str());
}

std::vector<Image> load_images(const std::vector<std::string>& ids, const ImageStore& images, int side) {
  std::vector<Image> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(images.get(id, side));
  return out;
}

std::size_t draw_partner(std::size_t anchor, std::size_t count, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, count - 2);
  const std::size_t j = pick(rng);
  return j >= anchor ? j + 1 : j;
}

}  // namespace

PairLoss ssl_pair_loss(const Encoder& encoder, const Image& x_i, const Image& x_j, const PatchLabelMap& labels) {
  const auto a = encoder.encode_patches(x_i);
  const auto b = encoder.encode_patches(x_j);
  if (labels.rows != a.rows || labels.cols != a.cols) throw Error(ErrorKind::geometry, "label map does not match patch grid");
  PairLoss r;
  r.yhat = patch_predictions(a, b);
  r.labels = label_values(labels);
  r.loss = bce_loss(r.yhat, r.labels).loss;
  return r;
}

Embedding compute_centre(std::span<const PatchEmbeddingMap> maps) {
  if (maps.empty()) throw Error(ErrorKind::config, "centre of an empty embedding collection");
  Embedding c(static_cast<std::size_t>(maps.front().dim), 0.0);
  std::size_t count = 0;
  for (const auto& m : maps) {
    if (m.dim != maps.front().dim) throw Error(ErrorKind::geometry, "patch maps have different dimensions");
    for (int p = 0; p < m.patch_count(); ++p) {
      const auto v = m.patch(p);
      for (std::size_t d = 0; d < c.size(); ++d) c[d] += v[d];
      ++count;
    }
  }
  if (count == 0) throw Error(ErrorKind::config, "centre of an empty embedding collection");
  for (auto& x : c) x /= static_cast<double>(count);
  return c;
}

Embedding compute_centre(std::span<const Embedding> embeddings) {
  if (embeddings.empty()) throw Error(ErrorKind::config, "centre of an empty embedding collection");
  Embedding c(embeddings.front().size(), 0.0);
  for (const auto& e : embeddings) {
    if (e.size() != c.size()) throw Error(ErrorKind::geometry, "embeddings have different dimensions");
    for (std::size_t d = 0; d < c.size(); ++d) c[d] += e[d];
  }
  for (auto& x : c) x /= static_cast<double>(embeddings.size());
  return c;
}

double compute_cd_max(std::span<const PatchEmbeddingMap> maps) {
  if (maps.size() < 2) throw Error(ErrorKind::config, "cd_max needs at least two training samples");
  double best = 0.0;
  for (std::size_t a = 0; a < maps.size(); ++a)
    for (std::size_t b = a + 1; b < maps.size(); ++b) best = std::max(best, mean_patch_distance(maps[a], maps[b]));
  return best;
}

double compute_cd_max(std::span<const Embedding> embeddings) {
  if (embeddings.size() < 2) throw Error(ErrorKind::config, "cd_max needs at least two training samples");
  double best = 0.0;
  for (std::size_t a = 0; a < embeddings.size(); ++a)
    for (std::size_t b = a + 1; b < embeddings.size(); ++b)
      best = std::max(best, cosine_distance_floored(embeddings[a], embeddings[b]));
  return best;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finaliser
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<PatchEmbeddingMap> encode_patch_maps(const Encoder& encoder, const std::vector<std::string>& ids,
                                                 const ImageStore& images) {
  std::vector<PatchEmbeddingMap> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(encoder.encode_patches(images.get(id, encoder.config().input_side)));
  return out;
}

std::vector<Embedding> encode_globals(const Encoder& encoder, const std::vector<std::string>& ids,
                                      const ImageStore& images) {
  std::vector<Embedding> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(encoder.encode_global(images.get(id, encoder.config().input_side)));
  return out;
}

TrainedStage train_ssl_member(const std::vector<std::string>& train_ids, const TrainConfig& cfg,
                              const EncoderConfig& enc, const SdaConfig& sda, const ImageStore& images,
                              std::uint64_t seed) {
  validate(cfg);
  validate(sda);
  if (!enc.patch_mode) throw Error(ErrorKind::config, "SSL training requires patch mode");
  if (train_ids.size() < 2) throw Error(ErrorKind::config, "SSL member needs at least two training samples");

  TrainedStage stage;
  stage.mode = TrainMode::ssl;
  stage.train_ids = train_ids;
  stage.encoder = Encoder::create(enc, derive_seed(seed, 0));
  auto& encoder = stage.encoder;
  const auto& geometry = encoder.geometry();
  const auto xs = load_images(train_ids, images, enc.input_side);

  SdaRng rng(derive_seed(seed, 1));
  BatchStepper stepper(encoder.network(), cfg);
  PlateauDetector plateau(cfg.plateau, false);
  std::vector<std::size_t> order(xs.size());

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    int iteration = 0;
    for (std::size_t i : order) {
      ++iteration;
      const std::size_t j = draw_partner(i, xs.size(), rng);
      const auto pair = apply_sda(xs[i], xs[j], sda, rng);
      const auto labels = patch_label_map(pair.affected_region, geometry);

      Encoder::Pass pass_i, pass_j;
      const auto a = encoder.forward_patches(pair.x_i_image, pass_i);
      const auto b = encoder.forward_patches(pair.x_j_image, pass_j);
      const auto yhat = patch_predictions(a, b);
      const auto bce = bce_loss(yhat, label_values(labels));
      if (!std::isfinite(bce.loss)) {
        non_finite(TrainMode::ssl, epoch, iteration, train_ids[i], train_ids[j],
                   std::string(", transform ") + to_string(pair.applied_j.kind), stage.loss_curve);
      }
      total += bce.loss;

      PatchEmbeddingMap ga(a.rows, a.cols, a.dim), gb(b.rows, b.cols, b.dim);
      for (int p = 0; p < a.patch_count(); ++p) {
        const double dl = bce.d_yhat[static_cast<std::size_t>(p)];
        if (dl == 0.0) continue;
        const auto g = cosine_distance_with_grad(a.patch(p), b.patch(p));
        auto da = ga.patch(p / a.cols, p % a.cols);
        auto db = gb.patch(p / b.cols, p % b.cols);
        for (int d = 0; d < a.dim; ++d) {
          da[static_cast<std::size_t>(d)] = dl * g.d_a[static_cast<std::size_t>(d)];
          db[static_cast<std::size_t>(d)] = dl * g.d_b[static_cast<std::size_t>(d)];
        }
      }
      encoder.backward_patches(pass_i, ga, stepper.grads());
      encoder.backward_patches(pass_j, gb, stepper.grads());
      stepper.sample_done();
    }
    stepper.flush();
    stage.loss_curve.push_back(total / static_cast<double>(xs.size()));
    spdlog::debug("ssl seed {} epoch {} loss {:.6f}", seed, epoch, stage.loss_curve.back());
    if (plateau.update(stage.loss_curve.back())) {
      stage.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }

  const auto maps = encode_patch_maps(encoder, train_ids, images);
  stage.c_norm = compute_centre(std::span<const PatchEmbeddingMap>(maps));
  stage.cd_max = compute_cd_max(std::span<const PatchEmbeddingMap>(maps));
  return stage;
}

std::vector<TrainedStage> train_ssl_ensemble(const std::vector<std::string>& pool, const TrainConfig& cfg,
                                             const EncoderConfig& enc, const SdaConfig& sda,
                                             const ImageStore& images) {
  validate(cfg);
  if (cfg.mode != TrainMode::ssl) throw Error(ErrorKind::config, "ensemble training runs in ssl mode");
  if (pool.size() < static_cast<std::size_t>(cfg.n)) {
    throw Error(ErrorKind::capacity, "pool has " + std::to_string(pool.size()) + " samples, N=" + std::to_string(cfg.n));
  }

  // Subsets are drawn up front so the result does not depend on the worker count.
  std::vector<std::vector<std::string>> subsets;
  std::set<std::vector<std::string>> seen;
  for (int k = 0; k < cfg.k; ++k) {
    std::mt19937_64 rng(derive_seed(cfg.rng_seed, 1000 + static_cast<std::uint64_t>(k)));
    std::vector<std::string> subset;
    for (int attempt = 0; attempt < 64; ++attempt) {
      auto shuffled = pool;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      shuffled.resize(static_cast<std::size_t>(cfg.n));
      subset = shuffled;
      std::sort(shuffled.begin(), shuffled.end());
      if (seen.insert(shuffled).second || pool.size() == static_cast<std::size_t>(cfg.n)) break;
    }
    subsets.push_back(std::move(subset));
  }

  std::vector<TrainedStage> members(static_cast<std::size_t>(cfg.k));
  auto train_one = [&](int k) {
    const auto seed = derive_seed(cfg.rng_seed, static_cast<std::uint64_t>(k));
    members[static_cast<std::size_t>(k)] = train_ssl_member(subsets[static_cast<std::size_t>(k)], cfg, enc, sda, images, seed);
    spdlog::info("stage-1 member {} trained: {} epochs, final loss {:.5f}, cd_max {:.5f}", k,
                 members[static_cast<std::size_t>(k)].loss_curve.size(),
                 members[static_cast<std::size_t>(k)].loss_curve.back(), members[static_cast<std::size_t>(k)].cd_max);
  };

  if (cfg.workers <= 1) {
    for (int k = 0; k < cfg.k; ++k) train_one(k);
    return members;
  }
  std::mutex mu;
  int next = 0;
  std::exception_ptr failure;
  std::vector<std::thread> threads;
  for (int w = 0; w < std::min(cfg.workers, cfg.k); ++w) {
    threads.emplace_back([&] {
      for (;;) {
        int k;
        {
          std::lock_guard lock(mu);
          if (next >= cfg.k || failure) return;
          k = next++;
        }
        try {
          train_one(k);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
  return members;
}

TrainedStage train_dcrl(const std::vector<std::string>& normals, const std::vector<std::string>& pseudo_anoms,
                        const TrainConfig& cfg, const EncoderConfig& enc, const ImageStore& images,
                        const EpochObserver& observer) {
  validate(cfg);
  if (pseudo_anoms.empty()) throw Error(ErrorKind::config, "DCRL needs at least one pseudo anomaly");
  if (normals.size() < 2) throw Error(ErrorKind::config, "DCRL needs at least two normal samples");
  if (enc.patch_mode) throw Error(ErrorKind::config, "DCRL training uses whole-image embeddings");

  TrainedStage stage;
  stage.mode = TrainMode::dcrl;
  stage.train_ids = normals;
  stage.anomaly_ids = pseudo_anoms;
  stage.encoder = Encoder::create(enc, derive_seed(cfg.rng_seed, 0));
  auto& encoder = stage.encoder;

  std::vector<std::string> all = normals;
  all.insert(all.end(), pseudo_anoms.begin(), pseudo_anoms.end());
  const auto xs = load_images(all, images, enc.input_side);
  const std::size_t n_norm = normals.size();

  std::mt19937_64 rng(derive_seed(cfg.rng_seed, 1));
  BatchStepper stepper(encoder.network(), cfg);
  PlateauDetector plateau(cfg.plateau, true);
  std::vector<std::size_t> order(n_norm);

  auto refresh_centres = [&] {
    const auto norm = encode_globals(encoder, normals, images);
    const auto anom = encode_globals(encoder, pseudo_anoms, images);
    stage.c_norm = compute_centre(std::span<const Embedding>(norm));
    stage.c_anom = compute_centre(std::span<const Embedding>(anom));
    stage.cd_max = compute_cd_max(std::span<const Embedding>(norm));
  };

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    int iteration = 0;
    for (std::size_t i : order) {
      ++iteration;
      const std::size_t j = draw_partner(i, xs.size(), rng);
      const double y = j >= n_norm ? 1.0 : 0.0;
      Encoder::Pass pass_i, pass_j;
      const auto a = encoder.forward_global(xs[i], pass_i);
      const auto b = encoder.forward_global(xs[j], pass_j);
      const double yhat = cosine_distance_floored(a, b);
      const auto bce = bce_loss(std::span<const double>(&yhat, 1), std::span<const double>(&y, 1));
      if (!std::isfinite(bce.loss)) non_finite(TrainMode::dcrl, epoch, iteration, all[i], all[j], "", stage.loss_curve);
      total += bce.loss;
      if (bce.d_yhat[0] != 0.0) {
        auto g = cosine_distance_with_grad(a, b);
        for (auto& v : g.d_a) v *= bce.d_yhat[0];
        for (auto& v : g.d_b) v *= bce.d_yhat[0];
        encoder.backward_global(pass_i, g.d_a, stepper.grads());
        encoder.backward_global(pass_j, g.d_b, stepper.grads());
      }
      stepper.sample_done();
    }
    stepper.flush();
    stage.loss_curve.push_back(total / static_cast<double>(n_norm));
    refresh_centres();
    stage.centre_distance_curve.push_back(cosine_distance_floored(stage.c_norm, *stage.c_anom));
    spdlog::debug("dcrl epoch {} loss {:.6f} centre distance {:.6f}", epoch, stage.loss_curve.back(),
                  stage.centre_distance_curve.back());
    if (observer) observer(epoch, stage);
    if (plateau.update(stage.centre_distance_curve.back())) {
      stage.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }
  return stage;
}

}  // namespace sevgrade
