#include "sevgrade/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "sevgrade/checkpoint.hpp"
#include "sevgrade/error.hpp"
#include "sevgrade/synthetic.hpp"
#include "text_util.hpp"

#ifndef SEVGRADE_VERSION
#define SEVGRADE_VERSION "dev"
#endif

namespace sevgrade {

const char* to_string(Target target) { return target == Target::sev ? "sev" : "oa"; }

Target parse_target(const std::string& name) {
  if (name == "sev") return Target::sev;
  if (name == "oa") return Target::oa;
  throw Error(ErrorKind::config, "target must be sev or oa, got '" + name + "'");
}

std::string code_version() { return SEVGRADE_VERSION; }

namespace {

RunPaths paths(const RunConfig& c) { return RunPaths{c.output_dir}; }

std::filesystem::path provenance_path(const std::filesystem::path& dir) { return dir / "provenance.json"; }

std::filesystem::path manifest_path(const RunConfig& c) {
  return c.dataset.manifest.empty() ? paths(c).data_dir() / "manifest.csv" : c.dataset.manifest;
}

std::filesystem::path similarity_table_path(const RunConfig& c) {
  return c.dataset.similarity_table.empty() ? paths(c).data_dir() / "artifact_similarity.csv"
                                            : c.dataset.similarity_table;
}

std::vector<std::string> ids_of(const std::vector<Sample>& samples) {
  std::vector<std::string> out;
  for (const auto& s : samples) out.push_back(s.id());
  return out;
}

std::vector<std::string> eval_ids(const RunConfig& c, const RunData& data) {
  return ids_of(data.manifest.split(c.eval.split));
}

std::unique_ptr<SimilarityProvider> make_provider(const RunConfig& c, const RunData& data) {
  const auto& p = c.pseudolabel;
  if (p.provider == "table") {
    const auto path = similarity_table_path(c);
    if (!std::filesystem::exists(path)) {
      throw Error(ErrorKind::config, "similarity table " + path.string() + " not found");
    }
    return std::make_unique<TableSimilarityProvider>(TableSimilarityProvider::load(path));
  }
  if (p.provider == "command") {
    const char* cmd = std::getenv(p.command_env.c_str());
    if (!cmd || !*cmd) {
      throw Error(ErrorKind::config, "set " + p.command_env + " to the similarity command (see tools/clip_similarity.py)");
    }
    auto cache = p.cache.empty() ? std::filesystem::path("similarity_cache.csv") : p.cache;
    if (cache.is_relative()) cache = c.output_dir / cache;
    return std::make_unique<CachingSimilarityProvider>(
        std::make_unique<CommandSimilarityProvider>(cmd, data.manifest), cache);
  }
  return nullptr;
}

std::vector<TrainedStage> voters(const RunConfig& c, std::uint64_t seed, Target target, int iter) {
  if (iter == 1) return load_members(paths(c).stage1_dir(seed));
  const auto dir = paths(c).stage3_dir(seed, target, iter - 1);
  if (!has_stage(dir)) {
    throw Error(ErrorKind::missing_stage, "stage-3 " + std::string(to_string(target)) + " iteration " +
                                              std::to_string(iter - 1) + " missing; run train-stage3 --target " +
                                              to_string(target) + " --iter " + std::to_string(iter - 1) + " first");
  }
  return {load_stage(dir)};
}

void write_report(const std::filesystem::path& dir, const RunSummary& s) {
  std::filesystem::create_directories(dir);
  detail::write_text_atomic(dir / "report.json", s.json);
  detail::write_text_atomic(dir / "report.txt", s.table);
}

RunSummary summarise_rows(std::vector<std::pair<std::string, std::vector<MetricsReport>>> rows) {
  RunSummary s;
  std::vector<std::pair<std::string, SeedSummary>> table_rows;
  for (const auto& [label, seeds] : rows) table_rows.emplace_back(label, summarise(seeds));
  s.table = format_table(table_rows);
  s.json = metrics_json(rows);
  s.rows = std::move(rows);
  return s;
}

const char* row_label(const std::string& column) {
  if (column == "s_ssl") return "stage1 patches (s_ssl)";
  if (column == "s_sev") return "stage3 sev (s_sev)";
  if (column == "s_oa") return "stage3 oa (s_oa)";
  return "combined (s_comb)";
}

EvalTask eval_task(const RunConfig& c, const std::string& column) {
  EvalTask t;
  t.score_column = column;
  t.severe_min_grade = c.eval.severe_min_grade;
  t.allow_undefined = c.eval.allow_undefined;
  return t;
}

/// Stage-1 only scoring for presets that stop after the ensemble.
MetricsReport evaluate_members(const RunConfig& c, const RunData& data, const std::vector<TrainedStage>& members) {
  ScoringInputs in;
  in.members = members;
  in.m = 1.0;
  ScoreFile f;
  f.reports = score_samples(eval_ids(c, data), data.images, in);
  return evaluate_run(f, data.manifest, eval_task(c, "s_ssl"));
}

}  // namespace

void write_provenance(const std::filesystem::path& dir, const std::string& command, const RunConfig& config,
                      std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  Json j;
  j["command"] = command;
  j["config_hash"] = config_hash(config);
  j["seed"] = seed;
  j["code_version"] = code_version();
  j["profile"] = config.profile;
  detail::write_text_atomic(provenance_path(dir), j.dump(2) + "\n");
}

Manifest cmd_prepare(const RunConfig& config) {
  validate(config);
  const auto dir = paths(config).data_dir();
  Manifest m;
  if (config.dataset.manifest.empty()) {
    m = generate_synthetic_corpus(config.dataset.synthetic, dir);
    spdlog::info("synthetic corpus with {} images written to {}", m.samples.size(), dir.string());
  } else {
    m = load_manifest(config.dataset.manifest);
    validate_manifest(m);
    spdlog::info("manifest {} validated: {} samples", config.dataset.manifest.string(), m.samples.size());
  }
  write_provenance(dir, "prepare", config, config.dataset.synthetic.rng_seed);
  return m;
}

RunData load_run_data(const RunConfig& config) {
  const auto path = manifest_path(config);
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorKind::missing_stage, "manifest " + path.string() + " not found; run prepare first");
  }
  RunData d;
  d.manifest = load_manifest(path);
  validate_manifest(d.manifest);
  d.images = ImageStore::load(d.manifest);
  return d;
}

std::vector<TrainedStage> cmd_train_stage1(const RunConfig& config, std::uint64_t seed, const RunData& data) {
  validate(config);
  const auto pool = ids_of(sample_training_pool(data.manifest, config.stage1.pool_size, derive_seed(seed, 11)));
  auto train = config.stage1.train;
  train.mode = TrainMode::ssl;
  train.rng_seed = derive_seed(seed, 12);
  const auto members = train_ssl_ensemble(pool, train, config.stage1_encoder, config.sda, data.images);
  const auto dir = paths(config).stage1_dir(seed);
  for (std::size_t k = 0; k < members.size(); ++k) save_stage(dir / ("member_" + std::to_string(k)), members[k]);
  std::string text;
  for (const auto& id : pool) text += id + "\n";
  detail::write_text_atomic(paths(config).pool_file(seed), text);
  write_provenance(dir, "train-stage1", config, seed);
  return members;
}

std::vector<std::string> labelled_pool(const RunConfig& config, std::uint64_t seed) {
  const auto file = paths(config).pool_file(seed);
  if (!std::filesystem::exists(file)) {
    throw Error(ErrorKind::missing_stage, "stage-1 pool missing under " + file.parent_path().string() +
                                              "; run train-stage1 first");
  }
  std::vector<std::string> out;
  const auto text = detail::read_text_file(file);
  for (auto line : detail::split_lines(text))
    if (!detail::trim(line).empty()) out.emplace_back(detail::trim(line));
  return out;
}

std::vector<std::string> unlabelled_pool(const RunConfig& config, std::uint64_t seed, const RunData& data) {
  const auto pool = labelled_pool(config, seed);
  const std::set<std::string> labelled(pool.begin(), pool.end());
  std::vector<std::string> out;
  for (const auto& s : data.manifest.split(Split::train))
    if (!labelled.count(s.id())) out.push_back(s.id());
  return out;
}

PseudoLabelSet cmd_pseudo_label(const RunConfig& config, std::uint64_t seed, Target target, int iter,
                                const RunData& data) {
  validate(config);
  if (iter < 1) throw Error(ErrorKind::config, "iteration must be >= 1");
  const auto members = voters(config, seed, target, iter);
  const auto xu = unlabelled_pool(config, seed, data);
  check_disjoint(xu, members);
  const auto scores = member_scores(xu, members, data.images);
  std::vector<double> cds;
  for (const auto& s : members) cds.push_back(s.cd_max);

  const auto& p = config.pseudolabel;
  double m;
  if (p.margin_mode == MarginMode::fixed) {
    m = target == Target::oa ? p.m_oa : p.m_sev;
  } else {
    m = balanced_margin(scores, cds, target == Target::oa ? p.target_oa : p.target_sev);
  }
  const auto candidates = pseudo_label_from_scores(xu, scores, cds, m);

  PseudoLabelSet set;
  auto provider = p.denoise ? make_provider(config, data) : nullptr;
  if (provider) {
    set = denoise(candidates, *provider, p.statement, labelled_pool(config, seed), p.percentile);
  } else {
    set.accepted = candidates;
    set.statement = p.statement;
  }
  set.m_used = m;
  spdlog::info("pseudo-labels {} iter {}: m={:.4f}, {} candidates, {} accepted, {} rejected by denoising",
               to_string(target), iter, m, candidates.size(), set.accepted.size(), set.rejected_by_denoise.size());
  const auto file = paths(config).pseudo_label_file(seed, target, iter);
  std::filesystem::create_directories(file.parent_path());
  save_pseudo_labels(file, set);
  write_provenance(file.parent_path(), "pseudo-label", config, seed);
  return set;
}

TrainedStage cmd_train_stage3(const RunConfig& config, std::uint64_t seed, Target target, int iter,
                              const RunData& data, const EpochObserver& observer) {
  validate(config);
  if (iter < 1) throw Error(ErrorKind::config, "iteration must be >= 1");
  const auto label_file = paths(config).pseudo_label_file(seed, target, iter);
  const auto labels = std::filesystem::exists(label_file) ? load_pseudo_labels(label_file)
                                                          : cmd_pseudo_label(config, seed, target, iter, data);
  if (labels.accepted.empty()) {
    throw Error(ErrorKind::config, "no pseudo-anomalies for " + std::string(to_string(target)) + " iteration " +
                                       std::to_string(iter) + "; lower the margin");
  }
  auto pool = labelled_pool(config, seed);
  std::mt19937_64 rng(derive_seed(seed, 20 + static_cast<std::uint64_t>(iter)));
  std::shuffle(pool.begin(), pool.end(), rng);
  const auto want = static_cast<std::size_t>(iter == 1 ? config.stage3.train.n : config.stage3.n_later);
  if (want > pool.size()) {
    spdlog::warn("stage-3 wants {} normals but the labelled pool holds {}", want, pool.size());
  }
  pool.resize(std::min(want, pool.size()));

  auto train = config.stage3.train;
  train.mode = TrainMode::dcrl;
  train.rng_seed = derive_seed(seed, 40 + 2 * static_cast<std::uint64_t>(iter) + (target == Target::sev ? 1 : 0));
  auto stage = train_dcrl(pool, labels.accepted, train, config.stage3_encoder, data.images, observer);
  spdlog::info("stage-3 {} iter {} trained: {} epochs, centre distance {:.5f} -> {:.5f}", to_string(target), iter,
               stage.centre_distance_curve.size(), stage.centre_distance_curve.front(),
               stage.centre_distance_curve.back());
  const auto dir = paths(config).stage3_dir(seed, target, iter);
  save_stage(dir, stage);
  write_provenance(dir, "train-stage3", config, seed);
  return stage;
}

int latest_iteration(const RunConfig& config, std::uint64_t seed, Target target) {
  int iter = 0;
  while (has_stage(paths(config).stage3_dir(seed, target, iter + 1))) ++iter;
  return iter;
}

ScoreFile cmd_score(const RunConfig& config, std::uint64_t seed, const RunData& data) {
  validate(config);
  const auto members = load_members(paths(config).stage1_dir(seed));
  const int it_sev = latest_iteration(config, seed, Target::sev);
  const int it_oa = latest_iteration(config, seed, Target::oa);
  if (it_sev == 0 || it_oa == 0) {
    throw Error(ErrorKind::missing_stage, std::string("stage-3 ") + (it_sev == 0 ? "sev" : "oa") +
                                              " checkpoint missing; run train-stage3 first");
  }
  const auto sev = load_stage(paths(config).stage3_dir(seed, Target::sev, it_sev));
  const auto oa = load_stage(paths(config).stage3_dir(seed, Target::oa, it_oa));
  const double t = calibrate_threshold_t(sev, sev.train_ids, data.images, config.t_percentile);

  double m = config.pseudolabel.m_oa;
  const auto oa_labels = paths(config).pseudo_label_file(seed, Target::oa, 1);
  if (std::filesystem::exists(oa_labels)) m = load_pseudo_labels(oa_labels).m_used;

  ScoringInputs in;
  in.members = members;
  in.sev = &sev;
  in.oa = &oa;
  in.m = m;
  in.t = t;
  ScoreFile f;
  f.metadata["run_id"] = config_hash(config) + "-" + std::to_string(seed);
  f.metadata["m"] = detail::format_double(m);
  f.metadata["t"] = detail::format_double(t);
  f.reports = score_samples(eval_ids(config, data), data.images, in);
  save_scores(paths(config).scores_file(seed), f);
  write_provenance(paths(config).seed_dir(seed), "score", config, seed);
  return f;
}

std::vector<MetricsReport> cmd_evaluate(const RunConfig& config, std::uint64_t seed, const RunData& data) {
  const auto file = paths(config).scores_file(seed);
  if (!std::filesystem::exists(file)) {
    throw Error(ErrorKind::missing_stage, "scores " + file.string() + " missing; run score first");
  }
  const auto scores = load_scores(file);
  const auto reports = evaluate_columns(scores, data.manifest, eval_task(config, "s_comb"));
  std::vector<std::pair<std::string, std::vector<MetricsReport>>> rows;
  for (const auto& r : reports) rows.emplace_back(row_label(r.score_column), std::vector<MetricsReport>{r});
  const auto s = summarise_rows(rows);
  detail::write_text_atomic(paths(config).metrics_file(seed), s.json);
  detail::write_text_atomic(paths(config).seed_dir(seed) / "report.txt", s.table);
  return reports;
}

namespace {

std::vector<MetricsReport> run_seed(const RunConfig& config, std::uint64_t seed, const RunData& data) {
  cmd_train_stage1(config, seed, data);
  for (int iter = 1; iter <= config.stage3.iterations; ++iter) {
    for (Target t : {Target::oa, Target::sev}) {
      cmd_pseudo_label(config, seed, t, iter, data);
      cmd_train_stage3(config, seed, t, iter, data);
    }
  }
  cmd_score(config, seed, data);
  return cmd_evaluate(config, seed, data);
}

RunSummary aggregate(const std::vector<std::vector<MetricsReport>>& per_seed) {
  std::vector<std::pair<std::string, std::vector<MetricsReport>>> rows;
  for (const char* column : {"s_ssl", "s_sev", "s_oa", "s_comb"}) {
    std::vector<MetricsReport> seeds;
    for (const auto& reports : per_seed)
      for (const auto& r : reports)
        if (r.score_column == column) seeds.push_back(r);
    if (!seeds.empty()) rows.emplace_back(row_label(column), seeds);
  }
  return summarise_rows(rows);
}

}  // namespace

RunSummary cmd_run_all(const RunConfig& config) {
  cmd_prepare(config);
  const auto data = load_run_data(config);
  std::vector<std::vector<MetricsReport>> per_seed;
  for (auto seed : config.seeds) per_seed.push_back(run_seed(config, seed, data));
  auto s = aggregate(per_seed);
  write_report(config.output_dir, s);
  write_provenance(config.output_dir, "run-all", config, config.seeds.front());
  return s;
}

namespace {

RunSummary ablation_no_clip(const RunConfig& config, const std::filesystem::path& dir) {
  std::vector<std::pair<std::string, std::vector<MetricsReport>>> rows;
  for (bool with : {true, false}) {
    auto c = config;
    c.pseudolabel.denoise = with;
    c.output_dir = dir / (with ? "with_denoise" : "without_denoise");
    const auto run = cmd_run_all(c);
    for (const auto& [label, seeds] : run.rows) {
      if (label != row_label("s_comb")) continue;
      rows.emplace_back(with ? "with denoising (s_comb)" : "without denoising (s_comb)", seeds);
    }
  }
  return summarise_rows(rows);
}

RunSummary stage1_sweep(const std::filesystem::path& dir,
                        const std::vector<std::pair<std::string, RunConfig>>& variants) {
  std::vector<std::pair<std::string, std::vector<MetricsReport>>> rows;
  for (const auto& [label, variant] : variants) {
    auto c = variant;
    c.output_dir = dir / "runs";
    validate(c);
    cmd_prepare(c);
    const auto data = load_run_data(c);
    std::vector<MetricsReport> seeds;
    for (auto seed : c.seeds) seeds.push_back(evaluate_members(c, data, cmd_train_stage1(c, seed, data)));
    rows.emplace_back(label, seeds);
  }
  return summarise_rows(rows);
}

RunSummary ablation_t_anom(const RunConfig& config, const std::filesystem::path& dir) {
  using K = TransformKind;
  const std::vector<std::pair<std::string, std::vector<K>>> sets{
      {"identity+crop+cutpaste", {K::identity, K::crop_resize, K::cutpaste}},
      {"cutpaste", {K::cutpaste}},
      {"crop_resize", {K::crop_resize}},
      {"posterise", {K::posterise}},
      {"rotate", {K::rotate}},
      {"all", {K::identity, K::crop_resize, K::cutpaste, K::posterise, K::rotate}},
  };
  std::vector<std::pair<std::string, RunConfig>> variants;
  for (const auto& [label, kinds] : sets) {
    auto c = config;
    c.sda.t_anom = kinds;
    c.sda.t_anom_weights.clear();
    variants.emplace_back("T_anom=" + label, c);
  }
  return stage1_sweep(dir, variants);
}

RunSummary ablation_trainset_size(const RunConfig& config, const std::filesystem::path& dir) {
  std::vector<std::size_t> sizes;
  const auto n = static_cast<std::size_t>(config.stage1.train.n);
  for (std::size_t s = n; s < config.stage1.pool_size; s += n) sizes.push_back(s);
  sizes.push_back(config.stage1.pool_size);
  std::vector<std::pair<std::string, RunConfig>> variants;
  for (auto s : sizes) {
    auto c = config;
    c.stage1.pool_size = s;
    variants.emplace_back("pool=" + std::to_string(s), c);
  }
  return stage1_sweep(dir, variants);
}

RunSummary ablation_early_stopping(const RunConfig& config, const std::filesystem::path& dir) {
  auto c = config;
  c.output_dir = dir / "runs";
  // train the full epoch budget; the plateau rule is replayed afterwards
  c.stage3.train.plateau.window_epochs = c.stage3.train.max_epochs + 1;
  cmd_prepare(c);
  const auto data = load_run_data(c);
  const auto ids = eval_ids(c, data);

  std::map<int, std::vector<MetricsReport>> per_epoch;
  std::vector<int> stops;
  for (auto seed : c.seeds) {
    cmd_train_stage1(c, seed, data);
    cmd_pseudo_label(c, seed, Target::oa, 1, data);
    const auto observer = [&](int epoch, const TrainedStage& snapshot) {
      ScoreFile f;
      for (const auto& id : ids) {
        ScoreReport r;
        r.sample_id = id;
        r.s_oa = score_dcrl(data.images.get(id, snapshot.encoder.config().input_side), snapshot);
        f.reports.push_back(r);
      }
      per_epoch[epoch].push_back(evaluate_run(f, data.manifest, eval_task(c, "s_oa")));
    };
    const auto stage = cmd_train_stage3(c, seed, Target::oa, 1, data, observer);
    PlateauDetector detector(config.stage3.train.plateau, true);
    int stop = static_cast<int>(stage.centre_distance_curve.size());
    for (std::size_t e = 0; e < stage.centre_distance_curve.size(); ++e) {
      if (detector.update(stage.centre_distance_curve[e])) {
        stop = static_cast<int>(e) + 1;
        break;
      }
    }
    stops.push_back(stop);
  }
  std::vector<std::pair<std::string, std::vector<MetricsReport>>> rows;
  for (auto& [epoch, reports] : per_epoch) rows.emplace_back("epoch " + std::to_string(epoch), reports);
  auto s = summarise_rows(rows);
  std::ostringstream note;
  note << "early stop epoch per seed:";
  for (int e : stops) note << ' ' << e;
  note << '\n';
  s.table += note.str();
  auto j = Json::parse(s.json);
  j["stop_epochs"] = stops;
  s.json = j.dump(2) + "\n";
  return s;
}

}  // namespace

RunSummary cmd_ablation(const RunConfig& config, const std::string& preset) {
  validate(config);
  const auto dir = config.output_dir / ("ablation_" + preset);
  RunSummary s;
  if (preset == "no_clip") s = ablation_no_clip(config, dir);
  else if (preset == "t_anom_transforms") s = ablation_t_anom(config, dir);
  else if (preset == "trainset_size") s = ablation_trainset_size(config, dir);
  else if (preset == "early_stopping_trace") s = ablation_early_stopping(config, dir);
  else {
    throw Error(ErrorKind::config,
                "unknown preset '" + preset + "' (t_anom_transforms, trainset_size, no_clip, early_stopping_trace)");
  }
  write_report(dir, s);
  write_provenance(dir, "ablation " + preset, config, config.seeds.front());
  return s;
}

}  // namespace sevgrade
