// Command-line front end for the severity-grading pipeline.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "sevgrade/config.hpp"
#include "sevgrade/dataset.hpp"
#include "sevgrade/error.hpp"
#include "sevgrade/pipeline.hpp"

namespace {

using namespace sevgrade;

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::geometry:
    case ErrorKind::numeric:
      return 2;
    default:
      return 1;
  }
}

struct Options {
  std::string config_path;
  std::string profile = "desk";
  std::string output_dir;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

RunConfig resolve_config(const Options& o) {
  RunConfig c;
  if (!o.config_path.empty()) {
    c = load_run_config(o.config_path);
  } else if (o.profile == "desk") {
    c = desk_profile();
  } else if (o.profile == "paper") {
    c = paper_profile();
  } else {
    throw Error(ErrorKind::config, "unknown profile '" + o.profile + "'");
  }
  if (!o.output_dir.empty()) c.output_dir = o.output_dir;
  if (o.seed) c.seeds = {*o.seed};
  validate(c);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knee X-ray severity grading: stage-1 patch contrastive ensemble, pseudo-labelling, dual-centre training"};
  app.require_subcommand(1);
  Options o;
  app.add_option("-c,--config", o.config_path, "run config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--profile", o.profile, "base profile when no config is given")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("-o,--output-dir", o.output_dir, "override output_dir");
  app.add_option("--seed", o.seed, "run a single seed instead of the configured list");
  app.add_flag("-v,--verbose", o.verbose, "debug logging");

  auto* prepare = app.add_subcommand("prepare", "generate the synthetic corpus or validate the manifest");
  auto* stage1 = app.add_subcommand("train-stage1", "train the stage-1 ensemble");

  auto* pseudo = app.add_subcommand("pseudo-label", "vote and denoise pseudo-anomalies");
  std::string target = "oa";
  int iter = 1;
  std::optional<double> m;
  std::optional<std::string> statement;
  std::optional<double> percentile;
  bool no_denoise = false;
  pseudo->add_option("--target", target, "stage-3 target")->check(CLI::IsMember({"sev", "oa"}));
  pseudo->add_option("--iter", iter, "stage-3 iteration")->check(CLI::PositiveNumber);
  pseudo->add_option("--m", m, "fixed vote margin (>= 1)");
  pseudo->add_option("--statement", statement, "denoising statement");
  pseudo->add_option("--percentile", percentile, "denoising cutoff percentile");
  pseudo->add_flag("--no-denoise", no_denoise, "skip the similarity provider");

  auto* stage3 = app.add_subcommand("train-stage3", "train a dual-centre model");
  stage3->add_option("--target", target, "sev or oa")->required()->check(CLI::IsMember({"sev", "oa"}));
  stage3->add_option("--iter", iter, "iteration")->check(CLI::PositiveNumber);

  auto* score = app.add_subcommand("score", "score the evaluation split");
  auto* evaluate = app.add_subcommand("evaluate", "metrics for the scored split");

  auto* ablation = app.add_subcommand("ablation", "run an experiment preset");
  std::string preset;
  ablation->add_option("--preset", preset, "preset name")
      ->required()
      ->check(CLI::IsMember({"t_anom_transforms", "trainset_size", "no_clip", "early_stopping_trace"}));

  auto* run_all = app.add_subcommand("run-all", "every stage for every seed, then the report");

  auto* import = app.add_subcommand("import-oai", "build a manifest from OAI reading exports");
  OaiImportSpec oai;
  std::string manifest_out;
  import->add_option("--readings", oai.readings, "reading table ('|' or ',' delimited)")->required()->check(CLI::ExistingFile);
  import->add_option("--image-root", oai.image_root, "directory of knee crops")->required()->check(CLI::ExistingDirectory);
  import->add_option("--image-pattern", oai.image_pattern, "file name pattern with {id} and {side}");
  import->add_option("--image-side", oai.image_side, "image side in pixels");
  import->add_option("--split-seed", oai.rng_seed, "seed of the patient-level split");
  import->add_option("--out", manifest_out, "manifest to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  spdlog::set_level(o.verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (import->parsed()) {
      const auto manifest = import_oai(oai);
      save_manifest(manifest_out, manifest);
      std::cout << "wrote " << manifest.samples.size() << " samples to " << manifest_out << '\n';
      return 0;
    }
    auto config = resolve_config(o);
    const auto seed = config.seeds.front();

    if (prepare->parsed()) {
      const auto manifest = cmd_prepare(config);
      std::cout << manifest.samples.size() << " samples ready\n";
      return 0;
    }
    if (run_all->parsed()) {
      std::cout << cmd_run_all(config).table;
      return 0;
    }
    if (ablation->parsed()) {
      std::cout << cmd_ablation(config, preset).table;
      return 0;
    }

    const auto data = load_run_data(config);
    if (stage1->parsed()) {
      const auto members = cmd_train_stage1(config, seed, data);
      std::cout << members.size() << " members trained\n";
    } else if (pseudo->parsed()) {
      const auto t = parse_target(target);
      if (m) {
        config.pseudolabel.margin_mode = MarginMode::fixed;
        (t == Target::oa ? config.pseudolabel.m_oa : config.pseudolabel.m_sev) = *m;
        if (*m < 1.0) throw Error(ErrorKind::config, "--m must be >= 1");
      }
      if (statement) config.pseudolabel.statement = *statement;
      if (percentile) config.pseudolabel.percentile = *percentile;
      if (no_denoise) config.pseudolabel.denoise = false;
      const auto set = cmd_pseudo_label(config, seed, t, iter, data);
      std::cout << set.accepted.size() << " accepted, " << set.rejected_by_denoise.size()
                << " rejected by denoising (m=" << set.m_used << ")\n";
    } else if (stage3->parsed()) {
      const auto stage = cmd_train_stage3(config, seed, parse_target(target), iter, data);
      std::cout << "trained " << stage.centre_distance_curve.size() << " epochs\n";
    } else if (score->parsed()) {
      const auto f = cmd_score(config, seed, data);
      std::cout << f.reports.size() << " samples scored (t=" << f.metadata.at("t") << ")\n";
    } else if (evaluate->parsed()) {
      cmd_evaluate(config, seed, data);
      std::ifstream in(RunPaths{config.output_dir}.seed_dir(seed) / "report.txt");
      std::cout << in.rdbuf();
    }
    return 0;
  } catch (const Error& e) {
    spdlog::error("{} error: {}", to_string(e.kind()), e.what());
    return exit_code(e);
  } catch (const std::exception& e) {
    spdlog::error("internal error: {}", e.what());
    return 2;
  }
}
