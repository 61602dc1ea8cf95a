#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "sevgrade/checkpoint.hpp"
#include "sevgrade/config.hpp"
#include "sevgrade/pipeline.hpp"

using namespace sevgrade;

namespace {

// Shrunk desk run: small images, a handful of epochs, one stage-3 iteration.
RunConfig mini_config(const std::filesystem::path& out) {
  auto c = apply_overrides(desk_profile(), Json::parse(R"({
    "seeds": [0],
    "dataset": {"synthetic": {"n_per_grade": 10, "image_side": 32}},
    "encoder": {"stage1": {"input_side": 32}, "stage3": {"input_side": 32}},
    "stage1": {"pool_size": 5, "train": {"N": 4, "K": 2, "max_epochs": 3}},
    "stage3": {"n_later": 5, "iterations": 1, "train": {"N": 4, "max_epochs": 3}},
    "pseudolabel": {"target_oa": 6, "target_sev": 3}
  })"));
  c.output_dir = out;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string(SEVGRADE_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config JSON round-trips and hashes stably") {
  for (const auto& c : {desk_profile(), paper_profile()}) {
    validate(c);
    const auto back = run_config_from_json(to_json(c));
    CHECK(to_json(back).dump() == to_json(c).dump());
    CHECK(config_hash(back) == config_hash(c));
  }
  CHECK(config_hash(desk_profile()) != config_hash(paper_profile()));
}

TEST_CASE("full-scale profile defaults") {
  const auto p = paper_profile();
  CHECK(p.stage1.train.n == 30);
  CHECK(p.stage1.train.k == 10);
  CHECK(p.stage1.pool_size == 150);
  CHECK(p.stage1.train.lr == doctest::Approx(1e-6));
  CHECK(p.stage1.train.weight_decay == doctest::Approx(0.1));
  CHECK(p.pseudolabel.m_oa == doctest::Approx(1.184));
  CHECK(p.pseudolabel.m_sev == doctest::Approx(3.122));
  CHECK(p.pseudolabel.percentile == 95.0);
  CHECK(p.t_percentile == 95.0);
  CHECK(p.stage3.n_later == 150);
  CHECK(p.stage3.iterations == 2);
  CHECK(p.stage1_encoder.backbone_id == "alexnet");
  CHECK(p.stage3_encoder.backbone_id == "vgg16");
}

TEST_CASE("desk profile matches the desk-scale run size") {
  const auto d = desk_profile();
  CHECK(d.stage1.train.k == 3);
  CHECK(d.stage1.train.n == 10);
  CHECK(d.dataset.synthetic.n_per_grade == 20);
  CHECK(d.dataset.synthetic.grades.size() == 5);
}

TEST_CASE("overrides merge onto the base and invalid values are rejected") {
  const auto c = apply_overrides(desk_profile(), Json::parse(R"({"stage1": {"train": {"lr": 0.5}}})"));
  CHECK(c.stage1.train.lr == 0.5);
  CHECK(c.stage1.train.n == desk_profile().stage1.train.n);
  CHECK(testing::error_kind([] {
          validate(apply_overrides(desk_profile(), Json::parse(R"({"pseudolabel": {"provider": "magic"}})")));
        }) == ErrorKind::config);
  CHECK(testing::error_kind([] {
          validate(apply_overrides(desk_profile(), Json::parse(R"({"encoder": {"stage3": {"patch_mode": true}}})")));
        }) == ErrorKind::config);
}

TEST_CASE("config files resolve relative paths against their directory") {
  testing::TempDir dir("cfg");
  {
    std::ofstream out(dir.path / "c.json");
    out << R"({"profile": "desk", "output_dir": "out", "seeds": [4, 5]})";
  }
  const auto c = load_run_config(dir.path / "c.json");
  CHECK(c.output_dir == dir.path / "out");
  CHECK(c.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(c.stage1.train.k == 3);
}

TEST_CASE("stage checkpoints round-trip") {
  testing::TempDir dir("ckpt");
  TrainedStage s;
  s.mode = TrainMode::dcrl;
  s.encoder = Encoder::create(EncoderConfig{"tiny", 8, false, 1, 16, {}}, 2);
  s.c_norm = {0.1, 0.2};
  s.c_anom = Embedding{0.3, 0.4};
  s.cd_max = 0.123456789012345;
  s.train_ids = {"a", "b"};
  s.anomaly_ids = {"c"};
  s.loss_curve = {0.7, 0.6};
  s.centre_distance_curve = {0.01, 0.02};
  save_stage(dir.path / "st", s);
  CHECK(has_stage(dir.path / "st"));
  const auto back = load_stage(dir.path / "st");
  CHECK(back.mode == s.mode);
  CHECK(back.c_norm == s.c_norm);
  CHECK(back.c_anom == s.c_anom);
  CHECK(back.cd_max == s.cd_max);
  CHECK(back.train_ids == s.train_ids);
  CHECK(back.anomaly_ids == s.anomaly_ids);
  CHECK(back.loss_curve == s.loss_curve);
  CHECK(back.centre_distance_curve == s.centre_distance_curve);
  Image img(16, 16, 0.3f);
  CHECK(back.encoder.encode_global(img) == s.encoder.encode_global(img));
  CHECK(testing::error_kind([&] { load_stage(dir.path / "none"); }) == ErrorKind::missing_stage);
  CHECK(testing::error_kind([&] { load_members(dir.path / "none"); }) == ErrorKind::missing_stage);
}

TEST_CASE("stages refuse to run without their upstream artefacts") {
  testing::TempDir dir("missing");
  const auto c = mini_config(dir.path);
  CHECK(testing::error_kind([&] { load_run_data(c); }) == ErrorKind::missing_stage);
  cmd_prepare(c);
  const auto data = load_run_data(c);
  CHECK(testing::error_kind([&] { cmd_train_stage3(c, 0, Target::sev, 1, data); }) == ErrorKind::missing_stage);
  CHECK(testing::error_kind([&] { cmd_pseudo_label(c, 0, Target::oa, 2, data); }) == ErrorKind::missing_stage);
  CHECK(testing::error_kind([&] { cmd_score(c, 0, data); }) == ErrorKind::missing_stage);
  CHECK(testing::error_kind([&] { cmd_evaluate(c, 0, data); }) == ErrorKind::missing_stage);
}

TEST_CASE("mini run-all writes every artefact with provenance") {
  testing::TempDir dir("runall");
  const auto c = mini_config(dir.path);
  const auto summary = cmd_run_all(c);
  CHECK(summary.rows.size() == 4);
  const RunPaths p{dir.path};
  for (const auto& f : {p.scores_file(0), p.metrics_file(0), p.pool_file(0), p.pseudo_label_file(0, Target::oa, 1),
                        p.pseudo_label_file(0, Target::sev, 1), dir.path / "report.txt", dir.path / "report.json"})
    CHECK_MESSAGE(std::filesystem::exists(f), f.string());
  for (const auto& d : {p.data_dir(), p.stage1_dir(0), p.stage3_dir(0, Target::oa, 1), p.stage3_dir(0, Target::sev, 1),
                        p.seed_dir(0), dir.path}) {
    const auto prov = Json::parse(slurp(d / "provenance.json"));
    CHECK(prov["config_hash"] == config_hash(c));
    CHECK(prov.contains("code_version"));
    CHECK(prov.contains("seed"));
  }
  const auto scores = load_scores(p.scores_file(0));
  const auto data = load_run_data(c);
  CHECK(scores.reports.size() == data.manifest.split(Split::test).size());
  for (const auto& r : scores.reports) {
    CHECK(r.s_ssl.has_value());
    CHECK(r.s_comb.has_value());
    CHECK(r.votes->size() <= 2);  // the file keeps the count of yes votes
  }

  // evaluation is idempotent
  const auto before = slurp(p.metrics_file(0));
  cmd_evaluate(c, 0, data);
  CHECK(slurp(p.metrics_file(0)) == before);

  // scoring never consults the similarity provider
  auto no_provider = c;
  no_provider.pseudolabel.provider = "command";
  no_provider.pseudolabel.command_env = "SEVGRADE_TEST_UNSET_VARIABLE";
  const auto rescored = cmd_score(no_provider, 0, data);
  CHECK(rescored.reports.size() == scores.reports.size());
}

TEST_CASE("command line exit codes") {
  testing::TempDir dir("cli");
  const auto log = dir.path / "log.txt";
  CHECK(run_cli("--help", log) == 0);
  CHECK(run_cli("no-such-command", log) == 1);
  CHECK(run_cli("--profile desk -o " + (dir.path / "run").string() + " prepare", log) == 0);
  CHECK(run_cli("--profile desk -o " + (dir.path / "run").string() + " train-stage3 --target sev", log) == 1);
  CHECK(slurp(log).find("train-stage1") != std::string::npos);
  CHECK(run_cli("--profile desk -o " + (dir.path / "run").string() + " score", log) == 1);

  {
    std::ofstream bad(dir.path / "bad.csv");
    bad << "image_ref,patient_id,knee_side,split,kl,jsn_med,jsn_lat,ost_mdf,ost_ldf,ost_mpt,ost_lpt\n"
        << "a.pgm,P1,left,train,9,0,0,0,0,0,0\n";
  }
  {
    std::ofstream cfg(dir.path / "bad.json");
    cfg << R"({"profile": "desk", "output_dir": "bad_run", "dataset": {"manifest": "bad.csv"}})";
  }
  CHECK(run_cli("-c " + (dir.path / "bad.json").string() + " prepare", log) == 1);
  CHECK(slurp(log).find("row 2") != std::string::npos);
}
