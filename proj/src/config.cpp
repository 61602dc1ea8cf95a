#include "sevgrade/config.hpp"

#include "sevgrade/error.hpp"
#include "text_util.hpp"

namespace sevgrade {

RunConfig desk_profile() {
  RunConfig c;
  c.profile = "desk";
  c.output_dir = "runs/desk";
  c.seeds = {0};
  c.dataset.synthetic = SyntheticSpec{};
  c.stage1_encoder = EncoderConfig{"tiny", 5, true, 1, 64, {}};
  c.stage3_encoder = EncoderConfig{"tiny", 8, false, 1, 64, {}};

  c.stage1.train.mode = TrainMode::ssl;
  c.stage1.train.n = 10;
  c.stage1.train.k = 3;
  c.stage1.train.lr = 3e-3;
  c.stage1.train.weight_decay = 1e-4;
  c.stage1.train.max_epochs = 150;
  c.stage1.train.plateau.window_epochs = 40;
  c.stage1.pool_size = 12;

  c.stage3.train.mode = TrainMode::dcrl;
  c.stage3.train.n = 10;
  c.stage3.train.k = 1;
  c.stage3.train.lr = 1e-4;
  c.stage3.train.weight_decay = 1e-4;
  c.stage3.train.max_epochs = 40;
  c.stage3.n_later = 12;
  c.stage3.iterations = 2;

  c.pseudolabel.margin_mode = MarginMode::balanced;
  c.pseudolabel.target_oa = 42;
  c.pseudolabel.target_sev = 12;
  c.pseudolabel.provider = "table";
  return c;
}

RunConfig paper_profile() {
  RunConfig c;
  c.profile = "paper";
  c.output_dir = "runs/paper";
  c.seeds = {0, 1, 2, 3, 4};
  c.dataset.synthetic.image_side = 224;
  c.stage1_encoder = EncoderConfig{"alexnet", 5, true, 3, 224, {}};
  c.stage3_encoder = EncoderConfig{"vgg16", 31, false, 1, 224, {}};

  c.stage1.train.mode = TrainMode::ssl;
  c.stage1.train.n = 30;
  c.stage1.train.k = 10;
  c.stage1.train.lr = 1e-6;
  c.stage1.train.weight_decay = 0.1;
  c.stage1.train.max_epochs = 100;
  c.stage1.pool_size = 150;

  c.stage3.train.mode = TrainMode::dcrl;
  c.stage3.train.n = 30;
  c.stage3.train.k = 1;
  c.stage3.train.lr = 1e-6;
  c.stage3.train.weight_decay = 0.1;
  c.stage3.train.max_epochs = 100;
  c.stage3.n_later = 150;
  c.stage3.iterations = 2;

  c.pseudolabel.margin_mode = MarginMode::fixed;
  c.pseudolabel.m_oa = 1.184;
  c.pseudolabel.m_sev = 3.122;
  c.pseudolabel.provider = "command";
  c.pseudolabel.cache = "similarity_cache.csv";
  return c;
}

void validate(const RunConfig& c) {
  if (c.seeds.empty()) throw Error(ErrorKind::config, "at least one seed is required");
  validate(c.stage1_encoder);
  validate(c.stage3_encoder);
  if (!c.stage1_encoder.patch_mode) throw Error(ErrorKind::config, "stage-1 encoder must use patch mode");
  if (c.stage3_encoder.patch_mode) throw Error(ErrorKind::config, "stage-3 encoder must not use patch mode");
  validate(c.sda);
  validate(c.stage1.train);
  validate(c.stage3.train);
  if (c.stage1.pool_size < static_cast<std::size_t>(c.stage1.train.n)) {
    throw Error(ErrorKind::config, "stage-1 pool_size must be >= N");
  }
  if (c.stage3.iterations < 1) throw Error(ErrorKind::config, "stage-3 iterations must be >= 1");
  if (c.stage3.n_later < 2) throw Error(ErrorKind::config, "stage-3 n_later must be >= 2");
  const auto& p = c.pseudolabel;
  if (p.margin_mode == MarginMode::fixed && (p.m_oa < 1.0 || p.m_sev < 1.0)) {
    throw Error(ErrorKind::config, "margins must be >= 1");
  }
  if (p.margin_mode == MarginMode::fixed && p.m_oa > p.m_sev) {
    throw Error(ErrorKind::config, "m_oa must not exceed m_sev");
  }
  if (p.margin_mode == MarginMode::balanced && p.target_sev > p.target_oa) {
    throw Error(ErrorKind::config, "target_sev must not exceed target_oa");
  }
  if (!(p.percentile > 0 && p.percentile <= 100)) throw Error(ErrorKind::config, "percentile outside (0, 100]");
  if (p.provider != "table" && p.provider != "command" && p.provider != "none") {
    throw Error(ErrorKind::config, "provider must be table, command or none");
  }
  if (!(c.t_percentile > 0 && c.t_percentile <= 100)) throw Error(ErrorKind::config, "t_percentile outside (0, 100]");
}

Json to_json(const EncoderConfig& c) {
  return Json{{"backbone_id", c.backbone_id},   {"truncate_at_layer", c.truncate_at_layer},
              {"patch_mode", c.patch_mode},     {"window", c.window},
              {"input_side", c.input_side},     {"weights", c.weights.string()}};
}

namespace {

template <class T>
void read(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, std::string("config key '") + key + "': " + e.what());
  }
}

void read_path(const Json& j, const char* key, std::filesystem::path& out) {
  std::string s = out.string();
  read(j, key, s);
  out = s;
}

void require_object(const Json& j, const char* what) {
  if (!j.is_object()) throw Error(ErrorKind::config, std::string(what) + " must be an object");
}

Json kinds_json(const std::vector<TransformKind>& kinds) {
  Json a = Json::array();
  for (auto k : kinds) a.push_back(to_string(k));
  return a;
}

std::vector<TransformKind> kinds_from(const Json& j) {
  std::vector<TransformKind> out;
  for (const auto& v : j) out.push_back(parse_transform(v.get<std::string>()));
  return out;
}

const char* to_string(MarginMode m) { return m == MarginMode::fixed ? "fixed" : "balanced"; }

MarginMode parse_margin_mode(const std::string& s) {
  if (s == "fixed") return MarginMode::fixed;
  if (s == "balanced") return MarginMode::balanced;
  throw Error(ErrorKind::config, "margin_mode must be fixed or balanced");
}

}  // namespace

EncoderConfig encoder_from_json(const Json& j) {
  require_object(j, "encoder");
  EncoderConfig c;
  read(j, "backbone_id", c.backbone_id);
  read(j, "truncate_at_layer", c.truncate_at_layer);
  read(j, "patch_mode", c.patch_mode);
  read(j, "window", c.window);
  read(j, "input_side", c.input_side);
  read_path(j, "weights", c.weights);
  return c;
}

Json to_json(const TrainConfig& c) {
  return Json{{"mode", to_string(c.mode)},
              {"N", c.n},
              {"K", c.k},
              {"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"batch_size", c.batch_size},
              {"max_epochs", c.max_epochs},
              {"plateau", {{"window_epochs", c.plateau.window_epochs}, {"rel_tol", c.plateau.rel_tol}}},
              {"workers", c.workers}};
}

TrainConfig train_from_json(const Json& j) {
  require_object(j, "train");
  TrainConfig c;
  std::string mode = to_string(c.mode);
  read(j, "mode", mode);
  c.mode = parse_train_mode(mode);
  read(j, "N", c.n);
  read(j, "K", c.k);
  read(j, "lr", c.lr);
  read(j, "weight_decay", c.weight_decay);
  read(j, "batch_size", c.batch_size);
  read(j, "max_epochs", c.max_epochs);
  if (j.contains("plateau")) {
    read(j.at("plateau"), "window_epochs", c.plateau.window_epochs);
    read(j.at("plateau"), "rel_tol", c.plateau.rel_tol);
  }
  read(j, "workers", c.workers);
  return c;
}

Json to_json(const SdaConfig& c) {
  return Json{{"t_norm", kinds_json(c.t_norm)},
              {"t_anom", kinds_json(c.t_anom)},
              {"t_norm_weights", c.t_norm_weights},
              {"t_anom_weights", c.t_anom_weights},
              {"jitter_strength", c.jitter_strength},
              {"sharpness_strength", c.sharpness_strength},
              {"brightness_strength", c.brightness_strength},
              {"crop_area", {c.crop_area_min, c.crop_area_max}},
              {"cutpaste_area", {c.cutpaste_area_min, c.cutpaste_area_max}},
              {"cutpaste_aspect", {c.cutpaste_aspect_min, c.cutpaste_aspect_max}},
              {"posterise_bits", c.posterise_bits},
              {"rotate_degrees", {c.rotate_min_degrees, c.rotate_max_degrees}}};
}

SdaConfig sda_from_json(const Json& j) {
  require_object(j, "sda");
  SdaConfig c;
  try {
    if (j.contains("t_norm")) c.t_norm = kinds_from(j.at("t_norm"));
    if (j.contains("t_anom")) c.t_anom = kinds_from(j.at("t_anom"));
    auto pair = [&](const char* key, double& lo, double& hi) {
      if (!j.contains(key)) return;
      const auto& a = j.at(key);
      if (!a.is_array() || a.size() != 2) throw Error(ErrorKind::config, std::string(key) + " must be [min, max]");
      lo = a[0].get<double>();
      hi = a[1].get<double>();
    };
    pair("crop_area", c.crop_area_min, c.crop_area_max);
    pair("cutpaste_area", c.cutpaste_area_min, c.cutpaste_area_max);
    pair("cutpaste_aspect", c.cutpaste_aspect_min, c.cutpaste_aspect_max);
    pair("rotate_degrees", c.rotate_min_degrees, c.rotate_max_degrees);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, std::string("sda: ") + e.what());
  }
  read(j, "t_norm_weights", c.t_norm_weights);
  read(j, "t_anom_weights", c.t_anom_weights);
  read(j, "jitter_strength", c.jitter_strength);
  read(j, "sharpness_strength", c.sharpness_strength);
  read(j, "brightness_strength", c.brightness_strength);
  read(j, "posterise_bits", c.posterise_bits);
  return c;
}

Json to_json(const RunConfig& c) {
  const auto& s = c.dataset.synthetic;
  Json j;
  j["profile"] = c.profile;
  j["output_dir"] = c.output_dir.string();
  j["seeds"] = c.seeds;
  j["dataset"] = {{"manifest", c.dataset.manifest.string()},
                  {"similarity_table", c.dataset.similarity_table.string()},
                  {"synthetic",
                   {{"n_per_grade", s.n_per_grade},
                    {"grades", s.grades},
                    {"image_side", s.image_side},
                    {"rng_seed", s.rng_seed},
                    {"implant_fraction", s.implant_fraction},
                    {"split_fractions", s.split_fractions}}}};
  j["encoder"] = {{"stage1", to_json(c.stage1_encoder)}, {"stage3", to_json(c.stage3_encoder)}};
  j["sda"] = to_json(c.sda);
  j["stage1"] = {{"train", to_json(c.stage1.train)}, {"pool_size", c.stage1.pool_size}};
  j["stage3"] = {{"train", to_json(c.stage3.train)}, {"n_later", c.stage3.n_later}, {"iterations", c.stage3.iterations}};
  const auto& p = c.pseudolabel;
  j["pseudolabel"] = {{"margin_mode", to_string(p.margin_mode)},
                      {"m_oa", p.m_oa},
                      {"m_sev", p.m_sev},
                      {"target_oa", p.target_oa},
                      {"target_sev", p.target_sev},
                      {"statement", p.statement},
                      {"percentile", p.percentile},
                      {"denoise", p.denoise},
                      {"provider", p.provider},
                      {"command_env", p.command_env},
                      {"cache", p.cache.string()}};
  j["scoring"] = {{"t_percentile", c.t_percentile}};
  j["eval"] = {{"split", to_string(c.eval.split)},
               {"severe_min_grade", c.eval.severe_min_grade},
               {"allow_undefined", c.eval.allow_undefined}};
  return j;
}

RunConfig run_config_from_json(const Json& j) {
  require_object(j, "config");
  RunConfig c;
  read(j, "profile", c.profile);
  read_path(j, "output_dir", c.output_dir);
  read(j, "seeds", c.seeds);
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    read_path(d, "manifest", c.dataset.manifest);
    read_path(d, "similarity_table", c.dataset.similarity_table);
    if (d.contains("synthetic")) {
      const auto& s = d.at("synthetic");
      auto& o = c.dataset.synthetic;
      read(s, "n_per_grade", o.n_per_grade);
      read(s, "grades", o.grades);
      read(s, "image_side", o.image_side);
      read(s, "rng_seed", o.rng_seed);
      read(s, "implant_fraction", o.implant_fraction);
      read(s, "split_fractions", o.split_fractions);
    }
  }
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    if (e.contains("stage1")) c.stage1_encoder = encoder_from_json(e.at("stage1"));
    if (e.contains("stage3")) c.stage3_encoder = encoder_from_json(e.at("stage3"));
  }
  if (j.contains("sda")) c.sda = sda_from_json(j.at("sda"));
  if (j.contains("stage1")) {
    const auto& s = j.at("stage1");
    if (s.contains("train")) c.stage1.train = train_from_json(s.at("train"));
    read(s, "pool_size", c.stage1.pool_size);
  }
  if (j.contains("stage3")) {
    const auto& s = j.at("stage3");
    if (s.contains("train")) c.stage3.train = train_from_json(s.at("train"));
    read(s, "n_later", c.stage3.n_later);
    read(s, "iterations", c.stage3.iterations);
  }
  if (j.contains("pseudolabel")) {
    const auto& p = j.at("pseudolabel");
    auto& o = c.pseudolabel;
    std::string mode = to_string(o.margin_mode);
    read(p, "margin_mode", mode);
    o.margin_mode = parse_margin_mode(mode);
    read(p, "m_oa", o.m_oa);
    read(p, "m_sev", o.m_sev);
    read(p, "target_oa", o.target_oa);
    read(p, "target_sev", o.target_sev);
    read(p, "statement", o.statement);
    read(p, "percentile", o.percentile);
    read(p, "denoise", o.denoise);
    read(p, "provider", o.provider);
    read(p, "command_env", o.command_env);
    read_path(p, "cache", o.cache);
  }
  if (j.contains("scoring")) read(j.at("scoring"), "t_percentile", c.t_percentile);
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    std::string split = to_string(c.eval.split);
    read(e, "split", split);
    c.eval.split = parse_split(split);
    read(e, "severe_min_grade", c.eval.severe_min_grade);
    read(e, "allow_undefined", c.eval.allow_undefined);
  }
  return c;
}

RunConfig apply_overrides(const RunConfig& base, const Json& patch) {
  Json j = to_json(base);
  j.merge_patch(patch);
  return run_config_from_json(j);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  Json doc;
  try {
    doc = Json::parse(detail::read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::parse, path.string() + ": " + e.what());
  }
  require_object(doc, "config");
  const std::string profile = doc.value("profile", std::string("desk"));
  RunConfig base;
  if (profile == "desk") base = desk_profile();
  else if (profile == "paper") base = paper_profile();
  else throw Error(ErrorKind::config, "unknown profile '" + profile + "'");
  auto c = apply_overrides(base, doc);

  const auto dir = path.parent_path();
  auto resolve = [&](std::filesystem::path& p) {
    if (!p.empty() && p.is_relative()) p = dir / p;
  };
  resolve(c.output_dir);
  resolve(c.dataset.manifest);
  resolve(c.dataset.similarity_table);
  resolve(c.stage1_encoder.weights);
  resolve(c.stage3_encoder.weights);
  validate(c);
  return c;
}

std::string config_hash(const RunConfig& config) {
  auto j = to_json(config);
  // the output location does not change results
  j.erase("output_dir");
  return detail::hex64(detail::fnv1a(j.dump()));
}

}  // namespace sevgrade
