#include "sevgrade/checkpoint.hpp"

#include "sevgrade/config.hpp"
#include "sevgrade/error.hpp"
#include "text_util.hpp"

namespace sevgrade {

void save_stage(const std::filesystem::path& dir, const TrainedStage& stage) {
  std::filesystem::create_directories(dir);
  nn::save_weights(dir / "weights.bin", stage.encoder.network());
  auto enc = stage.encoder.config();
  enc.weights.clear();
  Json j;
  j["mode"] = to_string(stage.mode);
  j["encoder"] = to_json(enc);
  j["c_norm"] = stage.c_norm;
  j["c_anom"] = stage.c_anom ? Json(*stage.c_anom) : Json(nullptr);
  j["cd_max"] = stage.cd_max;
  j["train_ids"] = stage.train_ids;
  j["anomaly_ids"] = stage.anomaly_ids;
  j["loss_curve"] = stage.loss_curve;
  j["centre_distance_curve"] = stage.centre_distance_curve;
  j["stopped_early"] = stage.stopped_early;
  detail::write_text_atomic(dir / "stage.json", j.dump(2) + "\n");
}

bool has_stage(const std::filesystem::path& dir) {
  return std::filesystem::exists(dir / "stage.json") && std::filesystem::exists(dir / "weights.bin");
}

TrainedStage load_stage(const std::filesystem::path& dir) {
  if (!has_stage(dir)) throw Error(ErrorKind::missing_stage, "no checkpoint in " + dir.string());
  Json j;
  try {
    j = Json::parse(detail::read_text_file(dir / "stage.json"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, (dir / "stage.json").string() + ": " + e.what());
  }
  try {
    TrainedStage s;
    s.mode = parse_train_mode(j.at("mode").get<std::string>());
    auto enc = encoder_from_json(j.at("encoder"));
    enc.weights = dir / "weights.bin";
    s.encoder = Encoder::create(enc, 0);
    s.c_norm = j.at("c_norm").get<Embedding>();
    if (!j.at("c_anom").is_null()) s.c_anom = j.at("c_anom").get<Embedding>();
    s.cd_max = j.at("cd_max").get<double>();
    s.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    s.anomaly_ids = j.at("anomaly_ids").get<std::vector<std::string>>();
    s.loss_curve = j.at("loss_curve").get<std::vector<double>>();
    s.centre_distance_curve = j.at("centre_distance_curve").get<std::vector<double>>();
    s.stopped_early = j.at("stopped_early").get<bool>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, (dir / "stage.json").string() + ": " + e.what());
  }
}

std::vector<TrainedStage> load_members(const std::filesystem::path& stage1_dir) {
  std::vector<TrainedStage> out;
  for (int k = 0;; ++k) {
    const auto dir = stage1_dir / ("member_" + std::to_string(k));
    if (!has_stage(dir)) break;
    out.push_back(load_stage(dir));
  }
  if (out.empty()) throw Error(ErrorKind::missing_stage, "stage-1 checkpoints missing under " + stage1_dir.string() + "; run train-stage1 first");
  return out;
}

}  // namespace sevgrade
