#pragma once

#include <filesystem>
#include <vector>

#include "sevgrade/trainer.hpp"

namespace sevgrade {

/// Writes weights.bin and stage.json into dir, each via write-then-rename.
void save_stage(const std::filesystem::path& dir, const TrainedStage& stage);

/// Throws a missing-stage Error when dir holds no checkpoint.
TrainedStage load_stage(const std::filesystem::path& dir);

bool has_stage(const std::filesystem::path& dir);

/// stage1/member_{k} for k = 0.. until a member is absent.
std::vector<TrainedStage> load_members(const std::filesystem::path& stage1_dir);

}  // namespace sevgrade
