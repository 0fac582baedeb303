#pragma once

#include <filesystem>

#include "mixnorm/model.hpp"
#include "mixnorm/trainer.hpp"

namespace mixnorm {

// Versioned JSON envelope; parameter and running-statistic vectors are
// embedded as base64 of the binary tensor blob format, so a save/load round
// trip is bit-exact.
void save_checkpoint(const Model<float>& model, const TrainSchedule& schedule,
                     const std::filesystem::path& path);

struct LoadedCheckpoint {
  Model<float> model;
  TrainSchedule schedule;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mixnorm
