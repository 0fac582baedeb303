#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixnorm/model.hpp"
#include "mixnorm/trainer.hpp"

namespace mixnorm {

// Raised on malformed configuration; the message starts with the offending
// field path. The CLI maps it to its usage/config exit code.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  int feature_dim = 16;
  int n_classes = 20;
  int n_source_domains = 3;
  int samples_per_class = 16;         // per source domain
  int target_samples_per_class = 16;  // unseen-domain classification set
  int retrieval_ids = 12;             // disjoint identities in the target domain
  int retrieval_samples_per_id = 10;  // split 30/70 into query/gallery
  double prototype_scale = 1.0;
  double noise_sigma = 0.35;
  double style_scale_min = 0.5;
  double style_scale_max = 2.0;
  double style_shift_range = 1.5;
  double rotation_strength = 0.15;
  // Optional externally supplied CSV data; overrides the generator.
  std::vector<std::string> external_sources;
  std::string external_target;
  std::string external_query;
  std::string external_gallery;

  bool has_external() const { return !external_sources.empty(); }
};

struct SamplerConfig {
  SamplerKind kind = SamplerKind::Us;
  int p_ids = 8;
  int k_per_id = 4;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  DataConfig data;
  SamplerConfig sampler;
  ModelConfig model;
  TrainSchedule schedule;
  LossConfig loss;
  DmnOptions dmn;
  std::string out_dir;

  void validate() const;  // throws config_error with a field path
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& cfg);

// Built-in experiment presets; throws config_error for unknown names.
// Names: baseline_bn, baseline_bn_rs, baseline_bn_dcr, mixnorm_nodcr,
// mixnorm_full, mixnorm_center.
ExperimentConfig make_preset(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace mixnorm
