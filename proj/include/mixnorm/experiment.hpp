#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mixnorm/config.hpp"
#include "mixnorm/trainer.hpp"

namespace mixnorm {

// Deterministic dataset construction from the data config: shared class
// prototypes, one style per source domain, a held-out target style with the
// shared classes for classification and a disjoint identity set split
// 30/70 into query/gallery for retrieval.
MultiDomainData build_data(const DataConfig& cfg, RngStream rng);

std::string metrics_to_csv(const std::vector<MetricsRow>& rows);
std::string eval_report_to_json(const EvalReport& report);

// Trains per the config and writes config.json, metrics.csv,
// eval_report.json and checkpoint.json into out_dir.
TrainResult run_experiment(const ExperimentConfig& cfg,
                           const std::filesystem::path& out_dir);

struct AblationCell {
  std::string config_name;
  std::uint64_t seed = 0;
  EvalReport report;
};

struct AblationResult {
  std::string suite;
  std::string baseline;  // win counts are relative to this config
  std::vector<std::string> config_names;
  std::vector<AblationCell> cells;
};

std::vector<std::string> ablation_suite_names();

// The paired configurations of one ablation suite, baseline first.
std::vector<std::pair<std::string, ExperimentConfig>> ablation_suite(
    const std::string& suite);

// Runs every (config, seed) cell — independent cells may run concurrently —
// and writes comparison.csv plus summary.csv into out_dir.
AblationResult run_ablation(const std::string& suite,
                            const std::vector<std::uint64_t>& seeds,
                            const std::filesystem::path& out_dir);

}  // namespace mixnorm
