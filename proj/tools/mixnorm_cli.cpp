// Experiment runner: training, evaluation, ablation suites, gradient checks
// and partition statistics, all reproducible from config seeds.
//
// Exit codes: 0 success, 1 check failure, 2 usage/config error, 3 numerical
// failure.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mixnorm/checkpoint.hpp"
#include "mixnorm/config.hpp"
#include "mixnorm/experiment.hpp"
#include "mixnorm/gradsuite.hpp"
#include "mixnorm/partition.hpp"
#include "mixnorm/serialize.hpp"
#include "mixnorm/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

mixnorm::ExperimentConfig resolve_config(const std::string& config_path,
                                         const std::string& preset,
                                         std::uint64_t seed_flag, bool seed_set) {
  if (config_path.empty() == preset.empty())
    throw mixnorm::config_error(
        "train: exactly one of --config and --preset is required");
  mixnorm::ExperimentConfig cfg = config_path.empty()
                                      ? mixnorm::make_preset(preset)
                                      : mixnorm::load_config(config_path);
  if (seed_set) cfg.seed = seed_flag;
  if (const char* env = std::getenv("MIXNORM_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0')
      throw mixnorm::config_error("MIXNORM_SEED: not an integer");
    cfg.seed = v;
  }
  cfg.validate();
  return cfg;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    seeds.push_back(std::stoull(tok));
  }
  if (seeds.empty()) throw mixnorm::config_error("--seeds: empty list");
  return seeds;
}

int cmd_train(const std::string& config_path, const std::string& preset,
              const std::string& out, std::uint64_t seed, bool seed_set) {
  const auto cfg = resolve_config(config_path, preset, seed, seed_set);
  const std::string out_dir = !out.empty() ? out : cfg.out_dir;
  if (out_dir.empty())
    throw mixnorm::config_error("train: --out or config out_dir required");
  const mixnorm::TrainResult result = mixnorm::run_experiment(cfg, out_dir);
  std::printf("trained %zu epochs; target_acc=%.4f map=%.4f -> %s\n",
              result.metrics.size(), result.report.target_accuracy,
              result.report.map, out_dir.c_str());
  return kExitOk;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint_path,
             const std::string& out) {
  const auto cfg = mixnorm::load_config(config_path);
  auto loaded = mixnorm::load_checkpoint(checkpoint_path);
  mixnorm::RngStream root(cfg.seed);
  mixnorm::MultiDomainData data = mixnorm::build_data(cfg.data, root.split("data"));

  mixnorm::EvalReport report;
  report.target_accuracy =
      mixnorm::evaluate_classification(loaded.model, data.target_cls);
  const auto rm = mixnorm::evaluate_retrieval(loaded.model, data.query, data.gallery);
  report.map = rm.map;
  report.cmc1 = rm.cmc1;
  report.cmc5 = rm.cmc5;
  report.cmc10 = rm.cmc10;

  std::size_t total = 0;
  for (const auto& ds : data.sources) total += ds.size();
  const auto dim = static_cast<std::size_t>(loaded.model.cfg.embedding_dim);
  mixnorm::TensorF emb({total, dim});
  std::vector<int> domains(total);
  std::size_t row = 0;
  for (const auto& ds : data.sources) {
    const mixnorm::TensorF e = mixnorm::embed_dataset(loaded.model, ds);
    for (std::size_t i = 0; i < ds.size(); ++i, ++row) {
      for (std::size_t d = 0; d < dim; ++d) emb[row * dim + d] = e[i * dim + d];
      domains[row] = ds.domain_ids[i];
    }
  }
  report.domain_center_distances = mixnorm::domain_center_stats(emb, domains);

  if (!out.empty()) {
    std::filesystem::create_directories(out);
    mixnorm::write_file_atomic(std::filesystem::path(out) / "eval_report.json",
                               mixnorm::eval_report_to_json(report));
  }
  std::printf("target_acc=%.4f map=%.4f cmc1=%.4f cmc5=%.4f cmc10=%.4f\n",
              report.target_accuracy, report.map, report.cmc1, report.cmc5,
              report.cmc10);
  return kExitOk;
}

int cmd_ablate(const std::string& suite, const std::string& seeds_text,
               const std::string& out) {
  const auto seeds = parse_seed_list(seeds_text);
  const auto result = mixnorm::run_ablation(suite, seeds, out);
  std::printf("suite %s: %zu configs x %zu seeds -> %s\n", suite.c_str(),
              result.config_names.size(), seeds.size(), out.c_str());
  return kExitOk;
}

int cmd_gradcheck(const std::string& inject) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto reports = mixnorm::run_gradcheck_suite(inject);
  const auto t1 = std::chrono::steady_clock::now();
  const double secs = std::chrono::duration<double>(t1 - t0).count();

  bool all_pass = true;
  std::vector<std::string> failed;
  for (const auto& r : reports) {
    std::printf("%-28s worst_rel_error=%.3e tol=%.0e configs=%d %s\n",
                r.component.c_str(), r.worst_rel_error, r.tolerance, r.configs,
                r.pass ? "PASS" : "FAIL");
    if (!r.pass) {
      all_pass = false;
      failed.push_back(r.component);
    }
  }
  std::printf("gradcheck: %zu components in %.1f s\n", reports.size(), secs);
  if (!all_pass) {
    std::string names;
    for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f;
    std::fprintf(stderr, "gradcheck: tolerance breached in %s\n", names.c_str());
    return kExitCheckFailure;
  }
  return kExitOk;
}

int cmd_partition_stats(int domains, int max_group, long trials, std::uint64_t seed) {
  mixnorm::PartitionPolicy policy = mixnorm::PartitionPolicy::d_minus_1(domains);
  if (max_group > 0) {
    policy.max_group = max_group;
  }
  policy.validate();
  mixnorm::RngStream rng(seed);
  const auto hist = mixnorm::partition_distribution(policy, rng,
                                                    static_cast<std::size_t>(trials));
  std::printf("sizes,frequency\n");
  for (const auto& [sizes, freq] : hist) {
    std::string key;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      if (i) key += '+';
      key += std::to_string(sizes[i]);
    }
    std::printf("%s,%.6f\n", key.c_str(), freq);
  }
  return kExitOk;
}

int cmd_export_embeddings(const std::string& config_path,
                          const std::string& checkpoint_path, const std::string& out) {
  const auto cfg = mixnorm::load_config(config_path);
  auto loaded = mixnorm::load_checkpoint(checkpoint_path);
  mixnorm::RngStream root(cfg.seed);
  mixnorm::MultiDomainData data = mixnorm::build_data(cfg.data, root.split("data"));

  std::size_t total = 0;
  for (const auto& ds : data.sources) total += ds.size();
  const auto dim = static_cast<std::size_t>(loaded.model.cfg.embedding_dim);
  mixnorm::TensorF emb({total, dim});
  std::vector<int> domains(total), classes(total);
  std::size_t row = 0;
  for (const auto& ds : data.sources) {
    const mixnorm::TensorF e = mixnorm::embed_dataset(loaded.model, ds);
    for (std::size_t i = 0; i < ds.size(); ++i, ++row) {
      for (std::size_t d = 0; d < dim; ++d) emb[row * dim + d] = e[i * dim + d];
      domains[row] = ds.domain_ids[i];
      classes[row] = ds.class_ids[i];
    }
  }

  std::filesystem::create_directories(out);
  {
    std::ostringstream os;
    os << "domain_id,class_id";
    for (std::size_t d = 0; d < dim; ++d) os << ",e" << d;
    os << '\n';
    for (std::size_t i = 0; i < total; ++i) {
      os << domains[i] << ',' << classes[i];
      for (std::size_t d = 0; d < dim; ++d)
        os << ',' << mixnorm::format_float(emb[i * dim + d]);
      os << '\n';
    }
    mixnorm::write_file_atomic(std::filesystem::path(out) / "embeddings.csv", os.str());
  }
  {
    const mixnorm::Pca2d pca = mixnorm::pca_project_2d(emb);
    if (pca.degenerate)
      std::fprintf(stderr, "export-embeddings: zero-variance embeddings, projection is all zeros\n");
    std::ostringstream os;
    os << "domain_id,class_id,x,y\n";
    for (std::size_t i = 0; i < total; ++i)
      os << domains[i] << ',' << classes[i] << ','
         << mixnorm::format_float(pca.coords[i * 2 + 0]) << ','
         << mixnorm::format_float(pca.coords[i * 2 + 1]) << '\n';
    mixnorm::write_file_atomic(std::filesystem::path(out) / "projection.csv", os.str());
  }
  std::printf("exported %zu source embeddings -> %s\n", total, out.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-aware mix-normalization experiment harness"};
  app.require_subcommand(1);

  std::string config_path, preset, out, checkpoint_path, suite, inject;
  std::string seeds_text = "1,2,3,4,5";
  std::uint64_t seed = 0;
  int domains = 3, max_group = 0;
  long trials = 10000;

  auto* train = app.add_subcommand("train", "Train per config and write run outputs");
  train->add_option("--config", config_path, "JSON experiment config");
  train->add_option("--preset", preset, "Built-in config preset name");
  train->add_option("--out", out, "Output directory");
  auto* seed_opt = train->add_option("--seed", seed, "Override config seed");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the config's data");
  eval->add_option("--config", config_path, "JSON experiment config")->required();
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint.json path")->required();
  eval->add_option("--out", out, "Directory for eval_report.json");

  auto* ablate = app.add_subcommand("ablate", "Run a paired ablation suite");
  ablate->add_option("--suite", suite, "components|ddc|max_group|sampling|dcr_vs_cl|layers|fixed_c1")
      ->required();
  ablate->add_option("--seeds", seeds_text, "Comma-separated seed list");
  ablate->add_option("--out", out, "Output directory")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Run the finite-difference suite");
  gradcheck->add_option("--inject", inject, "Fault injection for harness self-tests")
      ->group("");  // hidden

  auto* pstats = app.add_subcommand("partition-stats",
                                    "Histogram of sampled group-size multisets");
  pstats->add_option("--domains", domains, "Number of source domains")->required();
  pstats->add_option("--max-group", max_group, "Max group size (default D-1)");
  pstats->add_option("--trials", trials, "Number of samples");
  pstats->add_option("--seed", seed, "RNG seed");

  auto* export_emb = app.add_subcommand("export-embeddings",
                                        "Source embeddings and 2-D projection CSVs");
  export_emb->add_option("--config", config_path, "JSON experiment config")->required();
  export_emb->add_option("--checkpoint", checkpoint_path, "checkpoint.json path")
      ->required();
  export_emb->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (train->parsed())
      return cmd_train(config_path, preset, out, seed, seed_opt->count() > 0);
    if (eval->parsed()) return cmd_eval(config_path, checkpoint_path, out);
    if (ablate->parsed()) return cmd_ablate(suite, seeds_text, out);
    if (gradcheck->parsed()) return cmd_gradcheck(inject);
    if (pstats->parsed()) return cmd_partition_stats(domains, max_group, trials, seed);
    if (export_emb->parsed())
      return cmd_export_embeddings(config_path, checkpoint_path, out);
  } catch (const mixnorm::config_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const mixnorm::numerical_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitCheckFailure;
  }
  return kExitUsage;
}
