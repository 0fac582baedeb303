#include "mixnorm/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "mixnorm/checkpoint.hpp"
#include "mixnorm/serialize.hpp"

namespace mixnorm {

namespace {

TensorF make_prototypes(int count, int dim, double scale, RngStream& rng) {
  TensorF protos({static_cast<std::size_t>(count), static_cast<std::size_t>(dim)});
  for (std::size_t i = 0; i < protos.size(); ++i)
    protos[i] = static_cast<float>(scale * rng.normal());
  return protos;
}

TensorF slice_rows(const TensorF& m, std::size_t begin, std::size_t count) {
  const std::size_t dim = m.channels();
  TensorF out({count, dim});
  for (std::size_t r = 0; r < count; ++r)
    for (std::size_t c = 0; c < dim; ++c) out[r * dim + c] = m[(begin + r) * dim + c];
  return out;
}

}  // namespace

MultiDomainData build_data(const DataConfig& cfg, RngStream rng) {
  if (cfg.has_external()) {
    MultiDomainData data;
    for (const auto& path : cfg.external_sources)
      data.sources.push_back(load_dataset_csv(path));
    data.target_cls = load_dataset_csv(cfg.external_target);
    data.query = load_dataset_csv(cfg.external_query);
    data.gallery = load_dataset_csv(cfg.external_gallery);
    return data;
  }

  auto proto_rng = rng.split("prototypes");
  const TensorF protos = make_prototypes(cfg.n_classes + cfg.retrieval_ids,
                                         cfg.feature_dim, cfg.prototype_scale,
                                         proto_rng);
  const TensorF train_protos = slice_rows(protos, 0, static_cast<std::size_t>(cfg.n_classes));
  const TensorF retrieval_protos = slice_rows(
      protos, static_cast<std::size_t>(cfg.n_classes),
      static_cast<std::size_t>(cfg.retrieval_ids));

  MultiDomainData data;
  const auto dim = static_cast<std::size_t>(cfg.feature_dim);
  for (int d = 0; d < cfg.n_source_domains; ++d) {
    auto spec_rng = rng.split("style/source" + std::to_string(d));
    const DomainSpec spec = random_domain_spec(
        d, dim, cfg.style_scale_min, cfg.style_scale_max, cfg.style_shift_range,
        cfg.rotation_strength, cfg.noise_sigma, spec_rng);
    auto gen_rng = rng.split("samples/source" + std::to_string(d));
    data.sources.push_back(generate_domain_dataset(
        train_protos, spec, static_cast<std::size_t>(cfg.n_classes),
        static_cast<std::size_t>(cfg.samples_per_class), gen_rng));
  }

  // The target style is drawn from streams disjoint from every source.
  auto target_spec_rng = rng.split("style/target");
  const DomainSpec target_spec = random_domain_spec(
      cfg.n_source_domains, dim, cfg.style_scale_min, cfg.style_scale_max,
      cfg.style_shift_range, cfg.rotation_strength, cfg.noise_sigma, target_spec_rng);
  auto target_rng = rng.split("samples/target");
  data.target_cls = generate_domain_dataset(
      train_protos, target_spec, static_cast<std::size_t>(cfg.n_classes),
      static_cast<std::size_t>(cfg.target_samples_per_class), target_rng);

  // Retrieval identities are disjoint from the training classes; their
  // samples are split 30/70 into query and gallery per identity.
  auto retrieval_rng = rng.split("samples/retrieval");
  LabeledDataset retrieval = generate_domain_dataset(
      retrieval_protos, target_spec, static_cast<std::size_t>(cfg.retrieval_ids),
      static_cast<std::size_t>(cfg.retrieval_samples_per_id), retrieval_rng);
  for (auto& c : retrieval.class_ids) c += cfg.n_classes;

  const std::size_t k = static_cast<std::size_t>(cfg.retrieval_samples_per_id);
  const std::size_t n_query_per_id = std::max<std::size_t>(1, (k * 3) / 10);
  std::vector<std::size_t> query_rows, gallery_rows;
  for (std::size_t i = 0; i < retrieval.size(); ++i) {
    if (i % k < n_query_per_id)
      query_rows.push_back(i);
    else
      gallery_rows.push_back(i);
  }
  auto take = [&](const std::vector<std::size_t>& rows) {
    LabeledDataset out;
    out.features = TensorF({rows.size(), dim});
    out.class_ids.resize(rows.size());
    out.domain_ids.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t c = 0; c < dim; ++c)
        out.features[i * dim + c] = retrieval.features[rows[i] * dim + c];
      out.class_ids[i] = retrieval.class_ids[rows[i]];
      out.domain_ids[i] = retrieval.domain_ids[rows[i]];
    }
    return out;
  };
  data.query = take(query_rows);
  data.gallery = take(gallery_rows);
  return data;
}

std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << "epoch,loss_cls,loss_tri,loss_dcr,loss_total,target_acc,map,cmc1,cmc5,cmc10\n";
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    os << ',' << buf;
  };
  for (const auto& r : rows) {
    os << r.epoch;
    put(r.loss_cls);
    put(r.loss_tri);
    put(r.loss_dcr);
    put(r.loss_total);
    put(r.target_acc);
    put(r.map);
    put(r.cmc1);
    put(r.cmc5);
    put(r.cmc10);
    os << '\n';
  }
  return os.str();
}

std::string eval_report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["target_accuracy"] = report.target_accuracy;
  j["map"] = report.map;
  j["cmc1"] = report.cmc1;
  j["cmc5"] = report.cmc5;
  j["cmc10"] = report.cmc10;
  j["domain_center_distances"] = report.domain_center_distances;
  return j.dump(2) + "\n";
}

TrainResult run_experiment(const ExperimentConfig& cfg,
                           const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);

  RngStream root(cfg.seed);
  MultiDomainData data = build_data(cfg.data, root.split("data"));
  auto model_rng = root.split("model");
  Model<float> model = build_model<float>(cfg.model, model_rng);

  TrainOptions opts;
  opts.sampler = cfg.sampler.kind;
  opts.p_ids = static_cast<std::size_t>(cfg.sampler.p_ids);
  opts.k_per_id = static_cast<std::size_t>(cfg.sampler.k_per_id);
  opts.schedule = cfg.schedule;
  opts.loss = cfg.loss;
  opts.dmn = cfg.dmn;

  TrainResult result = train_model(model, data, opts, root.split("train"));

  write_file_atomic(out_dir / "config.json", serialize_config(cfg));
  write_file_atomic(out_dir / "metrics.csv", metrics_to_csv(result.metrics));
  write_file_atomic(out_dir / "eval_report.json", eval_report_to_json(result.report));
  save_checkpoint(model, cfg.schedule, out_dir / "checkpoint.json");
  return result;
}

std::vector<std::string> ablation_suite_names() {
  return {"components", "ddc", "max_group", "sampling", "dcr_vs_cl", "layers", "fixed_c1"};
}

std::vector<std::pair<std::string, ExperimentConfig>> ablation_suite(
    const std::string& suite) {
  std::vector<std::pair<std::string, ExperimentConfig>> cells;
  if (suite == "components") {
    cells.emplace_back("baseline", make_preset("baseline_bn"));
    cells.emplace_back("baseline_dmn", make_preset("mixnorm_nodcr"));
    cells.emplace_back("baseline_dmn_dcr", make_preset("mixnorm_full"));
  } else if (suite == "ddc") {
    ExperimentConfig shared = make_preset("mixnorm_full");
    shared.dmn.shared_partition = true;
    cells.emplace_back("same_combination", shared);
    cells.emplace_back("ddc", make_preset("mixnorm_full"));
  } else if (suite == "max_group") {
    ExperimentConfig full = make_preset("mixnorm_full");
    full.dmn.max_group_full = true;
    cells.emplace_back("max_group_d", full);
    cells.emplace_back("max_group_d_minus_1", make_preset("mixnorm_full"));
  } else if (suite == "sampling") {
    cells.emplace_back("rs_baseline", make_preset("baseline_bn_rs"));
    cells.emplace_back("us_baseline", make_preset("baseline_bn"));
    cells.emplace_back("us_mixnorm", make_preset("mixnorm_full"));
  } else if (suite == "dcr_vs_cl") {
    cells.emplace_back("center_loss", make_preset("mixnorm_center"));
    cells.emplace_back("dcr", make_preset("mixnorm_full"));
  } else if (suite == "layers") {
    cells.emplace_back("baseline", make_preset("baseline_bn"));
    ExperimentConfig layer1 = make_preset("mixnorm_full");
    layer1.model.norm = {NormKind::Dmn, NormKind::Bn};
    cells.emplace_back("layer1", layer1);
    ExperimentConfig layer2 = make_preset("mixnorm_full");
    layer2.model.norm = {NormKind::Bn, NormKind::Dmn};
    cells.emplace_back("layer2", layer2);
    cells.emplace_back("all", make_preset("mixnorm_full"));
  } else if (suite == "fixed_c1") {
    cells.emplace_back("baseline", make_preset("baseline_bn"));
    ExperimentConfig c1 = make_preset("mixnorm_full");
    c1.dmn.fixed_c = 1;
    cells.emplace_back("fixed_c1", c1);
    cells.emplace_back("random_c", make_preset("mixnorm_full"));
  } else {
    throw config_error("ablate: unknown suite \"" + suite + "\"");
  }
  return cells;
}

AblationResult run_ablation(const std::string& suite,
                            const std::vector<std::uint64_t>& seeds,
                            const std::filesystem::path& out_dir) {
  const auto configs = ablation_suite(suite);
  if (seeds.empty()) throw config_error("ablate: no seeds given");
  std::filesystem::create_directories(out_dir);

  AblationResult result;
  result.suite = suite;
  result.baseline = configs.front().first;
  for (const auto& [name, _] : configs) result.config_names.push_back(name);
  result.cells.resize(configs.size() * seeds.size());

  struct Job {
    std::size_t index;
    std::string name;
    ExperimentConfig cfg;
    std::filesystem::path dir;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < configs.size(); ++c)
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      Job job;
      job.index = c * seeds.size() + s;
      job.name = configs[c].first;
      job.cfg = configs[c].second;
      job.cfg.seed = seeds[s];
      job.dir = out_dir / configs[c].first / ("seed" + std::to_string(seeds[s]));
      jobs.push_back(std::move(job));
    }

  std::string first_error;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(jobs.size()); ++j) {
    const Job& job = jobs[static_cast<std::size_t>(j)];
    try {
      const TrainResult tr = run_experiment(job.cfg, job.dir);
      AblationCell cell;
      cell.config_name = job.name;
      cell.seed = job.cfg.seed;
      cell.report = tr.report;
      result.cells[job.index] = std::move(cell);
    } catch (const std::exception& e) {
#pragma omp critical
      if (first_error.empty()) first_error = e.what();
    }
  }
  if (!first_error.empty()) throw std::runtime_error("ablate: " + first_error);

  // comparison.csv: one row per (config, seed).
  std::ostringstream cmp;
  cmp << "config,seed,target_acc,map,cmc1,cmc5,cmc10\n";
  char buf[64];
  auto put = [&](std::ostringstream& os, double v) {
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    os << ',' << buf;
  };
  for (const auto& cell : result.cells) {
    cmp << cell.config_name << ',' << cell.seed;
    put(cmp, cell.report.target_accuracy);
    put(cmp, cell.report.map);
    put(cmp, cell.report.cmc1);
    put(cmp, cell.report.cmc5);
    put(cmp, cell.report.cmc10);
    cmp << '\n';
  }
  write_file_atomic(out_dir / "comparison.csv", cmp.str());

  // summary.csv: per-config means and per-seed win counts vs the baseline.
  std::map<std::string, std::vector<const AblationCell*>> by_config;
  for (const auto& cell : result.cells) by_config[cell.config_name].push_back(&cell);

  std::ostringstream sum;
  sum << "config,mean_target_acc,mean_map,wins_vs_" << result.baseline << ",n_seeds\n";
  for (const auto& name : result.config_names) {
    const auto& cells = by_config.at(name);
    double acc = 0, map = 0;
    int wins = 0;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      acc += cells[s]->report.target_accuracy;
      map += cells[s]->report.map;
      const auto& base_cells = by_config.at(result.baseline);
      if (cells[s]->report.target_accuracy > base_cells[s]->report.target_accuracy)
        ++wins;
    }
    sum << name;
    put(sum, acc / static_cast<double>(seeds.size()));
    put(sum, map / static_cast<double>(seeds.size()));
    sum << ',' << wins << ',' << seeds.size() << '\n';
  }
  write_file_atomic(out_dir / "summary.csv", sum.str());
  return result;
}

}  // namespace mixnorm
