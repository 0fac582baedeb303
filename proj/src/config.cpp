#include "mixnorm/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace mixnorm {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw config_error(path + ": " + what);
}

void check_keys(const json& j, const std::string& path,
                const std::set<std::string>& allowed) {
  if (!j.is_object()) fail(path, "expected an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) fail(path + "." + key, "unknown field");
}

template <typename T>
T get_or(const json& j, const std::string& path, const char* key, T def) {
  if (!j.contains(key)) return def;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(path + "." + key, "wrong type");
  }
}

NormKind norm_kind_of(const std::string& s, const std::string& path) {
  if (s == "none") return NormKind::None;
  if (s == "bn") return NormKind::Bn;
  if (s == "dmn") return NormKind::Dmn;
  fail(path, "expected one of none|bn|dmn, got \"" + s + "\"");
}

std::string norm_kind_name(NormKind k) {
  switch (k) {
    case NormKind::None: return "none";
    case NormKind::Bn: return "bn";
    case NormKind::Dmn: return "dmn";
  }
  return "none";
}

DataConfig parse_data(const json& j, const std::string& path) {
  check_keys(j, path,
             {"feature_dim", "n_classes", "n_source_domains", "samples_per_class",
              "target_samples_per_class", "retrieval_ids", "retrieval_samples_per_id",
              "prototype_scale", "noise_sigma", "style_scale_min", "style_scale_max",
              "style_shift_range", "rotation_strength", "external_sources",
              "external_target", "external_query", "external_gallery"});
  DataConfig d;
  d.feature_dim = get_or(j, path, "feature_dim", d.feature_dim);
  d.n_classes = get_or(j, path, "n_classes", d.n_classes);
  d.n_source_domains = get_or(j, path, "n_source_domains", d.n_source_domains);
  d.samples_per_class = get_or(j, path, "samples_per_class", d.samples_per_class);
  d.target_samples_per_class =
      get_or(j, path, "target_samples_per_class", d.target_samples_per_class);
  d.retrieval_ids = get_or(j, path, "retrieval_ids", d.retrieval_ids);
  d.retrieval_samples_per_id =
      get_or(j, path, "retrieval_samples_per_id", d.retrieval_samples_per_id);
  d.prototype_scale = get_or(j, path, "prototype_scale", d.prototype_scale);
  d.noise_sigma = get_or(j, path, "noise_sigma", d.noise_sigma);
  d.style_scale_min = get_or(j, path, "style_scale_min", d.style_scale_min);
  d.style_scale_max = get_or(j, path, "style_scale_max", d.style_scale_max);
  d.style_shift_range = get_or(j, path, "style_shift_range", d.style_shift_range);
  d.rotation_strength = get_or(j, path, "rotation_strength", d.rotation_strength);
  d.external_sources =
      get_or(j, path, "external_sources", std::vector<std::string>{});
  d.external_target = get_or(j, path, "external_target", std::string{});
  d.external_query = get_or(j, path, "external_query", std::string{});
  d.external_gallery = get_or(j, path, "external_gallery", std::string{});
  return d;
}

SamplerConfig parse_sampler(const json& j, const std::string& path) {
  check_keys(j, path, {"kind", "p_ids", "k_per_id"});
  SamplerConfig s;
  const std::string kind = get_or(j, path, "kind", std::string("us"));
  if (kind == "us")
    s.kind = SamplerKind::Us;
  else if (kind == "rs")
    s.kind = SamplerKind::Rs;
  else
    fail(path + ".kind", "expected us|rs, got \"" + kind + "\"");
  s.p_ids = get_or(j, path, "p_ids", s.p_ids);
  s.k_per_id = get_or(j, path, "k_per_id", s.k_per_id);
  return s;
}

ModelConfig parse_model(const json& j, const std::string& path) {
  check_keys(j, path, {"input_dim", "hidden", "embedding_dim", "n_classes", "norm"});
  ModelConfig m;
  m.input_dim = get_or(j, path, "input_dim", m.input_dim);
  m.hidden = get_or(j, path, "hidden", m.hidden);
  m.embedding_dim = get_or(j, path, "embedding_dim", m.embedding_dim);
  m.n_classes = get_or(j, path, "n_classes", m.n_classes);
  if (j.contains("norm")) {
    if (!j.at("norm").is_array()) fail(path + ".norm", "expected an array");
    m.norm.clear();
    std::size_t idx = 0;
    for (const auto& entry : j.at("norm")) {
      if (!entry.is_string())
        fail(path + ".norm[" + std::to_string(idx) + "]", "expected a string");
      m.norm.push_back(norm_kind_of(entry.get<std::string>(),
                                    path + ".norm[" + std::to_string(idx) + "]"));
      ++idx;
    }
  } else {
    m.norm.assign(m.hidden.size(), NormKind::Bn);
  }
  return m;
}

TrainSchedule parse_schedule(const json& j, const std::string& path) {
  check_keys(j, path,
             {"epochs", "base_lr", "decay_epochs", "decay_factor", "beta1", "beta2",
              "adam_eps", "iters_per_epoch"});
  TrainSchedule s;
  s.epochs = get_or(j, path, "epochs", s.epochs);
  s.base_lr = get_or(j, path, "base_lr", s.base_lr);
  s.decay_epochs = get_or(j, path, "decay_epochs", s.decay_epochs);
  s.decay_factor = get_or(j, path, "decay_factor", s.decay_factor);
  s.beta1 = get_or(j, path, "beta1", s.beta1);
  s.beta2 = get_or(j, path, "beta2", s.beta2);
  s.adam_eps = get_or(j, path, "adam_eps", s.adam_eps);
  s.iters_per_epoch = get_or(j, path, "iters_per_epoch", s.iters_per_epoch);
  return s;
}

LossConfig parse_loss(const json& j, const std::string& path) {
  check_keys(j, path, {"lambda", "margin", "regularizer", "center_update_rate"});
  LossConfig l;
  l.lambda = get_or(j, path, "lambda", l.lambda);
  l.margin = get_or(j, path, "margin", l.margin);
  const std::string reg = get_or(j, path, "regularizer", std::string("dcr"));
  if (reg == "none")
    l.reg = RegKind::None;
  else if (reg == "dcr")
    l.reg = RegKind::Dcr;
  else if (reg == "dcr_domain")
    l.reg = RegKind::DcrDomain;
  else if (reg == "center")
    l.reg = RegKind::Center;
  else
    fail(path + ".regularizer", "expected none|dcr|dcr_domain|center, got \"" + reg + "\"");
  l.center_update_rate = get_or(j, path, "center_update_rate", l.center_update_rate);
  return l;
}

DmnOptions parse_dmn(const json& j, const std::string& path) {
  check_keys(j, path, {"max_group", "fixed_c", "shared_partition", "running_update"});
  DmnOptions d;
  const std::string mg = get_or(j, path, "max_group", std::string("d_minus_1"));
  if (mg == "d_minus_1")
    d.max_group_full = false;
  else if (mg == "d")
    d.max_group_full = true;
  else
    fail(path + ".max_group", "expected d_minus_1|d, got \"" + mg + "\"");
  if (j.contains("fixed_c") && !j.at("fixed_c").is_null())
    d.fixed_c = get_or(j, path, "fixed_c", 1);
  d.shared_partition = get_or(j, path, "shared_partition", d.shared_partition);
  const std::string ru = get_or(j, path, "running_update", std::string("global_batch"));
  if (ru == "global_batch")
    d.running_update = RunningUpdate::GlobalBatch;
  else if (ru == "per_group")
    d.running_update = RunningUpdate::PerGroupWeighted;
  else
    fail(path + ".running_update", "expected global_batch|per_group, got \"" + ru + "\"");
  return d;
}

}  // namespace

void ExperimentConfig::validate() const {
  auto positive = [](int v, const char* path) {
    if (v < 1) fail(path, "must be >= 1");
  };
  positive(data.feature_dim, "data.feature_dim");
  if (data.n_classes < 2) fail("data.n_classes", "must be >= 2");
  positive(data.n_source_domains, "data.n_source_domains");
  if (data.samples_per_class < 2) fail("data.samples_per_class", "must be >= 2");
  positive(data.target_samples_per_class, "data.target_samples_per_class");
  if (data.retrieval_ids < 2) fail("data.retrieval_ids", "must be >= 2");
  if (data.retrieval_samples_per_id < 2)
    fail("data.retrieval_samples_per_id", "must be >= 2");
  if (!(data.noise_sigma > 0)) fail("data.noise_sigma", "must be > 0");
  if (!(data.style_scale_min > 0)) fail("data.style_scale_min", "must be > 0");
  if (data.style_scale_max < data.style_scale_min)
    fail("data.style_scale_max", "must be >= style_scale_min");
  if (data.rotation_strength < 0) fail("data.rotation_strength", "must be >= 0");
  if (data.has_external() &&
      (data.external_target.empty() || data.external_query.empty() ||
       data.external_gallery.empty()))
    fail("data.external_sources", "external data needs target, query and gallery too");

  positive(sampler.p_ids, "sampler.p_ids");
  if (sampler.k_per_id < 2) fail("sampler.k_per_id", "must be >= 2");

  try {
    model.validate();
  } catch (const std::exception& e) {
    fail("model", e.what());
  }
  if (model.input_dim != data.feature_dim && !data.has_external())
    fail("model.input_dim", "must equal data.feature_dim");

  try {
    schedule.validate();
  } catch (const std::exception& e) {
    fail("schedule", e.what());
  }

  if (loss.lambda < 0) fail("loss.lambda", "must be >= 0");
  if (!(loss.margin >= 0)) fail("loss.margin", "must be >= 0");
  if (!(loss.center_update_rate > 0) || loss.center_update_rate > 1)
    fail("loss.center_update_rate", "must be in (0, 1]");

  if (model.uses_dmn() && sampler.kind == SamplerKind::Rs)
    fail("sampler.kind", "rs sampling cannot drive dmn normalization "
                         "(every batch must contain every domain)");
  if (dmn.fixed_c) {
    const int max_group = dmn.max_group_full
                              ? data.n_source_domains
                              : std::max(1, data.n_source_domains - 1);
    if (*dmn.fixed_c < 1 || *dmn.fixed_c > max_group)
      fail("dmn.fixed_c", "must be in [1, max_group]");
  }
}

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw config_error(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(j, "config",
             {"seed", "data", "sampler", "model", "schedule", "loss", "dmn", "out_dir"});
  ExperimentConfig cfg;
  cfg.seed = get_or(j, "config", "seed", cfg.seed);
  if (j.contains("data")) cfg.data = parse_data(j.at("data"), "data");
  if (j.contains("sampler")) cfg.sampler = parse_sampler(j.at("sampler"), "sampler");
  if (j.contains("model")) cfg.model = parse_model(j.at("model"), "model");
  if (j.contains("schedule")) cfg.schedule = parse_schedule(j.at("schedule"), "schedule");
  if (j.contains("loss")) cfg.loss = parse_loss(j.at("loss"), "loss");
  if (j.contains("dmn")) cfg.dmn = parse_dmn(j.at("dmn"), "dmn");
  cfg.out_dir = get_or(j, "config", "out_dir", cfg.out_dir);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw config_error("config: cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["data"] = {{"feature_dim", cfg.data.feature_dim},
               {"n_classes", cfg.data.n_classes},
               {"n_source_domains", cfg.data.n_source_domains},
               {"samples_per_class", cfg.data.samples_per_class},
               {"target_samples_per_class", cfg.data.target_samples_per_class},
               {"retrieval_ids", cfg.data.retrieval_ids},
               {"retrieval_samples_per_id", cfg.data.retrieval_samples_per_id},
               {"prototype_scale", cfg.data.prototype_scale},
               {"noise_sigma", cfg.data.noise_sigma},
               {"style_scale_min", cfg.data.style_scale_min},
               {"style_scale_max", cfg.data.style_scale_max},
               {"style_shift_range", cfg.data.style_shift_range},
               {"rotation_strength", cfg.data.rotation_strength}};
  if (cfg.data.has_external()) {
    j["data"]["external_sources"] = cfg.data.external_sources;
    j["data"]["external_target"] = cfg.data.external_target;
    j["data"]["external_query"] = cfg.data.external_query;
    j["data"]["external_gallery"] = cfg.data.external_gallery;
  }
  j["sampler"] = {{"kind", cfg.sampler.kind == SamplerKind::Us ? "us" : "rs"},
                  {"p_ids", cfg.sampler.p_ids},
                  {"k_per_id", cfg.sampler.k_per_id}};
  std::vector<std::string> norm_names;
  for (NormKind k : cfg.model.norm) norm_names.push_back(norm_kind_name(k));
  j["model"] = {{"input_dim", cfg.model.input_dim},
                {"hidden", cfg.model.hidden},
                {"embedding_dim", cfg.model.embedding_dim},
                {"n_classes", cfg.model.n_classes},
                {"norm", norm_names}};
  j["schedule"] = {{"epochs", cfg.schedule.epochs},
                   {"base_lr", cfg.schedule.base_lr},
                   {"decay_epochs", cfg.schedule.decay_epochs},
                   {"decay_factor", cfg.schedule.decay_factor},
                   {"beta1", cfg.schedule.beta1},
                   {"beta2", cfg.schedule.beta2},
                   {"adam_eps", cfg.schedule.adam_eps},
                   {"iters_per_epoch", cfg.schedule.iters_per_epoch}};
  const char* reg = "dcr";
  switch (cfg.loss.reg) {
    case RegKind::None: reg = "none"; break;
    case RegKind::Dcr: reg = "dcr"; break;
    case RegKind::DcrDomain: reg = "dcr_domain"; break;
    case RegKind::Center: reg = "center"; break;
  }
  j["loss"] = {{"lambda", cfg.loss.lambda},
               {"margin", cfg.loss.margin},
               {"regularizer", reg},
               {"center_update_rate", cfg.loss.center_update_rate}};
  j["dmn"] = {{"max_group", cfg.dmn.max_group_full ? "d" : "d_minus_1"},
              {"shared_partition", cfg.dmn.shared_partition},
              {"running_update", cfg.dmn.running_update == RunningUpdate::GlobalBatch
                                     ? "global_batch"
                                     : "per_group"}};
  if (cfg.dmn.fixed_c)
    j["dmn"]["fixed_c"] = *cfg.dmn.fixed_c;
  else
    j["dmn"]["fixed_c"] = nullptr;
  if (!cfg.out_dir.empty()) j["out_dir"] = cfg.out_dir;
  return j.dump(2) + "\n";
}

ExperimentConfig make_preset(const std::string& name) {
  ExperimentConfig cfg;  // defaults: us sampler, bn everywhere, dcr config
  cfg.loss.reg = RegKind::None;
  cfg.loss.lambda = 0.0;
  cfg.model.norm = {NormKind::Bn, NormKind::Bn};
  if (name == "baseline_bn") {
    return cfg;
  }
  if (name == "baseline_bn_rs") {
    cfg.sampler.kind = SamplerKind::Rs;
    return cfg;
  }
  if (name == "baseline_bn_dcr") {
    cfg.loss.reg = RegKind::Dcr;
    cfg.loss.lambda = 0.2;
    return cfg;
  }
  if (name == "mixnorm_nodcr") {
    cfg.model.norm = {NormKind::Dmn, NormKind::Dmn};
    return cfg;
  }
  if (name == "mixnorm_full") {
    cfg.model.norm = {NormKind::Dmn, NormKind::Dmn};
    cfg.loss.reg = RegKind::Dcr;
    cfg.loss.lambda = 0.2;
    return cfg;
  }
  if (name == "mixnorm_center") {
    cfg.model.norm = {NormKind::Dmn, NormKind::Dmn};
    cfg.loss.reg = RegKind::Center;
    cfg.loss.lambda = 5e-4;
    return cfg;
  }
  throw config_error("preset: unknown name \"" + name + "\"");
}

std::vector<std::string> preset_names() {
  return {"baseline_bn",  "baseline_bn_rs", "baseline_bn_dcr",
          "mixnorm_nodcr", "mixnorm_full",   "mixnorm_center"};
}

}  // namespace mixnorm
