#include "mixnorm/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mixnorm/serialize.hpp"

namespace mixnorm {

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

std::string encode_vector(const std::vector<float>& v) {
  return base64_encode(tensor_to_blob(TensorF({v.size()}, v)));
}

std::string encode_matrix(const std::vector<float>& v, std::size_t rows,
                          std::size_t cols) {
  return base64_encode(tensor_to_blob(TensorF({rows, cols}, v)));
}

std::vector<float> decode_values(const json& j, const std::string& what) {
  if (!j.is_string()) throw std::runtime_error("checkpoint: " + what + " not a string");
  const TensorF t = tensor_from_blob(base64_decode(j.get<std::string>()));
  return std::vector<float>(t.values().begin(), t.values().end());
}

const char* norm_kind_name(NormKind k) {
  switch (k) {
    case NormKind::None: return "none";
    case NormKind::Bn: return "bn";
    case NormKind::Dmn: return "dmn";
  }
  return "none";
}

NormKind norm_kind_of(const std::string& s) {
  if (s == "none") return NormKind::None;
  if (s == "bn") return NormKind::Bn;
  if (s == "dmn") return NormKind::Dmn;
  throw std::runtime_error("checkpoint: unknown norm kind \"" + s + "\"");
}

}  // namespace

void save_checkpoint(const Model<float>& model, const TrainSchedule& schedule,
                     const std::filesystem::path& path) {
  json j;
  j["format_version"] = kFormatVersion;

  std::vector<std::string> norm_names;
  for (NormKind k : model.cfg.norm) norm_names.emplace_back(norm_kind_name(k));
  j["model_config"] = {{"input_dim", model.cfg.input_dim},
                       {"hidden", model.cfg.hidden},
                       {"embedding_dim", model.cfg.embedding_dim},
                       {"n_classes", model.cfg.n_classes},
                       {"norm", norm_names}};
  j["schedule"] = {{"epochs", schedule.epochs},
                   {"base_lr", schedule.base_lr},
                   {"decay_epochs", schedule.decay_epochs},
                   {"decay_factor", schedule.decay_factor},
                   {"beta1", schedule.beta1},
                   {"beta2", schedule.beta2},
                   {"adam_eps", schedule.adam_eps},
                   {"iters_per_epoch", schedule.iters_per_epoch}};

  json layers = json::array();
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    const auto& block = model.blocks[b];
    json layer;
    layer["name"] = "block" + std::to_string(b);
    layer["tensors"] = {
        {"weight", encode_matrix(block.fc.weight, block.fc.out, block.fc.in)},
        {"bias", encode_vector(block.fc.bias)}};
    if (block.norm_kind != NormKind::None) {
      layer["tensors"]["gamma"] = encode_vector(block.norm.gamma);
      layer["tensors"]["beta"] = encode_vector(block.norm.beta);
      layer["tensors"]["running_mean"] = encode_vector(block.norm.running_mean);
      layer["tensors"]["running_var"] = encode_vector(block.norm.running_var);
      layer["momentum"] = block.norm.momentum;
      layer["eps"] = block.norm.eps;
    }
    layers.push_back(std::move(layer));
  }
  {
    json layer;
    layer["name"] = "embed";
    layer["tensors"] = {
        {"weight", encode_matrix(model.embed.weight, model.embed.out, model.embed.in)},
        {"bias", encode_vector(model.embed.bias)}};
    layers.push_back(std::move(layer));
  }
  {
    json layer;
    layer["name"] = "classifier";
    layer["tensors"] = {{"weight", encode_matrix(model.classifier.weight,
                                                 model.classifier.out,
                                                 model.classifier.in)},
                        {"bias", encode_vector(model.classifier.bias)}};
    layers.push_back(std::move(layer));
  }
  j["layers"] = std::move(layers);
  write_file_atomic(path, j.dump(2) + "\n");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: invalid JSON: ") + e.what());
  }
  if (!j.contains("format_version") || j.at("format_version").get<int>() != kFormatVersion)
    throw std::runtime_error("checkpoint: unsupported format version");

  ModelConfig cfg;
  const json& mc = j.at("model_config");
  cfg.input_dim = mc.at("input_dim").get<int>();
  cfg.hidden = mc.at("hidden").get<std::vector<int>>();
  cfg.embedding_dim = mc.at("embedding_dim").get<int>();
  cfg.n_classes = mc.at("n_classes").get<int>();
  cfg.norm.clear();
  for (const auto& s : mc.at("norm")) cfg.norm.push_back(norm_kind_of(s.get<std::string>()));
  cfg.validate();

  LoadedCheckpoint out;
  const json& sc = j.at("schedule");
  out.schedule.epochs = sc.at("epochs").get<int>();
  out.schedule.base_lr = sc.at("base_lr").get<double>();
  out.schedule.decay_epochs = sc.at("decay_epochs").get<std::vector<int>>();
  out.schedule.decay_factor = sc.at("decay_factor").get<double>();
  out.schedule.beta1 = sc.at("beta1").get<double>();
  out.schedule.beta2 = sc.at("beta2").get<double>();
  out.schedule.adam_eps = sc.at("adam_eps").get<double>();
  out.schedule.iters_per_epoch = sc.at("iters_per_epoch").get<int>();

  RngStream rng(0);  // initialization is overwritten below
  out.model = build_model<float>(cfg, rng);

  const json& layers = j.at("layers");
  const std::size_t expected = cfg.hidden.size() + 2;
  if (layers.size() != expected) throw std::runtime_error("checkpoint: layer count mismatch");

  auto load_linear = [&](Linear<float>& l, const json& layer) {
    auto weight = decode_values(layer.at("tensors").at("weight"), "weight");
    auto bias = decode_values(layer.at("tensors").at("bias"), "bias");
    if (weight.size() != l.weight.size() || bias.size() != l.bias.size())
      throw std::runtime_error("checkpoint: tensor shape mismatch in " +
                               layer.at("name").get<std::string>());
    l.weight = std::move(weight);
    l.bias = std::move(bias);
  };

  for (std::size_t b = 0; b < cfg.hidden.size(); ++b) {
    const json& layer = layers.at(b);
    auto& block = out.model.blocks[b];
    load_linear(block.fc, layer);
    if (block.norm_kind != NormKind::None) {
      block.norm.gamma = decode_values(layer.at("tensors").at("gamma"), "gamma");
      block.norm.beta = decode_values(layer.at("tensors").at("beta"), "beta");
      block.norm.running_mean =
          decode_values(layer.at("tensors").at("running_mean"), "running_mean");
      block.norm.running_var =
          decode_values(layer.at("tensors").at("running_var"), "running_var");
      block.norm.momentum = layer.at("momentum").get<float>();
      block.norm.eps = layer.at("eps").get<float>();
      block.norm.validate(static_cast<std::size_t>(cfg.hidden[b]));
    }
  }
  load_linear(out.model.embed, layers.at(cfg.hidden.size()));
  load_linear(out.model.classifier, layers.at(cfg.hidden.size() + 1));
  return out;
}

}  // namespace mixnorm
