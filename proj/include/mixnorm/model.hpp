#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixnorm/kernels.hpp"
#include "mixnorm/losses.hpp"
#include "mixnorm/normlayers.hpp"
#include "mixnorm/partition.hpp"
#include "mixnorm/tensor.hpp"

// Embedding network: a fully-connected stack with a normalization slot after
// every hidden linear layer (before the rectifier), an embedding head and a
// classifier over the shared training classes. Mix-normalization adds no
// parameters over plain BN, so configurations differ only in layer kind.

namespace mixnorm {

enum class NormKind { None, Bn, Dmn };

struct ModelConfig {
  int input_dim = 16;
  std::vector<int> hidden = {64, 64};
  int embedding_dim = 32;
  int n_classes = 20;
  std::vector<NormKind> norm = {NormKind::Bn, NormKind::Bn};  // one per hidden layer

  void validate() const {
    if (input_dim < 1) throw std::invalid_argument("ModelConfig: input_dim must be >= 1");
    if (hidden.empty()) throw std::invalid_argument("ModelConfig: need at least one hidden layer");
    for (int h : hidden)
      if (h < 1) throw std::invalid_argument("ModelConfig: hidden width must be >= 1");
    if (embedding_dim < 2) throw std::invalid_argument("ModelConfig: embedding_dim must be >= 2");
    if (n_classes < 2) throw std::invalid_argument("ModelConfig: n_classes must be >= 2");
    if (norm.size() != hidden.size())
      throw std::invalid_argument("ModelConfig: one norm kind per hidden layer required");
  }

  bool uses_dmn() const {
    for (NormKind k : norm)
      if (k == NormKind::Dmn) return true;
    return false;
  }
};

template <typename T>
struct Linear {
  std::size_t in = 0, out = 0;
  std::vector<T> weight;  // out x in, row-major
  std::vector<T> bias;    // out

  static Linear init(std::size_t in, std::size_t out, RngStream& rng) {
    Linear l;
    l.in = in;
    l.out = out;
    l.weight.resize(in * out);
    l.bias.assign(out, T(0));
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& w : l.weight)
      w = static_cast<T>(bound * (2.0 * rng.uniform_real() - 1.0));
    return l;
  }
};

template <typename T>
struct Model {
  struct Block {
    Linear<T> fc;
    NormKind norm_kind = NormKind::None;
    NormLayerState<T> norm;
  };
  ModelConfig cfg;
  std::vector<Block> blocks;
  Linear<T> embed;
  Linear<T> classifier;

  void set_mode(NormMode mode) {
    for (auto& b : blocks) b.norm.mode = mode;
  }
  void set_running_update(RunningUpdate ru) {
    for (auto& b : blocks) b.norm.running_update = ru;
  }
};

template <typename T>
Model<T> build_model(const ModelConfig& cfg, RngStream& rng) {
  cfg.validate();
  Model<T> model;
  model.cfg = cfg;
  int prev = cfg.input_dim;
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
    typename Model<T>::Block block;
    auto layer_rng = rng.split("init/block" + std::to_string(i));
    block.fc = Linear<T>::init(static_cast<std::size_t>(prev),
                               static_cast<std::size_t>(cfg.hidden[i]), layer_rng);
    block.norm_kind = cfg.norm[i];
    block.norm = NormLayerState<T>::init(static_cast<std::size_t>(cfg.hidden[i]));
    model.blocks.push_back(std::move(block));
    prev = cfg.hidden[i];
  }
  auto embed_rng = rng.split("init/embed");
  model.embed = Linear<T>::init(static_cast<std::size_t>(prev),
                                static_cast<std::size_t>(cfg.embedding_dim), embed_rng);
  auto cls_rng = rng.split("init/classifier");
  model.classifier = Linear<T>::init(static_cast<std::size_t>(cfg.embedding_dim),
                                     static_cast<std::size_t>(cfg.n_classes), cls_rng);
  return model;
}

namespace detail {

template <typename T>
Tensor<T> linear_forward(const Linear<T>& l, const Tensor<T>& x) {
  const std::size_t n = x.samples();
  Tensor<T> y({n, l.out});
  kernels::matmul_nt(std::span<const T>(x.values()), std::span<const T>(l.weight),
                     std::span<T>(y.values()), n, l.out, l.in);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < l.out; ++o) y[i * l.out + o] += l.bias[o];
  return y;
}

template <typename T>
struct LinearGrads {
  std::vector<T> weight;
  std::vector<T> bias;
};

// Returns grad wrt input; accumulates parameter grads.
template <typename T>
Tensor<T> linear_backward(const Linear<T>& l, const Tensor<T>& x,
                          const Tensor<T>& grad_y, LinearGrads<T>& grads) {
  const std::size_t n = x.samples();
  grads.weight.assign(l.in * l.out, T(0));
  grads.bias.assign(l.out, T(0));
  kernels::matmul_tn(std::span<const T>(grad_y.values()), std::span<const T>(x.values()),
                     std::span<T>(grads.weight), n, l.out, l.in);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < l.out; ++o) grads.bias[o] += grad_y[i * l.out + o];
  Tensor<T> grad_x({n, l.in});
  kernels::matmul_nn(std::span<const T>(grad_y.values()), std::span<const T>(l.weight),
                     std::span<T>(grad_x.values()), n, l.in, l.out);
  return grad_x;
}

}  // namespace detail

// Everything a training-mode forward needs to know about mix-normalization.
// Exactly one of the partition sources applies per DMN slot:
//   fixed_partitions  - pinned per-slot partitions (gradient checks),
//   shared_partition  - one partition for every slot this iteration,
//   slot_rngs         - independent draw per slot (the DDC default).
template <typename T>
struct ForwardContext {
  std::span<const int> domain_ids;
  const PartitionPolicy* policy = nullptr;
  std::vector<RngStream>* slot_rngs = nullptr;
  const Partition* shared_partition = nullptr;
  const std::vector<Partition>* fixed_partitions = nullptr;
};

template <typename T>
struct ModelTape {
  Tensor<T> input;
  std::vector<Tensor<T>> fc_in;      // input to each hidden fc
  std::vector<Tensor<T>> fc_out;     // pre-norm activations
  std::vector<Tensor<T>> norm_out;   // post-norm, pre-rectifier
  std::vector<Tensor<T>> act_out;    // post-rectifier
  std::vector<NormCache<T>> norm_caches;  // empty cache for None slots
  Tensor<T> embedding;
  Tensor<T> logits;
};

template <typename T>
ModelTape<T> forward_train(Model<T>& model, const Tensor<T>& x,
                           const ForwardContext<T>& ctx) {
  ModelTape<T> tape;
  tape.input = x;
  Tensor<T> cur = x;
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    auto& block = model.blocks[b];
    tape.fc_in.push_back(cur);
    Tensor<T> pre = detail::linear_forward(block.fc, cur);
    tape.fc_out.push_back(pre);

    Tensor<T> normed;
    NormCache<T> cache;
    switch (block.norm_kind) {
      case NormKind::None:
        normed = pre;
        break;
      case NormKind::Bn: {
        auto [y, c] = bn_forward_train(pre, block.norm);
        normed = std::move(y);
        cache = std::move(c);
        break;
      }
      case NormKind::Dmn: {
        if (ctx.policy == nullptr)
          throw std::logic_error("forward_train: DMN slot without partition policy");
        if (ctx.fixed_partitions != nullptr) {
          auto [y, c] = dmn_forward_train_with_partition(
              pre, ctx.domain_ids, block.norm, ctx.policy->domains,
              (*ctx.fixed_partitions)[b]);
          normed = std::move(y);
          cache = std::move(c);
        } else if (ctx.shared_partition != nullptr) {
          auto [y, c] = dmn_forward_train_with_partition(
              pre, ctx.domain_ids, block.norm, ctx.policy->domains,
              *ctx.shared_partition);
          normed = std::move(y);
          cache = std::move(c);
        } else {
          if (ctx.slot_rngs == nullptr || ctx.slot_rngs->size() <= b)
            throw std::logic_error("forward_train: DMN slot without rng stream");
          auto [y, c] = dmn_forward_train(pre, ctx.domain_ids, block.norm,
                                          *ctx.policy, (*ctx.slot_rngs)[b]);
          normed = std::move(y);
          cache = std::move(c);
        }
        break;
      }
    }
    tape.norm_out.push_back(normed);
    tape.norm_caches.push_back(std::move(cache));

    Tensor<T> act(normed.shape());
    for (std::size_t i = 0; i < normed.size(); ++i)
      act[i] = normed[i] > T(0) ? normed[i] : T(0);
    tape.act_out.push_back(act);
    cur = std::move(act);
  }
  tape.embedding = detail::linear_forward(model.embed, cur);
  tape.logits = detail::linear_forward(model.classifier, tape.embedding);
  return tape;
}

// Eval-mode forward: a pure per-sample map through running statistics.
template <typename T>
struct EvalOutput {
  Tensor<T> embedding;
  Tensor<T> logits;
};

template <typename T>
EvalOutput<T> forward_eval(const Model<T>& model, const Tensor<T>& x) {
  Tensor<T> cur = x;
  for (const auto& block : model.blocks) {
    Tensor<T> pre = detail::linear_forward(block.fc, cur);
    Tensor<T> normed;
    if (block.norm_kind == NormKind::None) {
      normed = std::move(pre);
    } else {
      if (block.norm.mode != NormMode::Eval)
        throw std::logic_error("forward_eval: norm layer not in eval mode");
      normed = norm_forward_eval(pre, block.norm);
    }
    for (std::size_t i = 0; i < normed.size(); ++i)
      if (normed[i] < T(0)) normed[i] = T(0);
    cur = std::move(normed);
  }
  EvalOutput<T> out;
  out.embedding = detail::linear_forward(model.embed, cur);
  out.logits = detail::linear_forward(model.classifier, out.embedding);
  return out;
}

template <typename T>
struct ModelGrads {
  struct BlockGrads {
    detail::LinearGrads<T> fc;
    std::vector<T> gamma, beta;
  };
  std::vector<BlockGrads> blocks;
  detail::LinearGrads<T> embed;
  detail::LinearGrads<T> classifier;
};

// Backward from loss gradients wrt embedding and logits down to every
// parameter; returns nothing for the input since data is not trained.
template <typename T>
ModelGrads<T> backward(const Model<T>& model, const ModelTape<T>& tape,
                       const Tensor<T>& grad_embedding, const Tensor<T>& grad_logits) {
  ModelGrads<T> grads;
  grads.blocks.resize(model.blocks.size());

  Tensor<T> grad_emb =
      detail::linear_backward(model.classifier, tape.embedding, grad_logits,
                              grads.classifier);
  for (std::size_t i = 0; i < grad_emb.size(); ++i) grad_emb[i] += grad_embedding[i];

  Tensor<T> cur = detail::linear_backward(
      model.embed, tape.act_out.empty() ? tape.input : tape.act_out.back(), grad_emb,
      grads.embed);

  for (std::size_t bi = model.blocks.size(); bi-- > 0;) {
    const auto& block = model.blocks[bi];
    // rectifier
    for (std::size_t i = 0; i < cur.size(); ++i)
      if (tape.norm_out[bi][i] <= T(0)) cur[i] = T(0);
    // normalization
    if (block.norm_kind != NormKind::None) {
      NormGrads<T> ng = dmn_backward(cur, tape.norm_caches[bi], block.norm);
      grads.blocks[bi].gamma = std::move(ng.gamma);
      grads.blocks[bi].beta = std::move(ng.beta);
      cur = std::move(ng.x);
    }
    cur = detail::linear_backward(block.fc, tape.fc_in[bi], cur, grads.blocks[bi].fc);
  }
  return grads;
}

// Deterministic parameter enumeration shared by the optimizer and the
// checkpoint writer. Order: hidden blocks (weight, bias, gamma, beta),
// embedding, classifier.
template <typename T, typename Fn>
void for_each_param(Model<T>& model, ModelGrads<T>* grads, Fn&& fn) {
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    auto& block = model.blocks[b];
    const std::string prefix = "block" + std::to_string(b);
    fn(prefix + ".weight", block.fc.weight,
       grads ? &grads->blocks[b].fc.weight : nullptr);
    fn(prefix + ".bias", block.fc.bias, grads ? &grads->blocks[b].fc.bias : nullptr);
    if (block.norm_kind != NormKind::None) {
      fn(prefix + ".gamma", block.norm.gamma,
         grads ? &grads->blocks[b].gamma : nullptr);
      fn(prefix + ".beta", block.norm.beta, grads ? &grads->blocks[b].beta : nullptr);
    }
  }
  fn("embed.weight", model.embed.weight, grads ? &grads->embed.weight : nullptr);
  fn("embed.bias", model.embed.bias, grads ? &grads->embed.bias : nullptr);
  fn("classifier.weight", model.classifier.weight,
     grads ? &grads->classifier.weight : nullptr);
  fn("classifier.bias", model.classifier.bias,
     grads ? &grads->classifier.bias : nullptr);
}

}  // namespace mixnorm
