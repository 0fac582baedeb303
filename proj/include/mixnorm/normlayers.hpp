#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixnorm/kernels.hpp"
#include "mixnorm/partition.hpp"
#include "mixnorm/rng.hpp"
#include "mixnorm/tensor.hpp"

// Plain batch normalization and domain-aware mix-normalization. Both share
// one statistics kernel: BN is the single-group case, mix-normalization
// normalizes each sampled domain group by its own mean/std while gamma and
// beta stay shared. The group std keeps eps inside the square root,
// sigma = sqrt(var + eps).

namespace mixnorm {

enum class NormMode { Train, Eval };

// How evaluation statistics are accumulated across a mix-normalized batch.
// GlobalBatch (default) folds the whole-batch moments into the running pair
// exactly as plain BN would, so a DMN layer and a BN layer accumulate
// identical statistics on identical batches. PerGroupWeighted instead applies
// one momentum update per group, scaled by the group's sample share.
enum class RunningUpdate { GlobalBatch, PerGroupWeighted };

template <typename T>
struct NormLayerState {
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
  NormMode mode = NormMode::Train;
  RunningUpdate running_update = RunningUpdate::GlobalBatch;

  static NormLayerState init(std::size_t channels) {
    NormLayerState s;
    s.gamma.assign(channels, T(1));
    s.beta.assign(channels, T(0));
    s.running_mean.assign(channels, T(0));
    s.running_var.assign(channels, T(1));
    return s;
  }

  std::size_t channels() const { return gamma.size(); }

  void validate(std::size_t x_channels) const {
    if (gamma.size() != x_channels || beta.size() != x_channels ||
        running_mean.size() != x_channels || running_var.size() != x_channels)
      throw std::invalid_argument("NormLayerState: channel count mismatch");
    if (!(eps > T(0))) throw std::invalid_argument("NormLayerState: eps must be > 0");
    if (!(momentum > T(0)) || momentum > T(1))
      throw std::invalid_argument("NormLayerState: momentum must be in (0, 1]");
  }
};

template <typename T>
struct NormGroup {
  std::vector<std::size_t> members;  // sample indices, ascending
  std::vector<T> mean;               // per channel
  std::vector<T> std;                // per channel, sqrt(var + eps)
};

template <typename T>
struct NormCache {
  Partition partition;
  std::vector<NormGroup<T>> groups;
  Tensor<T> x_hat;
  std::vector<T> batch_mean;  // whole-batch moments, used for the running update
  std::vector<T> batch_var;
};

namespace detail {

// Normalizes each listed group by its own statistics and applies the shared
// affine pair. Pure: no running-stat side effects, so gradient checks can
// re-run it freely.
template <typename T>
std::pair<Tensor<T>, NormCache<T>> group_norm_forward(
    const Tensor<T>& x, const Partition& partition,
    std::vector<std::vector<std::size_t>> group_members,
    const NormLayerState<T>& state) {
  const std::size_t channels = x.channels();
  state.validate(channels);
  if (x.samples() < 1) throw std::invalid_argument("norm forward: empty batch");

  Tensor<T> y(x.shape());
  NormCache<T> cache;
  cache.partition = partition;
  cache.x_hat = Tensor<T>(x.shape());
  cache.groups.reserve(group_members.size());

  std::vector<T> inv_std(channels);
  for (auto& members : group_members) {
    if (members.empty()) throw std::invalid_argument("norm forward: empty group");
    NormGroup<T> group;
    group.members = std::move(members);
    group.mean.resize(channels);
    group.std.resize(channels);
    std::vector<T> var(channels);
    kernels::channel_moments(x, std::span<const std::size_t>(group.members),
                             std::span<T>(group.mean), std::span<T>(var));
    for (std::size_t c = 0; c < channels; ++c) {
      group.std[c] = std::sqrt(var[c] + state.eps);
      inv_std[c] = T(1) / group.std[c];
    }
    kernels::normalize_affine(x, std::span<const std::size_t>(group.members),
                              std::span<const T>(group.mean),
                              std::span<const T>(inv_std),
                              std::span<const T>(state.gamma),
                              std::span<const T>(state.beta), cache.x_hat, y);
    cache.groups.push_back(std::move(group));
  }

  // Whole-batch moments for the running update, computed with the same
  // kernel plain BN uses so both layers accumulate identical statistics.
  std::vector<std::size_t> all(x.samples());
  std::iota(all.begin(), all.end(), std::size_t{0});
  cache.batch_mean.resize(channels);
  cache.batch_var.resize(channels);
  kernels::channel_moments(x, std::span<const std::size_t>(all),
                           std::span<T>(cache.batch_mean),
                           std::span<T>(cache.batch_var));
  return {std::move(y), std::move(cache)};
}

template <typename T>
std::vector<std::vector<std::size_t>> members_by_group(
    const Partition& partition, std::span<const int> domain_ids, int domains) {
  std::vector<int> group_of(static_cast<std::size_t>(domains), -1);
  for (std::size_t g = 0; g < partition.groups.size(); ++g)
    for (int d : partition.groups[g]) {
      if (d < 0 || d >= domains)
        throw std::invalid_argument("dmn forward: partition names domain " +
                                    std::to_string(d) + " outside [0, " +
                                    std::to_string(domains) + ")");
      if (group_of[static_cast<std::size_t>(d)] != -1)
        throw std::invalid_argument("dmn forward: partition groups overlap on domain " +
                                    std::to_string(d));
      group_of[static_cast<std::size_t>(d)] = static_cast<int>(g);
    }
  for (int d = 0; d < domains; ++d)
    if (group_of[static_cast<std::size_t>(d)] == -1)
      throw std::invalid_argument("dmn forward: partition does not cover domain " +
                                  std::to_string(d));

  std::vector<std::vector<std::size_t>> members(partition.groups.size());
  for (std::size_t i = 0; i < domain_ids.size(); ++i) {
    const int d = domain_ids[i];
    if (d < 0 || d >= domains)
      throw std::invalid_argument("dmn forward: domain id " + std::to_string(d) +
                                  " outside [0, " + std::to_string(domains) + ")");
    members[static_cast<std::size_t>(group_of[static_cast<std::size_t>(d)])].push_back(i);
  }
  for (std::size_t g = 0; g < members.size(); ++g)
    if (members[g].empty())
      throw std::invalid_argument("dmn forward: batch is missing every domain of group " +
                                  std::to_string(g));
  return members;
}

}  // namespace detail

// Accumulate batch moments into the running pair:
// running <- (1 - momentum) * running + momentum * batch.
template <typename T>
void update_running(NormLayerState<T>& state, std::span<const T> batch_mean,
                    std::span<const T> batch_var) {
  if (state.mode != NormMode::Train)
    throw std::logic_error("update_running: layer not in train mode");
  for (std::size_t c = 0; c < state.running_mean.size(); ++c) {
    state.running_mean[c] =
        (T(1) - state.momentum) * state.running_mean[c] + state.momentum * batch_mean[c];
    state.running_var[c] =
        (T(1) - state.momentum) * state.running_var[c] + state.momentum * batch_var[c];
  }
}

namespace detail {

template <typename T>
void accumulate_running(NormLayerState<T>& state, const NormCache<T>& cache,
                        std::size_t batch_samples) {
  if (state.running_update == RunningUpdate::GlobalBatch) {
    update_running(state, std::span<const T>(cache.batch_mean),
                   std::span<const T>(cache.batch_var));
    return;
  }
  // One momentum step per group, weighted by the group's sample share.
  for (const auto& group : cache.groups) {
    const T w = static_cast<T>(group.members.size()) / static_cast<T>(batch_samples);
    const T rate = state.momentum * w;
    for (std::size_t c = 0; c < state.running_mean.size(); ++c) {
      const T var = group.std[c] * group.std[c] - state.eps;
      state.running_mean[c] = (T(1) - rate) * state.running_mean[c] + rate * group.mean[c];
      state.running_var[c] = (T(1) - rate) * state.running_var[c] + rate * var;
    }
  }
}

}  // namespace detail

// Plain batch normalization over the whole batch (Eq. 1-3 baseline).
template <typename T>
std::pair<Tensor<T>, NormCache<T>> bn_forward_train(const Tensor<T>& x,
                                                    NormLayerState<T>& state) {
  if (state.mode != NormMode::Train)
    throw std::logic_error("bn_forward_train: layer not in train mode");
  if (x.samples() < 1) throw std::invalid_argument("bn_forward_train: empty batch");

  std::vector<std::size_t> all(x.samples());
  std::iota(all.begin(), all.end(), std::size_t{0});
  auto [y, cache] = detail::group_norm_forward(x, Partition{}, {all}, state);
  detail::accumulate_running(state, cache, x.samples());
  return {std::move(y), std::move(cache)};
}

// Mix-normalization with a caller-supplied partition (used when one
// partition is shared across layers, and by gradient checks).
template <typename T>
std::pair<Tensor<T>, NormCache<T>> dmn_forward_train_with_partition(
    const Tensor<T>& x, std::span<const int> domain_ids,
    NormLayerState<T>& state, int domains, const Partition& partition) {
  if (state.mode != NormMode::Train)
    throw std::logic_error("dmn_forward_train: layer not in train mode");
  if (x.samples() < 1) throw std::invalid_argument("dmn forward: empty batch");
  if (domain_ids.size() != x.samples())
    throw std::invalid_argument("dmn forward: domain_ids length mismatch");

  auto members = detail::members_by_group<T>(partition, domain_ids, domains);
  auto [y, cache] = detail::group_norm_forward(x, partition, std::move(members), state);
  detail::accumulate_running(state, cache, x.samples());
  return {std::move(y), std::move(cache)};
}

// Mix-normalization drawing a fresh partition for this invocation.
template <typename T>
std::pair<Tensor<T>, NormCache<T>> dmn_forward_train(
    const Tensor<T>& x, std::span<const int> domain_ids,
    NormLayerState<T>& state, const PartitionPolicy& policy, RngStream& rng) {
  const Partition partition = sample_partition(policy, rng);
  return dmn_forward_train_with_partition(x, domain_ids, state, policy.domains,
                                          partition);
}

template <typename T>
struct NormGrads {
  Tensor<T> x;
  std::vector<T> gamma;
  std::vector<T> beta;
};

// Backward through the shared affine and the per-group normalization. The
// group statistics are functions of the group members only, so grad_x is the
// standard batch-norm input gradient applied within each group:
//   gx = (1/sigma) * (g - mean(g) - x_hat * mean(g * x_hat)),  g = gy * gamma
// with means taken over the group's sample/spatial positions per channel.
template <typename T>
NormGrads<T> dmn_backward(const Tensor<T>& grad_y, const NormCache<T>& cache,
                          const NormLayerState<T>& state) {
  if (!grad_y.same_shape(cache.x_hat))
    throw std::invalid_argument("dmn_backward: grad_y shape does not match cache");
  const std::size_t channels = grad_y.channels();
  const std::size_t spatial = grad_y.spatial();
  state.validate(channels);

  NormGrads<T> out;
  out.x = Tensor<T>(grad_y.shape());
  out.gamma.assign(channels, T(0));
  out.beta.assign(channels, T(0));

  // Shared affine: sums run over the whole batch regardless of grouping.
  for (std::size_t n = 0; n < grad_y.samples(); ++n)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t s = 0; s < spatial; ++s) {
        out.gamma[c] += grad_y.at(n, c, s) * cache.x_hat.at(n, c, s);
        out.beta[c] += grad_y.at(n, c, s);
      }

  std::vector<double> sum_g(channels), sum_gx(channels);
  for (const auto& group : cache.groups) {
    const double m = static_cast<double>(group.members.size() * spatial);
    std::fill(sum_g.begin(), sum_g.end(), 0.0);
    std::fill(sum_gx.begin(), sum_gx.end(), 0.0);
    for (std::size_t idx : group.members)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t s = 0; s < spatial; ++s) {
          const double g = static_cast<double>(grad_y.at(idx, c, s)) * state.gamma[c];
          sum_g[c] += g;
          sum_gx[c] += g * cache.x_hat.at(idx, c, s);
        }
    for (std::size_t idx : group.members)
      for (std::size_t c = 0; c < channels; ++c) {
        const double mean_g = sum_g[c] / m;
        const double mean_gx = sum_gx[c] / m;
        for (std::size_t s = 0; s < spatial; ++s) {
          const double g = static_cast<double>(grad_y.at(idx, c, s)) * state.gamma[c];
          out.x.at(idx, c, s) = static_cast<T>(
              (g - mean_g - cache.x_hat.at(idx, c, s) * mean_gx) / group.std[c]);
        }
      }
  }
  return out;
}

// Evaluation-mode normalization: a pure per-sample map through the
// accumulated statistics pair.
template <typename T>
Tensor<T> norm_forward_eval(const Tensor<T>& x, const NormLayerState<T>& state) {
  if (state.mode != NormMode::Eval)
    throw std::logic_error("norm_forward_eval: layer not in eval mode");
  const std::size_t channels = x.channels();
  state.validate(channels);
  Tensor<T> y(x.shape());
  const std::size_t spatial = x.spatial();
  std::vector<T> scale(channels), shift(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    scale[c] = state.gamma[c] / std::sqrt(state.running_var[c] + state.eps);
    shift[c] = state.beta[c] - scale[c] * state.running_mean[c];
  }
  for (std::size_t n = 0; n < x.samples(); ++n)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t s = 0; s < spatial; ++s)
        y.at(n, c, s) = scale[c] * x.at(n, c, s) + shift[c];
  return y;
}

}  // namespace mixnorm
