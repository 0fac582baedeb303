#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixnorm/tensor.hpp"

namespace mixnorm {

// A scalar objective value together with the gradient of its single
// differentiable input.
template <typename T>
struct LossValue {
  T value = T(0);
  Tensor<T> grad;
};

// Mean over samples of -log softmax(logits)[label].
// Gradient: (softmax - onehot) / N.
template <typename T>
LossValue<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  const std::size_t n = logits.samples();
  const std::size_t k = logits.channels();
  if (logits.rank() != 2) throw std::invalid_argument("cross_entropy: logits must be N x K");
  if (labels.size() != n) throw std::invalid_argument("cross_entropy: labels length mismatch");

  LossValue<T> out;
  out.grad = Tensor<T>(logits.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                  " of sample " + std::to_string(i) +
                                  " out of range [0, " + std::to_string(k) + ")");
    double row_max = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j)
      row_max = std::max(row_max, static_cast<double>(logits[i * k + j]));
    double sum_exp = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      sum_exp += std::exp(static_cast<double>(logits[i * k + j]) - row_max);
    const double lse = row_max + std::log(sum_exp);
    loss += lse - static_cast<double>(logits[i * k + static_cast<std::size_t>(label)]);
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(static_cast<double>(logits[i * k + j]) - lse);
      const double onehot = (static_cast<std::size_t>(label) == j) ? 1.0 : 0.0;
      out.grad[i * k + j] = static_cast<T>((p - onehot) / static_cast<double>(n));
    }
  }
  out.value = static_cast<T>(loss / static_cast<double>(n));
  return out;
}

// Batch-hard triplet loss: per anchor, the hinge on the farthest same-label
// and the nearest different-label embedding (Euclidean), mean over anchors.
// Distance ties are broken by the lowest sample index; the subgradient flows
// only through anchors whose hinge is strictly active.
template <typename T>
LossValue<T> batch_hard_triplet(const Tensor<T>& embeddings,
                                std::span<const int> labels, T margin) {
  const std::size_t n = embeddings.samples();
  const std::size_t dim = embeddings.channels();
  if (embeddings.rank() != 2)
    throw std::invalid_argument("batch_hard_triplet: embeddings must be N x B");
  if (labels.size() != n)
    throw std::invalid_argument("batch_hard_triplet: labels length mismatch");

  bool two_labels = false;
  for (std::size_t i = 1; i < n && !two_labels; ++i) two_labels = labels[i] != labels[0];
  if (!two_labels)
    throw std::invalid_argument("batch_hard_triplet: batch contains a single label");
  for (std::size_t i = 0; i < n; ++i) {
    bool has_positive = false;
    for (std::size_t j = 0; j < n && !has_positive; ++j)
      has_positive = j != i && labels[j] == labels[i];
    if (!has_positive)
      throw std::invalid_argument("batch_hard_triplet: label " +
                                  std::to_string(labels[i]) + " has a single sample");
  }

  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = static_cast<double>(embeddings[i * dim + d]) -
                            static_cast<double>(embeddings[j * dim + d]);
        acc += diff * diff;
      }
      const double d_ij = std::sqrt(acc);
      dist[i * n + j] = d_ij;
      dist[j * n + i] = d_ij;
    }

  LossValue<T> out;
  out.grad = Tensor<T>(embeddings.shape());
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);

  // Subgradient of d(a,b) wrt the pair; zero at coincident points.
  auto add_dist_grad = [&](std::size_t a, std::size_t b, double weight) {
    const double d_ab = dist[a * n + b];
    if (d_ab <= 0.0) return;
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = (static_cast<double>(embeddings[a * dim + d]) -
                           static_cast<double>(embeddings[b * dim + d])) /
                          d_ab;
      out.grad[a * dim + d] += static_cast<T>(weight * diff);
      out.grad[b * dim + d] -= static_cast<T>(weight * diff);
    }
  };

  for (std::size_t a = 0; a < n; ++a) {
    std::size_t hardest_pos = n;
    std::size_t hardest_neg = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (hardest_pos == n || dist[a * n + j] > dist[a * n + hardest_pos])
          hardest_pos = j;
      } else {
        if (hardest_neg == n || dist[a * n + j] < dist[a * n + hardest_neg])
          hardest_neg = j;
      }
    }
    const double hinge =
        dist[a * n + hardest_pos] - dist[a * n + hardest_neg] + static_cast<double>(margin);
    if (hinge > 0.0) {
      loss += hinge;
      add_dist_grad(a, hardest_pos, inv_n);
      add_dist_grad(a, hardest_neg, -inv_n);
    }
  }
  out.value = static_cast<T>(loss * inv_n);
  return out;
}

// Domain-aware center regularization: sum over samples of the squared
// distance to the batch feature mean. Gradient is 2 (r_i - r_bar); the
// mean's own dependence cancels because deviations sum to zero.
template <typename T>
LossValue<T> dcr_loss(const Tensor<T>& features) {
  const std::size_t n = features.samples();
  const std::size_t dim = features.channels();
  if (features.rank() != 2) throw std::invalid_argument("dcr_loss: features must be N x B");
  if (n < 1) throw std::invalid_argument("dcr_loss: empty batch");

  std::vector<double> center(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) center[d] += features[i * dim + d];
  for (double& c : center) c /= static_cast<double>(n);

  LossValue<T> out;
  out.grad = Tensor<T>(features.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) {
      const double dev = static_cast<double>(features[i * dim + d]) - center[d];
      loss += dev * dev;
      out.grad[i * dim + d] = static_cast<T>(2.0 * dev);
    }
  out.value = static_cast<T>(loss);
  return out;
}

// Alternative reading of the regularizer: pull each domain's feature center
// toward the global center. Off by default; selected by config.
template <typename T>
LossValue<T> dcr_domain_center_loss(const Tensor<T>& features,
                                    std::span<const int> domain_ids) {
  const std::size_t n = features.samples();
  const std::size_t dim = features.channels();
  if (features.rank() != 2)
    throw std::invalid_argument("dcr_domain_center_loss: features must be N x B");
  if (domain_ids.size() != n)
    throw std::invalid_argument("dcr_domain_center_loss: domain_ids length mismatch");

  int domains = 0;
  for (int d : domain_ids) domains = std::max(domains, d + 1);
  std::vector<double> centers(static_cast<std::size_t>(domains) * dim, 0.0);
  std::vector<double> counts(static_cast<std::size_t>(domains), 0.0);
  std::vector<double> global(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto d0 = static_cast<std::size_t>(domain_ids[i]);
    counts[d0] += 1.0;
    for (std::size_t d = 0; d < dim; ++d) {
      centers[d0 * dim + d] += features[i * dim + d];
      global[d] += features[i * dim + d];
    }
  }
  for (std::size_t g = 0; g < counts.size(); ++g) {
    if (counts[g] == 0.0)
      throw std::invalid_argument("dcr_domain_center_loss: domain " + std::to_string(g) +
                                  " absent from batch");
    for (std::size_t d = 0; d < dim; ++d) centers[g * dim + d] /= counts[g];
  }
  for (double& v : global) v /= static_cast<double>(n);

  double loss = 0.0;
  std::vector<double> center_dev(static_cast<std::size_t>(domains) * dim, 0.0);
  std::vector<double> dev_sum(dim, 0.0);
  for (std::size_t g = 0; g < counts.size(); ++g)
    for (std::size_t d = 0; d < dim; ++d) {
      const double dev = centers[g * dim + d] - global[d];
      center_dev[g * dim + d] = dev;
      dev_sum[d] += dev;
      loss += dev * dev;
    }

  // dL/dr_i = 2 dev_{g(i)} / m_{g(i)} - (2/N) sum_g dev_g
  LossValue<T> out;
  out.grad = Tensor<T>(features.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const auto g = static_cast<std::size_t>(domain_ids[i]);
    for (std::size_t d = 0; d < dim; ++d)
      out.grad[i * dim + d] = static_cast<T>(2.0 * center_dev[g * dim + d] / counts[g] -
                                             2.0 * dev_sum[d] / static_cast<double>(n));
  }
  out.value = static_cast<T>(loss);
  return out;
}

// Learned per-class centers for the center-loss baseline.
template <typename T>
struct ClassCenters {
  Tensor<T> centers;  // K x B
  T update_rate = T(0.5);

  static ClassCenters init(std::size_t classes, std::size_t dim, T update_rate = T(0.5)) {
    ClassCenters c;
    c.centers = Tensor<T>({classes, dim});
    c.update_rate = update_rate;
    return c;
  }
};

// Center loss: sum_i ||r_i - c_{y_i}||^2 / 2, gradient wrt features only.
// After the loss is computed each touched center moves toward its class
// batch mean by update_rate.
template <typename T>
LossValue<T> center_loss(const Tensor<T>& features, std::span<const int> labels,
                         ClassCenters<T>& centers) {
  const std::size_t n = features.samples();
  const std::size_t dim = features.channels();
  const std::size_t classes = centers.centers.samples();
  if (features.rank() != 2) throw std::invalid_argument("center_loss: features must be N x B");
  if (labels.size() != n) throw std::invalid_argument("center_loss: labels length mismatch");
  if (centers.centers.channels() != dim)
    throw std::invalid_argument("center_loss: center dimension mismatch");

  LossValue<T> out;
  out.grad = Tensor<T>(features.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
      throw std::invalid_argument("center_loss: unknown class id " + std::to_string(label));
    const auto k = static_cast<std::size_t>(label);
    for (std::size_t d = 0; d < dim; ++d) {
      const double dev = static_cast<double>(features[i * dim + d]) -
                         static_cast<double>(centers.centers[k * dim + d]);
      loss += 0.5 * dev * dev;
      out.grad[i * dim + d] = static_cast<T>(dev);
    }
  }
  out.value = static_cast<T>(loss);

  // Damped center update toward the class batch means.
  std::vector<double> batch_sum(classes * dim, 0.0);
  std::vector<std::size_t> batch_count(classes, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(labels[i]);
    ++batch_count[k];
    for (std::size_t d = 0; d < dim; ++d)
      batch_sum[k * dim + d] += features[i * dim + d];
  }
  for (std::size_t k = 0; k < classes; ++k) {
    if (batch_count[k] == 0) continue;
    for (std::size_t d = 0; d < dim; ++d) {
      const double batch_mean = batch_sum[k * dim + d] / static_cast<double>(batch_count[k]);
      centers.centers[k * dim + d] = static_cast<T>(
          (1.0 - static_cast<double>(centers.update_rate)) *
              static_cast<double>(centers.centers[k * dim + d]) +
          static_cast<double>(centers.update_rate) * batch_mean);
    }
  }
  return out;
}

// L_overall = L_cls + L_tri + lambda * L_dcr.
template <typename T>
T overall_loss(T l_cls, T l_tri, T l_dcr, T lambda) {
  if (!std::isfinite(static_cast<double>(l_cls)) ||
      !std::isfinite(static_cast<double>(l_tri)) ||
      !std::isfinite(static_cast<double>(l_dcr)))
    throw std::invalid_argument("overall_loss: non-finite component");
  return l_cls + l_tri + lambda * l_dcr;
}

}  // namespace mixnorm
