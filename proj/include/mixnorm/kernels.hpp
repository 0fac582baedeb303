#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "mixnorm/tensor.hpp"

// Data-parallel inner loops of the pipeline. Every kernel exists twice:
// a plain serial reference under kernels::serial and an OpenMP variant at
// kernels:: scope. The parallel variants split work so that each output
// element is produced by exactly one thread with the same serial inner
// loop, which makes them bit-identical to the reference for any thread
// count. Tests assert that equality; tools/bench_kernels compares speed.

namespace mixnorm::kernels {

namespace serial {

// C[m x n] = A[m x k] * B[n x k]^T   (linear-layer forward: y = x W^T)
template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c,
               std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
  }
}

// C[m x n] = A[m x k] * B[k x n]     (backward wrt input: gx = gy W)
template <typename T>
void matmul_nn(std::span<const T> a, std::span<const T> b, std::span<T> c,
               std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

// C[r x s] = A[m x r]^T * B[m x s]   (weight gradient: gW = gy^T x)
template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c,
               std::size_t m, std::size_t r, std::size_t s) {
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < s; ++j) {
      T acc = T(0);
      for (std::size_t p = 0; p < m; ++p) acc += a[p * r + i] * b[p * s + j];
      c[i * s + j] = acc;
    }
  }
}

// Per-channel biased mean/variance over the listed samples and all spatial
// positions. Accumulates in double so the 32-bit path keeps reduction error
// well under the normalization invariants.
template <typename T>
void channel_moments(const Tensor<T>& x, std::span<const std::size_t> members,
                     std::span<T> mean_out, std::span<T> var_out) {
  const std::size_t channels = x.channels();
  const std::size_t spatial = x.spatial();
  const double count = static_cast<double>(members.size() * spatial);
  for (std::size_t c = 0; c < channels; ++c) {
    double acc = 0.0;
    for (std::size_t idx : members)
      for (std::size_t s = 0; s < spatial; ++s)
        acc += static_cast<double>(x.at(idx, c, s));
    const double mu = acc / count;
    double sq = 0.0;
    for (std::size_t idx : members)
      for (std::size_t s = 0; s < spatial; ++s) {
        const double d = static_cast<double>(x.at(idx, c, s)) - mu;
        sq += d * d;
      }
    mean_out[c] = static_cast<T>(mu);
    var_out[c] = static_cast<T>(sq / count);
  }
}

// y = gamma_c * (x - mean_c) * inv_std_c + beta_c over the listed samples.
template <typename T>
void normalize_affine(const Tensor<T>& x, std::span<const std::size_t> members,
                      std::span<const T> mean, std::span<const T> inv_std,
                      std::span<const T> gamma, std::span<const T> beta,
                      Tensor<T>& x_hat, Tensor<T>& y) {
  const std::size_t channels = x.channels();
  const std::size_t spatial = x.spatial();
  for (std::size_t mi = 0; mi < members.size(); ++mi) {
    const std::size_t idx = members[mi];
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t s = 0; s < spatial; ++s) {
        const T xn = (x.at(idx, c, s) - mean[c]) * inv_std[c];
        x_hat.at(idx, c, s) = xn;
        y.at(idx, c, s) = gamma[c] * xn + beta[c];
      }
    }
  }
}

// dist[i * gal + j] = 1 - cos(q_i, g_j). Zero-norm rows are treated as
// orthogonal to everything (distance 1).
template <typename T>
void pairwise_cosine(const Tensor<T>& query, const Tensor<T>& gallery,
                     std::span<T> dist) {
  const std::size_t nq = query.samples();
  const std::size_t ng = gallery.samples();
  const std::size_t dim = query.channels();
  for (std::size_t i = 0; i < nq; ++i) {
    double qn = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double v = query[i * dim + d];
      qn += v * v;
    }
    qn = std::sqrt(qn);
    for (std::size_t j = 0; j < ng; ++j) {
      double dot = 0.0, gn = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double g = gallery[j * dim + d];
        dot += static_cast<double>(query[i * dim + d]) * g;
        gn += g * g;
      }
      gn = std::sqrt(gn);
      const double denom = qn * gn;
      dist[i * ng + j] = static_cast<T>(denom > 0.0 ? 1.0 - dot / denom : 1.0);
    }
  }
}

}  // namespace serial

// OpenMP variants. Work is split over rows/channels/queries; inner
// accumulation is the same serial loop as the reference.

template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c,
               std::size_t m, std::size_t n, std::size_t k) {
#pragma omp parallel for schedule(static) if (m * n * k > 16384)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void matmul_nn(std::span<const T> a, std::span<const T> b, std::span<T> c,
               std::size_t m, std::size_t n, std::size_t k) {
#pragma omp parallel for schedule(static) if (m * n * k > 16384)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c,
               std::size_t m, std::size_t r, std::size_t s) {
#pragma omp parallel for schedule(static) if (m * r * s > 16384)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(r); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t j = 0; j < s; ++j) {
      T acc = T(0);
      for (std::size_t p = 0; p < m; ++p) acc += a[p * r + i] * b[p * s + j];
      c[i * s + j] = acc;
    }
  }
}

template <typename T>
void channel_moments(const Tensor<T>& x, std::span<const std::size_t> members,
                     std::span<T> mean_out, std::span<T> var_out) {
  const std::size_t channels = x.channels();
  const std::size_t spatial = x.spatial();
  const double count = static_cast<double>(members.size() * spatial);
#pragma omp parallel for schedule(static) if (channels > 1)
  for (std::ptrdiff_t cc = 0; cc < static_cast<std::ptrdiff_t>(channels); ++cc) {
    const auto c = static_cast<std::size_t>(cc);
    double acc = 0.0;
    for (std::size_t idx : members)
      for (std::size_t s = 0; s < spatial; ++s)
        acc += static_cast<double>(x.at(idx, c, s));
    const double mu = acc / count;
    double sq = 0.0;
    for (std::size_t idx : members)
      for (std::size_t s = 0; s < spatial; ++s) {
        const double d = static_cast<double>(x.at(idx, c, s)) - mu;
        sq += d * d;
      }
    mean_out[c] = static_cast<T>(mu);
    var_out[c] = static_cast<T>(sq / count);
  }
}

template <typename T>
void normalize_affine(const Tensor<T>& x, std::span<const std::size_t> members,
                      std::span<const T> mean, std::span<const T> inv_std,
                      std::span<const T> gamma, std::span<const T> beta,
                      Tensor<T>& x_hat, Tensor<T>& y) {
  const std::size_t channels = x.channels();
  const std::size_t spatial = x.spatial();
#pragma omp parallel for schedule(static) if (members.size() > 8)
  for (std::ptrdiff_t mm = 0; mm < static_cast<std::ptrdiff_t>(members.size()); ++mm) {
    const std::size_t idx = members[static_cast<std::size_t>(mm)];
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t s = 0; s < spatial; ++s) {
        const T xn = (x.at(idx, c, s) - mean[c]) * inv_std[c];
        x_hat.at(idx, c, s) = xn;
        y.at(idx, c, s) = gamma[c] * xn + beta[c];
      }
    }
  }
}

template <typename T>
void pairwise_cosine(const Tensor<T>& query, const Tensor<T>& gallery,
                     std::span<T> dist) {
  const std::size_t nq = query.samples();
  const std::size_t ng = gallery.samples();
  const std::size_t dim = query.channels();
#pragma omp parallel for schedule(static) if (nq > 1)
  for (std::ptrdiff_t qi = 0; qi < static_cast<std::ptrdiff_t>(nq); ++qi) {
    const auto i = static_cast<std::size_t>(qi);
    double qn = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double v = query[i * dim + d];
      qn += v * v;
    }
    qn = std::sqrt(qn);
    for (std::size_t j = 0; j < ng; ++j) {
      double dot = 0.0, gn = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double g = gallery[j * dim + d];
        dot += static_cast<double>(query[i * dim + d]) * g;
        gn += g * g;
      }
      gn = std::sqrt(gn);
      const double denom = qn * gn;
      dist[i * ng + j] = static_cast<T>(denom > 0.0 ? 1.0 - dot / denom : 1.0);
    }
  }
}

}  // namespace mixnorm::kernels
