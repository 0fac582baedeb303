#include "mixnorm/gradsuite.hpp"

#include <algorithm>
#include <cmath>

#include "mixnorm/gradcheck.hpp"
#include "mixnorm/losses.hpp"
#include "mixnorm/model.hpp"
#include "mixnorm/normlayers.hpp"
#include "mixnorm/partition.hpp"
#include "mixnorm/rng.hpp"
#include "mixnorm/tensor.hpp"

namespace mixnorm {

namespace {

constexpr int kConfigs = 20;
constexpr double kLayerTol = 1e-6;
constexpr double kEndToEndTol = 1e-5;

TensorD random_tensor(std::vector<std::size_t> shape, RngStream& rng, double scale = 1.0) {
  TensorD t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

// One group-normalization configuration: input, affine, partition, domains.
struct NormCase {
  TensorD x;
  std::vector<int> domain_ids;
  int domains = 1;
  bool use_bn = false;  // exercise bn_forward_train instead of the DMN path
  Partition partition;
  NormLayerState<double> state;
  TensorD grad_y;
};

NormCase make_norm_case(RngStream& rng, bool mixed) {
  NormCase nc;
  const int domains = mixed ? static_cast<int>(rng.uniform_int(2, 4)) : 1;
  const std::size_t per_domain = static_cast<std::size_t>(rng.uniform_int(2, 4));
  const std::size_t n = static_cast<std::size_t>(domains) * per_domain;
  const std::size_t channels = static_cast<std::size_t>(rng.uniform_int(1, 4));
  const bool rank4 = rng.uniform_real() < 0.5;
  std::vector<std::size_t> shape;
  if (rank4) {
    const std::size_t h = static_cast<std::size_t>(rng.uniform_int(1, 3));
    const std::size_t w = static_cast<std::size_t>(rng.uniform_int(1, 3));
    shape = {n, channels, h, w};
  } else {
    shape = {n, channels};
  }
  nc.x = random_tensor(shape, rng);
  nc.domains = domains;
  nc.use_bn = !mixed;
  nc.domain_ids.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    nc.domain_ids[i] = static_cast<int>(i % static_cast<std::size_t>(domains));
  if (mixed) {
    PartitionPolicy policy = PartitionPolicy::d_minus_1(domains);
    if (rng.uniform_real() < 0.3) policy = PartitionPolicy::full(domains);
    nc.partition = sample_partition(policy, rng);
  }
  nc.state = NormLayerState<double>::init(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    nc.state.gamma[c] = 0.5 + rng.uniform_real();
    nc.state.beta[c] = rng.normal();
  }
  nc.grad_y = random_tensor(shape, rng);
  return nc;
}

// Forward through a copy so running statistics never leak between probes.
TensorD norm_forward_copy(const NormCase& nc, const TensorD& x,
                          const std::vector<double>& gamma,
                          const std::vector<double>& beta) {
  NormLayerState<double> state = nc.state;
  state.gamma = gamma;
  state.beta = beta;
  if (nc.use_bn) {
    auto [y, cache] = bn_forward_train(x, state);
    (void)cache;
    return y;
  }
  auto [y, cache] =
      dmn_forward_train_with_partition(x, std::span<const int>(nc.domain_ids), state,
                                       nc.domains, nc.partition);
  (void)cache;
  return y;
}

double check_norm_backward(RngStream& rng, bool mixed, const std::string& inject) {
  double worst = 0.0;
  for (int cfg = 0; cfg < kConfigs; ++cfg) {
    NormCase nc = make_norm_case(rng, mixed);

    NormLayerState<double> state = nc.state;
    NormCache<double> cache;
    if (nc.use_bn) {
      auto [y, c] = bn_forward_train(nc.x, state);
      (void)y;
      cache = std::move(c);
    } else {
      auto [y, c] = dmn_forward_train_with_partition(
          nc.x, std::span<const int>(nc.domain_ids), state, nc.domains, nc.partition);
      (void)y;
      cache = std::move(c);
    }
    NormGrads<double> grads = dmn_backward(nc.grad_y, cache, nc.state);
    if (inject == "normlayers.grad_gamma_sign")
      for (auto& g : grads.gamma) g = -g;

    auto objective = [&](const TensorD& probe_x, const std::vector<double>& gamma,
                         const std::vector<double>& beta) {
      const TensorD out = norm_forward_copy(nc, probe_x, gamma, beta);
      double acc = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) acc += nc.grad_y[i] * out[i];
      return acc;
    };

    const TensorD fd_x = finite_diff_grad(
        [&](const TensorD& p) { return objective(p, nc.state.gamma, nc.state.beta); },
        nc.x);
    worst = std::max(worst, max_rel_error(grads.x, fd_x));

    const std::size_t channels = nc.state.gamma.size();
    const TensorD fd_gamma = finite_diff_grad(
        [&](const TensorD& p) {
          std::vector<double> gamma(p.values().begin(), p.values().end());
          return objective(nc.x, gamma, nc.state.beta);
        },
        TensorD({channels}, nc.state.gamma));
    worst = std::max(worst,
                     max_rel_error(TensorD({channels}, grads.gamma), fd_gamma));

    const TensorD fd_beta = finite_diff_grad(
        [&](const TensorD& p) {
          std::vector<double> beta(p.values().begin(), p.values().end());
          return objective(nc.x, nc.state.gamma, beta);
        },
        TensorD({channels}, nc.state.beta));
    worst = std::max(worst, max_rel_error(TensorD({channels}, grads.beta), fd_beta));
  }
  return worst;
}

double check_cross_entropy(RngStream& rng) {
  double worst = 0.0;
  for (int cfg = 0; cfg < kConfigs; ++cfg) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(2, 8));
    const std::size_t k = static_cast<std::size_t>(rng.uniform_int(2, 6));
    TensorD logits = random_tensor({n, k}, rng, 2.0);
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng.uniform_below(k));
    const LossValue<double> loss = cross_entropy(logits, labels);
    const TensorD fd = finite_diff_grad(
        [&](const TensorD& p) { return cross_entropy(p, labels).value; }, logits);
    worst = std::max(worst, max_rel_error(loss.grad, fd));
  }
  return worst;
}

// Hard mining is piecewise; keep only configurations where the hinge and the
// argmax/argmin selections sit clearly away from switching points.
bool triplet_case_is_stable(const TensorD& emb, const std::vector<int>& labels,
                            double margin) {
  const std::size_t n = emb.samples();
  const std::size_t dim = emb.channels();
  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = emb[i * dim + d] - emb[j * dim + d];
        acc += diff * diff;
      }
      dist[i * n + j] = std::sqrt(acc);
    }
  const double gap = 1e-3;
  for (std::size_t a = 0; a < n; ++a) {
    double best_pos = -1.0, second_pos = -1.0;
    double best_neg = 1e300, second_neg = 1e300;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      const double d = dist[a * n + j];
      if (labels[j] == labels[a]) {
        if (d > best_pos) {
          second_pos = best_pos;
          best_pos = d;
        } else {
          second_pos = std::max(second_pos, d);
        }
      } else {
        if (d < best_neg) {
          second_neg = best_neg;
          best_neg = d;
        } else {
          second_neg = std::min(second_neg, d);
        }
      }
    }
    if (second_pos >= 0.0 && best_pos - second_pos < gap) return false;
    if (second_neg < 1e300 && second_neg - best_neg < gap) return false;
    if (std::abs(best_pos - best_neg + margin) < gap) return false;
    if (best_pos < gap) return false;  // subgradient kink at zero distance
  }
  return true;
}

double check_triplet(RngStream& rng) {
  double worst = 0.0;
  const double margin = 0.3;
  int done = 0;
  while (done < kConfigs) {
    const std::size_t ids = static_cast<std::size_t>(rng.uniform_int(2, 4));
    const std::size_t per_id = static_cast<std::size_t>(rng.uniform_int(2, 3));
    const std::size_t n = ids * per_id;
    const std::size_t dim = static_cast<std::size_t>(rng.uniform_int(2, 6));
    TensorD emb = random_tensor({n, dim}, rng);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i / per_id);
    if (!triplet_case_is_stable(emb, labels, margin)) continue;
    const LossValue<double> loss = batch_hard_triplet(emb, labels, margin);
    const TensorD fd = finite_diff_grad(
        [&](const TensorD& p) { return batch_hard_triplet(p, labels, margin).value; },
        emb);
    worst = std::max(worst, max_rel_error(loss.grad, fd));
    ++done;
  }
  return worst;
}

double check_dcr(RngStream& rng) {
  double worst = 0.0;
  for (int cfg = 0; cfg < kConfigs; ++cfg) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(2, 10));
    const std::size_t dim = static_cast<std::size_t>(rng.uniform_int(2, 8));
    TensorD features = random_tensor({n, dim}, rng);
    const LossValue<double> loss = dcr_loss(features);
    const TensorD fd = finite_diff_grad(
        [&](const TensorD& p) { return dcr_loss(p).value; }, features);
    worst = std::max(worst, max_rel_error(loss.grad, fd));
  }
  return worst;
}

double check_dcr_domain(RngStream& rng) {
  double worst = 0.0;
  for (int cfg = 0; cfg < kConfigs; ++cfg) {
    const int domains = static_cast<int>(rng.uniform_int(2, 4));
    const std::size_t per_domain = static_cast<std::size_t>(rng.uniform_int(2, 4));
    const std::size_t n = static_cast<std::size_t>(domains) * per_domain;
    const std::size_t dim = static_cast<std::size_t>(rng.uniform_int(2, 6));
    TensorD features = random_tensor({n, dim}, rng);
    std::vector<int> ids(n);
    for (std::size_t i = 0; i < n; ++i)
      ids[i] = static_cast<int>(i % static_cast<std::size_t>(domains));
    const LossValue<double> loss = dcr_domain_center_loss(features, ids);
    const TensorD fd = finite_diff_grad(
        [&](const TensorD& p) { return dcr_domain_center_loss(p, ids).value; },
        features);
    worst = std::max(worst, max_rel_error(loss.grad, fd));
  }
  return worst;
}

double check_center_loss(RngStream& rng) {
  double worst = 0.0;
  for (int cfg = 0; cfg < kConfigs; ++cfg) {
    const std::size_t classes = static_cast<std::size_t>(rng.uniform_int(2, 5));
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(2, 8));
    const std::size_t dim = static_cast<std::size_t>(rng.uniform_int(2, 6));
    TensorD features = random_tensor({n, dim}, rng);
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng.uniform_below(classes));
    ClassCenters<double> base = ClassCenters<double>::init(classes, dim);
    for (std::size_t i = 0; i < base.centers.size(); ++i) base.centers[i] = rng.normal();

    ClassCenters<double> work = base;
    const LossValue<double> loss = center_loss(features, labels, work);
    // Centers held fixed for differentiation: each probe gets a fresh copy.
    const TensorD fd = finite_diff_grad(
        [&](const TensorD& p) {
          ClassCenters<double> probe = base;
          return center_loss(p, labels, probe).value;
        },
        features);
    worst = std::max(worst, max_rel_error(loss.grad, fd));
  }
  return worst;
}

// Total-loss gradient wrt one randomly chosen parameter vector of a small
// model, mix-normalization partitions pinned per slot.
double check_end_to_end(RngStream& rng, bool dmn) {
  double worst = 0.0;
  for (int cfg = 0; cfg < kConfigs; ++cfg) {
    const int domains = dmn ? static_cast<int>(rng.uniform_int(2, 4)) : 3;
    ModelConfig mc;
    mc.input_dim = 6;
    mc.hidden = {10, 8};
    mc.embedding_dim = 6;
    mc.n_classes = 4;
    mc.norm.assign(2, dmn ? NormKind::Dmn : NormKind::Bn);

    auto init_rng = rng.split("e2e/init" + std::to_string(cfg));
    Model<double> base = build_model<double>(mc, init_rng);
    // Non-trivial affine so gamma/beta paths are exercised.
    for (auto& block : base.blocks)
      for (std::size_t c = 0; c < block.norm.gamma.size(); ++c) {
        block.norm.gamma[c] = 0.5 + rng.uniform_real();
        block.norm.beta[c] = 0.2 * rng.normal();
      }

    const std::size_t per_id = 2, ids_per_domain = 2;
    const std::size_t n = static_cast<std::size_t>(domains) * ids_per_domain * per_id;
    TensorD x = random_tensor({n, static_cast<std::size_t>(mc.input_dim)}, rng);
    std::vector<int> domain_ids(n), labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t d = i / (ids_per_domain * per_id);
      const std::size_t within = i % (ids_per_domain * per_id);
      domain_ids[i] = static_cast<int>(d);
      labels[i] = static_cast<int>(within / per_id);  // identities shared across domains
    }

    PartitionPolicy policy = PartitionPolicy::d_minus_1(domains);
    std::vector<Partition> partitions;
    for (std::size_t b = 0; b < mc.hidden.size(); ++b)
      partitions.push_back(sample_partition(policy, rng));

    const double lambda = 0.2, margin = 0.3;
    auto total_loss = [&](Model<double>& m) {
      ForwardContext<double> ctx;
      ctx.domain_ids = domain_ids;
      ctx.policy = &policy;
      ctx.fixed_partitions = &partitions;
      ModelTape<double> tape = forward_train(m, x, ctx);
      const auto cls = cross_entropy(tape.logits, labels);
      const auto tri = batch_hard_triplet(tape.embedding, labels, margin);
      const auto reg = dcr_loss(tape.embedding);
      return std::make_tuple(overall_loss(cls.value, tri.value, reg.value, lambda),
                             std::move(tape), cls, tri, reg);
    };

    // Analytic gradient.
    Model<double> work = base;
    auto [value, tape, cls, tri, reg] = total_loss(work);
    (void)value;
    TensorD grad_emb(tape.embedding.shape());
    for (std::size_t i = 0; i < grad_emb.size(); ++i)
      grad_emb[i] = tri.grad[i] + lambda * reg.grad[i];
    ModelGrads<double> grads = backward(work, tape, grad_emb, cls.grad);

    // Pick one parameter vector per configuration, cycling through all.
    std::vector<std::pair<std::string, std::vector<double>*>> params;
    std::vector<std::vector<double>*> grad_ptrs;
    for_each_param(work, &grads,
                   [&](const std::string& name, std::vector<double>& p,
                       std::vector<double>* g) {
                     params.push_back({name, &p});
                     grad_ptrs.push_back(g);
                   });
    const std::size_t pick = static_cast<std::size_t>(cfg) % params.size();
    const std::string& picked_name = params[pick].first;
    const std::vector<double> theta = *params[pick].second;

    const TensorD fd = finite_diff_grad(
        [&](const TensorD& p) {
          Model<double> probe = base;
          std::size_t idx = 0;
          for_each_param(probe, static_cast<ModelGrads<double>*>(nullptr),
                         [&](const std::string&, std::vector<double>& vec,
                             std::vector<double>*) {
                           if (idx == pick)
                             vec.assign(p.values().begin(), p.values().end());
                           ++idx;
                         });
          auto [v, t2, c2, t3, r2] = total_loss(probe);
          (void)t2;
          (void)c2;
          (void)t3;
          (void)r2;
          return v;
        },
        TensorD({theta.size()}, theta), 1e-6);
    (void)picked_name;
    worst = std::max(worst,
                     max_rel_error(TensorD({theta.size()}, *grad_ptrs[pick]), fd));
  }
  return worst;
}

GradCheckReport make_report(const std::string& name, double err, double tol, int configs) {
  GradCheckReport r;
  r.component = name;
  r.worst_rel_error = err;
  r.tolerance = tol;
  r.configs = configs;
  r.pass = err <= tol;
  return r;
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(const std::string& inject) {
  std::vector<GradCheckReport> out;
  {
    RngStream rng(101);
    out.push_back(make_report("normlayers.bn_backward", check_norm_backward(rng, false, inject),
                              kLayerTol, kConfigs));
  }
  {
    RngStream rng(202);
    out.push_back(make_report("normlayers.dmn_backward", check_norm_backward(rng, true, inject),
                              kLayerTol, kConfigs));
  }
  {
    RngStream rng(303);
    out.push_back(make_report("losses.cross_entropy", check_cross_entropy(rng), kLayerTol,
                              kConfigs));
  }
  {
    RngStream rng(404);
    out.push_back(
        make_report("losses.batch_hard_triplet", check_triplet(rng), kLayerTol, kConfigs));
  }
  {
    RngStream rng(505);
    out.push_back(make_report("losses.dcr", check_dcr(rng), kLayerTol, kConfigs));
  }
  {
    RngStream rng(606);
    out.push_back(
        make_report("losses.dcr_domain", check_dcr_domain(rng), kLayerTol, kConfigs));
  }
  {
    RngStream rng(707);
    out.push_back(
        make_report("losses.center", check_center_loss(rng), kLayerTol, kConfigs));
  }
  {
    RngStream rng(808);
    out.push_back(make_report("trainer.end_to_end_bn", check_end_to_end(rng, false),
                              kEndToEndTol, kConfigs));
  }
  {
    RngStream rng(909);
    out.push_back(make_report("trainer.end_to_end_dmn", check_end_to_end(rng, true),
                              kEndToEndTol, kConfigs));
  }
  return out;
}

}  // namespace mixnorm
