#include "mixnorm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mixnorm/kernels.hpp"
#include "mixnorm/losses.hpp"

namespace mixnorm {

namespace {

// Adam with double-precision moments, stepping every parameter vector in the
// model's canonical enumeration order.
class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(Model<float>& model, ModelGrads<float>& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    std::size_t slot = 0;
    for_each_param(model, &grads,
                   [&](const std::string&, std::vector<float>& param,
                       std::vector<float>* grad) {
                     if (slot >= m_.size()) {
                       m_.emplace_back(param.size(), 0.0);
                       v_.emplace_back(param.size(), 0.0);
                     }
                     auto& m = m_[slot];
                     auto& v = v_[slot];
                     for (std::size_t i = 0; i < param.size(); ++i) {
                       const double g = (*grad)[i];
                       m[i] = b1_ * m[i] + (1.0 - b1_) * g;
                       v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
                       const double mh = m[i] / bc1;
                       const double vh = v[i] / bc2;
                       param[i] -= static_cast<float>(lr * mh / (std::sqrt(vh) + eps_));
                     }
                     ++slot;
                   });
  }

 private:
  double b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

double lr_at_epoch(const TrainSchedule& sched, int epoch /* 1-based */) {
  double lr = sched.base_lr;
  for (int d : sched.decay_epochs)
    if (epoch >= d) lr *= sched.decay_factor;
  return lr;
}

}  // namespace

TrainResult train_model(Model<float>& model, const MultiDomainData& data,
                        const TrainOptions& opts, RngStream rng) {
  opts.schedule.validate();
  if (data.sources.empty()) throw std::invalid_argument("train: no source datasets");
  if (opts.loss.lambda < 0.0) throw std::invalid_argument("train: lambda must be >= 0");
  const int domains = data.domains();
  if (model.cfg.uses_dmn() && opts.sampler != SamplerKind::Us)
    throw std::invalid_argument("train: DMN requires the uniform-per-domain sampler");

  PartitionPolicy policy = opts.dmn.max_group_full ? PartitionPolicy::full(domains)
                                                   : PartitionPolicy::d_minus_1(domains);
  if (opts.dmn.fixed_c) policy = policy.with_fixed_c(*opts.dmn.fixed_c);
  policy.validate();
  model.set_running_update(opts.dmn.running_update);

  std::optional<UsBatchSampler> us;
  std::optional<RsBatchSampler> rs;
  std::size_t batch_size = 0;
  std::size_t pooled = 0;
  for (const auto& ds : data.sources) pooled += ds.size();
  if (opts.sampler == SamplerKind::Us) {
    us.emplace(data.sources, opts.p_ids, opts.k_per_id, rng.split("sampler"));
    batch_size = us->batch_size();
  } else {
    // RS keeps the US batch size: D*P identities of K images from the pool.
    rs.emplace(data.sources, opts.p_ids * static_cast<std::size_t>(domains),
               opts.k_per_id, rng.split("sampler"));
    batch_size = rs->batch_size();
  }

  const int iters_per_epoch =
      opts.schedule.iters_per_epoch > 0
          ? opts.schedule.iters_per_epoch
          : std::max(1, static_cast<int>(pooled / batch_size));

  std::vector<RngStream> slot_rngs;
  for (std::size_t b = 0; b < model.blocks.size(); ++b)
    slot_rngs.push_back(rng.split("dmn/slot" + std::to_string(b)));
  RngStream shared_rng = rng.split("dmn/shared");

  ClassCenters<float> centers = ClassCenters<float>::init(
      static_cast<std::size_t>(model.cfg.n_classes),
      static_cast<std::size_t>(model.cfg.embedding_dim),
      static_cast<float>(opts.loss.center_update_rate));

  Adam adam(opts.schedule.beta1, opts.schedule.beta2, opts.schedule.adam_eps);
  TrainResult result;
  long iter_index = 0;

  for (int epoch = 1; epoch <= opts.schedule.epochs; ++epoch) {
    const double lr = lr_at_epoch(opts.schedule, epoch);
    double sum_cls = 0, sum_tri = 0, sum_reg = 0, sum_total = 0;

    for (int it = 0; it < iters_per_epoch; ++it, ++iter_index) {
      DomainBatch batch = us ? us->next() : rs->next();

      ForwardContext<float> ctx;
      ctx.domain_ids = batch.domain_ids;
      ctx.policy = &policy;
      Partition shared;
      if (opts.dmn.shared_partition) {
        shared = sample_partition(policy, shared_rng);
        ctx.shared_partition = &shared;
      } else {
        ctx.slot_rngs = &slot_rngs;
      }

      model.set_mode(NormMode::Train);
      ModelTape<float> tape = forward_train(model, batch.features, ctx);

      LossValue<float> cls = cross_entropy(tape.logits, batch.class_ids);
      LossValue<float> tri = batch_hard_triplet(tape.embedding, batch.class_ids,
                                                static_cast<float>(opts.loss.margin));
      LossValue<float> reg;
      reg.value = 0.0f;
      reg.grad = TensorF(tape.embedding.shape());
      switch (opts.loss.reg) {
        case RegKind::None:
          break;
        case RegKind::Dcr:
          reg = dcr_loss(tape.embedding);
          break;
        case RegKind::DcrDomain:
          reg = dcr_domain_center_loss(tape.embedding,
                                       std::span<const int>(batch.domain_ids));
          break;
        case RegKind::Center:
          reg = center_loss(tape.embedding, std::span<const int>(batch.class_ids),
                            centers);
          break;
      }
      const float total = overall_loss(cls.value, tri.value, reg.value,
                                       static_cast<float>(opts.loss.lambda));
      if (!std::isfinite(static_cast<double>(total)))
        throw numerical_error("train: non-finite loss at iteration " +
                              std::to_string(iter_index));

      TensorF grad_emb(tape.embedding.shape());
      for (std::size_t i = 0; i < grad_emb.size(); ++i)
        grad_emb[i] = tri.grad[i] +
                      static_cast<float>(opts.loss.lambda) * reg.grad[i];
      ModelGrads<float> grads = backward(model, tape, grad_emb, cls.grad);
      adam.step(model, grads, lr);

      sum_cls += cls.value;
      sum_tri += tri.value;
      sum_reg += reg.value;
      sum_total += total;
    }

    MetricsRow row;
    row.epoch = epoch;
    row.loss_cls = sum_cls / iters_per_epoch;
    row.loss_tri = sum_tri / iters_per_epoch;
    row.loss_dcr = sum_reg / iters_per_epoch;
    row.loss_total = sum_total / iters_per_epoch;

    model.set_mode(NormMode::Eval);
    row.target_acc = evaluate_classification(model, data.target_cls);
    const RetrievalMetrics rm = evaluate_retrieval(model, data.query, data.gallery);
    row.map = rm.map;
    row.cmc1 = rm.cmc1;
    row.cmc5 = rm.cmc5;
    row.cmc10 = rm.cmc10;
    model.set_mode(NormMode::Train);
    result.metrics.push_back(row);
  }

  // Final report: last-epoch metrics plus the domain-center diagnostic on
  // source embeddings.
  model.set_mode(NormMode::Eval);
  const MetricsRow& last = result.metrics.back();
  result.report.target_accuracy = last.target_acc;
  result.report.map = last.map;
  result.report.cmc1 = last.cmc1;
  result.report.cmc5 = last.cmc5;
  result.report.cmc10 = last.cmc10;

  std::size_t total_src = 0;
  for (const auto& ds : data.sources) total_src += ds.size();
  const std::size_t emb_dim = static_cast<std::size_t>(model.cfg.embedding_dim);
  TensorF src_emb({total_src, emb_dim});
  std::vector<int> src_domains(total_src);
  std::size_t row0 = 0;
  for (const auto& ds : data.sources) {
    TensorF emb = embed_dataset(model, ds);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      for (std::size_t d = 0; d < emb_dim; ++d)
        src_emb[(row0 + i) * emb_dim + d] = emb[i * emb_dim + d];
      src_domains[row0 + i] = ds.domain_ids[i];
    }
    row0 += ds.size();
  }
  result.report.domain_center_distances =
      domain_center_stats(src_emb, src_domains);
  return result;
}

TensorF embed_dataset(Model<float>& model, const LabeledDataset& dataset) {
  model.set_mode(NormMode::Eval);
  return forward_eval(model, dataset.features).embedding;
}

double evaluate_classification(Model<float>& model, const LabeledDataset& dataset) {
  if (dataset.size() == 0)
    throw std::invalid_argument("evaluate_classification: empty dataset");
  model.set_mode(NormMode::Eval);
  const EvalOutput<float> out = forward_eval(model, dataset.features);
  const std::size_t k = out.logits.channels();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (out.logits[i * k + j] > out.logits[i * k + best]) best = j;
    if (static_cast<int>(best) == dataset.class_ids[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

RetrievalMetrics retrieval_metrics(const TensorF& query_emb, std::span<const int> query_ids,
                                   const TensorF& gallery_emb,
                                   std::span<const int> gallery_ids) {
  const std::size_t nq = query_emb.samples();
  const std::size_t ng = gallery_emb.samples();
  if (query_ids.size() != nq || gallery_ids.size() != ng)
    throw std::invalid_argument("retrieval_metrics: id length mismatch");
  if (nq == 0 || ng == 0) throw std::invalid_argument("retrieval_metrics: empty set");

  for (std::size_t q = 0; q < nq; ++q) {
    bool found = false;
    for (std::size_t g = 0; g < ng && !found; ++g) found = gallery_ids[g] == query_ids[q];
    if (!found)
      throw std::invalid_argument("retrieval_metrics: query identity " +
                                  std::to_string(query_ids[q]) +
                                  " absent from gallery");
  }

  std::vector<float> dist(nq * ng);
  kernels::pairwise_cosine(query_emb, gallery_emb, std::span<float>(dist));

  RetrievalMetrics out;
  out.ranks.assign(nq, {});
  double sum_ap = 0.0;
  std::size_t hit1 = 0, hit5 = 0, hit10 = 0;
  std::vector<std::pair<float, std::size_t>> order(ng);
  for (std::size_t q = 0; q < nq; ++q) {
    for (std::size_t g = 0; g < ng; ++g) order[g] = {dist[q * ng + g], g};
    std::sort(order.begin(), order.end());  // ties fall back to gallery index
    auto& ranks = out.ranks[q];
    ranks.resize(ng);
    for (std::size_t g = 0; g < ng; ++g) ranks[g] = order[g].second;

    std::size_t relevant = 0;
    for (std::size_t g = 0; g < ng; ++g)
      if (gallery_ids[g] == query_ids[q]) ++relevant;
    std::size_t hits = 0;
    double ap = 0.0;
    std::size_t first_hit = ng;
    for (std::size_t pos = 0; pos < ng; ++pos) {
      if (gallery_ids[ranks[pos]] == query_ids[q]) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(pos + 1);
        if (first_hit == ng) first_hit = pos;
      }
    }
    sum_ap += ap / static_cast<double>(relevant);
    if (first_hit < 1) ++hit1;
    if (first_hit < 5) ++hit5;
    if (first_hit < 10) ++hit10;
  }
  out.map = sum_ap / static_cast<double>(nq);
  out.cmc1 = static_cast<double>(hit1) / static_cast<double>(nq);
  out.cmc5 = static_cast<double>(hit5) / static_cast<double>(nq);
  out.cmc10 = static_cast<double>(hit10) / static_cast<double>(nq);
  return out;
}

RetrievalMetrics evaluate_retrieval(Model<float>& model, const LabeledDataset& query,
                                    const LabeledDataset& gallery) {
  model.set_mode(NormMode::Eval);
  const TensorF qe = forward_eval(model, query.features).embedding;
  const TensorF ge = forward_eval(model, gallery.features).embedding;
  return retrieval_metrics(qe, query.class_ids, ge, gallery.class_ids);
}

std::vector<double> domain_center_stats(const TensorF& features,
                                        std::span<const int> domain_ids) {
  const std::size_t n = features.samples();
  const std::size_t dim = features.channels();
  if (domain_ids.size() != n)
    throw std::invalid_argument("domain_center_stats: id length mismatch");
  int domains = 0;
  for (int d : domain_ids) domains = std::max(domains, d + 1);
  if (domains < 2) throw std::invalid_argument("domain_center_stats: need >= 2 domains");

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
  for (double& g : global) g /= static_cast<double>(n);

  std::vector<double> out(static_cast<std::size_t>(domains), 0.0);
  for (int d = 0; d < domains; ++d) {
    const auto di = static_cast<std::size_t>(d);
    if (counts[di] == 0.0)
      throw std::invalid_argument("domain_center_stats: domain " + std::to_string(d) +
                                  " has no samples");
    double acc = 0.0;
    for (std::size_t f = 0; f < dim; ++f) {
      const double dev = centers[di * dim + f] / counts[di] - global[f];
      acc += dev * dev;
    }
    out[di] = std::sqrt(acc);
  }
  return out;
}

Pca2d pca_project_2d(const TensorF& features) {
  const std::size_t n = features.samples();
  const std::size_t dim = features.channels();
  if (n < 3) throw std::invalid_argument("pca_project_2d: need at least 3 samples");

  std::vector<double> mean(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) mean[d] += features[i * dim + d];
  for (double& m : mean) m /= static_cast<double>(n);

  std::vector<double> cov(dim * dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < dim; ++a) {
      const double da = features[i * dim + a] - mean[a];
      for (std::size_t b = a; b < dim; ++b)
        cov[a * dim + b] += da * (features[i * dim + b] - mean[b]);
    }
  double trace = 0.0;
  for (std::size_t a = 0; a < dim; ++a) {
    for (std::size_t b = a; b < dim; ++b) {
      cov[a * dim + b] /= static_cast<double>(n);
      cov[b * dim + a] = cov[a * dim + b];
    }
    trace += cov[a * dim + a];
  }

  Pca2d out;
  out.coords = TensorF({n, 2});
  if (trace < 1e-12) {
    out.degenerate = true;
    return out;
  }

  auto power_iterate = [&](const std::vector<double>& matrix) {
    RngStream rng(0x9ca2u);  // fixed start vector for determinism
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal();
    std::vector<double> next(dim);
    double lambda = 0.0;
    for (int it = 0; it < 1000; ++it) {
      for (std::size_t a = 0; a < dim; ++a) {
        double acc = 0.0;
        for (std::size_t b = 0; b < dim; ++b) acc += matrix[a * dim + b] * v[b];
        next[a] = acc;
      }
      double norm = 0.0;
      for (double x : next) norm += x * x;
      norm = std::sqrt(norm);
      if (norm < 1e-300) break;
      double delta = 0.0;
      for (std::size_t a = 0; a < dim; ++a) {
        next[a] /= norm;
        delta = std::max(delta, std::abs(next[a] - v[a]));
      }
      v = next;
      lambda = norm;
      if (delta < 1e-13) break;
    }
    // Sign convention: largest-magnitude coordinate positive.
    std::size_t argmax = 0;
    for (std::size_t a = 1; a < dim; ++a)
      if (std::abs(v[a]) > std::abs(v[argmax])) argmax = a;
    if (v[argmax] < 0.0)
      for (auto& x : v) x = -x;
    return std::make_pair(v, lambda);
  };

  auto [v1, l1] = power_iterate(cov);
  std::vector<double> deflated = cov;
  for (std::size_t a = 0; a < dim; ++a)
    for (std::size_t b = 0; b < dim; ++b) deflated[a * dim + b] -= l1 * v1[a] * v1[b];
  auto [v2, l2] = power_iterate(deflated);
  (void)l2;

  for (std::size_t i = 0; i < n; ++i) {
    double c1 = 0.0, c2 = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double centered = features[i * dim + d] - mean[d];
      c1 += centered * v1[d];
      c2 += centered * v2[d];
    }
    out.coords[i * 2 + 0] = static_cast<float>(c1);
    out.coords[i * 2 + 1] = static_cast<float>(c2);
  }
  return out;
}

}  // namespace mixnorm
