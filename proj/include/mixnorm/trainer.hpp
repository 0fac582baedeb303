#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixnorm/data.hpp"
#include "mixnorm/model.hpp"

namespace mixnorm {

// Raised when training produces a non-finite loss; the CLI maps it to its
// numerical-failure exit code.
struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainSchedule {
  int epochs = 60;
  double base_lr = 3.5e-4;
  std::vector<int> decay_epochs = {30, 50};  // lr divided by 1/factor at these epochs
  double decay_factor = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int iters_per_epoch = 0;  // 0: derived from pooled source size / batch size

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainSchedule: epochs must be >= 1");
    if (!(base_lr > 0.0)) throw std::invalid_argument("TrainSchedule: base_lr must be > 0");
    int prev = 0;
    for (int e : decay_epochs) {
      if (e <= prev || e >= epochs)
        throw std::invalid_argument(
            "TrainSchedule: decay epochs must be strictly increasing and < epochs");
      prev = e;
    }
  }
};

enum class RegKind { None, Dcr, DcrDomain, Center };
enum class SamplerKind { Us, Rs };

struct LossConfig {
  double lambda = 0.2;
  double margin = 0.3;
  RegKind reg = RegKind::Dcr;
  double center_update_rate = 0.5;
};

struct DmnOptions {
  bool max_group_full = false;  // true: groups may span all D domains
  std::optional<int> fixed_c;
  bool shared_partition = false;  // true: one partition per iteration for all slots
  RunningUpdate running_update = RunningUpdate::GlobalBatch;
};

struct MultiDomainData {
  std::vector<LabeledDataset> sources;
  LabeledDataset target_cls;  // shared classes, unseen style
  LabeledDataset query;       // disjoint identities for retrieval
  LabeledDataset gallery;

  int domains() const { return static_cast<int>(sources.size()); }
};

struct MetricsRow {
  int epoch = 0;
  double loss_cls = 0, loss_tri = 0, loss_dcr = 0, loss_total = 0;
  double target_acc = 0, map = 0, cmc1 = 0, cmc5 = 0, cmc10 = 0;
};

struct EvalReport {
  double target_accuracy = 0, map = 0, cmc1 = 0, cmc5 = 0, cmc10 = 0;
  std::vector<double> domain_center_distances;
};

struct TrainOptions {
  SamplerKind sampler = SamplerKind::Us;
  std::size_t p_ids = 8;
  std::size_t k_per_id = 4;
  TrainSchedule schedule;
  LossConfig loss;
  DmnOptions dmn;
};

struct TrainResult {
  std::vector<MetricsRow> metrics;
  EvalReport report;
};

// Full training run: per-iteration forward in train mode, overall loss,
// exact backward through every layer and loss, Adam update, running-stat
// accumulation; one metrics row per epoch.
TrainResult train_model(Model<float>& model, const MultiDomainData& data,
                        const TrainOptions& opts, RngStream rng);

double evaluate_classification(Model<float>& model, const LabeledDataset& dataset);

struct RetrievalMetrics {
  double map = 0, cmc1 = 0, cmc5 = 0, cmc10 = 0;
  std::vector<std::vector<std::size_t>> ranks;  // per query, gallery indices best-first
};

// Cosine-distance ranking of the gallery per query, AP averaged over queries.
RetrievalMetrics retrieval_metrics(const TensorF& query_emb, std::span<const int> query_ids,
                                   const TensorF& gallery_emb,
                                   std::span<const int> gallery_ids);

RetrievalMetrics evaluate_retrieval(Model<float>& model, const LabeledDataset& query,
                                    const LabeledDataset& gallery);

// Per-domain distance between the domain feature center and the global
// center, indexed by domain id.
std::vector<double> domain_center_stats(const TensorF& features,
                                        std::span<const int> domain_ids);

struct Pca2d {
  TensorF coords;  // N x 2, variance-ordered components
  bool degenerate = false;
};

// Projection onto the top-2 principal components by power iteration.
Pca2d pca_project_2d(const TensorF& features);

// Eval-mode embeddings of a whole dataset.
TensorF embed_dataset(Model<float>& model, const LabeledDataset& dataset);

}  // namespace mixnorm
