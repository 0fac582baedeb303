#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mixnorm/rng.hpp"
#include "mixnorm/tensor.hpp"

namespace mixnorm {

// Per-domain style: x = mixing * (style_scale .* (prototype + noise) + style_shift).
// The mixing matrix is orthogonal so styles stay invertible; scale/shift model
// per-channel appearance variation, mixing a mild cross-channel distortion.
struct DomainSpec {
  int domain_id = 0;
  std::vector<float> style_scale;
  std::vector<float> style_shift;
  TensorF mixing;  // C x C orthogonal
  float noise_sigma = 0.1f;

  void validate() const;
};

struct LabeledDataset {
  TensorF features;  // M x C
  std::vector<int> class_ids;
  std::vector<int> domain_ids;

  std::size_t size() const { return class_ids.size(); }
  std::size_t feature_dim() const { return features.channels(); }
};

struct DomainBatch {
  TensorF features;
  std::vector<int> class_ids;
  std::vector<int> domain_ids;

  std::size_t size() const { return class_ids.size(); }
};

// Orthogonal matrix near the identity: Gram-Schmidt on I + strength * G with
// the diagonal sign fixed, so strength 0 gives exactly I.
TensorF random_orthogonal_near_identity(std::size_t dim, double strength, RngStream& rng);

// Random style for one domain.
DomainSpec random_domain_spec(int domain_id, std::size_t dim, double scale_min,
                              double scale_max, double shift_range,
                              double rotation_strength, double noise_sigma,
                              RngStream& rng);

// k_per_id styled samples for each of the first `ids` prototype rows.
LabeledDataset generate_domain_dataset(const TensorF& prototypes, const DomainSpec& spec,
                                       std::size_t ids, std::size_t k_per_id,
                                       RngStream& rng);

// Uniform-per-domain batches: every batch holds exactly p_ids identities
// times k_per_id images from every source domain, identities redrawn per
// batch without replacement within a domain.
class UsBatchSampler {
public:
  UsBatchSampler(const std::vector<LabeledDataset>& datasets, std::size_t p_ids,
                 std::size_t k_per_id, RngStream rng);
  DomainBatch next();
  std::size_t batch_size() const;

private:
  const std::vector<LabeledDataset>* datasets_;
  std::size_t p_ids_, k_per_id_;
  RngStream rng_;
  // per domain: class id -> sample indices
  std::vector<std::vector<std::vector<std::size_t>>> by_class_;
  std::vector<std::vector<int>> class_pool_;
};

// Pooled random sampling, the paper's RS baseline: all domains are merged
// and batches are PK-sampled from the pool, so identity structure survives
// while per-domain counts vary randomly.
class RsBatchSampler {
public:
  RsBatchSampler(const std::vector<LabeledDataset>& datasets, std::size_t p_ids,
                 std::size_t k_per_id, RngStream rng);
  DomainBatch next();
  std::size_t batch_size() const;

private:
  TensorF pool_features_;
  std::vector<int> pool_class_ids_, pool_domain_ids_;
  std::size_t p_ids_, k_per_id_;
  RngStream rng_;
  std::vector<std::vector<std::size_t>> by_class_;
  std::vector<int> class_pool_;
};

// Plain uniform draws from the pooled dataset, without replacement within a
// batch. No identity structure; kept for distribution checks.
class PooledUniformSampler {
public:
  PooledUniformSampler(const std::vector<LabeledDataset>& datasets,
                       std::size_t batch_size, RngStream rng);
  DomainBatch next();

private:
  TensorF pool_features_;
  std::vector<int> pool_class_ids_, pool_domain_ids_;
  std::size_t batch_size_;
  RngStream rng_;
  std::vector<std::size_t> order_;
};

// CSV round trip: header "domain_id,class_id,f0..f{C-1}", one row per sample.
void save_dataset_csv(const LabeledDataset& ds, const std::filesystem::path& path);
LabeledDataset load_dataset_csv(const std::filesystem::path& path);

}  // namespace mixnorm
