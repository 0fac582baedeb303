#include "mixnorm/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mixnorm/serialize.hpp"

namespace mixnorm {

void DomainSpec::validate() const {
  const std::size_t dim = style_scale.size();
  if (style_shift.size() != dim) throw std::invalid_argument("DomainSpec: shift length mismatch");
  if (mixing.rank() != 2 || mixing.extent(0) != dim || mixing.extent(1) != dim)
    throw std::invalid_argument("DomainSpec: mixing must be C x C");
  for (float s : style_scale)
    if (!(s > 0.0f)) throw std::invalid_argument("DomainSpec: style_scale must be positive");
  if (!(noise_sigma > 0.0f)) throw std::invalid_argument("DomainSpec: noise_sigma must be positive");
  // Orthogonality within 1e-6.
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < dim; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < dim; ++k)
        dot += static_cast<double>(mixing[i * dim + k]) * mixing[j * dim + k];
      const double want = i == j ? 1.0 : 0.0;
      if (std::abs(dot - want) > 1e-5)
        throw std::invalid_argument("DomainSpec: mixing is not orthogonal");
    }
}

TensorF random_orthogonal_near_identity(std::size_t dim, double strength, RngStream& rng) {
  // Columns of I + strength * G, orthonormalized in double.
  std::vector<double> m(dim * dim);
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < dim; ++j)
      m[i * dim + j] = (i == j ? 1.0 : 0.0) + strength * rng.normal();

  // Modified Gram-Schmidt over columns with positive-diagonal sign fix.
  for (std::size_t j = 0; j < dim; ++j) {
    for (std::size_t p = 0; p < j; ++p) {
      double dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) dot += m[i * dim + p] * m[i * dim + j];
      for (std::size_t i = 0; i < dim; ++i) m[i * dim + j] -= dot * m[i * dim + p];
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < dim; ++i) norm += m[i * dim + j] * m[i * dim + j];
    norm = std::sqrt(norm);
    if (norm < 1e-9)
      throw std::runtime_error("random_orthogonal_near_identity: degenerate column");
    const double sign = m[j * dim + j] < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < dim; ++i) m[i * dim + j] *= sign / norm;
  }

  std::vector<float> out(dim * dim);
  for (std::size_t i = 0; i < dim * dim; ++i) out[i] = static_cast<float>(m[i]);
  return TensorF({dim, dim}, std::move(out));
}

DomainSpec random_domain_spec(int domain_id, std::size_t dim, double scale_min,
                              double scale_max, double shift_range,
                              double rotation_strength, double noise_sigma,
                              RngStream& rng) {
  DomainSpec spec;
  spec.domain_id = domain_id;
  spec.style_scale.resize(dim);
  spec.style_shift.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    spec.style_scale[i] =
        static_cast<float>(scale_min + (scale_max - scale_min) * rng.uniform_real());
    spec.style_shift[i] =
        static_cast<float>(shift_range * (2.0 * rng.uniform_real() - 1.0));
  }
  spec.mixing = random_orthogonal_near_identity(dim, rotation_strength, rng);
  spec.noise_sigma = static_cast<float>(noise_sigma);
  spec.validate();
  return spec;
}

LabeledDataset generate_domain_dataset(const TensorF& prototypes, const DomainSpec& spec,
                                       std::size_t ids, std::size_t k_per_id,
                                       RngStream& rng) {
  if (prototypes.rank() != 2) throw std::invalid_argument("generate_domain_dataset: prototypes must be K x C");
  if (ids < 2) throw std::invalid_argument("generate_domain_dataset: need ids >= 2");
  if (k_per_id < 2) throw std::invalid_argument("generate_domain_dataset: need k_per_id >= 2");
  if (ids > prototypes.samples())
    throw std::invalid_argument("generate_domain_dataset: not enough prototypes");
  const std::size_t dim = prototypes.channels();
  spec.validate();
  if (spec.style_scale.size() != dim)
    throw std::invalid_argument("generate_domain_dataset: spec dimension mismatch");

  LabeledDataset ds;
  const std::size_t total = ids * k_per_id;
  ds.features = TensorF({total, dim});
  ds.class_ids.resize(total);
  ds.domain_ids.assign(total, spec.domain_id);

  std::vector<double> styled(dim);
  std::size_t row = 0;
  for (std::size_t cls = 0; cls < ids; ++cls) {
    for (std::size_t k = 0; k < k_per_id; ++k, ++row) {
      for (std::size_t d = 0; d < dim; ++d) {
        const double noisy = static_cast<double>(prototypes[cls * dim + d]) +
                             static_cast<double>(spec.noise_sigma) * rng.normal();
        styled[d] = static_cast<double>(spec.style_scale[d]) * noisy +
                    static_cast<double>(spec.style_shift[d]);
      }
      for (std::size_t i = 0; i < dim; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < dim; ++j)
          acc += static_cast<double>(spec.mixing[i * dim + j]) * styled[j];
        ds.features[row * dim + i] = static_cast<float>(acc);
      }
      ds.class_ids[row] = static_cast<int>(cls);
    }
  }
  return ds;
}

namespace {

// class id -> list of row indices
std::vector<std::vector<std::size_t>> index_by_class(std::span<const int> class_ids) {
  int max_class = -1;
  for (int c : class_ids) max_class = std::max(max_class, c);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_class + 1));
  for (std::size_t i = 0; i < class_ids.size(); ++i)
    by_class[static_cast<std::size_t>(class_ids[i])].push_back(i);
  return by_class;
}

DomainBatch gather_batch(const TensorF& features, std::span<const int> class_ids,
                         std::span<const int> domain_ids,
                         std::span<const std::size_t> rows) {
  const std::size_t dim = features.channels();
  DomainBatch batch;
  batch.features = TensorF({rows.size(), dim});
  batch.class_ids.resize(rows.size());
  batch.domain_ids.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    for (std::size_t d = 0; d < dim; ++d)
      batch.features[i * dim + d] = features[r * dim + d];
    batch.class_ids[i] = class_ids[r];
    batch.domain_ids[i] = domain_ids[r];
  }
  return batch;
}

// Choose p distinct classes with at least k samples each, then k samples per
// class without replacement.
std::vector<std::size_t> draw_pk_rows(const std::vector<std::vector<std::size_t>>& by_class,
                                      std::vector<int>& class_pool, std::size_t p,
                                      std::size_t k, RngStream& rng,
                                      const std::string& where) {
  if (class_pool.size() < p)
    throw std::runtime_error(where + ": fewer than " + std::to_string(p) +
                             " identities with " + std::to_string(k) + " samples");
  rng.shuffle(class_pool.begin(), class_pool.end());
  std::vector<std::size_t> rows;
  rows.reserve(p * k);
  std::vector<std::size_t> pick;
  for (std::size_t ci = 0; ci < p; ++ci) {
    const auto& samples = by_class[static_cast<std::size_t>(class_pool[ci])];
    pick.assign(samples.begin(), samples.end());
    rng.shuffle(pick.begin(), pick.end());
    pick.resize(k);
    std::sort(pick.begin(), pick.end());
    rows.insert(rows.end(), pick.begin(), pick.end());
  }
  return rows;
}

}  // namespace

UsBatchSampler::UsBatchSampler(const std::vector<LabeledDataset>& datasets,
                               std::size_t p_ids, std::size_t k_per_id, RngStream rng)
    : datasets_(&datasets), p_ids_(p_ids), k_per_id_(k_per_id), rng_(rng) {
  if (datasets.empty()) throw std::invalid_argument("UsBatchSampler: no datasets");
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    by_class_.push_back(index_by_class(datasets[d].class_ids));
    std::vector<int> pool;
    for (std::size_t c = 0; c < by_class_[d].size(); ++c)
      if (by_class_[d][c].size() >= k_per_id) pool.push_back(static_cast<int>(c));
    if (pool.size() < p_ids)
      throw std::invalid_argument("UsBatchSampler: domain " + std::to_string(d) +
                                  " has fewer than " + std::to_string(p_ids) +
                                  " identities with " + std::to_string(k_per_id) +
                                  " samples");
    class_pool_.push_back(std::move(pool));
  }
}

std::size_t UsBatchSampler::batch_size() const {
  return datasets_->size() * p_ids_ * k_per_id_;
}

DomainBatch UsBatchSampler::next() {
  const std::size_t dim = (*datasets_)[0].feature_dim();
  DomainBatch batch;
  batch.features = TensorF({batch_size(), dim});
  batch.class_ids.resize(batch_size());
  batch.domain_ids.resize(batch_size());
  std::size_t row = 0;
  for (std::size_t d = 0; d < datasets_->size(); ++d) {
    const auto rows = draw_pk_rows(by_class_[d], class_pool_[d], p_ids_, k_per_id_,
                                   rng_, "UsBatchSampler domain " + std::to_string(d));
    const auto& ds = (*datasets_)[d];
    for (std::size_t r : rows) {
      for (std::size_t f = 0; f < dim; ++f)
        batch.features[row * dim + f] = ds.features[r * dim + f];
      batch.class_ids[row] = ds.class_ids[r];
      batch.domain_ids[row] = ds.domain_ids[r];
      ++row;
    }
  }
  return batch;
}

namespace {

void pool_datasets(const std::vector<LabeledDataset>& datasets, TensorF& features,
                   std::vector<int>& class_ids, std::vector<int>& domain_ids) {
  if (datasets.empty()) throw std::invalid_argument("sampler: no datasets");
  const std::size_t dim = datasets[0].feature_dim();
  std::size_t total = 0;
  for (const auto& ds : datasets) total += ds.size();
  features = TensorF({total, dim});
  class_ids.resize(total);
  domain_ids.resize(total);
  std::size_t row = 0;
  for (const auto& ds : datasets) {
    if (ds.feature_dim() != dim) throw std::invalid_argument("sampler: feature dim mismatch");
    for (std::size_t r = 0; r < ds.size(); ++r, ++row) {
      for (std::size_t f = 0; f < dim; ++f)
        features[row * dim + f] = ds.features[r * dim + f];
      class_ids[row] = ds.class_ids[r];
      domain_ids[row] = ds.domain_ids[r];
    }
  }
}

}  // namespace

RsBatchSampler::RsBatchSampler(const std::vector<LabeledDataset>& datasets,
                               std::size_t p_ids, std::size_t k_per_id, RngStream rng)
    : p_ids_(p_ids), k_per_id_(k_per_id), rng_(rng) {
  pool_datasets(datasets, pool_features_, pool_class_ids_, pool_domain_ids_);
  by_class_ = index_by_class(pool_class_ids_);
  for (std::size_t c = 0; c < by_class_.size(); ++c)
    if (by_class_[c].size() >= k_per_id_) class_pool_.push_back(static_cast<int>(c));
  if (class_pool_.size() < p_ids_)
    throw std::invalid_argument("RsBatchSampler: fewer than " + std::to_string(p_ids_) +
                                " identities with " + std::to_string(k_per_id_) +
                                " samples in the pool");
}

std::size_t RsBatchSampler::batch_size() const { return p_ids_ * k_per_id_; }

DomainBatch RsBatchSampler::next() {
  const auto rows = draw_pk_rows(by_class_, class_pool_, p_ids_, k_per_id_, rng_,
                                 "RsBatchSampler");
  return gather_batch(pool_features_, pool_class_ids_, pool_domain_ids_, rows);
}

PooledUniformSampler::PooledUniformSampler(const std::vector<LabeledDataset>& datasets,
                                           std::size_t batch_size, RngStream rng)
    : batch_size_(batch_size), rng_(rng) {
  if (batch_size < 2) throw std::invalid_argument("PooledUniformSampler: batch_size must be >= 2");
  pool_datasets(datasets, pool_features_, pool_class_ids_, pool_domain_ids_);
  if (pool_class_ids_.size() < batch_size)
    throw std::invalid_argument("PooledUniformSampler: pool smaller than batch");
  order_.resize(pool_class_ids_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
}

DomainBatch PooledUniformSampler::next() {
  // Partial Fisher-Yates: the first batch_size entries are a uniform draw
  // without replacement.
  for (std::size_t i = 0; i < batch_size_; ++i) {
    const std::size_t j = i + rng_.uniform_below(order_.size() - i);
    std::swap(order_[i], order_[j]);
  }
  return gather_batch(pool_features_, pool_class_ids_, pool_domain_ids_,
                      std::span<const std::size_t>(order_.data(), batch_size_));
}

void save_dataset_csv(const LabeledDataset& ds, const std::filesystem::path& path) {
  std::ostringstream os;
  const std::size_t dim = ds.feature_dim();
  os << "domain_id,class_id";
  for (std::size_t d = 0; d < dim; ++d) os << ",f" << d;
  os << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    os << ds.domain_ids[i] << ',' << ds.class_ids[i];
    for (std::size_t d = 0; d < dim; ++d)
      os << ',' << format_float(ds.features[i * dim + d]);
    os << '\n';
  }
  write_file_atomic(path, os.str());
}

LabeledDataset load_dataset_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_dataset_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("load_dataset_csv: empty file");
  std::size_t dim = 0;
  {
    std::stringstream header(line);
    std::string col;
    std::vector<std::string> cols;
    while (std::getline(header, col, ',')) cols.push_back(col);
    if (cols.size() < 3 || cols[0] != "domain_id" || cols[1] != "class_id")
      throw std::runtime_error("load_dataset_csv: unexpected header");
    dim = cols.size() - 2;
  }
  std::vector<float> values;
  std::vector<int> class_ids, domain_ids;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != dim + 2)
      throw std::runtime_error("load_dataset_csv: row width mismatch");
    domain_ids.push_back(std::stoi(cells[0]));
    class_ids.push_back(std::stoi(cells[1]));
    for (std::size_t d = 0; d < dim; ++d) values.push_back(std::stof(cells[2 + d]));
  }
  LabeledDataset ds;
  ds.features = TensorF::checked({class_ids.size(), dim}, std::move(values));
  ds.class_ids = std::move(class_ids);
  ds.domain_ids = std::move(domain_ids);
  return ds;
}

}  // namespace mixnorm
