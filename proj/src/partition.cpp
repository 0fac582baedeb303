#include "mixnorm/partition.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace mixnorm {

std::string Partition::to_string() const {
  std::string out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (g) out += '|';
    for (std::size_t i = 0; i < groups[g].size(); ++i) {
      if (i) out += ',';
      out += std::to_string(groups[g][i]);
    }
  }
  return out;
}

Partition Partition::from_string(const std::string& text) {
  Partition p;
  std::vector<int> group;
  std::string token;
  auto flush_token = [&] {
    if (token.empty()) throw std::invalid_argument("Partition: empty id in \"" + text + "\"");
    group.push_back(std::stoi(token));
    token.clear();
  };
  for (char c : text) {
    if (c == ',') {
      flush_token();
    } else if (c == '|') {
      flush_token();
      p.groups.push_back(std::move(group));
      group.clear();
    } else {
      token += c;
    }
  }
  flush_token();
  p.groups.push_back(std::move(group));
  return p;
}

PartitionPolicy PartitionPolicy::d_minus_1(int domains) {
  PartitionPolicy p;
  p.domains = domains;
  p.max_group = std::max(1, domains - 1);
  return p;
}

PartitionPolicy PartitionPolicy::full(int domains) {
  PartitionPolicy p;
  p.domains = domains;
  p.max_group = domains;
  return p;
}

PartitionPolicy PartitionPolicy::with_fixed_c(int c) const {
  PartitionPolicy p = *this;
  p.fixed_c = c;
  return p;
}

void PartitionPolicy::validate() const {
  if (domains <= 0) throw std::invalid_argument("no domains");
  if (max_group < 1 || max_group > domains)
    throw std::invalid_argument("PartitionPolicy: max_group must be in [1, D]");
  if (fixed_c && (*fixed_c < 1 || *fixed_c > max_group))
    throw std::invalid_argument("PartitionPolicy: fixed_c must be in [1, max_group]");
}

Partition sample_partition(const PartitionPolicy& policy, RngStream& rng) {
  policy.validate();
  const int d = policy.domains;
  const int c = policy.fixed_c
                    ? *policy.fixed_c
                    : static_cast<int>(rng.uniform_int(1, policy.max_group));

  std::vector<int> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());

  Partition part;
  for (int start = 0; start < d; start += c) {
    const int end = std::min(start + c, d);
    std::vector<int> group(order.begin() + start, order.begin() + end);
    std::sort(group.begin(), group.end());
    part.groups.push_back(std::move(group));
  }
  return part;
}

std::map<std::vector<int>, double> partition_distribution(
    const PartitionPolicy& policy, RngStream& rng, std::size_t trials) {
  if (trials < 1) throw std::invalid_argument("partition_distribution: trials must be >= 1");
  std::map<std::vector<int>, std::size_t> counts;
  for (std::size_t t = 0; t < trials; ++t) {
    const Partition p = sample_partition(policy, rng);
    std::vector<int> sizes;
    sizes.reserve(p.groups.size());
    for (const auto& g : p.groups) sizes.push_back(static_cast<int>(g.size()));
    std::sort(sizes.begin(), sizes.end(), std::greater<int>());
    ++counts[sizes];
  }
  std::map<std::vector<int>, double> freq;
  for (const auto& [sizes, n] : counts)
    freq[sizes] = static_cast<double>(n) / static_cast<double>(trials);
  return freq;
}

}  // namespace mixnorm
