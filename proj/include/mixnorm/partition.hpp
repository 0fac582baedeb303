#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mixnorm/rng.hpp"

namespace mixnorm {

// Ordered list of disjoint domain-id groups covering all source domains.
// Within a group ids are kept sorted; group order is the sampling order.
struct Partition {
  std::vector<std::vector<int>> groups;

  bool single_group() const { return groups.size() == 1; }
  std::string to_string() const;  // "0,2|1" — groups by '|', ids by ','
  static Partition from_string(const std::string& text);
};

// How group sizes are drawn. max_group is the largest sampled group size C;
// the method's default is D-1 (full mixing degenerates to plain BN and is
// kept only for the ablation). fixed_c forces C instead of drawing it.
struct PartitionPolicy {
  int domains = 0;
  int max_group = 0;
  std::optional<int> fixed_c;

  // Default rule: max group size D-1, clamped to 1 for the single-domain
  // degenerate case.
  static PartitionPolicy d_minus_1(int domains);
  // Ablation rule: groups may span all D domains.
  static PartitionPolicy full(int domains);

  PartitionPolicy with_fixed_c(int c) const;
  void validate() const;  // throws on violated invariants
};

// One draw of the group structure: C is drawn uniformly from [1, max_group]
// (or forced by fixed_c), the domain list is shuffled once, and consecutive
// chunks of size C become groups; the final group takes whatever remains.
Partition sample_partition(const PartitionPolicy& policy, RngStream& rng);

// Empirical frequencies of group-size multisets. Key is the multiset sorted
// descending, e.g. {2,1} for a two-group partition of three domains.
std::map<std::vector<int>, double> partition_distribution(
    const PartitionPolicy& policy, RngStream& rng, std::size_t trials);

}  // namespace mixnorm
