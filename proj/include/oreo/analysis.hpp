#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "oreo/datagen.hpp"
#include "oreo/metrics.hpp"

namespace oreo {

struct AttributeImpact {
  int attribute = 0;
  std::string name;
  size_t identities = 0;  // eligible identities (gallery size)
  std::vector<int> excluded_identities;
  std::vector<double> cmc_with;
  std::vector<double> cmc_without;
  /// Per-probe rank-1 correctness, aligned with the split's probe order.
  std::vector<bool> correct_with;
  std::vector<bool> correct_without;

  double rank1_with() const { return cmc_with.empty() ? 0.0 : cmc_with.front(); }
  double rank1_without() const { return cmc_without.empty() ? 0.0 : cmc_without.front(); }
};

struct ImpactReport {
  std::vector<AttributeImpact> attributes;
  double adp = 0.0;  // percentage points

  /// Mean rank-1 (percent) over attributes for probes with the attribute.
  double mean_rank1_with() const;
  double mean_rank1_without() const;
};

/// For each attribute: enroll one attribute-free image per identity, then
/// match one probe with and one without the attribute against that gallery.
/// `embeddings` rows align with `dataset.samples`.
ImpactReport attribute_impact_analysis(const Dataset& dataset, const Mat<double>& embeddings,
                                       const std::vector<int>& attributes, std::uint64_t seed, int max_rank);

/// CSV `rank,rate_with,rate_without`.
void write_impact_csv(const std::filesystem::path& path, const AttributeImpact& impact);

}  // namespace oreo
