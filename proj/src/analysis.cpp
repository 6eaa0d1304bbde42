#include "oreo/analysis.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace oreo {

double ImpactReport::mean_rank1_with() const {
  double s = 0.0;
  for (const auto& a : attributes) s += a.rank1_with();
  return attributes.empty() ? 0.0 : 100.0 * s / static_cast<double>(attributes.size());
}

double ImpactReport::mean_rank1_without() const {
  double s = 0.0;
  for (const auto& a : attributes) s += a.rank1_without();
  return attributes.empty() ? 0.0 : 100.0 * s / static_cast<double>(attributes.size());
}

namespace {

LabeledTemplates gather(const Dataset& dataset, const Mat<double>& embeddings, const std::vector<size_t>& rows) {
  LabeledTemplates out;
  out.vectors.resize(static_cast<Eigen::Index>(rows.size()), embeddings.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    out.vectors.row(static_cast<Eigen::Index>(i)) = embeddings.row(static_cast<Eigen::Index>(rows[i]));
    out.identities.push_back(dataset.samples[rows[i]].identity);
  }
  return out;
}

std::vector<bool> rank1_hits(const LabeledTemplates& gallery, const LabeledTemplates& probes) {
  const auto ranks = mated_ranks(score_matrix(gallery, probes), gallery.identities, probes.identities);
  std::vector<bool> hits(ranks.size());
  for (size_t i = 0; i < ranks.size(); ++i) hits[i] = ranks[i] == 1;
  return hits;
}

}  // namespace

ImpactReport attribute_impact_analysis(const Dataset& dataset, const Mat<double>& embeddings,
                                       const std::vector<int>& attributes, std::uint64_t seed, int max_rank) {
  if (static_cast<size_t>(embeddings.rows()) != dataset.size()) {
    throw ProtocolError("attribute analysis: one embedding per dataset sample required");
  }
  if (attributes.empty()) throw ProtocolError("attribute analysis: no attributes selected");
  ImpactReport report;
  std::vector<std::pair<double, double>> rank1;
  for (int a : attributes) {
    const AttributeSplit split = split_by_attribute(dataset, a, seed);
    const auto gallery = gather(dataset, embeddings, split.gallery);
    const auto with = gather(dataset, embeddings, split.probe_with);
    const auto without = gather(dataset, embeddings, split.probe_without);

    AttributeImpact impact;
    impact.attribute = a;
    impact.name = dataset.attribute_names.at(a);
    impact.identities = split.gallery.size();
    impact.excluded_identities = split.excluded_identities;
    const int ranks = std::min<int>(max_rank, static_cast<int>(split.gallery.size()));
    impact.cmc_with = cmc(gallery, with, ranks);
    impact.cmc_without = cmc(gallery, without, ranks);
    impact.correct_with = rank1_hits(gallery, with);
    impact.correct_without = rank1_hits(gallery, without);
    rank1.emplace_back(100.0 * impact.rank1_without(), 100.0 * impact.rank1_with());
    report.attributes.push_back(std::move(impact));
  }
  report.adp = adp(rank1);
  return report;
}

void write_impact_csv(const std::filesystem::path& path, const AttributeImpact& impact) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "rank,rate_with,rate_without\n";
  char line[96];
  for (size_t k = 0; k < impact.cmc_with.size(); ++k) {
    std::snprintf(line, sizeof(line), "%zu,%.6f,%.6f\n", k + 1, impact.cmc_with[k], impact.cmc_without[k]);
    out << line;
  }
}

}  // namespace oreo
