#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "oreo/analysis.hpp"
#include "oreo/config.hpp"
#include "oreo/metrics.hpp"
#include "oreo/serialization.hpp"

namespace oreo {

/// Gallery/probe split of an embedding file. Rows sharing (identity, set_id)
/// form one media set and are pooled; rows with set_id -1 are singleton sets.
/// Each identity's lowest set_id is enrolled, its other sets are probes.
struct SetProtocol {
  LabeledTemplates gallery;
  LabeledTemplates probes;
};

SetProtocol build_set_protocol(const EmbeddingSet& set);

struct MetricsReport {
  std::vector<double> cmc;
  std::vector<RocPoint> roc;
  std::vector<std::pair<double, RocPoint>> tar_at_far;     // (target, point)
  std::vector<std::pair<double, OpenSetPoint>> tpir;       // (target FPIR, point)
  double rank1 = 0.0;
  std::optional<double> adp;
  std::optional<McNemarResult> mcnemar;
  size_t gallery_size = 0;
  size_t probe_count = 0;
  size_t pair_count = 0;
  size_t nonmated_probes = 0;
  /// Closed-set rank-1 hit per probe, in protocol order.
  std::vector<bool> probe_correct;
};

/// Closed-set CMC, verification ROC and open-set TPIR over one embedding set.
/// `pairs` (row indices) replaces the default gallery x probe verification
/// pairs; `compare` adds a McNemar test on closed-set rank-1 hits.
MetricsReport evaluate(const EmbeddingSet& set, const EvalSettings& settings,
                       const std::vector<std::pair<size_t, size_t>>* pairs = nullptr,
                       const EmbeddingSet* compare = nullptr);

std::string report_json(const MetricsReport& report);

/// CSV `a,b` with a header line; indices refer to embedding rows.
std::vector<std::pair<size_t, size_t>> read_pairs(const std::filesystem::path& path);

struct AblationRow {
  std::string name;
  TrainConfig config;
  MetricsReport report;
  ImpactReport impact;
};

/// Toggle grid: baseline, +OAN, +OBS, +OBS+STL, +OAN+OBS+STL. The attribute
/// loss follows the attention toggle.
std::vector<std::pair<std::string, TrainConfig>> ablation_grid(const TrainConfig& base);

/// Trains every grid row on `train_set`, embeds `test_set` and evaluates it.
/// McNemar compares each row's occluded-probe rank-1 hits with the baseline.
std::vector<AblationRow> run_ablation(const Dataset& train_set, const Dataset& test_set, const TrainConfig& base,
                                      const EvalSettings& eval, const AnalyzeSettings& analyze,
                                      const std::function<void(const std::string&)>& progress = {});

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows,
                        const std::vector<double>& far_targets);

/// Attribute impact analysis with the configured attribute list (empty means
/// every occlusion attribute of the dataset).
ImpactReport analyze_embeddings(const Dataset& dataset, const EmbeddingSet& set, const AnalyzeSettings& settings);

/// Occluded-probe rank-1 hits over all analysed attributes, concatenated.
std::vector<bool> occluded_probe_hits(const ImpactReport& report);

struct CommandOptions {
  std::filesystem::path config;
  std::filesystem::path out = ".";
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
};

/// Runs one CLI command. Returns the process exit code: 0 on success, 2 for
/// bad input or protocol violations, 1 for anything else.
int run_command(const std::string& command, const CommandOptions& options, std::ostream& log, std::ostream& err);

}  // namespace oreo
