#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "oreo/datagen.hpp"
#include "oreo/trainer.hpp"

namespace oreo {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Either a synthetic spec or a manifest on disk, never both.
struct DataSource {
  std::optional<SynthSpec> synth;
  std::optional<std::filesystem::path> manifest;
  std::optional<std::vector<int>> occlusion_attributes;

  Dataset load() const;
};

struct EmbedSettings {
  std::filesystem::path checkpoint;
};

struct EvalSettings {
  std::filesystem::path embeddings;
  /// Second model's embeddings of the same images; enables McNemar.
  std::optional<std::filesystem::path> compare_embeddings;
  /// CSV `a,b` of row indices; default is every gallery x probe set pair.
  std::optional<std::filesystem::path> pairs;
  int max_rank = 20;
  std::vector<double> far_targets{1e-1, 1e-2, 1e-3};
  std::vector<double> fpir_targets{1e-1, 1e-2, 1e-3};
  /// Share of identities whose gallery entry is withheld for open-set search.
  double open_nonmated_fraction = 0.5;
  std::uint64_t seed = 7;
};

struct AnalyzeSettings {
  std::filesystem::path embeddings;
  std::vector<int> attributes;  // empty: every occlusion attribute
  std::uint64_t seed = 7;
  int max_rank = 20;
};

struct RenderSettings {
  std::filesystem::path checkpoint;
  std::vector<std::filesystem::path> images;
  bool normalize = false;
};

struct RunConfig {
  std::optional<DataSource> data;
  std::optional<DataSource> test_data;
  TrainConfig train;
  EmbedSettings embed;
  EvalSettings eval;
  AnalyzeSettings analyze;
  RenderSettings render;
  bool deterministic = false;
};

/// Strict: unknown keys and wrongly typed values raise ConfigError naming
/// the offending key. Relative paths resolve against `base_dir`.
RunConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir);
RunConfig load_config(const std::filesystem::path& path);

/// Resolved configuration as JSON text; parse_config accepts it back.
std::string dump_config(const RunConfig& config);

}  // namespace oreo
