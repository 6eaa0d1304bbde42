#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "oreo/model.hpp"

namespace oreo {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams<float> params;
};

/// "OREOCKPT", u32 version, u32 tensor count, then per tensor: u32 name
/// length, UTF-8 name, u32 rank, rank x u32 dims, little-endian float32 data.
/// Two scalar tensors (meta.image_size, meta.oan) carry what the weight
/// shapes cannot.
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ModelParams<float>& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct EmbeddingRecord {
  int identity = 0;
  int set_id = -1;
  bool occluded = false;
};

/// count x dim templates, one row per image, with per-row metadata.
struct EmbeddingSet {
  Mat<float> vectors;
  std::vector<EmbeddingRecord> records;

  size_t count() const { return static_cast<size_t>(vectors.rows()); }
  int dim() const { return static_cast<int>(vectors.cols()); }
};

/// Sidecar path for an embedding file: same stem, ".csv" extension.
std::filesystem::path sidecar_path(const std::filesystem::path& embeddings);

/// "OREOEMB1", u32 count, u32 dim, count x dim float32, all little-endian;
/// plus a sidecar CSV `index,identity,set_id,occluded`.
void save_embeddings(const std::filesystem::path& path, const EmbeddingSet& set);
EmbeddingSet load_embeddings(const std::filesystem::path& path);

}  // namespace oreo
