#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "oreo/datagen.hpp"
#include "oreo/model.hpp"
#include "oreo/serialization.hpp"

namespace oreo {

struct TrainConfig {
  bool oan = true;
  bool obs = true;
  bool stl = true;
  bool attr_loss = true;
  int epochs = 15;
  int batch_pairs = 20;  // P; every step sees 2P images
  double learning_rate = 0.05;
  int lr_step_epoch = 0;        // from this epoch on the rate is scaled; 0 keeps it constant
  double lr_step_factor = 0.1;
  double momentum = 0.9;
  double margin = 0.2;
  double grad_clip = 10.0;  // global L2 norm
  std::uint64_t seed = 1;
  int checkpoint_every = 0;  // steps; 0 disables periodic checkpoints
  int triplet_warmup_epochs = 5;  // epochs trained without L_T when stl is on
  std::array<int, 4> channels{8, 16, 32, 64};
  int embedding_dim = 32;

  /// Throws std::invalid_argument; in particular stl requires obs.
  void validate() const;
};

struct LossRecord {
  int step = 0;
  double identity = 0.0;
  double attributes = 0.0;
  double triplet = 0.0;
  double total = 0.0;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int step, const std::string& what) : std::runtime_error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

struct TrainResult {
  ModelConfig model;
  ModelParams<float> params;
  std::vector<LossRecord> log;
  int steps_per_epoch = 0;
  size_t eligible_identities = 0;
  size_t ineligible_identities = 0;
};

/// Steps per epoch: one pass over the images, i.e. floor(N / 2P).
int steps_per_epoch(const Dataset& dataset, const TrainConfig& config);

/// SGD with momentum on L = L_C (+ L_A) (+ L_T). With a run directory,
/// writes loss.csv, ckpt_{step}.bin at the configured cadence and final.bin.
TrainResult train(const Dataset& dataset, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& run_dir = std::nullopt,
                  const std::function<void(const LossRecord&)>& on_step = {});

void write_loss_log(const std::filesystem::path& path, const std::vector<LossRecord>& log);
std::vector<LossRecord> read_loss_log(const std::filesystem::path& path);

/// One template per image, in dataset order.
EmbeddingSet embed(const Checkpoint& checkpoint, const Dataset& dataset);

}  // namespace oreo
