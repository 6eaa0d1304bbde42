#pragma once

#include <array>
#include <cstdint>

#include "oreo/rng.hpp"
#include "oreo/tensor.hpp"

namespace oreo {

struct BackboneConfig {
  std::array<int, 4> channels{8, 16, 32, 64};
  int embedding_dim = 32;
  int image_size = 64;

  void validate() const;
  /// Spatial side of block k's output (k = 0..3).
  int block_side(int k) const { return image_size >> (k + 1); }
};

/// Dense affine map; convolutions store their kernel as out x (in * 3 * 3).
template <typename T>
struct Affine {
  Mat<T> weight;
  Vec<T> bias;

  static Affine zeros(int out, int in) { return {Mat<T>::Zero(out, in), Vec<T>::Zero(out)}; }
};

template <typename T>
struct BackboneParams {
  std::array<Affine<T>, 4> conv;
  Affine<T> embed;  // flattened B4 -> t^g
};

template <typename T>
struct FeatureMaps {
  std::array<FeatureMap<T>, 4> blocks;  // B1..B4
  Vec<T> global;                        // t^g
};

/// Intermediate values retained for the backward pass.
template <typename T>
struct BackboneTape {
  std::array<Mat<T>, 4> columns;   // im2col of each block input
  std::array<Mat<T>, 4> preact;    // conv output before the rectifier
  std::array<int, 4> input_side{};
  Vec<T> pooled;  // flattened B4
};

template <typename T>
BackboneParams<T> init_backbone(const BackboneConfig& config, Rng& rng);

template <typename T>
BackboneParams<T> zero_backbone(const BackboneConfig& config);

/// Bottom-up pathway: four conv(3x3) -> rectifier -> 2x2 average-pool blocks,
/// then a linear projection of the flattened B4 map to t^g.
/// Throws ShapeError on size mismatch and std::domain_error on non-finite
/// parameters when `check_params` is set.
template <typename T>
FeatureMaps<T> forward_backbone(const BackboneConfig& config, const BackboneParams<T>& params,
                                const FeatureMap<T>& image, BackboneTape<T>* tape = nullptr,
                                bool check_params = true);

/// Accumulates parameter gradients into `grads`. `d_blocks[k]` may be empty
/// (no upstream gradient for B_{k+1}).
template <typename T>
void backward_backbone(const BackboneConfig& config, const BackboneParams<T>& params, const BackboneTape<T>& tape,
                       std::array<Mat<T>, 4> d_blocks, const Vec<T>& d_global,
                       BackboneParams<T>& grads);

template <typename T>
bool all_finite(const BackboneParams<T>& params);

}  // namespace oreo
