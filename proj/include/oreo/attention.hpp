#pragma once

#include "oreo/backbone.hpp"
#include "oreo/image_io.hpp"
#include "oreo/tensor.hpp"

namespace oreo {

/// One attention level: project t^g to the block's channels, broadcast-add it
/// to the feature map, then a two-layer 1x1 head (c -> c/2 -> 1) produces the
/// mask logits.
template <typename T>
struct AttentionLevelParams {
  Affine<T> project;  // c x d
  Affine<T> hidden;   // c/2 x c
  Affine<T> output;   // 1 x c/2
};

template <typename T>
struct AttentionParams {
  AttentionLevelParams<T> level3;
  AttentionLevelParams<T> level2;
  Affine<T> fuse;  // d x (d + c2 + c3)
};

/// Which region of the mask contributes to the pooled local feature.
enum class MaskUse { Direct, Complement };

template <typename T>
struct AttentionOutput {
  Mask<T> mask;  // values in (0, 1)
  Vec<T> local;  // per-channel spatial mean of the masked map
};

template <typename T>
struct LevelTape {
  Vec<T> projected;
  Mat<T> mixed;       // B + broadcast(projected)
  Mat<T> hidden_pre;  // before the rectifier
  Mat<T> hidden;
  Vec<T> logits;
};

template <typename T>
AttentionLevelParams<T> init_attention_level(int channels, int embedding_dim, Rng& rng);

template <typename T>
AttentionParams<T> init_attention(const BackboneConfig& config, Rng& rng);

template <typename T>
AttentionParams<T> zero_attention(const BackboneConfig& config);

/// Generic level: A = logistic(h(B + P t^g)); local = mean_xy(w * B) with
/// w = A (Direct) or 1 - A (Complement).
template <typename T>
AttentionOutput<T> attend(const Vec<T>& global, const FeatureMap<T>& block, const AttentionLevelParams<T>& params,
                          MaskUse use, LevelTape<T>* tape = nullptr);

/// Self-attention on B3: t^l3 = mean(A3 * B3).
template <typename T>
AttentionOutput<T> attend_level3(const Vec<T>& global, const FeatureMap<T>& b3, const AttentionLevelParams<T>& params,
                                 LevelTape<T>* tape = nullptr) {
  return attend(global, b3, params, MaskUse::Direct, tape);
}

/// Attribute-guided level on B2: t^l2 = mean((1 - A2) * B2).
template <typename T>
AttentionOutput<T> attend_level2(const Vec<T>& global, const FeatureMap<T>& b2, const AttentionLevelParams<T>& params,
                                 LevelTape<T>* tape = nullptr) {
  return attend(global, b2, params, MaskUse::Complement, tape);
}

/// Backward of `attend`. Accumulates into `grads`, `d_block` and `d_global`.
template <typename T>
void backward_attend(const Vec<T>& global, const FeatureMap<T>& block, const AttentionLevelParams<T>& params,
                     MaskUse use, const LevelTape<T>& tape, const AttentionOutput<T>& out, const Vec<T>& d_local,
                     AttentionLevelParams<T>& grads, Mat<T>& d_block, Vec<T>& d_global);

/// t = W_F [t^g; t^l2; t^l3] + b_F.
template <typename T>
Vec<T> aggregate(const Vec<T>& global, const Vec<T>& local2, const Vec<T>& local3, const Affine<T>& fuse);

struct RenderOptions {
  bool normalize = false;  // stretch mask min..max to 0..255
};

/// Bilinear upsampling (half-pixel centres, edge clamp) to out_size x
/// out_size, then v -> floor(255 v + 0.5).
Raster8 render_attention(const Mask<double>& mask, int out_size, RenderOptions options = {});

/// Bilinear resample to out_size x out_size, same sampling as render_attention.
std::vector<double> upsample_mask(const Mask<double>& mask, int out_size);

}  // namespace oreo
