#include "oreo/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace oreo {

namespace {

template <typename T>
void fill_gaussian(Mat<T>& m, double stddev, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(stddev * normal01(rng));
}

template <typename T>
AttentionLevelParams<T> zero_level(int channels, int embedding_dim) {
  const int hidden = std::max(1, channels / 2);
  return {Affine<T>::zeros(channels, embedding_dim), Affine<T>::zeros(hidden, channels), Affine<T>::zeros(1, hidden)};
}

}  // namespace

template <typename T>
AttentionLevelParams<T> init_attention_level(int channels, int embedding_dim, Rng& rng) {
  AttentionLevelParams<T> p = zero_level<T>(channels, embedding_dim);
  fill_gaussian(p.project.weight, std::sqrt(1.0 / embedding_dim), rng);
  fill_gaussian(p.hidden.weight, std::sqrt(2.0 / channels), rng);
  fill_gaussian(p.output.weight, std::sqrt(1.0 / p.hidden.weight.rows()), rng);
  return p;
}

template <typename T>
AttentionParams<T> zero_attention(const BackboneConfig& config) {
  const int d = config.embedding_dim;
  AttentionParams<T> p;
  p.level3 = zero_level<T>(config.channels[2], d);
  p.level2 = zero_level<T>(config.channels[1], d);
  p.fuse = Affine<T>::zeros(d, d + config.channels[1] + config.channels[2]);
  return p;
}

template <typename T>
AttentionParams<T> init_attention(const BackboneConfig& config, Rng& rng) {
  const int d = config.embedding_dim;
  AttentionParams<T> p;
  p.level3 = init_attention_level<T>(config.channels[2], d, rng);
  p.level2 = init_attention_level<T>(config.channels[1], d, rng);
  // t starts out as t^g plus a small local contribution, so the fused
  // template is as well spread as the global one from the first step.
  const int local = config.channels[1] + config.channels[2];
  p.fuse = Affine<T>::zeros(d, d + local);
  fill_gaussian(p.fuse.weight, 0.1 * std::sqrt(1.0 / local), rng);
  p.fuse.weight.leftCols(d).setIdentity();
  return p;
}

template <typename T>
AttentionOutput<T> attend(const Vec<T>& global, const FeatureMap<T>& block, const AttentionLevelParams<T>& params,
                          MaskUse use, LevelTape<T>* tape) {
  if (params.project.weight.rows() != block.channels() || params.project.weight.cols() != global.size()) {
    throw ShapeError("attention projection is " + std::to_string(params.project.weight.rows()) + "x" +
                     std::to_string(params.project.weight.cols()) + " but block has " +
                     std::to_string(block.channels()) + " channels and t^g has " + std::to_string(global.size()));
  }
  LevelTape<T> local_tape;
  LevelTape<T>& t = tape ? *tape : local_tape;
  t.projected = params.project.weight * global + params.project.bias;
  t.mixed = block.data;
  t.mixed.colwise() += t.projected;
  t.hidden_pre.noalias() = params.hidden.weight * t.mixed;
  t.hidden_pre.colwise() += params.hidden.bias;
  t.hidden = t.hidden_pre.cwiseMax(T(0));
  t.logits = (params.output.weight * t.hidden).transpose();
  t.logits.array() += params.output.bias(0);

  AttentionOutput<T> out;
  out.mask.height = block.height;
  out.mask.width = block.width;
  out.mask.values = t.logits.unaryExpr([](T z) { return logistic(z); });
  Vec<T> weight = use == MaskUse::Direct ? out.mask.values : Vec<T>((T(1) - out.mask.values.array()).matrix());
  out.local = block.data * weight / static_cast<T>(block.pixels());
  return out;
}

template <typename T>
void backward_attend(const Vec<T>& global, const FeatureMap<T>& block, const AttentionLevelParams<T>& params,
                     MaskUse use, const LevelTape<T>& tape, const AttentionOutput<T>& out, const Vec<T>& d_local,
                     AttentionLevelParams<T>& grads, Mat<T>& d_block, Vec<T>& d_global) {
  const T inv_n = T(1) / static_cast<T>(block.pixels());
  const Vec<T>& a = out.mask.values;
  const Vec<T> weight = use == MaskUse::Direct ? a : Vec<T>((T(1) - a.array()).matrix());

  // local = B w / n
  d_block.noalias() += d_local * weight.transpose() * inv_n;
  Vec<T> d_weight = block.data.transpose() * d_local * inv_n;
  if (use == MaskUse::Complement) d_weight = -d_weight;
  const Vec<T> d_logits = (d_weight.array() * a.array() * (T(1) - a.array())).matrix();

  grads.output.weight.noalias() += d_logits.transpose() * tape.hidden.transpose();
  grads.output.bias(0) += d_logits.sum();
  Mat<T> d_hidden = params.output.weight.transpose() * d_logits.transpose();
  d_hidden = (tape.hidden_pre.array() > T(0)).select(d_hidden, T(0));

  grads.hidden.weight.noalias() += d_hidden * tape.mixed.transpose();
  grads.hidden.bias += d_hidden.rowwise().sum();
  const Mat<T> d_mixed = params.hidden.weight.transpose() * d_hidden;
  d_block += d_mixed;

  const Vec<T> d_projected = d_mixed.rowwise().sum();
  grads.project.weight.noalias() += d_projected * global.transpose();
  grads.project.bias += d_projected;
  d_global.noalias() += params.project.weight.transpose() * d_projected;
}

template <typename T>
Vec<T> aggregate(const Vec<T>& global, const Vec<T>& local2, const Vec<T>& local3, const Affine<T>& fuse) {
  const Eigen::Index n = global.size() + local2.size() + local3.size();
  if (fuse.weight.cols() != n) {
    throw ShapeError("fusion expects " + std::to_string(fuse.weight.cols()) + " inputs, got " + std::to_string(n));
  }
  Vec<T> concat(n);
  concat << global, local2, local3;
  return fuse.weight * concat + fuse.bias;
}

std::vector<double> upsample_mask(const Mask<double>& mask, int out_size) {
  std::vector<double> out(static_cast<size_t>(out_size) * out_size);
  const double sy = static_cast<double>(mask.height) / out_size;
  const double sx = static_cast<double>(mask.width) / out_size;
  for (int y = 0; y < out_size; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(mask.height - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, mask.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_size; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(mask.width - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, mask.width - 1);
      const double wx = fx - x0;
      const double top = (1 - wx) * mask.at(y0, x0) + wx * mask.at(y0, x1);
      const double bottom = (1 - wx) * mask.at(y1, x0) + wx * mask.at(y1, x1);
      out[static_cast<size_t>(y) * out_size + x] = (1 - wy) * top + wy * bottom;
    }
  }
  return out;
}

Raster8 render_attention(const Mask<double>& mask, int out_size, RenderOptions options) {
  std::vector<double> up = upsample_mask(mask, out_size);
  if (options.normalize) {
    const auto [lo, hi] = std::minmax_element(up.begin(), up.end());
    const double min = *lo;
    const double range = *hi - *lo;
    if (range > 0) {
      for (double& v : up) v = (v - min) / range;
    }
  }
  Raster8 r{out_size, out_size, std::vector<std::uint8_t>(up.size())};
  for (size_t i = 0; i < up.size(); ++i) {
    const double v = std::floor(std::clamp(up[i], 0.0, 1.0) * 255.0 + 0.5);
    r.pixels[i] = static_cast<std::uint8_t>(v);
  }
  return r;
}

#define OREO_INSTANTIATE(T)                                                                                        \
  template AttentionLevelParams<T> init_attention_level<T>(int, int, Rng&);                                        \
  template AttentionParams<T> init_attention<T>(const BackboneConfig&, Rng&);                                      \
  template AttentionParams<T> zero_attention<T>(const BackboneConfig&);                                            \
  template AttentionOutput<T> attend<T>(const Vec<T>&, const FeatureMap<T>&, const AttentionLevelParams<T>&,       \
                                        MaskUse, LevelTape<T>*);                                                   \
  template void backward_attend<T>(const Vec<T>&, const FeatureMap<T>&, const AttentionLevelParams<T>&, MaskUse,   \
                                   const LevelTape<T>&, const AttentionOutput<T>&, const Vec<T>&,                  \
                                   AttentionLevelParams<T>&, Mat<T>&, Vec<T>&);                                    \
  template Vec<T> aggregate<T>(const Vec<T>&, const Vec<T>&, const Vec<T>&, const Affine<T>&);

OREO_INSTANTIATE(float)
OREO_INSTANTIATE(double)
#undef OREO_INSTANTIATE

}  // namespace oreo
