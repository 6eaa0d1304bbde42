#include "oreo/backbone.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace oreo {

void BackboneConfig::validate() const {
  if (image_size <= 0 || image_size % 16 != 0) {
    throw std::invalid_argument("image_size must be a positive multiple of 16");
  }
  if (embedding_dim < 8) throw std::invalid_argument("embedding_dim must be at least 8");
  for (int c : channels) {
    if (c < 2) throw std::invalid_argument("every block needs at least 2 channels");
  }
}

namespace {

template <typename T>
void fill_gaussian(Mat<T>& m, double stddev, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(stddev * normal01(rng));
}

// 3x3, stride 1, zero padding 1. Row (c*9 + ky*3 + kx) of `col` holds the
// input shifted by (ky-1, kx-1).
template <typename T>
void im2col3x3(const Mat<T>& x, int side, Mat<T>& col) {
  const int channels = static_cast<int>(x.rows());
  const int n = side * side;
  col.resize(channels * 9, n);
  for (int c = 0; c < channels; ++c) {
    const T* src = x.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = col.row(c * 9 + ky * 3 + kx).data();
        const int dy = ky - 1;
        const int dx = kx - 1;
        for (int y = 0; y < side; ++y) {
          const int sy = y + dy;
          T* out = dst + y * side;
          if (sy < 0 || sy >= side) {
            for (int xx = 0; xx < side; ++xx) out[xx] = T(0);
            continue;
          }
          const T* in = src + sy * side;
          for (int xx = 0; xx < side; ++xx) {
            const int sx = xx + dx;
            out[xx] = (sx >= 0 && sx < side) ? in[sx] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im3x3(const Mat<T>& col, int channels, int side, Mat<T>& dx) {
  dx.setZero(channels, side * side);
  for (int c = 0; c < channels; ++c) {
    T* dst = dx.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = col.row(c * 9 + ky * 3 + kx).data();
        const int dy = ky - 1;
        const int ddx = kx - 1;
        for (int y = 0; y < side; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= side) continue;
          const T* in = src + y * side;
          T* out = dst + sy * side;
          for (int xx = 0; xx < side; ++xx) {
            const int sx = xx + ddx;
            if (sx >= 0 && sx < side) out[sx] += in[xx];
          }
        }
      }
    }
  }
}

template <typename T>
void avgpool2(const Mat<T>& x, int side, FeatureMap<T>& out) {
  const int half = side / 2;
  out = FeatureMap<T>(static_cast<int>(x.rows()), half, half);
  for (Eigen::Index c = 0; c < x.rows(); ++c) {
    const T* in = x.row(c).data();
    T* o = out.data.row(c).data();
    for (int y = 0; y < half; ++y) {
      const T* r0 = in + (2 * y) * side;
      const T* r1 = r0 + side;
      for (int xx = 0; xx < half; ++xx) {
        o[y * half + xx] = T(0.25) * (r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1]);
      }
    }
  }
}

}  // namespace

template <typename T>
BackboneParams<T> init_backbone(const BackboneConfig& config, Rng& rng) {
  config.validate();
  BackboneParams<T> p = zero_backbone<T>(config);
  for (int k = 0; k < 4; ++k) {
    const int fan_in = static_cast<int>(p.conv[k].weight.cols());
    fill_gaussian(p.conv[k].weight, std::sqrt(2.0 / fan_in), rng);
  }
  fill_gaussian(p.embed.weight, std::sqrt(1.0 / static_cast<double>(p.embed.weight.cols())), rng);
  return p;
}

template <typename T>
BackboneParams<T> zero_backbone(const BackboneConfig& config) {
  BackboneParams<T> p;
  int in = 1;
  for (int k = 0; k < 4; ++k) {
    p.conv[k] = Affine<T>::zeros(config.channels[k], in * 9);
    in = config.channels[k];
  }
  const int side4 = config.block_side(3);
  p.embed = Affine<T>::zeros(config.embedding_dim, config.channels[3] * side4 * side4);
  return p;
}

template <typename T>
bool all_finite(const BackboneParams<T>& params) {
  for (const auto& c : params.conv) {
    if (!c.weight.allFinite() || !c.bias.allFinite()) return false;
  }
  return params.embed.weight.allFinite() && params.embed.bias.allFinite();
}

template <typename T>
FeatureMaps<T> forward_backbone(const BackboneConfig& config, const BackboneParams<T>& params,
                                const FeatureMap<T>& image, BackboneTape<T>* tape, bool check_params) {
  if (image.channels() != 1 || image.height != config.image_size || image.width != config.image_size) {
    throw ShapeError("input image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     ", network expects " + std::to_string(config.image_size) + " square");
  }
  const int side4 = config.block_side(3);
  if (params.conv[0].weight.cols() != 9 || params.embed.weight.rows() != config.embedding_dim ||
      params.embed.weight.cols() != config.channels[3] * side4 * side4) {
    throw ShapeError("backbone parameters do not match configuration");
  }
  if (check_params && !all_finite(params)) throw std::domain_error("non-finite backbone parameter");

  FeatureMaps<T> maps;
  Mat<T> col;
  Mat<T> z;
  const Mat<T>* input = &image.data;
  int side = config.image_size;
  for (int k = 0; k < 4; ++k) {
    const auto& conv = params.conv[k];
    Mat<T>& columns = tape ? tape->columns[k] : col;
    Mat<T>& pre = tape ? tape->preact[k] : z;
    im2col3x3(*input, side, columns);
    pre.noalias() = conv.weight * columns;
    pre.colwise() += conv.bias;
    Mat<T> act = pre.cwiseMax(T(0));
    avgpool2(act, side, maps.blocks[k]);
    if (tape) tape->input_side[k] = side;
    input = &maps.blocks[k].data;
    side /= 2;
  }
  // B4 flattened channel-major; keeps the spatial layout of the face.
  const Mat<T>& b4 = maps.blocks[3].data;
  Vec<T> pooled = Eigen::Map<const Vec<T>>(b4.data(), b4.size());
  maps.global = params.embed.weight * pooled + params.embed.bias;
  if (tape) tape->pooled = std::move(pooled);
  return maps;
}

template <typename T>
void backward_backbone(const BackboneConfig& config, const BackboneParams<T>& params, const BackboneTape<T>& tape,
                       std::array<Mat<T>, 4> d_blocks, const Vec<T>& d_global, BackboneParams<T>& grads) {
  grads.embed.weight.noalias() += d_global * tape.pooled.transpose();
  grads.embed.bias += d_global;
  const Vec<T> d_pooled = params.embed.weight.transpose() * d_global;

  const int side4 = config.block_side(3);
  const int n4 = side4 * side4;
  Mat<T> d_b4 = Eigen::Map<const Mat<T>>(d_pooled.data(), config.channels[3], n4);
  if (d_blocks[3].size() > 0) d_b4 += d_blocks[3];
  d_blocks[3] = std::move(d_b4);

  for (int k = 3; k >= 0; --k) {
    const int side = tape.input_side[k];
    const int half = side / 2;
    const Mat<T>& d_out = d_blocks[k];
    const Mat<T>& pre = tape.preact[k];
    // Un-pool (each input pixel receives a quarter) and gate by the rectifier.
    Mat<T> d_pre(pre.rows(), pre.cols());
    for (Eigen::Index c = 0; c < pre.rows(); ++c) {
      const T* g = d_out.row(c).data();
      const T* z = pre.row(c).data();
      T* o = d_pre.row(c).data();
      for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
          const int idx = y * side + x;
          o[idx] = z[idx] > T(0) ? T(0.25) * g[(y / 2) * half + x / 2] : T(0);
        }
      }
    }
    grads.conv[k].weight.noalias() += d_pre * tape.columns[k].transpose();
    grads.conv[k].bias += d_pre.rowwise().sum();
    if (k > 0) {
      const Mat<T> d_col = params.conv[k].weight.transpose() * d_pre;
      Mat<T> d_in;
      col2im3x3(d_col, config.channels[k - 1], side, d_in);
      if (d_blocks[k - 1].size() > 0) {
        d_blocks[k - 1] += d_in;
      } else {
        d_blocks[k - 1] = std::move(d_in);
      }
    }
  }
}

#define OREO_INSTANTIATE(T)                                                                                      \
  template BackboneParams<T> init_backbone<T>(const BackboneConfig&, Rng&);                                      \
  template BackboneParams<T> zero_backbone<T>(const BackboneConfig&);                                            \
  template bool all_finite<T>(const BackboneParams<T>&);                                                         \
  template FeatureMaps<T> forward_backbone<T>(const BackboneConfig&, const BackboneParams<T>&,                   \
                                              const FeatureMap<T>&, BackboneTape<T>*, bool);                     \
  template void backward_backbone<T>(const BackboneConfig&, const BackboneParams<T>&, const BackboneTape<T>&,    \
                                     std::array<Mat<T>, 4>, const Vec<T>&, BackboneParams<T>&);

OREO_INSTANTIATE(float)
OREO_INSTANTIATE(double)
#undef OREO_INSTANTIATE

}  // namespace oreo
