#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace oreo {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Raised when tensor shapes disagree with the configured network.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a cosine is requested for a zero vector.
class ZeroNormError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A rank-3 activation tensor stored as channels x (height * width), row-major
/// so each channel is one contiguous row.
template <typename T>
struct FeatureMap {
  int height = 0;
  int width = 0;
  Mat<T> data;

  FeatureMap() = default;
  FeatureMap(int channels, int h, int w)
      : height(h), width(w), data(Mat<T>::Zero(channels, h * w)) {}

  int channels() const { return static_cast<int>(data.rows()); }
  int pixels() const { return height * width; }

  T& at(int c, int y, int x) { return data(c, y * width + x); }
  T at(int c, int y, int x) const { return data(c, y * width + x); }
};

/// Single-channel spatial map (attention masks, logits).
template <typename T>
struct Mask {
  int height = 0;
  int width = 0;
  Vec<T> values;

  T at(int y, int x) const { return values(y * width + x); }
};

template <typename T>
inline T logistic(T z) {
  // Split on sign so exp never overflows.
  if (z >= T(0)) {
    return T(1) / (T(1) + std::exp(-z));
  }
  const T e = std::exp(z);
  return e / (T(1) + e);
}

}  // namespace oreo
