#pragma once

#include <stdexcept>
#include <vector>

#include "oreo/backbone.hpp"
#include "oreo/tensor.hpp"

namespace oreo {

/// Scalar objective with the gradient w.r.t. its batch input (one row per
/// sample).
template <typename T>
struct LossValue {
  T value = T(0);
  Mat<T> d_input;
};

/// Mean softmax cross-entropy of `classifier` applied to each template row.
/// Classifier gradients are accumulated into `classifier_grad` when given.
template <typename T>
LossValue<T> loss_identity(const Mat<T>& templates, const std::vector<int>& labels, const Affine<T>& classifier,
                           Affine<T>* classifier_grad = nullptr);

/// Batch mean of the per-sample sum of sigmoid binary cross-entropies,
/// evaluated in log-space. `labels` entries are 0 or 1.
template <typename T>
LossValue<T> loss_attributes(const Mat<T>& logits, const Mat<T>& labels);

/// One anchor's mined terms: positive S(i,i) and hardest negative S(row,col).
struct MinedTriplet {
  int anchor = 0;
  int negative_row = 0;
  int negative_col = 0;
  double positive = 0.0;
  double negative = 0.0;
  double hinge = 0.0;
};

template <typename T>
struct StlResult {
  T value = T(0);
  Mat<T> d_nonoccluded;
  Mat<T> d_occluded;
  Mat<T> similarity;  // S(i, j) = cos(t_n[i], t_o[j])
  std::vector<MinedTriplet> mined;
};

/// Similarity triplet loss over a batch of P (non-occluded, occluded) pairs.
/// Row i of both inputs belongs to identities[i]. For each anchor i the
/// positive is S(i,i) and the negative is the largest different-identity entry
/// of row i or column i; the loss is sum_i max(0, s_n - s_p + margin).
template <typename T>
StlResult<T> loss_stl(const Mat<T>& nonoccluded, const Mat<T>& occluded, const std::vector<int>& identities,
                      T margin);

struct LossComponents {
  double identity = 0.0;
  double attributes = 0.0;
  double triplet = 0.0;
  bool use_attributes = true;
  bool use_triplet = true;
};

/// Unweighted sum of the active components.
double loss_total(const LossComponents& parts);

}  // namespace oreo
