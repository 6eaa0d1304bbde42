#include "oreo/losses.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace oreo {

template <typename T>
LossValue<T> loss_identity(const Mat<T>& templates, const std::vector<int>& labels, const Affine<T>& classifier,
                           Affine<T>* classifier_grad) {
  const Eigen::Index m = templates.rows();
  const Eigen::Index n = classifier.weight.rows();
  if (m == 0) throw std::invalid_argument("loss_identity: empty batch");
  if (static_cast<Eigen::Index>(labels.size()) != m) throw ShapeError("loss_identity: one label per template");
  if (classifier.weight.cols() != templates.cols()) throw ShapeError("loss_identity: classifier width mismatch");

  Mat<T> logits = templates * classifier.weight.transpose();
  logits.rowwise() += classifier.bias.transpose();

  LossValue<T> out;
  Mat<T> d_logits(m, n);
  for (Eigen::Index i = 0; i < m; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= n) {
      throw std::out_of_range("loss_identity: label " + std::to_string(y) + " outside [0, " + std::to_string(n) + ")");
    }
    const T peak = logits.row(i).maxCoeff();
    const auto shifted = (logits.row(i).array() - peak).eval();
    const T log_sum = std::log(shifted.exp().sum());
    out.value += log_sum - shifted(y);
    d_logits.row(i) = (shifted - log_sum).exp().matrix();
    d_logits(i, y) -= T(1);
  }
  const T inv_m = T(1) / static_cast<T>(m);
  out.value *= inv_m;
  d_logits *= inv_m;

  out.d_input = d_logits * classifier.weight;
  if (classifier_grad) {
    classifier_grad->weight.noalias() += d_logits.transpose() * templates;
    classifier_grad->bias += d_logits.colwise().sum().transpose();
  }
  return out;
}

template <typename T>
LossValue<T> loss_attributes(const Mat<T>& logits, const Mat<T>& labels) {
  if (logits.rows() != labels.rows() || logits.cols() != labels.cols()) {
    throw ShapeError("loss_attributes: logits and labels differ in shape");
  }
  const Eigen::Index m = logits.rows();
  LossValue<T> out;
  out.d_input.resize(m, logits.cols());
  if (m == 0) return out;
  const T inv_m = T(1) / static_cast<T>(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index k = 0; k < logits.cols(); ++k) {
      const T a = logits(i, k);
      const T y = labels(i, k);
      // -[y log s(a) + (1-y) log(1-s(a))] = max(a,0) - a y + log(1 + e^{-|a|})
      out.value += std::max(a, T(0)) - a * y + std::log1p(std::exp(-std::abs(a)));
      out.d_input(i, k) = (logistic(a) - y) * inv_m;
    }
  }
  out.value *= inv_m;
  return out;
}

template <typename T>
StlResult<T> loss_stl(const Mat<T>& nonoccluded, const Mat<T>& occluded, const std::vector<int>& identities,
                      T margin) {
  const Eigen::Index p = nonoccluded.rows();
  if (occluded.rows() != p || occluded.cols() != nonoccluded.cols()) {
    throw ShapeError("loss_stl: template sets differ in shape");
  }
  if (static_cast<Eigen::Index>(identities.size()) != p) throw ShapeError("loss_stl: one identity per pair");
  if (p < 2) throw std::invalid_argument("loss_stl: need at least 2 pairs so negatives exist");

  Vec<T> norm_n(p), norm_o(p);
  for (Eigen::Index i = 0; i < p; ++i) {
    norm_n(i) = nonoccluded.row(i).norm();
    norm_o(i) = occluded.row(i).norm();
    if (!(norm_n(i) > T(0))) throw ZeroNormError("loss_stl: non-occluded template " + std::to_string(i) + " has zero norm");
    if (!(norm_o(i) > T(0))) throw ZeroNormError("loss_stl: occluded template " + std::to_string(i) + " has zero norm");
  }
  const Mat<T> unit_n = norm_n.cwiseInverse().asDiagonal() * nonoccluded;
  const Mat<T> unit_o = norm_o.cwiseInverse().asDiagonal() * occluded;

  StlResult<T> out;
  out.similarity = unit_n * unit_o.transpose();
  const Mat<T>& s = out.similarity;

  // dL/dS, then chain through the cosine.
  Mat<T> d_s = Mat<T>::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    T best = -std::numeric_limits<T>::infinity();
    Eigen::Index br = -1, bc = -1;
    // Row scan first, then column; strict '>' keeps the first maximum.
    for (Eigen::Index j = 0; j < p; ++j) {
      if (identities[j] != identities[i] && s(i, j) > best) {
        best = s(i, j);
        br = i;
        bc = j;
      }
    }
    for (Eigen::Index j = 0; j < p; ++j) {
      if (identities[j] != identities[i] && s(j, i) > best) {
        best = s(j, i);
        br = j;
        bc = i;
      }
    }
    MinedTriplet mt;
    mt.anchor = static_cast<int>(i);
    mt.positive = static_cast<double>(s(i, i));
    if (br < 0) {
      // Every other pair shares this identity: no negative, no loss.
      mt.negative_row = mt.negative_col = -1;
      out.mined.push_back(mt);
      continue;
    }
    mt.negative_row = static_cast<int>(br);
    mt.negative_col = static_cast<int>(bc);
    mt.negative = static_cast<double>(best);
    const T h = best - s(i, i) + margin;
    if (h > T(0)) {
      out.value += h;
      mt.hinge = static_cast<double>(h);
      d_s(br, bc) += T(1);
      d_s(i, i) -= T(1);
    }
    out.mined.push_back(mt);
  }

  // S = U_n U_o^T with U = diag(1/|t|) t; d(t/|t|) = (I - u u^T) d / |t|.
  const Mat<T> d_unit_n = d_s * unit_o;
  const Mat<T> d_unit_o = d_s.transpose() * unit_n;
  out.d_nonoccluded.resize(p, nonoccluded.cols());
  out.d_occluded.resize(p, occluded.cols());
  for (Eigen::Index i = 0; i < p; ++i) {
    const T pn = unit_n.row(i).dot(d_unit_n.row(i));
    out.d_nonoccluded.row(i) = (d_unit_n.row(i) - pn * unit_n.row(i)) / norm_n(i);
    const T po = unit_o.row(i).dot(d_unit_o.row(i));
    out.d_occluded.row(i) = (d_unit_o.row(i) - po * unit_o.row(i)) / norm_o(i);
  }
  return out;
}

double loss_total(const LossComponents& parts) {
  double total = parts.identity;
  if (parts.use_attributes) total += parts.attributes;
  if (parts.use_triplet) total += parts.triplet;
  return total;
}

#define OREO_INSTANTIATE(T)                                                                                 \
  template LossValue<T> loss_identity<T>(const Mat<T>&, const std::vector<int>&, const Affine<T>&,          \
                                         Affine<T>*);                                                       \
  template LossValue<T> loss_attributes<T>(const Mat<T>&, const Mat<T>&);                                   \
  template StlResult<T> loss_stl<T>(const Mat<T>&, const Mat<T>&, const std::vector<int>&, T);

OREO_INSTANTIATE(float)
OREO_INSTANTIATE(double)
#undef OREO_INSTANTIATE

}  // namespace oreo
