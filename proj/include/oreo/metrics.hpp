#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "oreo/tensor.hpp"

namespace oreo {

class ProtocolError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Cosine similarity in [-1, 1]. Throws ZeroNormError on a zero vector.
double similarity(const Vec<double>& a, const Vec<double>& b);

/// Arithmetic mean of a set's templates (un-normalized).
Vec<double> pool_set(const std::vector<Vec<double>>& templates);

/// Templates with labels, one row per entry.
struct LabeledTemplates {
  Mat<double> vectors;
  std::vector<int> identities;

  size_t size() const { return identities.size(); }
};

/// probes x gallery cosine similarity matrix.
Mat<double> score_matrix(const LabeledTemplates& gallery, const LabeledTemplates& probes);

/// 1-based rank at which each probe's mated identity first appears, ordering
/// gallery entries by descending score with ties broken by ascending gallery
/// index; 0 when the identity is absent.
std::vector<int> mated_ranks(const Mat<double>& scores, const std::vector<int>& gallery_ids,
                             const std::vector<int>& probe_ids);

/// Closed-set CMC: rate[k-1] = fraction of probes whose mate is within the
/// top k. Throws ProtocolError when a probe identity is not enrolled.
std::vector<double> cmc(const LabeledTemplates& gallery, const LabeledTemplates& probes, int max_rank);
std::vector<double> cmc_from_scores(const Mat<double>& scores, const std::vector<int>& gallery_ids,
                                    const std::vector<int>& probe_ids, int max_rank);

struct RocPoint {
  double far = 0.0;
  double tar = 0.0;
  double threshold = 0.0;  // accept when score >= threshold
};

/// One point per distinct score plus a threshold of +inf (FAR = TAR = 0),
/// ordered by decreasing threshold (non-decreasing FAR).
std::vector<RocPoint> roc_verification(const std::vector<double>& scores, const std::vector<bool>& genuine);

/// Operating point with the highest TAR among those with FAR <= target, i.e.
/// the lowest threshold meeting the FAR budget. No interpolation.
RocPoint tar_at_far(const std::vector<RocPoint>& roc, double target_far);

struct OpenSetPoint {
  double fpir = 0.0;
  double tpir = 0.0;
  double threshold = 0.0;
};

struct OpenSetCurve {
  std::vector<OpenSetPoint> points;  // decreasing threshold
  double rank1 = 0.0;                // closed-set rank-1 over mated probes
};

/// Open-set identification. Probes whose identity is enrolled are mated,
/// the rest are non-mated; at least one non-mated probe is required.
OpenSetCurve open_set_ident(const LabeledTemplates& gallery, const LabeledTemplates& probes);
OpenSetCurve open_set_from_scores(const Mat<double>& scores, const std::vector<int>& gallery_ids,
                                  const std::vector<int>& probe_ids);

/// Lowest threshold with FPIR <= target.
OpenSetPoint tpir_at_fpir(const OpenSetCurve& curve, double target_fpir);

/// Mean over attributes of (rate_without - rate_with), in the rates' units.
double adp(const std::vector<std::pair<double, double>>& rank1_without_with);

struct McNemarResult {
  int b = 0;  // first correct, second wrong
  int c = 0;  // first wrong, second correct
  double statistic = 0.0;  // continuity-corrected chi-square, clamped at 0
  double p_value = 1.0;
  bool exact = true;
};

/// Exact two-sided binomial test when b + c < 25, otherwise the
/// continuity-corrected chi-square with one degree of freedom.
McNemarResult mcnemar(const std::vector<bool>& correct_a, const std::vector<bool>& correct_b);

}  // namespace oreo
