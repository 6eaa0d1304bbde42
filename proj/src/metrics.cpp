#include "oreo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

namespace oreo {

double similarity(const Vec<double>& a, const Vec<double>& b) {
  if (a.size() != b.size()) throw ShapeError("similarity: dimension mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw ZeroNormError("similarity: zero-norm template");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

Vec<double> pool_set(const std::vector<Vec<double>>& templates) {
  if (templates.empty()) throw ProtocolError("pool_set: empty set");
  Vec<double> sum = Vec<double>::Zero(templates.front().size());
  for (const auto& t : templates) {
    if (t.size() != sum.size()) throw ShapeError("pool_set: dimension mismatch");
    sum += t;
  }
  return sum / static_cast<double>(templates.size());
}

Mat<double> score_matrix(const LabeledTemplates& gallery, const LabeledTemplates& probes) {
  if (gallery.vectors.cols() != probes.vectors.cols()) throw ShapeError("score_matrix: dimension mismatch");
  auto normalized = [](const Mat<double>& m, const char* what) {
    Mat<double> out = m;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const double n = m.row(i).norm();
      if (!(n > 0.0)) throw ZeroNormError(std::string("zero-norm template in ") + what + " row " + std::to_string(i));
      out.row(i) /= n;
    }
    return out;
  };
  Mat<double> s = normalized(probes.vectors, "probes") * normalized(gallery.vectors, "gallery").transpose();
  return s.cwiseMax(-1.0).cwiseMin(1.0);
}

std::vector<int> mated_ranks(const Mat<double>& scores, const std::vector<int>& gallery_ids,
                             const std::vector<int>& probe_ids) {
  const Eigen::Index g = scores.cols();
  std::vector<int> ranks(probe_ids.size(), 0);
  for (size_t p = 0; p < probe_ids.size(); ++p) {
    Eigen::Index best = -1;
    for (Eigen::Index j = 0; j < g; ++j) {
      if (gallery_ids[j] == probe_ids[p] && (best < 0 || scores(p, j) > scores(p, best))) best = j;
    }
    if (best < 0) continue;
    const double s = scores(p, best);
    int rank = 1;
    for (Eigen::Index j = 0; j < g; ++j) {
      if (scores(p, j) > s || (scores(p, j) == s && j < best)) ++rank;
    }
    ranks[p] = rank;
  }
  return ranks;
}

std::vector<double> cmc_from_scores(const Mat<double>& scores, const std::vector<int>& gallery_ids,
                                    const std::vector<int>& probe_ids, int max_rank) {
  if (max_rank < 1) throw ProtocolError("cmc: max_rank must be positive");
  if (probe_ids.empty()) throw ProtocolError("cmc: no probes");
  const auto ranks = mated_ranks(scores, gallery_ids, probe_ids);
  std::vector<double> rate(max_rank, 0.0);
  for (size_t p = 0; p < ranks.size(); ++p) {
    if (ranks[p] == 0) {
      throw ProtocolError("cmc: probe identity " + std::to_string(probe_ids[p]) + " is not in the gallery");
    }
    for (int k = ranks[p]; k <= max_rank; ++k) rate[k - 1] += 1.0;
  }
  for (double& r : rate) r /= static_cast<double>(ranks.size());
  return rate;
}

std::vector<double> cmc(const LabeledTemplates& gallery, const LabeledTemplates& probes, int max_rank) {
  return cmc_from_scores(score_matrix(gallery, probes), gallery.identities, probes.identities, max_rank);
}

std::vector<RocPoint> roc_verification(const std::vector<double>& scores, const std::vector<bool>& genuine) {
  if (scores.size() != genuine.size()) throw ProtocolError("roc: one label per score");
  std::vector<size_t> order(scores.size());
  size_t n_gen = 0;
  for (size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
    if (genuine[i]) ++n_gen;
  }
  const size_t n_imp = scores.size() - n_gen;
  if (n_gen == 0 || n_imp == 0) throw ProtocolError("roc: need at least one genuine and one impostor pair");
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  std::vector<RocPoint> roc;
  roc.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  size_t gen = 0, imp = 0;
  for (size_t i = 0; i < order.size();) {
    const double tau = scores[order[i]];
    while (i < order.size() && scores[order[i]] == tau) {
      (genuine[order[i]] ? gen : imp) += 1;
      ++i;
    }
    roc.push_back({static_cast<double>(imp) / static_cast<double>(n_imp),
                   static_cast<double>(gen) / static_cast<double>(n_gen), tau});
  }
  return roc;
}

RocPoint tar_at_far(const std::vector<RocPoint>& roc, double target_far) {
  if (roc.empty()) throw ProtocolError("tar_at_far: empty curve");
  RocPoint best = roc.front();
  for (const auto& pt : roc) {
    if (pt.far <= target_far && pt.threshold <= best.threshold) best = pt;
  }
  return best;
}

OpenSetCurve open_set_from_scores(const Mat<double>& scores, const std::vector<int>& gallery_ids,
                                  const std::vector<int>& probe_ids) {
  if (scores.cols() == 0) throw ProtocolError("open-set: empty gallery");
  const std::set<int> enrolled(gallery_ids.begin(), gallery_ids.end());
  struct Probe {
    double top;
    bool mated;
    bool correct;
  };
  std::vector<Probe> probes;
  size_t n_mated = 0, n_non = 0, n_correct = 0;
  for (size_t p = 0; p < probe_ids.size(); ++p) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < scores.cols(); ++j) {
      if (scores(p, j) > scores(p, best)) best = j;
    }
    const bool mated = enrolled.count(probe_ids[p]) > 0;
    const bool correct = mated && gallery_ids[best] == probe_ids[p];
    probes.push_back({scores(p, best), mated, correct});
    (mated ? n_mated : n_non) += 1;
    if (correct) ++n_correct;
  }
  if (n_non == 0) throw ProtocolError("open-set: at least one non-mated probe is required");

  std::vector<size_t> order(probes.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return probes[a].top > probes[b].top; });

  OpenSetCurve curve;
  curve.rank1 = n_mated ? static_cast<double>(n_correct) / static_cast<double>(n_mated) : 0.0;
  curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  size_t fp = 0, tp = 0;
  for (size_t i = 0; i < order.size();) {
    const double tau = probes[order[i]].top;
    while (i < order.size() && probes[order[i]].top == tau) {
      const Probe& pr = probes[order[i]];
      if (!pr.mated) ++fp;
      if (pr.correct) ++tp;
      ++i;
    }
    curve.points.push_back({static_cast<double>(fp) / static_cast<double>(n_non),
                            n_mated ? static_cast<double>(tp) / static_cast<double>(n_mated) : 0.0, tau});
  }
  return curve;
}

OpenSetCurve open_set_ident(const LabeledTemplates& gallery, const LabeledTemplates& probes) {
  return open_set_from_scores(score_matrix(gallery, probes), gallery.identities, probes.identities);
}

OpenSetPoint tpir_at_fpir(const OpenSetCurve& curve, double target_fpir) {
  if (curve.points.empty()) throw ProtocolError("tpir_at_fpir: empty curve");
  OpenSetPoint best = curve.points.front();
  for (const auto& pt : curve.points) {
    if (pt.fpir <= target_fpir && pt.threshold <= best.threshold) best = pt;
  }
  return best;
}

double adp(const std::vector<std::pair<double, double>>& rank1_without_with) {
  if (rank1_without_with.empty()) throw ProtocolError("adp: no attributes");
  double sum = 0.0;
  for (const auto& [without, with] : rank1_without_with) sum += without - with;
  return sum / static_cast<double>(rank1_without_with.size());
}

McNemarResult mcnemar(const std::vector<bool>& correct_a, const std::vector<bool>& correct_b) {
  if (correct_a.size() != correct_b.size()) throw ProtocolError("mcnemar: prediction vectors differ in length");
  McNemarResult r;
  for (size_t i = 0; i < correct_a.size(); ++i) {
    if (correct_a[i] && !correct_b[i]) ++r.b;
    if (!correct_a[i] && correct_b[i]) ++r.c;
  }
  const int n = r.b + r.c;
  if (n == 0) {
    r.statistic = 0.0;
    r.p_value = 1.0;
    r.exact = true;
    return r;
  }
  const double diff = std::max(0.0, std::abs(static_cast<double>(r.b - r.c)) - 1.0);
  r.statistic = diff * diff / n;
  if (n < 25) {
    r.exact = true;
    // 2 * P(X <= min(b, c)), X ~ Binomial(n, 1/2); every term is exact in
    // double for n < 25.
    const int k_max = std::min(r.b, r.c);
    double tail = 0.0;
    double coeff = 1.0;  // C(n, k)
    for (int k = 0; k <= k_max; ++k) {
      tail += coeff;
      coeff = coeff * (n - k) / (k + 1);
    }
    r.p_value = std::min(1.0, 2.0 * tail / std::ldexp(1.0, n));
  } else {
    r.exact = false;
    r.p_value = std::erfc(std::sqrt(r.statistic / 2.0));
  }
  return r;
}

}  // namespace oreo
