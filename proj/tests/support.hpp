#pragma once

// Brute-force oracles and fixtures shared by the unit tests and the
// acceptance gate. Nothing here calls into the metric code it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "oreo/datagen.hpp"
#include "oreo/metrics.hpp"
#include "oreo/model.hpp"
#include "oreo/rng.hpp"

namespace oreo::oracle {

// rank of the first mated gallery entry, ties to the lower index; 0 if absent
inline int oracle_rank(const std::vector<double>& row, const std::vector<int>& gallery_ids, int probe_id) {
  int mate = -1;
  for (size_t j = 0; j < row.size(); ++j) {
    if (gallery_ids[j] != probe_id) continue;
    if (mate < 0 || row[j] > row[mate]) mate = static_cast<int>(j);
  }
  if (mate < 0) return 0;
  int ahead = 0;
  for (size_t j = 0; j < row.size(); ++j) {
    if (gallery_ids[j] == probe_id) continue;
    if (row[j] > row[mate] || (row[j] == row[mate] && static_cast<int>(j) < mate)) ++ahead;
  }
  return ahead + 1;
}

inline std::vector<double> oracle_cmc(const std::vector<std::vector<double>>& scores,
                                      const std::vector<int>& gallery_ids, const std::vector<int>& probe_ids,
                                      int max_rank) {
  std::vector<double> out(max_rank, 0.0);
  for (int k = 1; k <= max_rank; ++k) {
    int hits = 0;
    for (size_t p = 0; p < probe_ids.size(); ++p) {
      const int r = oracle_rank(scores[p], gallery_ids, probe_ids[p]);
      if (r >= 1 && r <= k) ++hits;
    }
    out[k - 1] = static_cast<double>(hits) / static_cast<double>(probe_ids.size());
  }
  return out;
}

struct OraclePoint {
  double rate = 0.0;   // TAR or TPIR
  double error = 0.0;  // FAR or FPIR
  double threshold = std::numeric_limits<double>::infinity();
};

// Scan every candidate threshold (each distinct score and +inf) and keep the
// lowest one whose false rate stays within budget.
inline OraclePoint oracle_tar_at_far(const std::vector<double>& scores, const std::vector<bool>& genuine,
                                     double target) {
  std::set<double> candidates(scores.begin(), scores.end());
  candidates.insert(std::numeric_limits<double>::infinity());
  OraclePoint best;
  bool found = false;
  for (double tau : candidates) {
    double g = 0, i = 0, ng = 0, ni = 0;
    for (size_t k = 0; k < scores.size(); ++k) {
      if (genuine[k]) {
        ++ng;
        if (scores[k] >= tau) ++g;
      } else {
        ++ni;
        if (scores[k] >= tau) ++i;
      }
    }
    const double far = i / ni;
    if (far <= target && (!found || tau < best.threshold)) {
      best = {g / ng, far, tau};
      found = true;
    }
  }
  return best;
}

inline OraclePoint oracle_tpir_at_fpir(const std::vector<std::vector<double>>& scores,
                                       const std::vector<int>& gallery_ids, const std::vector<int>& probe_ids,
                                       double target) {
  const std::set<int> enrolled(gallery_ids.begin(), gallery_ids.end());
  std::vector<double> top(probe_ids.size());
  std::vector<int> top_id(probe_ids.size());
  for (size_t p = 0; p < probe_ids.size(); ++p) {
    size_t b = 0;
    for (size_t j = 0; j < gallery_ids.size(); ++j) {
      if (scores[p][j] > scores[p][b]) b = j;
    }
    top[p] = scores[p][b];
    top_id[p] = gallery_ids[b];
  }
  std::set<double> candidates(top.begin(), top.end());
  candidates.insert(std::numeric_limits<double>::infinity());
  OraclePoint best;
  bool found = false;
  for (double tau : candidates) {
    double fp = 0, tp = 0, nn = 0, nm = 0;
    for (size_t p = 0; p < probe_ids.size(); ++p) {
      if (enrolled.count(probe_ids[p])) {
        ++nm;
        if (top_id[p] == probe_ids[p] && top[p] >= tau) ++tp;
      } else {
        ++nn;
        if (top[p] >= tau) ++fp;
      }
    }
    const double fpir = fp / nn;
    if (fpir <= target && (!found || tau < best.threshold)) {
      best = {nm > 0 ? tp / nm : 0.0, fpir, tau};
      found = true;
    }
  }
  return best;
}

// Two-sided exact binomial p by summing C(n,k) / 2^n with integers.
inline double oracle_mcnemar_exact(int b, int c) {
  const int n = b + c;
  if (n == 0) return 1.0;
  const int lo = std::min(b, c);
  std::uint64_t tail = 0;
  for (int k = 0; k <= lo; ++k) {
    std::uint64_t coeff = 1;
    for (int i = 1; i <= k; ++i) coeff = coeff * (n - k + i) / i;
    tail += coeff;
  }
  return std::min(1.0, 2.0 * static_cast<double>(tail) / std::ldexp(1.0, n));
}

struct OracleSweep {
  int instances = 0;
  int cmc_mismatches = 0;
  int tar_mismatches = 0;
  int tpir_mismatches = 0;
};

// Random score matrices with deliberate ties (scores on a 0.05 grid), at most
// 100 scores each, compared exactly with the brute-force scans above.
inline OracleSweep sweep_metric_oracles(std::uint64_t seed, int instances) {
  OracleSweep out;
  Rng rng(seed);
  auto grid_score = [&] { return -1.0 + 0.05 * static_cast<double>(uniform_index(rng, 41)); };
  for (int inst = 0; inst < instances; ++inst) {
    ++out.instances;
    const int g = 2 + static_cast<int>(uniform_index(rng, 9));   // gallery size 2..10
    const int p = 1 + static_cast<int>(uniform_index(rng, 100 / g));
    std::vector<int> gallery_ids(g);
    for (int j = 0; j < g; ++j) gallery_ids[j] = static_cast<int>(uniform_index(rng, g));  // repeats allowed
    gallery_ids[0] = 0;
    std::vector<int> closed(p), open(p);
    for (int i = 0; i < p; ++i) {
      closed[i] = gallery_ids[uniform_index(rng, g)];
      open[i] = uniform01(rng) < 0.4 ? 1000 + i : closed[i];
    }
    open[0] = 5000;  // at least one non-mated probe
    Mat<double> s(p, g);
    std::vector<std::vector<double>> rows(p, std::vector<double>(g));
    for (int i = 0; i < p; ++i) {
      for (int j = 0; j < g; ++j) rows[i][j] = s(i, j) = grid_score();
    }
    const int max_rank = g;
    if (cmc_from_scores(s, gallery_ids, closed, max_rank) != oracle_cmc(rows, gallery_ids, closed, max_rank)) {
      ++out.cmc_mismatches;
    }

    std::vector<double> flat;
    std::vector<bool> genuine;
    for (int i = 0; i < p; ++i) {
      for (int j = 0; j < g; ++j) {
        flat.push_back(rows[i][j]);
        genuine.push_back(gallery_ids[j] == closed[i]);
      }
    }
    genuine[0] = true;
    genuine[1] = false;
    const auto roc = roc_verification(flat, genuine);
    for (double target : {0.0, 1e-3, 1e-2, 0.1, 0.25, 0.5, 1.0}) {
      const RocPoint got = tar_at_far(roc, target);
      const OraclePoint want = oracle_tar_at_far(flat, genuine, target);
      if (got.tar != want.rate || got.far != want.error || got.threshold != want.threshold) ++out.tar_mismatches;
    }

    const auto curve = open_set_from_scores(s, gallery_ids, open);
    for (double target : {0.0, 1e-3, 1e-2, 0.1, 0.3, 1.0}) {
      const OpenSetPoint got = tpir_at_fpir(curve, target);
      const OraclePoint want = oracle_tpir_at_fpir(rows, gallery_ids, open, target);
      if (got.tpir != want.rate || got.fpir != want.error || got.threshold != want.threshold) ++out.tpir_mismatches;
    }
  }
  return out;
}

// Upper tail of the chi-square distribution: Q(k/2, x/2), by the series for
// the lower incomplete gamma or the continued fraction beyond a + 1.
inline double chi_square_sf(double x, int dof) {
  if (x <= 0) return 1.0;
  const double a = 0.5 * dof, z = 0.5 * x;
  const double log_prefix = a * std::log(z) - z - std::lgamma(a);
  if (z < a + 1) {
    double term = 1.0 / a, sum = term;
    for (int n = 1; n < 1000; ++n) {
      term *= z / (a + n);
      sum += term;
      if (term < sum * 1e-16) break;
    }
    return 1.0 - sum * std::exp(log_prefix);
  }
  // Lentz's method.
  double b = z + 1 - a, c = 1e300, d = 1 / b, h = d;
  for (int i = 1; i < 1000; ++i) {
    const double an = -i * (i - a);
    b += 2;
    d = an * d + b;
    if (std::abs(d) < 1e-300) d = 1e-300;
    c = b + an / c;
    if (std::abs(c) < 1e-300) c = 1e-300;
    d = 1 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1) < 1e-16) break;
  }
  return std::exp(log_prefix) * h;
}

// Pearson statistic against equal expected counts.
inline double chi_square_uniform_p(const std::vector<double>& counts) {
  double total = 0;
  for (double c : counts) total += c;
  const double expected = total / static_cast<double>(counts.size());
  double stat = 0;
  for (double c : counts) stat += (c - expected) * (c - expected) / expected;
  return chi_square_sf(stat, static_cast<int>(counts.size()) - 1);
}

// Small model used for finite-difference checks: every group gets a
// non-zero gradient with this configuration and batch.
inline ModelConfig gradcheck_config() {
  ModelConfig cfg;
  cfg.backbone.channels = {4, 8, 8, 8};
  cfg.backbone.embedding_dim = 8;
  cfg.backbone.image_size = 16;
  cfg.num_identities = 4;
  cfg.num_attributes = 5;
  cfg.oan = true;
  return cfg;
}

struct GradcheckFixture {
  Dataset data;
  Batch batch;
};

// Four (non-occluded, occluded) pairs from four identities.
inline GradcheckFixture gradcheck_batch() {
  SynthSpec spec;
  spec.n_identities = 4;
  spec.images_per_identity = 4;
  spec.image_size = 16;
  spec.occluded_fraction = 0.5;
  spec.seed = 3;
  GradcheckFixture f{generate_dataset(spec), {}};
  f.batch.pairs = 4;
  for (bool occluded : {false, true}) {
    for (int id = 0; id < 4; ++id) {
      for (const auto& s : f.data.samples) {
        if (s.identity == id && s.occluded == occluded) {
          f.batch.images.push_back(&s);
          break;
        }
      }
    }
  }
  for (const auto* im : f.batch.images) f.batch.classes.push_back(im->identity);
  return f;
}

inline ModelParams<double> gradcheck_params(const ModelConfig& cfg) {
  auto params = init_params<double>(cfg, 5);
  // Non-zero biases keep the check away from the all-biases-zero special case.
  Rng rng(9);
  for (auto& r : list_params(cfg, params)) {
    if (r.name.find("bias") == std::string::npos) continue;
    for (size_t i = 0; i < r.size; ++i) r.data[i] = 0.1 * normal01(rng);
  }
  return params;
}

struct GroupCheck {
  std::string group;
  double analytic_norm = 0.0;
  double rel_error = 0.0;  // ||analytic - numeric|| / ||numeric||
  size_t entries = 0;
};

// Central differences of the total batch loss over every parameter entry,
// aggregated per parameter group. Element-wise ratios blow up on entries
// that are zero up to rounding, so the error is measured on the group norm.
inline std::vector<GroupCheck> check_gradients(const ModelConfig& cfg, ModelParams<double> params, const Batch& batch,
                                               const LossSettings& settings, double h = 1e-6) {
  auto grads = zero_params<double>(cfg);
  batch_loss(cfg, params, batch, settings, &grads);
  auto pr = list_params(cfg, params);
  auto gr = list_params(cfg, grads);
  std::vector<GroupCheck> out;
  std::vector<double> num2, diff2;
  for (size_t t = 0; t < pr.size(); ++t) {
    size_t g = 0;
    while (g < out.size() && out[g].group != pr[t].group) ++g;
    if (g == out.size()) {
      out.push_back({pr[t].group, 0.0, 0.0, 0});
      num2.push_back(0.0);
      diff2.push_back(0.0);
    }
    for (size_t i = 0; i < pr[t].size; ++i) {
      const double orig = pr[t].data[i];
      pr[t].data[i] = orig + h;
      const double up = batch_loss(cfg, params, batch, settings, nullptr).total;
      pr[t].data[i] = orig - h;
      const double down = batch_loss(cfg, params, batch, settings, nullptr).total;
      pr[t].data[i] = orig;
      const double num = (up - down) / (2 * h);
      const double an = gr[t].data[i];
      num2[g] += num * num;
      diff2[g] += (num - an) * (num - an);
      out[g].analytic_norm += an * an;
      out[g].entries += 1;
    }
  }
  for (size_t g = 0; g < out.size(); ++g) {
    out[g].analytic_norm = std::sqrt(out[g].analytic_norm);
    out[g].rel_error = num2[g] > 0 ? std::sqrt(diff2[g] / num2[g]) : (diff2[g] > 0 ? 1.0 : 0.0);
  }
  return out;
}

}  // namespace oreo::oracle
