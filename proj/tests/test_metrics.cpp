#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oreo/metrics.hpp"
#include "support.hpp"

using namespace oreo;

namespace {

Vec<double> vec(std::initializer_list<double> v) {
  Vec<double> out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Vec<double> random_vec(int n, Rng& rng) {
  Vec<double> v(n);
  for (int i = 0; i < n; ++i) v(i) = normal01(rng);
  return v;
}

LabeledTemplates labeled(const Mat<double>& m, std::vector<int> ids) { return {m, std::move(ids)}; }

}  // namespace

TEST(Similarity, BasicCases) {
  const auto v = vec({1, 2, 3});
  EXPECT_NEAR(similarity(v, v), 1.0, 1e-15);
  EXPECT_NEAR(similarity(v, -v), -1.0, 1e-15);
  EXPECT_EQ(similarity(vec({1, 0}), vec({0, 1})), 0.0);
  EXPECT_THROW(similarity(vec({0, 0}), vec({0, 1})), ZeroNormError);
  EXPECT_THROW(similarity(vec({1, 0}), vec({0, 1, 2})), ShapeError);
}

TEST(Similarity, MatchesNaiveLoop) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_vec(32, rng), b = random_vec(32, rng);
    double dot = 0, na = 0, nb = 0;
    for (int i = 0; i < 32; ++i) {
      dot += a(i) * b(i);
      na += a(i) * a(i);
      nb += b(i) * b(i);
    }
    EXPECT_NEAR(similarity(a, b), dot / (std::sqrt(na) * std::sqrt(nb)), 1e-12);
  }
}

TEST(PoolSet, MeanOfTemplates) {
  Rng rng(2);
  const auto v = random_vec(6, rng);
  EXPECT_EQ(pool_set({v}), v);
  const auto zero = pool_set({v, Vec<double>(-v)});
  EXPECT_EQ(zero.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(similarity(zero, v), ZeroNormError);
  EXPECT_THROW(pool_set({}), ProtocolError);

  std::vector<Vec<double>> five;
  for (int i = 0; i < 5; ++i) five.push_back(random_vec(6, rng));
  const auto mean = pool_set(five);
  for (int k = 0; k < 6; ++k) {
    double acc = 0;
    for (const auto& t : five) acc += t(k);
    EXPECT_NEAR(mean(k), acc / 5.0, 1e-12);
  }
}

TEST(Cmc, SelfMatchIsPerfect) {
  Rng rng(3);
  Mat<double> g(6, 8);
  for (int i = 0; i < 6; ++i) g.row(i) = random_vec(8, rng).transpose();
  const auto ids = std::vector<int>{0, 1, 2, 3, 4, 5};
  const auto c = cmc(labeled(g, ids), labeled(g, ids), 6);
  for (double r : c) EXPECT_EQ(r, 1.0);
}

TEST(Cmc, HandRankedToyCase) {
  // Probe 0 (identity 1) has identity 0 ranked above its mate.
  Mat<double> s(3, 3);
  s << 0.9, 0.8, 0.1,  //
      0.2, 0.3, 0.9,   //
      0.9, 0.5, 0.3;
  const auto c = cmc_from_scores(s, {0, 1, 2}, {1, 2, 0}, 3);
  EXPECT_DOUBLE_EQ(c[0], 2.0 / 3.0);
  EXPECT_EQ(c[1], 1.0);
  EXPECT_EQ(c[2], 1.0);
}

TEST(Cmc, TiesFavourLowerGalleryIndex) {
  Mat<double> s(2, 2);
  s << 0.5, 0.5,  //
      0.5, 0.5;
  const auto c = cmc_from_scores(s, {0, 1}, {0, 1}, 2);
  EXPECT_EQ(c[0], 0.5);
  EXPECT_EQ(c[1], 1.0);
}

TEST(Cmc, UnenrolledProbeIsAProtocolError) {
  Mat<double> s = Mat<double>::Ones(1, 2);
  EXPECT_THROW(cmc_from_scores(s, {0, 1}, {7}, 2), ProtocolError);
}

TEST(Cmc, MonotoneAndCompleteAtGallerySize) {
  Rng rng(4);
  Mat<double> g(10, 8), p(30, 8);
  std::vector<int> gid(10), pid(30);
  for (int i = 0; i < 10; ++i) {
    g.row(i) = random_vec(8, rng).transpose();
    gid[i] = i;
  }
  for (int i = 0; i < 30; ++i) {
    p.row(i) = random_vec(8, rng).transpose();
    pid[i] = i % 10;
  }
  const auto c = cmc(labeled(g, gid), labeled(p, pid), 10);
  for (size_t k = 1; k < c.size(); ++k) EXPECT_GE(c[k], c[k - 1]);
  EXPECT_EQ(c.back(), 1.0);
}

TEST(Roc, PerfectSeparation) {
  const auto roc = roc_verification({0.9, 0.8, 0.2, 0.1}, {true, true, false, false});
  const auto pt = tar_at_far(roc, 0.0);
  EXPECT_EQ(pt.tar, 1.0);
  EXPECT_EQ(pt.far, 0.0);
  for (size_t i = 1; i < roc.size(); ++i) {
    EXPECT_GE(roc[i].far, roc[i - 1].far);
    EXPECT_GE(roc[i].tar, roc[i - 1].tar);
  }
}

TEST(Roc, HandEnumeratedQuarterFar) {
  const std::vector<double> scores{0.9, 0.8, 0.7, 0.1};
  const std::vector<bool> genuine{true, true, false, false};
  const auto roc = roc_verification(scores, genuine);
  ASSERT_EQ(roc.size(), 5u);  // +inf and the four scores
  const auto pt = tar_at_far(roc, 0.25);
  EXPECT_EQ(pt.tar, 1.0);
  EXPECT_EQ(pt.far, 0.0);
  EXPECT_EQ(pt.threshold, 0.8);
  EXPECT_EQ(roc[3].far, 0.5);  // threshold 0.7
}

TEST(Roc, MissingClassThrows) {
  EXPECT_THROW(roc_verification({0.1, 0.2}, {true, true}), ProtocolError);
  EXPECT_THROW(roc_verification({0.1, 0.2}, {false, false}), ProtocolError);
}

TEST(OpenSet, ExtremeThresholds) {
  Mat<double> s(4, 2);
  s << 0.9, 0.1,  // mated, correct
      0.2, 0.8,   // mated, correct
      0.7, 0.3,   // mated to 1, wrong
      0.6, 0.4;   // non-mated
  const auto curve = open_set_from_scores(s, {0, 1}, {0, 1, 1, 9});
  EXPECT_DOUBLE_EQ(curve.rank1, 2.0 / 3.0);
  EXPECT_EQ(curve.points.front().fpir, 0.0);
  EXPECT_EQ(curve.points.front().tpir, 0.0);
  EXPECT_EQ(curve.points.back().fpir, 1.0);
  EXPECT_DOUBLE_EQ(curve.points.back().tpir, curve.rank1);
  EXPECT_THROW(open_set_from_scores(s, {0, 1}, {0, 1, 1, 0}), ProtocolError);
}

TEST(OpenSet, TenProbeHandCaseEqualsScan) {
  Mat<double> s(10, 3);
  s << 0.95, 0.10, 0.20,  //
      0.30, 0.85, 0.10,   //
      0.20, 0.10, 0.75,   //
      0.70, 0.60, 0.10,   //
      0.40, 0.65, 0.30,   //
      0.50, 0.20, 0.55,   //
      0.60, 0.10, 0.20,   // non-mated from here
      0.30, 0.80, 0.10,   //
      0.10, 0.20, 0.45,   //
      0.35, 0.30, 0.25;
  const std::vector<int> g{0, 1, 2};
  const std::vector<int> p{0, 1, 2, 1, 0, 2, 10, 11, 12, 13};
  std::vector<std::vector<double>> rows(10, std::vector<double>(3));
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 3; ++j) rows[i][j] = s(i, j);
  const auto curve = open_set_from_scores(s, g, p);
  for (double target : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const auto got = tpir_at_fpir(curve, target);
    const auto want = oracle::oracle_tpir_at_fpir(rows, g, p, target);
    EXPECT_EQ(got.tpir, want.rate) << target;
    EXPECT_EQ(got.fpir, want.error) << target;
    EXPECT_EQ(got.threshold, want.threshold) << target;
  }
  // FPIR 0.25 admits one non-mated probe (0.80), so the lowest usable
  // threshold is the next score above 0.60: 0.65, where 3 of 6 mated probes
  // are correct at rank 1 and above it.
  const auto q = tpir_at_fpir(curve, 0.25);
  EXPECT_EQ(q.threshold, 0.65);
  EXPECT_EQ(q.fpir, 0.25);
  EXPECT_DOUBLE_EQ(q.tpir, 0.5);
}

TEST(MetricOracles, RandomizedInstancesAgreeExactly) {
  const auto sweep = oracle::sweep_metric_oracles(2024, 50);
  EXPECT_EQ(sweep.instances, 50);
  EXPECT_EQ(sweep.cmc_mismatches, 0);
  EXPECT_EQ(sweep.tar_mismatches, 0);
  EXPECT_EQ(sweep.tpir_mismatches, 0);
}

TEST(MetricInvariance, ProbeOrderAndRescaling) {
  Rng rng(5);
  Mat<double> g(8, 6), p(20, 6);
  std::vector<int> gid(8), pid(20);
  for (int i = 0; i < 8; ++i) {
    g.row(i) = random_vec(6, rng).transpose();
    gid[i] = i;
  }
  for (int i = 0; i < 20; ++i) {
    pid[i] = i < 16 ? static_cast<int>(uniform_index(rng, 8)) : 100 + i;
    p.row(i) = (g.row(pid[i] < 8 ? pid[i] : 0) + 0.8 * random_vec(6, rng).transpose());
  }
  std::vector<int> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  shuffle(perm.begin(), perm.end(), rng);
  Mat<double> p2(20, 6);
  std::vector<int> pid2(20);
  for (int i = 0; i < 20; ++i) {
    p2.row(i) = p.row(perm[i]) * (0.5 + 3.0 * uniform01(rng));
    pid2[i] = pid[perm[i]];
  }
  Mat<double> g2 = g;
  g2.row(3) *= 7.0;

  const std::vector<int> closed_idx(pid.begin(), pid.begin() + 16);
  const auto a = open_set_ident(labeled(g, gid), labeled(p, pid));
  const auto b = open_set_ident(labeled(g2, gid), labeled(p2, pid2));
  EXPECT_DOUBLE_EQ(a.rank1, b.rank1);
  for (double t : {0.1, 0.25, 0.5}) {
    EXPECT_DOUBLE_EQ(tpir_at_fpir(a, t).tpir, tpir_at_fpir(b, t).tpir);
    EXPECT_DOUBLE_EQ(tpir_at_fpir(a, t).fpir, tpir_at_fpir(b, t).fpir);
  }
}

TEST(Adp, TableRowsFromTheirOwnInputs) {
  const double base = adp({{73.76, 66.79}, {81.38, 63.14}, {83.26, 80.85}, {81.47, 78.91}, {77.74, 65.60}});
  EXPECT_NEAR(base, 8.46, 0.005);
  const double ours = adp({{74.65, 68.66}, {81.99, 65.53}, {84.72, 82.53}, {83.13, 81.47}, {80.02, 68.34}});
  EXPECT_NEAR(ours, 7.60, 0.005);
  // The quoted 10.17% relative gain is computed from the two-decimal values.
  EXPECT_NEAR(100.0 * (8.46 - 7.60) / 8.46, 10.17, 0.05);
  EXPECT_GT(100.0 * (base - ours) / base, 10.2);
  EXPECT_EQ(adp({{50, 50}, {70, 70}}), 0.0);
  EXPECT_THROW(adp({}), ProtocolError);
}

TEST(McNemar, ExactNineOne) {
  std::vector<bool> a, b;
  for (int i = 0; i < 9; ++i) {
    a.push_back(true);
    b.push_back(false);
  }
  a.push_back(false);
  b.push_back(true);
  for (int i = 0; i < 30; ++i) {
    a.push_back(i % 2);
    b.push_back(i % 2);
  }
  const auto r = mcnemar(a, b);
  EXPECT_EQ(r.b, 9);
  EXPECT_EQ(r.c, 1);
  EXPECT_TRUE(r.exact);
  EXPECT_EQ(r.p_value, 0.021484375);
  EXPECT_EQ(oracle::oracle_mcnemar_exact(9, 1), 0.021484375);
}

TEST(McNemar, EqualDisagreementsAndEmpty) {
  const auto r = mcnemar({true, false, true, false}, {false, true, false, true});
  EXPECT_EQ(r.b, 2);
  EXPECT_EQ(r.c, 2);
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_EQ(r.p_value, 1.0);
  EXPECT_EQ(mcnemar({true, true}, {true, true}).p_value, 1.0);
  EXPECT_THROW(mcnemar({true}, {true, false}), ProtocolError);
}

TEST(McNemar, LargeCountsUseCorrectedChiSquare) {
  std::vector<bool> a(60, false), b(60, false);
  for (int i = 0; i < 40; ++i) a[i] = true;       // b = 40
  for (int i = 40; i < 60; ++i) b[i] = true;      // c = 20
  const auto r = mcnemar(a, b);
  EXPECT_FALSE(r.exact);
  EXPECT_NEAR(r.statistic, 19.0 * 19.0 / 60.0, 1e-12);
  EXPECT_NEAR(r.p_value, oracle::chi_square_sf(r.statistic, 1), 1e-10);
}

TEST(McNemar, SymmetricAndMatchesOracle) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const size_t n = 5 + uniform_index(rng, 80);
    std::vector<bool> a(n), b(n);
    for (size_t i = 0; i < n; ++i) {
      a[i] = uniform01(rng) < 0.6;
      b[i] = uniform01(rng) < 0.5;
    }
    const auto x = mcnemar(a, b), y = mcnemar(b, a);
    EXPECT_EQ(x.p_value, y.p_value);
    EXPECT_EQ(x.b, y.c);
    if (x.exact) EXPECT_EQ(x.p_value, oracle::oracle_mcnemar_exact(x.b, x.c));
  }
}
