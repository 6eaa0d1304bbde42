#include <gtest/gtest.h>

#include <map>
#include <set>

#include "oreo/sampler.hpp"
#include "support.hpp"

using namespace oreo;

namespace {

Dataset toy(const std::vector<std::tuple<int, int, int>>& spec) {  // identity, #non-occluded, #occluded
  Dataset ds;
  ds.attribute_names = {"x"};
  ds.occlusion_attributes = {0};
  for (auto [id, n, o] : spec) {
    for (int i = 0; i < n + o; ++i) {
      ImageSample s;
      s.identity = id;
      s.occluded = i >= n;
      s.attributes = {static_cast<std::uint8_t>(s.occluded)};
      ds.samples.push_back(s);
    }
  }
  return ds;
}

}  // namespace

TEST(Sampler, PartitionsEligibleIdentities) {
  const auto ds = toy({{0, 2, 1}, {1, 1, 1}, {2, 3, 0}});
  OcclusionBalancedSampler s(ds, 1);
  ASSERT_EQ(s.eligible().size(), 2u);
  EXPECT_EQ(s.eligible()[0].identity, 0);
  EXPECT_EQ(s.eligible()[1].identity, 1);
  EXPECT_EQ(s.ineligible(), std::vector<int>{2});
}

TEST(Sampler, AllOccludedIsAnError) {
  EXPECT_THROW(OcclusionBalancedSampler(toy({{0, 0, 3}, {1, 0, 2}}), 1), SamplerError);
}

TEST(Sampler, SyntheticSetIsFullyEligible) {
  SynthSpec spec;
  spec.n_identities = 50;
  spec.images_per_identity = 10;
  spec.image_size = 16;
  const auto ds = generate_dataset(spec);
  std::map<int, std::pair<int, int>> recount;
  for (const auto& x : ds.samples) (x.occluded ? recount[x.identity].second : recount[x.identity].first) += 1;
  size_t expected = 0;
  for (const auto& [id, c] : recount) expected += c.first > 0 && c.second > 0;
  OcclusionBalancedSampler s(ds, 1);
  EXPECT_EQ(s.eligible().size(), expected);
  EXPECT_EQ(s.eligible().size(), 50u);
}

TEST(Sampler, TwoPairsOnTwoIdentities) {
  const auto ds = toy({{0, 2, 1}, {1, 1, 1}, {2, 3, 0}});
  OcclusionBalancedSampler s(ds, 5);
  for (int b = 0; b < 20; ++b) {
    const auto batch = s.next_batch(2);
    ASSERT_EQ(batch.size(), 2u);
    std::set<int> ids;
    for (const auto& p : batch) {
      ids.insert(p.identity);
      EXPECT_FALSE(ds.samples[p.nonoccluded].occluded);
      EXPECT_TRUE(ds.samples[p.occluded].occluded);
      EXPECT_EQ(ds.samples[p.nonoccluded].identity, p.identity);
      EXPECT_EQ(ds.samples[p.occluded].identity, p.identity);
    }
    EXPECT_EQ(ids, (std::set<int>{0, 1}));
  }
}

TEST(Sampler, BalancedBatchesAndEpochCoverage) {
  const auto ds = toy({{0, 3, 2}, {1, 4, 1}, {2, 2, 2}, {3, 5, 3}, {4, 1, 1}, {5, 2, 4}, {6, 3, 3}});
  OcclusionBalancedSampler s(ds, 9);
  // 7 eligible, P = 3: two batches per epoch, one identity dropped.
  for (int epoch = 0; epoch < 34; ++epoch) {
    std::set<int> seen;
    for (int b = 0; b < 2; ++b) {
      const auto batch = s.next_batch(3);
      EXPECT_EQ(s.epoch(), static_cast<std::uint64_t>(epoch));
      int occluded = 0, clear = 0;
      for (const auto& p : batch) {
        occluded += ds.samples[p.occluded].occluded;
        clear += !ds.samples[p.nonoccluded].occluded;
        EXPECT_TRUE(seen.insert(p.identity).second) << "identity repeated within an epoch";
      }
      EXPECT_EQ(occluded, 3);
      EXPECT_EQ(clear, 3);
    }
    EXPECT_EQ(seen.size(), 6u);
  }
}

TEST(Sampler, DeterministicPerSeed) {
  const auto ds = toy({{0, 3, 2}, {1, 4, 1}, {2, 2, 2}, {3, 5, 3}});
  OcclusionBalancedSampler a(ds, 3), b(ds, 3), c(ds, 4);
  bool differs = false;
  for (int i = 0; i < 50; ++i) {
    const auto x = a.next_batch(2), y = b.next_batch(2), z = c.next_batch(2);
    for (size_t k = 0; k < x.size(); ++k) {
      EXPECT_EQ(x[k].nonoccluded, y[k].nonoccluded);
      EXPECT_EQ(x[k].occluded, y[k].occluded);
      differs |= x[k].nonoccluded != z[k].nonoccluded || x[k].occluded != z[k].occluded;
    }
  }
  EXPECT_TRUE(differs);
}

TEST(Sampler, RejectsOversizedBatch) {
  OcclusionBalancedSampler s(toy({{0, 1, 1}, {1, 1, 1}}), 1);
  EXPECT_THROW(s.next_batch(3), SamplerError);
  EXPECT_THROW(s.next_batch(0), SamplerError);
}

TEST(Sampler, SelectionIsUniform) {
  std::vector<std::tuple<int, int, int>> spec;
  for (int id = 0; id < 10; ++id) spec.emplace_back(id, 4, 3);
  const auto ds = toy(spec);
  OcclusionBalancedSampler s(ds, 17);
  std::vector<double> per_identity(10, 0.0);
  std::vector<double> per_image(ds.size(), 0.0);
  for (int b = 0; b < 10000; ++b) {
    for (const auto& p : s.next_batch(3)) {
      per_identity[p.identity] += 1;
      per_image[p.nonoccluded] += 1;
      per_image[p.occluded] += 1;
    }
  }
  EXPECT_GT(oracle::chi_square_uniform_p(per_identity), 0.01);
  // Within one identity, each of its non-occluded (or occluded) images is
  // equally likely.
  for (int id = 0; id < 10; ++id) {
    std::vector<double> clear(per_image.begin() + id * 7, per_image.begin() + id * 7 + 4);
    std::vector<double> occ(per_image.begin() + id * 7 + 4, per_image.begin() + id * 7 + 7);
    EXPECT_GT(oracle::chi_square_uniform_p(clear), 0.001);
    EXPECT_GT(oracle::chi_square_uniform_p(occ), 0.001);
  }
}

TEST(ChiSquare, TailMatchesKnownQuantiles) {
  // 95th percentiles: dof 1 -> 3.841459, dof 9 -> 16.918978.
  EXPECT_NEAR(oracle::chi_square_sf(3.841459, 1), 0.05, 1e-6);
  EXPECT_NEAR(oracle::chi_square_sf(16.918978, 9), 0.05, 1e-6);
  EXPECT_NEAR(oracle::chi_square_sf(2.0, 2), std::exp(-1.0), 1e-12);
}
