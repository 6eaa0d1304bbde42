#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "oreo/datagen.hpp"
#include "oreo/image_io.hpp"

using namespace oreo;

namespace {

SynthSpec small_spec() {
  SynthSpec spec;
  spec.n_identities = 50;
  spec.images_per_identity = 10;
  spec.occluded_fraction = 0.4;
  spec.image_size = 32;
  spec.seed = 7;
  return spec;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("oreo_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

bool same_samples(const Dataset& a, const Dataset& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.samples[i];
    const auto& y = b.samples[i];
    if (x.pixels != y.pixels || x.identity != y.identity || x.attributes != y.attributes ||
        x.occluded != y.occluded || x.set_id != y.set_id)
      return false;
  }
  return true;
}

}  // namespace

TEST(Datagen, SameSeedGivesIdenticalBytes) {
  const auto a = generate_dataset(small_spec());
  const auto b = generate_dataset(small_spec());
  EXPECT_TRUE(same_samples(a, b));
  EXPECT_EQ(a.regions.size(), b.regions.size());
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.regions[i].occluder, b.regions[i].occluder);
}

TEST(Datagen, DifferentSeedChangesPixels) {
  auto spec = small_spec();
  const auto a = generate_dataset(spec);
  spec.seed = 8;
  const auto b = generate_dataset(spec);
  EXPECT_NE(a.samples[0].pixels, b.samples[0].pixels);
}

TEST(Datagen, ZeroOccludedFractionHasNoAttributes) {
  auto spec = small_spec();
  spec.occluded_fraction = 0.0;
  const auto ds = generate_dataset(spec);
  for (const auto& s : ds.samples) {
    EXPECT_FALSE(s.occluded);
    for (auto bit : s.attributes) EXPECT_EQ(bit, 0);
  }
}

TEST(Datagen, ShapesAndPixelRange) {
  const auto ds = generate_dataset(small_spec());
  ASSERT_EQ(ds.size(), 500u);
  EXPECT_EQ(ds.num_attributes(), 5);
  for (const auto& s : ds.samples) {
    ASSERT_EQ(s.pixels.size(), 32u * 32u);
    ASSERT_EQ(s.attributes.size(), 5u);
    for (float p : s.pixels) {
      ASSERT_GE(p, 0.0f);
      ASSERT_LE(p, 1.0f);
    }
  }
}

class CoverageAtSize : public ::testing::TestWithParam<int> {};

TEST_P(CoverageAtSize, FourOccludedPerIdentityWithBoundedCoverage) {
  auto spec = small_spec();
  spec.image_size = GetParam();
  const auto ds = generate_dataset(spec);
  std::map<int, int> occluded;
  double min_cov = 1.0, max_cov = 0.0;
  for (size_t i = 0; i < ds.size(); ++i) {
    const auto& s = ds.samples[i];
    const auto& r = ds.regions[i];
    // Without label noise the flag is the OR of the drawn occluders, and the
    // ground-truth mask is non-empty exactly for those images.
    size_t occ_pixels = 0, face_pixels = 0;
    for (size_t p = 0; p < r.face.size(); ++p) {
      face_pixels += r.face[p];
      occ_pixels += r.face[p] && r.occluder[p];
    }
    int bits = 0;
    for (auto b : s.attributes) bits += b;
    EXPECT_EQ(s.occluded, bits > 0);
    EXPECT_LE(bits, 1);
    if (!s.occluded) {
      EXPECT_EQ(occ_pixels, 0u);
      continue;
    }
    occluded[s.identity] += 1;
    const double cov = static_cast<double>(occ_pixels) / static_cast<double>(face_pixels);
    min_cov = std::min(min_cov, cov);
    max_cov = std::max(max_cov, cov);
  }
  ASSERT_EQ(occluded.size(), 50u);
  for (const auto& [id, n] : occluded) EXPECT_EQ(n, 4) << "identity " << id;
  EXPECT_GE(min_cov, 0.05);
  EXPECT_LE(max_cov, 0.40);
}

INSTANTIATE_TEST_SUITE_P(Datagen, CoverageAtSize, ::testing::Values(16, 32, 64));

TEST(Datagen, LabelNoiseFlipsBitsButNotPixels) {
  auto spec = small_spec();
  const auto clean = generate_dataset(spec);
  spec.label_noise = 0.2;
  const auto noisy = generate_dataset(spec);
  size_t flips = 0, total = 0;
  for (size_t i = 0; i < clean.size(); ++i) {
    EXPECT_EQ(clean.samples[i].pixels, noisy.samples[i].pixels);
    for (size_t a = 0; a < clean.samples[i].attributes.size(); ++a) {
      flips += clean.samples[i].attributes[a] != noisy.samples[i].attributes[a];
      ++total;
    }
  }
  const double rate = static_cast<double>(flips) / static_cast<double>(total);
  EXPECT_NEAR(rate, 0.2, 0.03);
}

TEST(Datagen, RejectsInvalidSpecs) {
  auto spec = small_spec();
  spec.occluded_fraction = 1.5;
  EXPECT_THROW(generate_dataset(spec), std::invalid_argument);
  spec = small_spec();
  spec.occluded_fraction = -0.1;
  EXPECT_THROW(generate_dataset(spec), std::invalid_argument);
  spec = small_spec();
  spec.image_size = 8;
  EXPECT_THROW(generate_dataset(spec), std::invalid_argument);
}

TEST(Datagen, IdentityGeometryHasEightParameters) {
  EXPECT_EQ(identity_geometry(1, 0).size(), static_cast<size_t>(kGeometrySize));
  EXPECT_NE(identity_geometry(1, 0), identity_geometry(1, 1));
  EXPECT_EQ(identity_geometry(1, 3), identity_geometry(1, 3));
}

TEST(Manifest, ThreeRowsFiveAttributes) {
  const auto dir = scratch_dir("manifest3");
  Raster8 img{16, 16, std::vector<std::uint8_t>(256, 100)};
  for (int i = 0; i < 3; ++i) write_pgm(dir / ("f" + std::to_string(i) + ".pgm"), img);
  std::ofstream(dir / "m.csv") << "path,identity,set_id,a,b,c,d,e\n"
                               << "f0.pgm,0,,0,0,0,0,0\n"
                               << "f1.pgm,0,3,1,0,0,0,0\n"
                               << "f2.pgm,1,,0,0,0,0,1\n";
  const auto ds = load_manifest(dir / "m.csv");
  ASSERT_EQ(ds.size(), 3u);
  for (const auto& s : ds.samples) EXPECT_EQ(s.attributes.size(), 5u);
  EXPECT_FALSE(ds.samples[0].occluded);
  EXPECT_TRUE(ds.samples[1].occluded);
  EXPECT_EQ(ds.samples[0].set_id, -1);
  EXPECT_EQ(ds.samples[1].set_id, 3);
  EXPECT_FLOAT_EQ(ds.samples[0].pixels[0], 100.0f / 255.0f);

  // Restricting the occlusion subset changes the derived flag only.
  const auto subset = load_manifest(dir / "m.csv", std::vector<int>{4});
  EXPECT_FALSE(subset.samples[1].occluded);
  EXPECT_TRUE(subset.samples[2].occluded);
}

TEST(Manifest, MissingImageNamesThePath) {
  const auto dir = scratch_dir("manifest_missing");
  std::ofstream(dir / "m.csv") << "path,identity,set_id,a\nnope.pgm,0,,0\n";
  try {
    load_manifest(dir / "m.csv");
    FAIL() << "expected DatasetError";
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("nope.pgm"), std::string::npos);
  }
}

TEST(Manifest, AttributeCountMismatchIsFatal) {
  const auto dir = scratch_dir("manifest_cols");
  write_pgm(dir / "f.pgm", Raster8{16, 16, std::vector<std::uint8_t>(256, 0)});
  std::ofstream(dir / "m.csv") << "path,identity,set_id,a,b\nf.pgm,0,,0\n";
  EXPECT_THROW(load_manifest(dir / "m.csv"), DatasetError);
}

TEST(Manifest, UndecodableImageIsRejected) {
  // Signature sniffing must reject garbage rather than misread it.
  const auto dir = scratch_dir("manifest_garbage");
  std::ofstream(dir / "f.png") << "not an image";
  std::ofstream(dir / "m.csv") << "path,identity,set_id,a\nf.png,0,,0\n";
  EXPECT_THROW(load_manifest(dir / "m.csv"), DatasetError);
}

TEST(Manifest, ExportReloadRoundTrip) {
  const auto ds = generate_dataset(small_spec());
  const auto dir = scratch_dir("roundtrip");
  const auto manifest = export_manifest(ds, dir);
  const auto back = load_manifest(manifest);
  EXPECT_TRUE(same_samples(ds, back));
  EXPECT_EQ(back.attribute_names, ds.attribute_names);
}

TEST(Split, OneImageToEachOutput) {
  Dataset ds;
  ds.image_size = 16;
  ds.attribute_names = {"x"};
  ds.occlusion_attributes = {0};
  auto add = [&](int id, bool attr) {
    ImageSample s;
    s.identity = id;
    s.attributes = {static_cast<std::uint8_t>(attr)};
    ds.samples.push_back(s);
  };
  add(0, false);
  add(0, false);
  add(0, true);
  add(1, false);
  add(1, false);
  add(1, true);
  add(2, true);
  add(2, true);
  const auto split = split_by_attribute(ds, 0, 1);
  ASSERT_EQ(split.gallery.size(), 2u);
  EXPECT_EQ(split.probe_with.size(), 2u);
  EXPECT_EQ(split.probe_without.size(), 2u);
  ASSERT_EQ(split.excluded_identities.size(), 1u);
  EXPECT_EQ(split.excluded_identities[0], 2);
  EXPECT_EQ(split.probe_with[0], 2u);
  EXPECT_NE(split.gallery[0], split.probe_without[0]);
}

TEST(Split, FewerThanTwoEligibleIsAnError) {
  Dataset ds;
  ds.attribute_names = {"x"};
  for (bool attr : {false, false, true}) {
    ImageSample s;
    s.identity = 0;
    s.attributes = {static_cast<std::uint8_t>(attr)};
    ds.samples.push_back(s);
  }
  EXPECT_THROW(split_by_attribute(ds, 0, 1), DatasetError);
  EXPECT_THROW(split_by_attribute(ds, 1, 1), std::invalid_argument);
}

TEST(Split, SyntheticGlassesMatchesLabelRecount) {
  const auto ds = generate_dataset(small_spec());
  const int attr = 0;  // glasses_bar
  ASSERT_EQ(ds.attribute_names[attr], "glasses_bar");
  std::map<int, std::pair<int, int>> counts;  // without, with
  for (const auto& s : ds.samples) (s.attributes[attr] ? counts[s.identity].second : counts[s.identity].first) += 1;
  size_t eligible = 0;
  for (const auto& [id, c] : counts) eligible += (c.first >= 2 && c.second >= 1);

  const auto split = split_by_attribute(ds, attr, 11);
  EXPECT_EQ(split.gallery.size(), eligible);
  EXPECT_EQ(split.probe_without.size(), eligible);
  EXPECT_EQ(split.probe_with.size(), eligible);
  EXPECT_EQ(split.excluded_identities.size(), counts.size() - eligible);

  std::set<size_t> seen;
  std::set<int> gallery_ids;
  for (size_t i : split.gallery) {
    EXPECT_EQ(ds.samples[i].attributes[attr], 0);
    gallery_ids.insert(ds.samples[i].identity);
    EXPECT_TRUE(seen.insert(i).second);
  }
  EXPECT_EQ(gallery_ids.size(), split.gallery.size());
  for (size_t i : split.probe_without) {
    EXPECT_EQ(ds.samples[i].attributes[attr], 0);
    EXPECT_TRUE(seen.insert(i).second);
    EXPECT_TRUE(gallery_ids.count(ds.samples[i].identity));
  }
  for (size_t i : split.probe_with) {
    EXPECT_EQ(ds.samples[i].attributes[attr], 1);
    EXPECT_TRUE(seen.insert(i).second);
    EXPECT_TRUE(gallery_ids.count(ds.samples[i].identity));
  }

  const auto again = split_by_attribute(ds, attr, 11);
  EXPECT_EQ(again.gallery, split.gallery);
  EXPECT_EQ(again.probe_with, split.probe_with);
}
