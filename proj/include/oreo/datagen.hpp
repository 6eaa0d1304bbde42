#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace oreo {

/// Grayscale face image with its identity and occlusion attribute labels.
struct ImageSample {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // row-major, values in [0, 1]
  int identity = 0;
  std::vector<std::uint8_t> attributes;  // one bit per attribute, K entries
  bool occluded = false;
  int set_id = -1;  // -1 when the sample belongs to no media set
};

/// Ground-truth pixel masks, only available for synthetic data.
struct RegionMasks {
  std::vector<std::uint8_t> face;
  std::vector<std::uint8_t> occluder;
};

struct Dataset {
  int image_size = 0;
  std::vector<std::string> attribute_names;
  /// Attribute indices whose presence marks a sample as occluded.
  std::vector<int> occlusion_attributes;
  std::vector<ImageSample> samples;
  /// Parallel to samples for synthetic sets; empty for loaded manifests.
  std::vector<RegionMasks> regions;

  int num_attributes() const { return static_cast<int>(attribute_names.size()); }
  size_t size() const { return samples.size(); }
};

enum class OccluderKind { GlassesBar, HatBar, ChinPatch, SidePatch, MouthPatch };

const std::vector<OccluderKind>& all_occluder_kinds();
std::string occluder_name(OccluderKind kind);
OccluderKind occluder_from_name(const std::string& name);

struct SynthSpec {
  int n_identities = 50;
  int images_per_identity = 10;
  double occluded_fraction = 0.4;
  int image_size = 64;
  std::vector<OccluderKind> occluder_kinds = all_occluder_kinds();
  double label_noise = 0.0;
  std::uint64_t seed = 1;
  /// Added to every identity label; lets disjoint test populations share a
  /// spec without colliding with training labels.
  int identity_offset = 0;

  void validate() const;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Number of generator geometry parameters per identity.
inline constexpr int kGeometrySize = 8;

/// Per-identity face geometry (fractions of the image side): eye half-spacing,
/// eye radius, eye height, nose length, nose width, mouth half-width, face
/// half-width, face half-height.
std::vector<double> identity_geometry(std::uint64_t seed, int identity);

Dataset generate_dataset(const SynthSpec& spec);

/// Recomputes the occluded flag of every sample from its attribute bits.
void refresh_occlusion_flags(Dataset& dataset);

/// Loads `path,identity,set_id,attr_0,...,attr_{K-1}` rows; image paths are
/// resolved relative to the manifest's directory. When no occlusion subset is
/// given every attribute counts as an occlusion.
Dataset load_manifest(const std::filesystem::path& manifest,
                      std::optional<std::vector<int>> occlusion_attributes = std::nullopt);

/// Writes `dir/manifest.csv` plus one PGM per sample under `dir/images/`.
std::filesystem::path export_manifest(const Dataset& dataset, const std::filesystem::path& dir);

struct AttributeSplit {
  int attribute = 0;
  std::vector<size_t> gallery;
  std::vector<size_t> probe_with;
  std::vector<size_t> probe_without;
  std::vector<int> excluded_identities;
};

/// Single-image-per-identity gallery of attribute-free images, plus one probe
/// with and one probe without the attribute for every eligible identity.
AttributeSplit split_by_attribute(const Dataset& dataset, int attribute, std::uint64_t seed);

}  // namespace oreo
