#pragma once

#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include "oreo/attention.hpp"
#include "oreo/backbone.hpp"
#include "oreo/datagen.hpp"
#include "oreo/losses.hpp"

namespace oreo {

struct ModelConfig {
  BackboneConfig backbone;
  int num_identities = 1;
  int num_attributes = 0;
  /// Occlusion-aware attention; when off the template is t^g itself.
  bool oan = true;

  void validate() const;
};

template <typename T>
struct ModelParams {
  BackboneParams<T> backbone;
  AttentionParams<T> attention;
  Affine<T> classifier;      // n x d
  Affine<T> attribute_head;  // K x d
};

/// Flat view of one parameter tensor, used by the optimizer, checkpoints and
/// gradient checks.
template <typename T>
struct ParamRef {
  std::string name;
  std::string group;  // backbone, h2, h3, fusion, classifier, attribute_head
  T* data = nullptr;
  size_t size = 0;
  std::vector<std::uint32_t> dims;
};

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

template <typename T>
ModelParams<T> zero_params(const ModelConfig& config);

/// Every tensor in a fixed order; names are stable across versions.
template <typename T>
std::vector<ParamRef<T>> list_params(const ModelConfig& config, ModelParams<T>& params);

template <typename T>
ModelParams<T> cast_params(const ModelConfig& config, const ModelParams<double>& params);

template <typename T>
struct TemplateBundle {
  Vec<T> global;
  Vec<T> local2;
  Vec<T> local3;
  Vec<T> t;
  Mask<T> a2;
  Mask<T> a3;
};

template <typename T>
struct SampleTape {
  BackboneTape<T> backbone;
  FeatureMaps<T> maps;
  LevelTape<T> level2;
  LevelTape<T> level3;
  AttentionOutput<T> out2;
  AttentionOutput<T> out3;
};

template <typename T>
FeatureMap<T> to_feature_map(const ImageSample& sample);

/// Full template generator G: backbone, both attention levels and fusion.
template <typename T>
TemplateBundle<T> forward_template(const ModelConfig& config, const ModelParams<T>& params, const FeatureMap<T>& image,
                                   std::type_identity_t<SampleTape<T>>* tape = nullptr,
                                   bool check_params = true);

/// Accumulates dL/dparams for one sample given dL/dt.
template <typename T>
void backward_template(const ModelConfig& config, const ModelParams<T>& params, const SampleTape<T>& tape,
                       const Vec<T>& d_template, ModelParams<T>& grads);

struct LossSettings {
  bool attributes = true;
  bool triplet = true;
  double margin = 0.2;
};

/// A training batch. With `pairs > 0` the first `pairs` images are the
/// non-occluded members and the next `pairs` the occluded members of
/// same-identity pairs.
struct Batch {
  std::vector<const ImageSample*> images;
  std::vector<int> classes;  // classifier index per image
  int pairs = 0;
};

struct BatchLoss {
  LossComponents parts;
  double total = 0.0;
  std::vector<MinedTriplet> mined;
};

/// Forward and (when `grads` is given) backward over a batch.
template <typename T>
BatchLoss batch_loss(const ModelConfig& config, const ModelParams<T>& params, const Batch& batch,
                     const LossSettings& settings, std::type_identity_t<ModelParams<T>>* grads);

}  // namespace oreo
