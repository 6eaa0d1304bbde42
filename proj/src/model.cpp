#include "oreo/model.hpp"

#include <cmath>
#include <stdexcept>

namespace oreo {

void ModelConfig::validate() const {
  backbone.validate();
  if (num_identities < 1) throw std::invalid_argument("num_identities must be positive");
  if (num_attributes < 0) throw std::invalid_argument("num_attributes must be non-negative");
}

namespace {

template <typename T>
void fill_gaussian(Mat<T>& m, double stddev, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(stddev * normal01(rng));
}

template <typename T, typename M>
ParamRef<T> ref(std::string name, std::string group, M& tensor, std::vector<std::uint32_t> dims) {
  return {std::move(name), std::move(group), tensor.data(), static_cast<size_t>(tensor.size()), std::move(dims)};
}

std::uint32_t u32(Eigen::Index v) { return static_cast<std::uint32_t>(v); }

template <typename T>
void add_affine(std::vector<ParamRef<T>>& out, const std::string& name, const std::string& group, Affine<T>& a) {
  out.push_back(ref<T>(name + ".weight", group, a.weight, {u32(a.weight.rows()), u32(a.weight.cols())}));
  out.push_back(ref<T>(name + ".bias", group, a.bias, {u32(a.bias.size())}));
}

}  // namespace

template <typename T>
ModelParams<T> zero_params(const ModelConfig& config) {
  config.validate();
  const int d = config.backbone.embedding_dim;
  ModelParams<T> p;
  p.backbone = zero_backbone<T>(config.backbone);
  p.attention = zero_attention<T>(config.backbone);
  p.classifier = Affine<T>::zeros(config.num_identities, d);
  p.attribute_head = Affine<T>::zeros(config.num_attributes, d);
  return p;
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const int d = config.backbone.embedding_dim;
  ModelParams<T> p;
  // Separate streams so toggling one component never perturbs another's init.
  Rng rb = derive_rng(seed, {0xb0});
  Rng ra = derive_rng(seed, {0xa0});
  Rng rc = derive_rng(seed, {0xc0});
  p.backbone = init_backbone<T>(config.backbone, rb);
  p.attention = init_attention<T>(config.backbone, ra);
  p.classifier = Affine<T>::zeros(config.num_identities, d);
  fill_gaussian(p.classifier.weight, std::sqrt(1.0 / d), rc);
  p.attribute_head = Affine<T>::zeros(config.num_attributes, d);
  fill_gaussian(p.attribute_head.weight, std::sqrt(1.0 / d), rc);
  return p;
}

template <typename T>
std::vector<ParamRef<T>> list_params(const ModelConfig& config, ModelParams<T>& p) {
  std::vector<ParamRef<T>> out;
  int in = 1;
  for (int k = 0; k < 4; ++k) {
    auto& conv = p.backbone.conv[k];
    const std::string name = "backbone.conv" + std::to_string(k + 1);
    out.push_back(ref<T>(name + ".weight", "backbone", conv.weight,
                         {u32(conv.weight.rows()), static_cast<std::uint32_t>(in), 3u, 3u}));
    out.push_back(ref<T>(name + ".bias", "backbone", conv.bias, {u32(conv.bias.size())}));
    in = config.backbone.channels[k];
  }
  add_affine(out, "backbone.embed", "backbone", p.backbone.embed);
  add_affine(out, "attention.h3.project", "h3", p.attention.level3.project);
  add_affine(out, "attention.h3.hidden", "h3", p.attention.level3.hidden);
  add_affine(out, "attention.h3.output", "h3", p.attention.level3.output);
  add_affine(out, "attention.h2.project", "h2", p.attention.level2.project);
  add_affine(out, "attention.h2.hidden", "h2", p.attention.level2.hidden);
  add_affine(out, "attention.h2.output", "h2", p.attention.level2.output);
  add_affine(out, "attention.fuse", "fusion", p.attention.fuse);
  add_affine(out, "classifier", "classifier", p.classifier);
  add_affine(out, "attribute_head", "attribute_head", p.attribute_head);
  return out;
}

template <typename T>
ModelParams<T> cast_params(const ModelConfig& config, const ModelParams<double>& params) {
  ModelParams<T> out = zero_params<T>(config);
  auto src = list_params(config, const_cast<ModelParams<double>&>(params));
  auto dst = list_params(config, out);
  for (size_t i = 0; i < src.size(); ++i) {
    if (src[i].size != dst[i].size) throw ShapeError("cast_params: shape mismatch for " + src[i].name);
    for (size_t j = 0; j < src[i].size; ++j) dst[i].data[j] = static_cast<T>(src[i].data[j]);
  }
  return out;
}

template <typename T>
FeatureMap<T> to_feature_map(const ImageSample& sample) {
  // Per-image standardization; a flat image maps to all zeros.
  FeatureMap<T> m(1, sample.height, sample.width);
  double sum = 0.0, sq = 0.0;
  for (float v : sample.pixels) {
    sum += v;
    sq += static_cast<double>(v) * v;
  }
  const double n = static_cast<double>(sample.pixels.size());
  const double mean = n > 0 ? sum / n : 0.0;
  const double var = n > 0 ? std::max(0.0, sq / n - mean * mean) : 0.0;
  const double inv = var > 1e-12 ? 1.0 / std::sqrt(var) : 0.0;
  for (size_t i = 0; i < sample.pixels.size(); ++i) {
    m.data(0, static_cast<Eigen::Index>(i)) = static_cast<T>((sample.pixels[i] - mean) * inv);
  }
  return m;
}

template <typename T>
TemplateBundle<T> forward_template(const ModelConfig& config, const ModelParams<T>& params, const FeatureMap<T>& image,
                                   std::type_identity_t<SampleTape<T>>* tape, bool check_params) {
  SampleTape<T> local;
  SampleTape<T>& t = tape ? *tape : local;
  t.maps = forward_backbone(config.backbone, params.backbone, image, &t.backbone, check_params);

  TemplateBundle<T> out;
  out.global = t.maps.global;
  if (!config.oan) {
    out.t = out.global;
    return out;
  }
  t.out3 = attend_level3(out.global, t.maps.blocks[2], params.attention.level3, &t.level3);
  t.out2 = attend_level2(out.global, t.maps.blocks[1], params.attention.level2, &t.level2);
  out.local3 = t.out3.local;
  out.local2 = t.out2.local;
  out.a3 = t.out3.mask;
  out.a2 = t.out2.mask;
  out.t = aggregate(out.global, out.local2, out.local3, params.attention.fuse);
  return out;
}

template <typename T>
void backward_template(const ModelConfig& config, const ModelParams<T>& params, const SampleTape<T>& tape,
                       const Vec<T>& d_template, ModelParams<T>& grads) {
  std::array<Mat<T>, 4> d_blocks;
  Vec<T> d_global;
  if (!config.oan) {
    d_global = d_template;
  } else {
    const int d = config.backbone.embedding_dim;
    const int c2 = config.backbone.channels[1];
    const int c3 = config.backbone.channels[2];
    const Vec<T>& global = tape.maps.global;
    Vec<T> concat(d + c2 + c3);
    concat << global, tape.out2.local, tape.out3.local;
    grads.attention.fuse.weight.noalias() += d_template * concat.transpose();
    grads.attention.fuse.bias += d_template;
    const Vec<T> d_concat = params.attention.fuse.weight.transpose() * d_template;
    d_global = d_concat.head(d);
    const Vec<T> d_local2 = d_concat.segment(d, c2);
    const Vec<T> d_local3 = d_concat.tail(c3);

    d_blocks[2] = Mat<T>::Zero(c3, tape.maps.blocks[2].pixels());
    backward_attend(global, tape.maps.blocks[2], params.attention.level3, MaskUse::Direct, tape.level3, tape.out3,
                    d_local3, grads.attention.level3, d_blocks[2], d_global);
    d_blocks[1] = Mat<T>::Zero(c2, tape.maps.blocks[1].pixels());
    backward_attend(global, tape.maps.blocks[1], params.attention.level2, MaskUse::Complement, tape.level2, tape.out2,
                    d_local2, grads.attention.level2, d_blocks[1], d_global);
  }
  backward_backbone(config.backbone, params.backbone, tape.backbone, std::move(d_blocks), d_global, grads.backbone);
}

template <typename T>
BatchLoss batch_loss(const ModelConfig& config, const ModelParams<T>& params, const Batch& batch,
                     const LossSettings& settings, std::type_identity_t<ModelParams<T>>* grads) {
  const int m = static_cast<int>(batch.images.size());
  const int d = config.backbone.embedding_dim;
  if (m == 0) throw std::invalid_argument("batch_loss: empty batch");
  if (static_cast<int>(batch.classes.size()) != m) throw ShapeError("batch_loss: one class per image");
  if (settings.triplet && (batch.pairs < 2 || 2 * batch.pairs != m)) {
    throw std::invalid_argument("batch_loss: the triplet term needs a batch of >= 2 (non-occluded, occluded) pairs");
  }

  std::vector<SampleTape<T>> tapes(grads ? m : 0);
  Mat<T> templates(m, d);
  for (int i = 0; i < m; ++i) {
    const FeatureMap<T> image = to_feature_map<T>(*batch.images[i]);
    const auto bundle = forward_template(config, params, image, grads ? &tapes[i] : nullptr, i == 0);
    templates.row(i) = bundle.t.transpose();
  }

  BatchLoss result;
  Mat<T> d_templates = Mat<T>::Zero(m, d);

  const auto id_loss = loss_identity(templates, batch.classes, params.classifier, grads ? &grads->classifier : nullptr);
  result.parts.identity = static_cast<double>(id_loss.value);
  d_templates += id_loss.d_input;

  result.parts.use_attributes = settings.attributes && config.num_attributes > 0;
  if (result.parts.use_attributes) {
    const int k = config.num_attributes;
    Mat<T> labels(m, k);
    for (int i = 0; i < m; ++i) {
      const auto& attrs = batch.images[i]->attributes;
      if (static_cast<int>(attrs.size()) != k) throw ShapeError("batch_loss: attribute count mismatch");
      for (int a = 0; a < k; ++a) labels(i, a) = static_cast<T>(attrs[a]);
    }
    Mat<T> logits = templates * params.attribute_head.weight.transpose();
    logits.rowwise() += params.attribute_head.bias.transpose();
    const auto attr_loss = loss_attributes(logits, labels);
    result.parts.attributes = static_cast<double>(attr_loss.value);
    d_templates.noalias() += attr_loss.d_input * params.attribute_head.weight;
    if (grads) {
      grads->attribute_head.weight.noalias() += attr_loss.d_input.transpose() * templates;
      grads->attribute_head.bias += attr_loss.d_input.colwise().sum().transpose();
    }
  }

  result.parts.use_triplet = settings.triplet;
  if (settings.triplet) {
    const int p = batch.pairs;
    std::vector<int> ids(batch.classes.begin(), batch.classes.begin() + p);
    for (int i = 0; i < p; ++i) {
      if (batch.classes[p + i] != ids[i]) throw std::invalid_argument("batch_loss: pair members differ in identity");
    }
    const auto stl = loss_stl<T>(templates.topRows(p), templates.bottomRows(p), ids, static_cast<T>(settings.margin));
    result.parts.triplet = static_cast<double>(stl.value);
    result.mined = stl.mined;
    d_templates.topRows(p) += stl.d_nonoccluded;
    d_templates.bottomRows(p) += stl.d_occluded;
  }
  result.total = loss_total(result.parts);

  if (grads) {
    for (int i = 0; i < m; ++i) {
      backward_template(config, params, tapes[i], Vec<T>(d_templates.row(i).transpose()), *grads);
    }
  }
  return result;
}

#define OREO_INSTANTIATE(T)                                                                                     \
  template ModelParams<T> zero_params<T>(const ModelConfig&);                                                   \
  template ModelParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                                    \
  template std::vector<ParamRef<T>> list_params<T>(const ModelConfig&, ModelParams<T>&);                        \
  template ModelParams<T> cast_params<T>(const ModelConfig&, const ModelParams<double>&);                       \
  template FeatureMap<T> to_feature_map<T>(const ImageSample&);                                                 \
  template TemplateBundle<T> forward_template<T>(const ModelConfig&, const ModelParams<T>&,                     \
                                                 const FeatureMap<T>&, std::type_identity_t<SampleTape<T>>*, bool);                   \
  template void backward_template<T>(const ModelConfig&, const ModelParams<T>&, const SampleTape<T>&,           \
                                     const Vec<T>&, ModelParams<T>&);                                           \
  template BatchLoss batch_loss<T>(const ModelConfig&, const ModelParams<T>&, const Batch&, const LossSettings&, \
                                   std::type_identity_t<ModelParams<T>>*);

OREO_INSTANTIATE(float)
OREO_INSTANTIATE(double)
#undef OREO_INSTANTIATE

}  // namespace oreo
