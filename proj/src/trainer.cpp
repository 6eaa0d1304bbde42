#include "oreo/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "oreo/rng.hpp"
#include "oreo/sampler.hpp"

namespace oreo {

void TrainConfig::validate() const {
  if (stl && !obs) throw std::invalid_argument("stl requires obs: the triplet loss is defined on balanced pairs");
  if (epochs < 1) throw std::invalid_argument("epochs must be positive");
  if (batch_pairs < 1) throw std::invalid_argument("batch_pairs must be positive");
  if (stl && batch_pairs < 2) throw std::invalid_argument("stl needs at least 2 pairs per batch");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (!(margin > 0.0)) throw std::invalid_argument("margin must be positive");
  if (!(grad_clip > 0.0)) throw std::invalid_argument("grad_clip must be positive");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be non-negative");
  if (triplet_warmup_epochs < 0) throw std::invalid_argument("triplet_warmup_epochs must be non-negative");
  if (lr_step_epoch < 0) throw std::invalid_argument("lr_step_epoch must be non-negative");
  if (!(lr_step_factor > 0.0)) throw std::invalid_argument("lr_step_factor must be positive");
}

int steps_per_epoch(const Dataset& dataset, const TrainConfig& config) {
  return std::max<int>(1, static_cast<int>(dataset.size() / (2 * static_cast<size_t>(config.batch_pairs))));
}

void write_loss_log(const std::filesystem::path& path, const std::vector<LossRecord>& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write loss log: " + path.string());
  out << "step,L_C,L_A,L_T,L\n";
  char line[160];
  for (const auto& r : log) {
    std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%.9g\n", r.step, r.identity, r.attributes, r.triplet,
                  r.total);
    out << line;
  }
}

std::vector<LossRecord> read_loss_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read loss log: " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "step,L_C,L_A,L_T,L") throw std::runtime_error("unexpected loss log header");
  std::vector<LossRecord> log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LossRecord r;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf", &r.step, &r.identity, &r.attributes, &r.triplet,
                    &r.total) != 5) {
      throw std::runtime_error("malformed loss log row: " + line);
    }
    log.push_back(r);
  }
  return log;
}

namespace {

struct Optimizer {
  ModelParams<float> velocity;
};

double global_norm(const std::vector<ParamRef<float>>& grads) {
  double sum = 0.0;
  for (const auto& g : grads) {
    for (size_t i = 0; i < g.size; ++i) sum += static_cast<double>(g.data[i]) * g.data[i];
  }
  return std::sqrt(sum);
}

}  // namespace

TrainResult train(const Dataset& dataset, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& run_dir,
                  const std::function<void(const LossRecord&)>& on_step) {
  config.validate();
  if (dataset.samples.empty()) throw std::invalid_argument("training set is empty");
  if (config.attr_loss && dataset.num_attributes() == 0) {
    throw std::invalid_argument("attr_loss requires attribute labels in the dataset");
  }

  // Identity labels -> dense classifier indices, in ascending label order.
  std::map<int, int> class_of;
  for (const auto& s : dataset.samples) class_of.emplace(s.identity, 0);
  int next = 0;
  for (auto& [label, cls] : class_of) cls = next++;

  TrainResult result;
  ModelConfig& model = result.model;
  model.backbone.channels = config.channels;
  model.backbone.embedding_dim = config.embedding_dim;
  model.backbone.image_size = dataset.image_size;
  model.num_identities = static_cast<int>(class_of.size());
  model.num_attributes = dataset.num_attributes();
  model.oan = config.oan;
  model.validate();

  result.params = init_params<float>(model, config.seed);
  Optimizer opt{zero_params<float>(model)};
  auto params_ref = list_params(model, result.params);
  auto velocity_ref = list_params(model, opt.velocity);

  std::optional<OcclusionBalancedSampler> sampler;
  if (config.obs) {
    sampler.emplace(dataset, derive_rng(config.seed, {0x0b5})());
    result.eligible_identities = sampler->eligible().size();
    result.ineligible_identities = sampler->ineligible().size();
  }
  const int per_epoch = steps_per_epoch(dataset, config);
  result.steps_per_epoch = per_epoch;
  const int p = config.batch_pairs;
  if (!config.obs && dataset.size() < static_cast<size_t>(2 * p)) {
    throw std::invalid_argument("dataset smaller than one batch");
  }

  if (run_dir) std::filesystem::create_directories(*run_dir);

  LossSettings settings{config.attr_loss, config.stl, config.margin};
  const float mu = static_cast<float>(config.momentum);
  std::vector<size_t> order(dataset.size());

  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // Hardest-negative mining on an untrained embedding collapses it to a
    // constant (every anchor then costs exactly m), so L_T joins late.
    settings.triplet = config.stl && epoch >= config.triplet_warmup_epochs;
    const bool stepped = config.lr_step_epoch > 0 && epoch >= config.lr_step_epoch;
    const float lr = static_cast<float>(config.learning_rate * (stepped ? config.lr_step_factor : 1.0));
    if (!config.obs) {
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng rng = derive_rng(config.seed, {0x0e, static_cast<std::uint64_t>(epoch)});
      shuffle(order.begin(), order.end(), rng);
    }
    for (int b = 0; b < per_epoch; ++b) {
      ++step;
      Batch batch;
      if (config.obs) {
        const auto pairs = sampler->next_batch(p);
        batch.pairs = p;
        for (const auto& pr : pairs) batch.images.push_back(&dataset.samples[pr.nonoccluded]);
        for (const auto& pr : pairs) batch.images.push_back(&dataset.samples[pr.occluded]);
      } else {
        for (int i = 0; i < 2 * p; ++i) batch.images.push_back(&dataset.samples[order[b * 2 * p + i]]);
      }
      for (const auto* img : batch.images) batch.classes.push_back(class_of.at(img->identity));

      ModelParams<float> grads = zero_params<float>(model);
      const BatchLoss loss = batch_loss(model, result.params, batch, settings, &grads);
      if (!std::isfinite(loss.total)) {
        throw DivergenceError(step, "loss became non-finite at step " + std::to_string(step));
      }
      auto grad_ref = list_params(model, grads);
      const double norm = global_norm(grad_ref);
      if (!std::isfinite(norm)) {
        throw DivergenceError(step, "gradient became non-finite at step " + std::to_string(step));
      }
      const float scale = norm > config.grad_clip ? static_cast<float>(config.grad_clip / norm) : 1.0f;
      for (size_t t = 0; t < grad_ref.size(); ++t) {
        float* w = params_ref[t].data;
        float* v = velocity_ref[t].data;
        const float* g = grad_ref[t].data;
        for (size_t i = 0; i < grad_ref[t].size; ++i) {
          v[i] = mu * v[i] + scale * g[i];
          w[i] -= lr * v[i];
        }
      }

      LossRecord rec{step, loss.parts.identity, loss.parts.use_attributes ? loss.parts.attributes : 0.0,
                     loss.parts.use_triplet ? loss.parts.triplet : 0.0, loss.total};
      result.log.push_back(rec);
      if (on_step) on_step(rec);
      if (run_dir && config.checkpoint_every > 0 && step % config.checkpoint_every == 0) {
        save_checkpoint(*run_dir / ("ckpt_" + std::to_string(step) + ".bin"), model, result.params);
      }
    }
  }

  if (run_dir) {
    write_loss_log(*run_dir / "loss.csv", result.log);
    save_checkpoint(*run_dir / "final.bin", model, result.params);
  }
  return result;
}

EmbeddingSet embed(const Checkpoint& checkpoint, const Dataset& dataset) {
  const ModelConfig& cfg = checkpoint.config;
  if (dataset.image_size != cfg.backbone.image_size) {
    throw ShapeError("dataset images are " + std::to_string(dataset.image_size) + " px but the checkpoint expects " +
                     std::to_string(cfg.backbone.image_size));
  }
  EmbeddingSet set;
  set.vectors.resize(static_cast<Eigen::Index>(dataset.size()), cfg.backbone.embedding_dim);
  set.records.reserve(dataset.size());
  for (size_t i = 0; i < dataset.size(); ++i) {
    const auto& s = dataset.samples[i];
    const auto bundle = forward_template<float>(cfg, checkpoint.params, to_feature_map<float>(s), nullptr, i == 0);
    set.vectors.row(static_cast<Eigen::Index>(i)) = bundle.t.transpose();
    set.records.push_back({s.identity, s.set_id, s.occluded});
  }
  return set;
}

}  // namespace oreo
