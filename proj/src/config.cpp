#include "oreo/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace oreo {

using nlohmann::json;

namespace {

// Walks one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown.
class Section {
 public:
  Section(const json& node, std::string where) : node_(node), where_(std::move(where)) {
    if (!node_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return node_.contains(key);
  }

  const json& at(const std::string& key) {
    seen_.insert(key);
    return node_.at(key);
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    const json& v = node_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("expected true or false");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("expected an integer");
        if (std::is_unsigned_v<T> && !v.is_number_unsigned()) throw ConfigError("expected a non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("expected a string");
      }
      out = v.get<T>();
    } catch (const ConfigError& e) {
      throw ConfigError(path(key) + ": " + e.what());
    } catch (const json::exception& e) {
      throw ConfigError(path(key) + ": " + e.what());
    }
  }

  template <typename T>
  void read_list(const std::string& key, std::vector<T>& out) {
    if (!has(key)) return;
    const json& v = node_.at(key);
    if (!v.is_array()) throw ConfigError(path(key) + ": expected an array");
    std::vector<T> items;
    for (const auto& item : v) {
      if constexpr (std::is_integral_v<T>) {
        if (!item.is_number_integer()) throw ConfigError(path(key) + ": expected integers");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!item.is_number()) throw ConfigError(path(key) + ": expected numbers");
      } else {
        if (!item.is_string()) throw ConfigError(path(key) + ": expected strings");
      }
      items.push_back(item.get<T>());
    }
    out = std::move(items);
  }

  void finish() const {
    for (const auto& [key, value] : node_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key '" + path(key) + "'");
    }
  }

 private:
  const json& node_;
  std::string where_;
  std::set<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

SynthSpec parse_synth(const json& node, const std::string& where) {
  Section s(node, where);
  SynthSpec spec;
  s.read("n_identities", spec.n_identities);
  s.read("images_per_identity", spec.images_per_identity);
  s.read("occluded_fraction", spec.occluded_fraction);
  s.read("image_size", spec.image_size);
  std::vector<std::string> kinds;
  s.read_list("occluder_kinds", kinds);
  if (s.has("occluder_kinds")) {
    spec.occluder_kinds.clear();
    for (const auto& k : kinds) {
      try {
        spec.occluder_kinds.push_back(occluder_from_name(k));
      } catch (const std::exception& e) {
        throw ConfigError(s.path("occluder_kinds") + ": " + e.what());
      }
    }
  }
  s.read("label_noise", spec.label_noise);
  s.read("seed", spec.seed);
  s.read("identity_offset", spec.identity_offset);
  s.finish();
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return spec;
}

DataSource parse_source(const json& node, const std::string& where, const std::filesystem::path& base) {
  Section s(node, where);
  DataSource src;
  if (s.has("synth")) src.synth = parse_synth(s.at("synth"), s.path("synth"));
  if (s.has("manifest")) {
    std::string m;
    s.read("manifest", m);
    src.manifest = resolve(base, m);
  }
  if (s.has("occlusion_attributes")) {
    std::vector<int> attrs;
    s.read_list("occlusion_attributes", attrs);
    src.occlusion_attributes = attrs;
  }
  s.finish();
  if (src.synth.has_value() == src.manifest.has_value()) {
    throw ConfigError(where + ": give exactly one of 'synth' or 'manifest'");
  }
  return src;
}

void parse_model(const json& node, TrainConfig& train) {
  Section s(node, "model");
  std::vector<int> channels;
  s.read_list("channels", channels);
  if (s.has("channels")) {
    if (channels.size() != 4) throw ConfigError("model.channels: expected 4 entries");
    std::copy(channels.begin(), channels.end(), train.channels.begin());
  }
  s.read("embedding_dim", train.embedding_dim);
  s.finish();
}

void parse_train(const json& node, TrainConfig& t) {
  Section s(node, "train");
  s.read("oan", t.oan);
  s.read("obs", t.obs);
  s.read("stl", t.stl);
  s.read("attr_loss", t.attr_loss);
  s.read("epochs", t.epochs);
  s.read("batch_pairs", t.batch_pairs);
  s.read("learning_rate", t.learning_rate);
  s.read("lr_step_epoch", t.lr_step_epoch);
  s.read("lr_step_factor", t.lr_step_factor);
  s.read("momentum", t.momentum);
  s.read("margin", t.margin);
  s.read("grad_clip", t.grad_clip);
  s.read("seed", t.seed);
  s.read("checkpoint_every", t.checkpoint_every);
  s.read("triplet_warmup_epochs", t.triplet_warmup_epochs);
  s.finish();
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
}

std::optional<std::filesystem::path> read_path(Section& s, const std::string& key, const std::filesystem::path& base) {
  if (!s.has(key)) return std::nullopt;
  std::string p;
  s.read(key, p);
  return resolve(base, p);
}

json source_json(const DataSource& src) {
  json j = json::object();
  if (src.synth) {
    const SynthSpec& sp = *src.synth;
    json kinds = json::array();
    for (auto k : sp.occluder_kinds) kinds.push_back(occluder_name(k));
    j["synth"] = {{"n_identities", sp.n_identities},
                  {"images_per_identity", sp.images_per_identity},
                  {"occluded_fraction", sp.occluded_fraction},
                  {"image_size", sp.image_size},
                  {"occluder_kinds", kinds},
                  {"label_noise", sp.label_noise},
                  {"seed", sp.seed},
                  {"identity_offset", sp.identity_offset}};
  }
  if (src.manifest) j["manifest"] = src.manifest->string();
  if (src.occlusion_attributes) j["occlusion_attributes"] = *src.occlusion_attributes;
  return j;
}

}  // namespace

Dataset DataSource::load() const {
  if (synth) {
    Dataset ds = generate_dataset(*synth);
    if (occlusion_attributes) {
      for (int a : *occlusion_attributes) {
        if (a < 0 || a >= ds.num_attributes()) throw ConfigError("occlusion attribute " + std::to_string(a) + " out of range");
      }
      ds.occlusion_attributes = *occlusion_attributes;
      refresh_occlusion_flags(ds);
    }
    return ds;
  }
  if (manifest) return load_manifest(*manifest, occlusion_attributes);
  throw ConfigError("data source is empty");
}

RunConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Section top(root, "");
  RunConfig cfg;
  if (top.has("data")) cfg.data = parse_source(top.at("data"), "data", base_dir);
  if (top.has("test_data")) cfg.test_data = parse_source(top.at("test_data"), "test_data", base_dir);
  if (top.has("model")) parse_model(top.at("model"), cfg.train);
  if (top.has("train")) parse_train(top.at("train"), cfg.train);
  top.read("deterministic", cfg.deterministic);

  if (top.has("embed")) {
    Section s(top.at("embed"), "embed");
    if (auto p = read_path(s, "checkpoint", base_dir)) cfg.embed.checkpoint = *p;
    s.finish();
  }
  if (top.has("eval")) {
    Section s(top.at("eval"), "eval");
    EvalSettings& e = cfg.eval;
    if (auto p = read_path(s, "embeddings", base_dir)) e.embeddings = *p;
    e.compare_embeddings = read_path(s, "compare_embeddings", base_dir);
    e.pairs = read_path(s, "pairs", base_dir);
    s.read("max_rank", e.max_rank);
    s.read_list("far_targets", e.far_targets);
    s.read_list("fpir_targets", e.fpir_targets);
    s.read("open_nonmated_fraction", e.open_nonmated_fraction);
    s.read("seed", e.seed);
    s.finish();
    if (e.max_rank < 1) throw ConfigError("eval.max_rank must be positive");
    if (!(e.open_nonmated_fraction > 0.0 && e.open_nonmated_fraction < 1.0)) {
      throw ConfigError("eval.open_nonmated_fraction must lie in (0, 1)");
    }
  }
  if (top.has("analyze")) {
    Section s(top.at("analyze"), "analyze");
    AnalyzeSettings& a = cfg.analyze;
    if (auto p = read_path(s, "embeddings", base_dir)) a.embeddings = *p;
    s.read_list("attributes", a.attributes);
    s.read("seed", a.seed);
    s.read("max_rank", a.max_rank);
    s.finish();
    if (a.max_rank < 1) throw ConfigError("analyze.max_rank must be positive");
  }
  if (top.has("render")) {
    Section s(top.at("render"), "render");
    RenderSettings& r = cfg.render;
    if (auto p = read_path(s, "checkpoint", base_dir)) r.checkpoint = *p;
    std::vector<std::string> images;
    s.read_list("images", images);
    for (const auto& im : images) r.images.push_back(resolve(base_dir, im));
    s.read("normalize", r.normalize);
    s.finish();
  }
  top.finish();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), std::filesystem::absolute(path).parent_path());
}

std::string dump_config(const RunConfig& c) {
  // Unset paths are left out so the dump parses back to the same config.
  auto put_path = [](json& obj, const char* key, const std::filesystem::path& p) {
    if (!p.empty()) obj[key] = p.string();
  };
  json j;
  if (c.data) j["data"] = source_json(*c.data);
  if (c.test_data) j["test_data"] = source_json(*c.test_data);
  const TrainConfig& t = c.train;
  j["model"] = {{"channels", t.channels}, {"embedding_dim", t.embedding_dim}};
  j["train"] = {{"oan", t.oan},
                {"obs", t.obs},
                {"stl", t.stl},
                {"attr_loss", t.attr_loss},
                {"epochs", t.epochs},
                {"batch_pairs", t.batch_pairs},
                {"learning_rate", t.learning_rate},
                {"lr_step_epoch", t.lr_step_epoch},
                {"lr_step_factor", t.lr_step_factor},
                {"momentum", t.momentum},
                {"margin", t.margin},
                {"grad_clip", t.grad_clip},
                {"seed", t.seed},
                {"checkpoint_every", t.checkpoint_every},
                {"triplet_warmup_epochs", t.triplet_warmup_epochs}};
  j["deterministic"] = c.deterministic;
  j["embed"] = json::object();
  put_path(j["embed"], "checkpoint", c.embed.checkpoint);
  json ev = {{"max_rank", c.eval.max_rank},
             {"far_targets", c.eval.far_targets},
             {"fpir_targets", c.eval.fpir_targets},
             {"open_nonmated_fraction", c.eval.open_nonmated_fraction},
             {"seed", c.eval.seed}};
  put_path(ev, "embeddings", c.eval.embeddings);
  if (c.eval.compare_embeddings) ev["compare_embeddings"] = c.eval.compare_embeddings->string();
  if (c.eval.pairs) ev["pairs"] = c.eval.pairs->string();
  j["eval"] = ev;
  j["analyze"] = {{"attributes", c.analyze.attributes},
                  {"seed", c.analyze.seed},
                  {"max_rank", c.analyze.max_rank}};
  put_path(j["analyze"], "embeddings", c.analyze.embeddings);
  json images = json::array();
  for (const auto& p : c.render.images) images.push_back(p.string());
  j["render"] = {{"images", images}, {"normalize", c.render.normalize}};
  put_path(j["render"], "checkpoint", c.render.checkpoint);
  return j.dump(2) + "\n";
}

}  // namespace oreo
