#include "oreo/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "oreo/attention.hpp"
#include "oreo/image_io.hpp"
#include "oreo/rng.hpp"
#include "oreo/sampler.hpp"

namespace oreo {

using nlohmann::json;

SetProtocol build_set_protocol(const EmbeddingSet& set) {
  if (set.count() == 0) throw ProtocolError("embedding set is empty");
  // (identity, set key) -> rows; singleton rows get a key below every set_id
  // so ordering stays stable.
  std::map<int, std::map<long long, std::vector<size_t>>> by_identity;
  for (size_t i = 0; i < set.records.size(); ++i) {
    const auto& r = set.records[i];
    const long long key = r.set_id >= 0 ? r.set_id : -1 - static_cast<long long>(i);
    by_identity[r.identity][key].push_back(i);
  }
  auto pooled = [&](const std::vector<size_t>& rows) {
    std::vector<Vec<double>> members;
    for (size_t row : rows) members.push_back(set.vectors.row(static_cast<Eigen::Index>(row)).transpose().cast<double>());
    return pool_set(members);
  };
  std::vector<Vec<double>> g, p;
  SetProtocol proto;
  for (const auto& [identity, sets] : by_identity) {
    // Singleton keys are negative and sort first; prefer a real set for the
    // gallery when one exists, otherwise the earliest image.
    std::vector<const std::vector<size_t>*> ordered;
    for (const auto& [key, rows] : sets) {
      if (key >= 0) ordered.push_back(&rows);
    }
    std::vector<std::pair<size_t, const std::vector<size_t>*>> singles;
    for (const auto& [key, rows] : sets) {
      if (key < 0) singles.emplace_back(rows.front(), &rows);
    }
    std::sort(singles.begin(), singles.end());
    for (const auto& s : singles) ordered.push_back(s.second);
    g.push_back(pooled(*ordered.front()));
    proto.gallery.identities.push_back(identity);
    for (size_t k = 1; k < ordered.size(); ++k) {
      p.push_back(pooled(*ordered[k]));
      proto.probes.identities.push_back(identity);
    }
  }
  auto stack = [](const std::vector<Vec<double>>& rows, Eigen::Index dim) {
    Mat<double> m(static_cast<Eigen::Index>(rows.size()), dim);
    for (size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    return m;
  };
  proto.gallery.vectors = stack(g, set.vectors.cols());
  proto.probes.vectors = stack(p, set.vectors.cols());
  return proto;
}

namespace {

std::vector<bool> rank1_hits(const Mat<double>& scores, const SetProtocol& proto) {
  const auto ranks = mated_ranks(scores, proto.gallery.identities, proto.probes.identities);
  std::vector<bool> hits(ranks.size());
  for (size_t i = 0; i < ranks.size(); ++i) hits[i] = ranks[i] == 1;
  return hits;
}

void require_aligned(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.count() != b.count()) throw ProtocolError("compared embedding files differ in row count");
  for (size_t i = 0; i < a.records.size(); ++i) {
    if (a.records[i].identity != b.records[i].identity || a.records[i].set_id != b.records[i].set_id) {
      throw ProtocolError("compared embedding files disagree on row " + std::to_string(i));
    }
  }
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

MetricsReport evaluate(const EmbeddingSet& set, const EvalSettings& settings,
                       const std::vector<std::pair<size_t, size_t>>* pairs, const EmbeddingSet* compare) {
  const SetProtocol proto = build_set_protocol(set);
  if (proto.probes.size() == 0) throw ProtocolError("no probe sets: every identity has a single set");
  MetricsReport report;
  report.gallery_size = proto.gallery.size();
  report.probe_count = proto.probes.size();

  const Mat<double> scores = score_matrix(proto.gallery, proto.probes);
  const int max_rank = std::min<int>(settings.max_rank, static_cast<int>(proto.gallery.size()));
  report.cmc = cmc_from_scores(scores, proto.gallery.identities, proto.probes.identities, max_rank);
  report.rank1 = report.cmc.front();
  report.probe_correct = rank1_hits(scores, proto);

  // Verification.
  std::vector<double> pair_scores;
  std::vector<bool> genuine;
  if (pairs) {
    for (const auto& [a, b] : *pairs) {
      if (a >= set.count() || b >= set.count()) {
        throw ProtocolError("pair (" + std::to_string(a) + "," + std::to_string(b) + ") is out of range");
      }
      pair_scores.push_back(similarity(set.vectors.row(static_cast<Eigen::Index>(a)).transpose().cast<double>(),
                                       set.vectors.row(static_cast<Eigen::Index>(b)).transpose().cast<double>()));
      genuine.push_back(set.records[a].identity == set.records[b].identity);
    }
  } else {
    for (Eigen::Index p = 0; p < scores.rows(); ++p) {
      for (Eigen::Index g = 0; g < scores.cols(); ++g) {
        pair_scores.push_back(scores(p, g));
        genuine.push_back(proto.probes.identities[p] == proto.gallery.identities[g]);
      }
    }
  }
  report.pair_count = pair_scores.size();
  report.roc = roc_verification(pair_scores, genuine);
  for (double target : settings.far_targets) report.tar_at_far.emplace_back(target, tar_at_far(report.roc, target));

  // Open set: withhold the gallery entry of a seeded share of the probed
  // identities so their probes become non-mated.
  std::vector<int> probed(proto.probes.identities.begin(), proto.probes.identities.end());
  std::sort(probed.begin(), probed.end());
  probed.erase(std::unique(probed.begin(), probed.end()), probed.end());
  Rng rng = derive_rng(settings.seed, {0x09e});
  shuffle(probed.begin(), probed.end(), rng);
  const size_t n_out = std::clamp<size_t>(
      static_cast<size_t>(std::lround(settings.open_nonmated_fraction * static_cast<double>(probed.size()))), 1,
      probed.size());
  std::vector<int> withheld(probed.begin(), probed.begin() + static_cast<std::ptrdiff_t>(n_out));
  std::sort(withheld.begin(), withheld.end());
  std::vector<Eigen::Index> keep;
  std::vector<int> open_ids;
  for (size_t g = 0; g < proto.gallery.size(); ++g) {
    if (!std::binary_search(withheld.begin(), withheld.end(), proto.gallery.identities[g])) {
      keep.push_back(static_cast<Eigen::Index>(g));
      open_ids.push_back(proto.gallery.identities[g]);
    }
  }
  if (keep.empty()) throw ProtocolError("open-set protocol left the gallery empty");
  Mat<double> open_scores(scores.rows(), static_cast<Eigen::Index>(keep.size()));
  for (size_t k = 0; k < keep.size(); ++k) open_scores.col(static_cast<Eigen::Index>(k)) = scores.col(keep[k]);
  const OpenSetCurve curve = open_set_from_scores(open_scores, open_ids, proto.probes.identities);
  for (int id : proto.probes.identities) {
    if (std::binary_search(withheld.begin(), withheld.end(), id)) ++report.nonmated_probes;
  }
  for (double target : settings.fpir_targets) report.tpir.emplace_back(target, tpir_at_fpir(curve, target));

  if (compare) {
    require_aligned(set, *compare);
    const SetProtocol other = build_set_protocol(*compare);
    report.mcnemar = mcnemar(rank1_hits(score_matrix(other.gallery, other.probes), other), report.probe_correct);
  }
  return report;
}

std::string report_json(const MetricsReport& r) {
  json j;
  j["protocol"] = {{"gallery", r.gallery_size},
                   {"probes", r.probe_count},
                   {"pairs", r.pair_count},
                   {"nonmated_probes", r.nonmated_probes}};
  json cmc = json::array();
  for (size_t k = 0; k < r.cmc.size(); ++k) cmc.push_back({{"rank", k + 1}, {"rate", r.cmc[k]}});
  j["cmc"] = cmc;
  json roc = json::array();
  for (const auto& pt : r.roc) roc.push_back({{"far", pt.far}, {"tar", pt.tar}, {"threshold", number_or_null(pt.threshold)}});
  json at = json::array();
  for (const auto& [target, pt] : r.tar_at_far) {
    at.push_back({{"far_target", target}, {"far", pt.far}, {"tar", pt.tar}, {"threshold", number_or_null(pt.threshold)}});
  }
  j["roc"] = {{"curve", roc}, {"tar_at_far", at}};
  json tpir = json::array();
  for (const auto& [target, pt] : r.tpir) {
    tpir.push_back(
        {{"fpir_target", target}, {"fpir", pt.fpir}, {"tpir", pt.tpir}, {"threshold", number_or_null(pt.threshold)}});
  }
  j["tpir"] = tpir;
  j["rank1"] = r.rank1;
  j["adp"] = r.adp ? json(*r.adp) : json(nullptr);
  if (r.mcnemar) {
    const auto& m = *r.mcnemar;
    j["mcnemar"] = {{"b", m.b}, {"c", m.c}, {"statistic", m.statistic}, {"p", m.p_value}, {"exact", m.exact}};
  } else {
    j["mcnemar"] = nullptr;
  }
  return j.dump(2) + "\n";
}

std::vector<std::pair<size_t, size_t>> read_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ProtocolError("cannot open pair list " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<std::pair<size_t, size_t>> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    unsigned long long a = 0, b = 0;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%llu,%llu%c", &a, &b, &tail) < 2 || (tail && tail != '\r')) {
      throw ProtocolError(path.string() + ":" + std::to_string(row) + ": expected 'a,b'");
    }
    out.emplace_back(a, b);
  }
  if (out.empty()) throw ProtocolError("pair list " + path.string() + " is empty");
  return out;
}

std::vector<std::pair<std::string, TrainConfig>> ablation_grid(const TrainConfig& base) {
  auto with = [&](bool oan, bool obs, bool stl) {
    TrainConfig c = base;
    c.oan = oan;
    c.attr_loss = oan;
    c.obs = obs;
    c.stl = stl;
    return c;
  };
  return {{"baseline", with(false, false, false)},
          {"+OAN", with(true, false, false)},
          {"+OBS", with(false, true, false)},
          {"+OBS+STL", with(false, true, true)},
          {"+OAN+OBS+STL", with(true, true, true)}};
}

ImpactReport analyze_embeddings(const Dataset& dataset, const EmbeddingSet& set, const AnalyzeSettings& settings) {
  if (set.count() != dataset.size()) {
    throw ProtocolError("embeddings have " + std::to_string(set.count()) + " rows but the dataset has " +
                        std::to_string(dataset.size()) + " images");
  }
  std::vector<int> attrs = settings.attributes.empty() ? dataset.occlusion_attributes : settings.attributes;
  for (int a : attrs) {
    if (a < 0 || a >= dataset.num_attributes()) throw ProtocolError("attribute " + std::to_string(a) + " out of range");
  }
  return attribute_impact_analysis(dataset, set.vectors.cast<double>(), attrs, settings.seed, settings.max_rank);
}

std::vector<bool> occluded_probe_hits(const ImpactReport& report) {
  std::vector<bool> hits;
  for (const auto& a : report.attributes) hits.insert(hits.end(), a.correct_with.begin(), a.correct_with.end());
  return hits;
}

std::vector<AblationRow> run_ablation(const Dataset& train_set, const Dataset& test_set, const TrainConfig& base,
                                      const EvalSettings& eval, const AnalyzeSettings& analyze,
                                      const std::function<void(const std::string&)>& progress) {
  std::vector<AblationRow> rows;
  for (const auto& [name, cfg] : ablation_grid(base)) {
    if (progress) progress(name);
    const TrainResult trained = train(train_set, cfg);
    const EmbeddingSet emb = embed(Checkpoint{trained.model, trained.params}, test_set);
    AblationRow row{name, cfg, evaluate(emb, eval), analyze_embeddings(test_set, emb, analyze)};
    row.report.adp = row.impact.adp;
    if (!rows.empty()) row.report.mcnemar = mcnemar(occluded_probe_hits(rows.front().impact), occluded_probe_hits(row.impact));
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows,
                        const std::vector<double>& far_targets) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "row,oan,obs,stl,attr_loss";
  for (double t : far_targets) {
    char head[48];
    std::snprintf(head, sizeof(head), ",tar@far=%g", t);
    out << head;
  }
  out << ",rank1,rank1_occluded,adp,mcnemar_p\n";
  for (const auto& r : rows) {
    out << r.name << ',' << r.config.oan << ',' << r.config.obs << ',' << r.config.stl << ',' << r.config.attr_loss;
    char cell[64];
    for (const auto& [target, pt] : r.report.tar_at_far) {
      std::snprintf(cell, sizeof(cell), ",%.6f", pt.tar);
      out << cell;
    }
    std::snprintf(cell, sizeof(cell), ",%.6f,%.6f,%.4f,", r.report.rank1, r.impact.mean_rank1_with() / 100.0,
                  r.impact.adp);
    out << cell;
    if (r.report.mcnemar) {
      std::snprintf(cell, sizeof(cell), "%.6g", r.report.mcnemar->p_value);
      out << cell;
    }
    out << '\n';
  }
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  // Written beside the target then renamed, so a failure leaves no partial file.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("cannot write " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Dataset require_data(const RunConfig& cfg, const char* command) {
  if (!cfg.data) throw ConfigError(std::string(command) + " needs a 'data' section");
  return cfg.data->load();
}

void need_path(const std::filesystem::path& p, const char* key) {
  if (p.empty()) throw ConfigError(std::string(key) + " is not set");
}

ImageSample sample_from_raster(const Raster8& r) {
  ImageSample s;
  s.height = r.height;
  s.width = r.width;
  s.pixels.resize(r.pixels.size());
  for (size_t i = 0; i < r.pixels.size(); ++i) s.pixels[i] = static_cast<float>(r.pixels[i]) / 255.0f;
  return s;
}

int cmd_synth(RunConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  if (!cfg.data || !cfg.data->synth) throw ConfigError("synth needs data.synth");
  if (opt.seed) cfg.data->synth->seed = *opt.seed;
  const Dataset ds = cfg.data->load();
  const auto manifest = export_manifest(ds, opt.out);
  size_t occluded = 0;
  for (const auto& s : ds.samples) occluded += s.occluded;
  log << "wrote " << ds.size() << " images (" << occluded << " occluded) and " << manifest.string() << "\n";
  return 0;
}

int cmd_train(RunConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  if (opt.seed) cfg.train.seed = *opt.seed;
  const Dataset ds = require_data(cfg, "train");
  std::filesystem::create_directories(opt.out);
  write_text(opt.out / "config.json", dump_config(cfg));
  const TrainResult r = train(ds, cfg.train, opt.out);
  const LossRecord& last = r.log.back();
  char line[160];
  std::snprintf(line, sizeof(line), "trained %zu steps; final L=%.4f (L_C %.4f, L_A %.4f, L_T %.4f)\n", r.log.size(),
                last.total, last.identity, last.attributes, last.triplet);
  log << line;
  return 0;
}

int cmd_embed(RunConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  need_path(cfg.embed.checkpoint, "embed.checkpoint");
  const Checkpoint ck = load_checkpoint(cfg.embed.checkpoint);
  const Dataset ds = require_data(cfg, "embed");
  const EmbeddingSet set = embed(ck, ds);
  std::filesystem::create_directories(opt.out);
  const auto path = opt.out / "embeddings.bin";
  save_embeddings(path, set);
  log << "wrote " << set.count() << " embeddings of dimension " << set.vectors.cols() << " to " << path.string()
      << "\n";
  return 0;
}

int cmd_eval(RunConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  if (opt.seed) cfg.eval.seed = *opt.seed;
  need_path(cfg.eval.embeddings, "eval.embeddings");
  const EmbeddingSet set = load_embeddings(cfg.eval.embeddings);
  std::optional<EmbeddingSet> other;
  if (cfg.eval.compare_embeddings) other = load_embeddings(*cfg.eval.compare_embeddings);
  std::optional<std::vector<std::pair<size_t, size_t>>> pairs;
  if (cfg.eval.pairs) pairs = read_pairs(*cfg.eval.pairs);
  MetricsReport report = evaluate(set, cfg.eval, pairs ? &*pairs : nullptr, other ? &*other : nullptr);
  if (cfg.data) {
    const Dataset ds = cfg.data->load();
    report.adp = analyze_embeddings(ds, set, cfg.analyze).adp;
  }
  std::filesystem::create_directories(opt.out);
  write_text(opt.out / "report.json", report_json(report));
  char line[128];
  std::snprintf(line, sizeof(line), "rank-1 %.4f over %zu probes; report in ", report.rank1, report.probe_count);
  log << line << (opt.out / "report.json").string() << "\n";
  return 0;
}

int cmd_analyze(RunConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  if (opt.seed) cfg.analyze.seed = *opt.seed;
  need_path(cfg.analyze.embeddings, "analyze.embeddings");
  const EmbeddingSet set = load_embeddings(cfg.analyze.embeddings);
  const Dataset ds = require_data(cfg, "analyze");
  const ImpactReport rep = analyze_embeddings(ds, set, cfg.analyze);
  std::filesystem::create_directories(opt.out);
  json j;
  json attrs = json::array();
  for (const auto& a : rep.attributes) {
    write_impact_csv(opt.out / ("cmc_" + a.name + ".csv"), a);
    attrs.push_back({{"attribute", a.name},
                     {"identities", a.identities},
                     {"excluded_identities", a.excluded_identities},
                     {"rank1_without", a.rank1_without()},
                     {"rank1_with", a.rank1_with()}});
  }
  j["attributes"] = attrs;
  j["adp"] = rep.adp;
  write_text(opt.out / "analysis.json", j.dump(2) + "\n");
  char line[96];
  std::snprintf(line, sizeof(line), "ADP %.2f over %zu attributes\n", rep.adp, rep.attributes.size());
  log << line;
  return 0;
}

int cmd_ablate(RunConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  if (opt.seed) cfg.train.seed = *opt.seed;
  const Dataset train_set = require_data(cfg, "ablate");
  const Dataset test_set = cfg.test_data ? cfg.test_data->load() : train_set;
  std::filesystem::create_directories(opt.out);
  write_text(opt.out / "config.json", dump_config(cfg));
  const auto rows = run_ablation(train_set, test_set, cfg.train, cfg.eval, cfg.analyze,
                                 [&](const std::string& name) { log << "training " << name << "\n" << std::flush; });
  json all = json::array();
  for (const auto& r : rows) {
    json cell = json::parse(report_json(r.report));
    cell["row"] = r.name;
    cell["toggles"] = {{"oan", r.config.oan}, {"obs", r.config.obs}, {"stl", r.config.stl}, {"attr_loss", r.config.attr_loss}};
    cell["rank1_occluded"] = r.impact.mean_rank1_with() / 100.0;
    all.push_back(cell);
  }
  write_text(opt.out / "ablation.json", all.dump(2) + "\n");
  write_ablation_csv(opt.out / "ablation.csv", rows, cfg.eval.far_targets);
  for (const auto& r : rows) {
    char line[128];
    std::snprintf(line, sizeof(line), "%-14s rank-1 %.4f  ADP %.2f\n", r.name.c_str(), r.report.rank1, r.impact.adp);
    log << line;
  }
  return 0;
}

int cmd_render(RunConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  need_path(cfg.render.checkpoint, "render.checkpoint");
  if (cfg.render.images.empty()) throw ConfigError("render.images is empty");
  const Checkpoint ck = load_checkpoint(cfg.render.checkpoint);
  if (!ck.config.oan) {
    throw ProtocolError("checkpoint was trained without occlusion-aware attention; it has no masks to render");
  }
  const int size = ck.config.backbone.image_size;
  std::filesystem::create_directories(opt.out);
  for (const auto& path : cfg.render.images) {
    const ImageSample s = sample_from_raster(read_image(path));
    const auto bundle = forward_template<float>(ck.config, ck.params, to_feature_map<float>(s));
    const std::string stem = path.stem().string();
    auto to_double = [](const Mask<float>& m) {
      Mask<double> d{m.height, m.width, m.values.cast<double>()};
      return d;
    };
    write_pgm(opt.out / (stem + "_A2.pgm"), render_attention(to_double(bundle.a2), size, {cfg.render.normalize}));
    write_pgm(opt.out / (stem + "_A3.pgm"), render_attention(to_double(bundle.a3), size, {cfg.render.normalize}));
  }
  log << "rendered " << 2 * cfg.render.images.size() << " attention maps\n";
  return 0;
}

}  // namespace

int run_command(const std::string& command, const CommandOptions& options, std::ostream& log, std::ostream& err) {
  try {
    RunConfig cfg = load_config(options.config);
    cfg.deterministic = cfg.deterministic || options.deterministic;
    if (command == "synth") return cmd_synth(cfg, options, log);
    if (command == "train") return cmd_train(cfg, options, log);
    if (command == "embed") return cmd_embed(cfg, options, log);
    if (command == "eval") return cmd_eval(cfg, options, log);
    if (command == "analyze") return cmd_analyze(cfg, options, log);
    if (command == "ablate") return cmd_ablate(cfg, options, log);
    if (command == "render-attention") return cmd_render(cfg, options, log);
    err << "unknown command '" << command << "'\n";
    return 2;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    // ConfigError, ProtocolError, ShapeError, ZeroNormError and bad settings.
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const DatasetError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const ImageIoError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const SamplerError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace oreo
