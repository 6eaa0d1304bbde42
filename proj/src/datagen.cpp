#include "oreo/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "oreo/image_io.hpp"
#include "oreo/rng.hpp"

namespace oreo {

const std::vector<OccluderKind>& all_occluder_kinds() {
  static const std::vector<OccluderKind> kinds = {
      OccluderKind::GlassesBar, OccluderKind::HatBar, OccluderKind::ChinPatch,
      OccluderKind::SidePatch, OccluderKind::MouthPatch};
  return kinds;
}

std::string occluder_name(OccluderKind kind) {
  switch (kind) {
    case OccluderKind::GlassesBar: return "glasses_bar";
    case OccluderKind::HatBar: return "hat_bar";
    case OccluderKind::ChinPatch: return "chin_patch";
    case OccluderKind::SidePatch: return "side_patch";
    case OccluderKind::MouthPatch: return "mouth_patch";
  }
  return "unknown";
}

OccluderKind occluder_from_name(const std::string& name) {
  for (OccluderKind k : all_occluder_kinds()) {
    if (occluder_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown occluder kind: " + name);
}

void SynthSpec::validate() const {
  if (!(occluded_fraction >= 0.0 && occluded_fraction <= 1.0)) {
    throw std::invalid_argument("occluded_fraction must lie in [0, 1]");
  }
  if (image_size < 16) throw std::invalid_argument("image_size must be at least 16");
  if (n_identities < 1 || images_per_identity < 1) {
    throw std::invalid_argument("n_identities and images_per_identity must be positive");
  }
  if (!(label_noise >= 0.0 && label_noise < 1.0)) {
    throw std::invalid_argument("label_noise must lie in [0, 1)");
  }
  std::set<OccluderKind> unique(occluder_kinds.begin(), occluder_kinds.end());
  if (unique.size() != occluder_kinds.size()) {
    throw std::invalid_argument("occluder_kinds contains duplicates");
  }
  if (occluder_kinds.empty() && occluded_fraction > 0.0) {
    throw std::invalid_argument("occluded images requested but no occluder kinds configured");
  }
  if (identity_offset < 0) throw std::invalid_argument("identity_offset must be non-negative");
}

std::vector<double> identity_geometry(std::uint64_t seed, int identity) {
  Rng rng = derive_rng(seed, {0x1d, static_cast<std::uint64_t>(identity)});
  return {
      uniform(rng, 0.09, 0.15),   // eye half-spacing
      uniform(rng, 0.030, 0.060), // eye radius
      uniform(rng, -0.15, -0.06), // eye height relative to face centre
      uniform(rng, 0.08, 0.18),   // nose length
      uniform(rng, 0.020, 0.050), // nose half-width
      uniform(rng, 0.06, 0.14),   // mouth half-width
      uniform(rng, 0.27, 0.36),   // face half-width
      uniform(rng, 0.36, 0.45),   // face half-height
  };
}

namespace {

struct Canvas {
  int size;
  std::vector<double> value;
  std::vector<double> face_cover;
  std::vector<double> occ_cover;

  explicit Canvas(int s)
      : size(s),
        value(static_cast<size_t>(s) * s, 0.0),
        face_cover(value.size(), 0.0),
        occ_cover(value.size(), 0.0) {}
};

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Soft coverage of an axis-aligned ellipse; one-pixel anti-aliased edge.
double ellipse_cover(double px, double py, double cx, double cy, double ax, double ay) {
  const double dx = (px - cx) / ax;
  const double dy = (py - cy) / ay;
  const double f = std::sqrt(dx * dx + dy * dy) - 1.0;
  return clamp01(0.5 - f * std::min(ax, ay));
}

double rect_cover(double px, double py, double x0, double y0, double x1, double y1) {
  const double cx = clamp01(std::min(px - x0, x1 - px) + 0.5);
  const double cy = clamp01(std::min(py - y0, y1 - py) + 0.5);
  return cx * cy;
}

struct Rect {
  double x0, y0, x1, y1;
};

struct FaceLayout {
  double cx, cy;
  double face_ax, face_ay;
  double eye_dx, eye_r, eye_y;
  double nose_top, nose_bottom, nose_hw;
  double mouth_y, mouth_hw, mouth_hh;
};

FaceLayout layout_face(const std::vector<double>& g, double s, Rng& rng) {
  // Per-image jitter: small rigid shift, global scale, and a few percent on
  // every geometry parameter.
  const double scale = s * uniform(rng, 0.97, 1.03);
  auto jit = [&](double v) { return v * (1.0 + 0.03 * normal01(rng)); };
  FaceLayout f{};
  f.cx = s * (0.5 + uniform(rng, -0.03, 0.03));
  f.cy = s * (0.52 + uniform(rng, -0.03, 0.03));
  f.eye_dx = jit(g[0]) * scale;
  f.eye_r = jit(g[1]) * scale;
  f.eye_y = f.cy + g[2] * scale + 0.01 * scale * normal01(rng);
  const double nose_len = jit(g[3]) * scale;
  f.nose_hw = jit(g[4]) * scale;
  f.mouth_hw = jit(g[5]) * scale;
  f.face_ax = jit(g[6]) * scale;
  f.face_ay = jit(g[7]) * scale;
  f.nose_top = f.eye_y + 0.5 * f.eye_r;
  f.nose_bottom = f.nose_top + nose_len;
  f.mouth_hh = 0.022 * scale;
  f.mouth_y = std::min(f.nose_bottom + 0.07 * scale, f.cy + 0.8 * f.face_ay);
  return f;
}

Rect occluder_rect(OccluderKind kind, const FaceLayout& f, double s, Rng& rng) {
  const double top = f.cy - f.face_ay;
  const double bottom = f.cy + f.face_ay;
  switch (kind) {
    case OccluderKind::GlassesBar: {
      const double half_h = f.eye_r * uniform(rng, 1.5, 2.2);
      const double half_w = f.eye_dx + f.eye_r * uniform(rng, 2.0, 2.8);
      return {f.cx - half_w, f.eye_y - half_h, f.cx + half_w, f.eye_y + half_h};
    }
    case OccluderKind::HatBar: {
      const double y1 = f.eye_y - f.eye_r * uniform(rng, 1.2, 2.5);
      return {0.0, 0.0, s, std::max(y1, top + 0.3 * (f.eye_y - top))};
    }
    case OccluderKind::ChinPatch: {
      const double y0 = f.mouth_y + f.mouth_hh + uniform(rng, 0.0, 0.04) * s;
      return {f.cx - f.face_ax, std::min(y0, bottom - 0.25 * f.face_ay), f.cx + f.face_ax, s};
    }
    case OccluderKind::SidePatch: {
      const double inner = f.face_ax * uniform(rng, 0.35, 0.55);
      const double y0 = f.eye_y;
      const double y1 = f.mouth_y + 0.05 * s;
      if (uniform01(rng) < 0.5) return {f.cx - 2.0 * f.face_ax, y0, f.cx - inner, y1};
      return {f.cx + inner, y0, f.cx + 2.0 * f.face_ax, y1};
    }
    case OccluderKind::MouthPatch: {
      const double half_w = f.mouth_hw + uniform(rng, 0.02, 0.06) * s;
      return {f.cx - half_w, f.nose_bottom - 0.01 * s, f.cx + half_w,
              f.mouth_y + f.mouth_hh + uniform(rng, 0.01, 0.04) * s};
    }
  }
  return {0, 0, 0, 0};
}

struct Rendered {
  std::vector<float> pixels;
  RegionMasks masks;
};

Rendered render_face(const std::vector<double>& geometry, int size, std::optional<OccluderKind> occluder,
                     Rng& rng) {
  const double s = size;
  const FaceLayout f = layout_face(geometry, s, rng);
  Canvas canvas(size);

  const double bg = uniform(rng, 0.10, 0.35);
  const double bg_slope = uniform(rng, -0.15, 0.15);
  const double skin = uniform(rng, 0.58, 0.72);
  const double feature = uniform(rng, 0.08, 0.20);
  const double nose_shade = skin - uniform(rng, 0.12, 0.20);

  Rect occ{};
  double occ_base = 0.0;
  double occ_stripe = 0.0;
  int occ_period = 2;
  bool occ_vertical = false;
  if (occluder) {
    // Redraw until the occluder mask covers between 5% and 40% of the face
    // mask, counted on the same thresholded pixels the masks export.
    // On coarse grids some shapes rarely land in the band; after a few tries
    // scale the last draw about its centre instead.
    double last = 0.0;
    for (int attempt = 0;; ++attempt) {
      if (attempt < 20) {
        occ = occluder_rect(*occluder, f, s, rng);
      } else {
        const double k = last > 0.40 ? 0.93 : 1.07;
        const double mx = 0.5 * (occ.x0 + occ.x1), my = 0.5 * (occ.y0 + occ.y1);
        occ = {mx + k * (occ.x0 - mx), my + k * (occ.y0 - my), mx + k * (occ.x1 - mx), my + k * (occ.y1 - my)};
      }
      int face_px = 0, hidden = 0;
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const double px = x + 0.5, py = y + 0.5;
          if (ellipse_cover(px, py, f.cx, f.cy, f.face_ax, f.face_ay) < 0.5) continue;
          ++face_px;
          const double region = ellipse_cover(px, py, f.cx, f.cy, 1.1 * f.face_ax, 1.1 * f.face_ay);
          hidden += rect_cover(px, py, occ.x0, occ.y0, occ.x1, occ.y1) * region >= 0.5;
        }
      }
      const double frac = face_px ? static_cast<double>(hidden) / face_px : 0.0;
      last = frac;
      if ((frac >= 0.05 && frac <= 0.40) || attempt == 200) break;
    }
    occ_base = uniform01(rng) < 0.5 ? uniform(rng, 0.0, 0.2) : uniform(rng, 0.8, 1.0);
    occ_stripe = uniform(rng, 0.08, 0.18) * (occ_base > 0.5 ? -1.0 : 1.0);
    occ_period = 2 + static_cast<int>(uniform_index(rng, 2));
    occ_vertical = uniform01(rng) < 0.5;
  }

  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      const size_t idx = static_cast<size_t>(y) * size + x;
      double v = bg + bg_slope * (py / s - 0.5);
      const double face = ellipse_cover(px, py, f.cx, f.cy, f.face_ax, f.face_ay);
      v = v * (1.0 - face) + skin * face;

      const double left_eye = ellipse_cover(px, py, f.cx - f.eye_dx, f.eye_y, 1.3 * f.eye_r, f.eye_r);
      const double right_eye = ellipse_cover(px, py, f.cx + f.eye_dx, f.eye_y, 1.3 * f.eye_r, f.eye_r);
      const double eyes = std::max(left_eye, right_eye);
      v = v * (1.0 - eyes) + feature * eyes;

      const double nose = rect_cover(px, py, f.cx - f.nose_hw, f.nose_top, f.cx + f.nose_hw, f.nose_bottom);
      v = v * (1.0 - nose) + nose_shade * nose;

      const double mouth = ellipse_cover(px, py, f.cx, f.mouth_y, f.mouth_hw, f.mouth_hh);
      v = v * (1.0 - mouth) + (feature + 0.1) * mouth;

      canvas.face_cover[idx] = face;

      if (occluder) {
        // Occluders are confined to a slightly dilated face region.
        const double region = ellipse_cover(px, py, f.cx, f.cy, 1.1 * f.face_ax, 1.1 * f.face_ay);
        const double cover = rect_cover(px, py, occ.x0, occ.y0, occ.x1, occ.y1) * region;
        const int phase = occ_vertical ? x : y;
        const double tex = occ_base + ((phase / occ_period) % 2 == 0 ? occ_stripe : 0.0);
        v = v * (1.0 - cover) + tex * cover;
        canvas.occ_cover[idx] = cover;
      }
      canvas.value[idx] = v;
    }
  }

  const double brightness = uniform(rng, -0.06, 0.06);
  Rendered out;
  out.pixels.resize(canvas.value.size());
  out.masks.face.resize(canvas.value.size());
  out.masks.occluder.resize(canvas.value.size());
  for (size_t i = 0; i < canvas.value.size(); ++i) {
    const double v = clamp01(canvas.value[i] + brightness + 0.02 * normal01(rng));
    // Quantize to 8-bit levels so PGM export round-trips exactly.
    out.pixels[i] = static_cast<float>(std::lround(v * 255.0)) / 255.0f;
    out.masks.face[i] = canvas.face_cover[i] >= 0.5 ? 1 : 0;
    out.masks.occluder[i] = canvas.occ_cover[i] >= 0.5 ? 1 : 0;
  }
  return out;
}

}  // namespace

void refresh_occlusion_flags(Dataset& dataset) {
  for (auto& s : dataset.samples) {
    s.occluded = false;
    for (int a : dataset.occlusion_attributes) {
      if (s.attributes.at(a)) s.occluded = true;
    }
  }
}

Dataset generate_dataset(const SynthSpec& spec) {
  spec.validate();
  const int k = static_cast<int>(spec.occluder_kinds.size());
  const int ipi = spec.images_per_identity;
  const int n_occ = static_cast<int>(std::lround(spec.occluded_fraction * ipi));

  Dataset ds;
  ds.image_size = spec.image_size;
  for (OccluderKind kind : spec.occluder_kinds) ds.attribute_names.push_back(occluder_name(kind));
  for (int a = 0; a < k; ++a) ds.occlusion_attributes.push_back(a);
  ds.samples.resize(static_cast<size_t>(spec.n_identities) * ipi);
  ds.regions.resize(ds.samples.size());

  for (int id = 0; id < spec.n_identities; ++id) {
    const int label = id + spec.identity_offset;
    const auto geometry = identity_geometry(spec.seed, label);

    // Which images get occluded, and by what: a shuffled round-robin over
    // kinds so every kind appears once n_occ >= K.
    Rng plan = derive_rng(spec.seed, {0x2a, static_cast<std::uint64_t>(label)});
    std::vector<int> order(ipi);
    for (int i = 0; i < ipi; ++i) order[i] = i;
    shuffle(order.begin(), order.end(), plan);
    std::vector<int> kind_cycle(k);
    for (int a = 0; a < k; ++a) kind_cycle[a] = a;
    shuffle(kind_cycle.begin(), kind_cycle.end(), plan);
    std::vector<int> kind_of(ipi, -1);
    for (int j = 0; j < n_occ; ++j) kind_of[order[j]] = kind_cycle[j % k];

    for (int img = 0; img < ipi; ++img) {
      Rng rng = derive_rng(spec.seed, {0x3b, static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(img)});
      std::optional<OccluderKind> occ;
      if (kind_of[img] >= 0) occ = spec.occluder_kinds[kind_of[img]];
      Rendered r = render_face(geometry, spec.image_size, occ, rng);

      const size_t idx = static_cast<size_t>(id) * ipi + img;
      ImageSample& sample = ds.samples[idx];
      sample.height = sample.width = spec.image_size;
      sample.pixels = std::move(r.pixels);
      sample.identity = label;
      sample.set_id = 2 * label + (img % 2);
      sample.attributes.assign(k, 0);
      if (kind_of[img] >= 0) sample.attributes[kind_of[img]] = 1;

      Rng noise = derive_rng(spec.seed, {0x4c, static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(img)});
      for (int a = 0; a < k; ++a) {
        if (uniform01(noise) < spec.label_noise) sample.attributes[a] ^= 1;
      }
      ds.regions[idx] = std::move(r.masks);
    }
  }
  refresh_occlusion_flags(ds);
  return ds;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    fields.push_back(field);
  }
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

int parse_int_field(const std::string& s, const std::string& what, size_t row) {
  try {
    size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DatasetError("manifest row " + std::to_string(row) + ": bad " + what + " '" + s + "'");
  }
}

}  // namespace

Dataset load_manifest(const std::filesystem::path& manifest, std::optional<std::vector<int>> occlusion_attributes) {
  std::ifstream in(manifest);
  if (!in) throw DatasetError("cannot open manifest: " + manifest.string());
  std::string line;
  if (!std::getline(in, line)) throw DatasetError("manifest is empty: " + manifest.string());
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "path" || header[1] != "identity" || header[2] != "set_id") {
    throw DatasetError("manifest header must start with path,identity,set_id");
  }

  Dataset ds;
  for (size_t i = 3; i < header.size(); ++i) ds.attribute_names.push_back(header[i]);
  const int k = ds.num_attributes();
  if (occlusion_attributes) {
    for (int a : *occlusion_attributes) {
      if (a < 0 || a >= k) throw DatasetError("occlusion attribute index out of range: " + std::to_string(a));
    }
    ds.occlusion_attributes = *occlusion_attributes;
  } else {
    for (int a = 0; a < k; ++a) ds.occlusion_attributes.push_back(a);
  }

  const auto base = manifest.parent_path();
  size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw DatasetError("manifest row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                         " fields (K=" + std::to_string(k) + " attributes), got " + std::to_string(fields.size()));
    }
    ImageSample s;
    const std::filesystem::path img_path = base / fields[0];
    if (!std::filesystem::exists(img_path)) {
      throw DatasetError("manifest row " + std::to_string(row) + ": missing image file " + img_path.string());
    }
    Raster8 raster;
    try {
      raster = read_image(img_path);
    } catch (const ImageIoError& e) {
      throw DatasetError("manifest row " + std::to_string(row) + ": " + e.what());
    }
    s.height = raster.height;
    s.width = raster.width;
    s.pixels.resize(raster.pixels.size());
    for (size_t p = 0; p < raster.pixels.size(); ++p) s.pixels[p] = static_cast<float>(raster.pixels[p]) / 255.0f;
    s.identity = parse_int_field(fields[1], "identity", row);
    if (s.identity < 0) throw DatasetError("manifest row " + std::to_string(row) + ": negative identity");
    s.set_id = fields[2].empty() ? -1 : parse_int_field(fields[2], "set_id", row);
    s.attributes.resize(k);
    for (int a = 0; a < k; ++a) {
      const int bit = parse_int_field(fields[3 + a], "attribute", row);
      if (bit != 0 && bit != 1) {
        throw DatasetError("manifest row " + std::to_string(row) + ": attribute values must be 0 or 1");
      }
      s.attributes[a] = static_cast<std::uint8_t>(bit);
    }
    if (ds.samples.empty()) {
      ds.image_size = s.height;
    }
    if (s.height != s.width || s.height != ds.image_size) {
      throw DatasetError("manifest row " + std::to_string(row) + ": images must be square and of equal size");
    }
    ds.samples.push_back(std::move(s));
  }
  refresh_occlusion_flags(ds);
  return ds;
}

std::filesystem::path export_manifest(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  const auto manifest = dir / "manifest.csv";
  std::ofstream out(manifest);
  if (!out) throw DatasetError("cannot write manifest: " + manifest.string());
  out << "path,identity,set_id";
  for (const auto& name : dataset.attribute_names) out << ',' << name;
  out << '\n';
  for (size_t i = 0; i < dataset.samples.size(); ++i) {
    const ImageSample& s = dataset.samples[i];
    char name[32];
    std::snprintf(name, sizeof(name), "img_%06zu.pgm", i);
    Raster8 raster{s.height, s.width, std::vector<std::uint8_t>(s.pixels.size())};
    for (size_t p = 0; p < s.pixels.size(); ++p) {
      raster.pixels[p] = static_cast<std::uint8_t>(std::lround(std::clamp(s.pixels[p], 0.0f, 1.0f) * 255.0f));
    }
    write_pgm(dir / "images" / name, raster);
    out << "images/" << name << ',' << s.identity << ',';
    if (s.set_id >= 0) out << s.set_id;
    for (auto bit : s.attributes) out << ',' << static_cast<int>(bit);
    out << '\n';
  }
  return manifest;
}

AttributeSplit split_by_attribute(const Dataset& dataset, int attribute, std::uint64_t seed) {
  if (attribute < 0 || attribute >= dataset.num_attributes()) {
    throw std::invalid_argument("attribute index out of range");
  }
  std::map<int, std::pair<std::vector<size_t>, std::vector<size_t>>> by_identity;  // without, with
  for (size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    auto& entry = by_identity[s.identity];
    (s.attributes.at(attribute) ? entry.second : entry.first).push_back(i);
  }

  AttributeSplit split;
  split.attribute = attribute;
  for (auto& [identity, lists] : by_identity) {
    auto& [without, with] = lists;
    if (without.size() < 2 || with.empty()) {
      split.excluded_identities.push_back(identity);
      continue;
    }
    Rng rng = derive_rng(seed, {0x5d, static_cast<std::uint64_t>(attribute), static_cast<std::uint64_t>(identity)});
    const size_t g = uniform_index(rng, without.size());
    size_t pw = uniform_index(rng, without.size() - 1);
    if (pw >= g) ++pw;
    split.gallery.push_back(without[g]);
    split.probe_without.push_back(without[pw]);
    split.probe_with.push_back(with[uniform_index(rng, with.size())]);
  }
  if (split.gallery.size() < 2) {
    throw DatasetError("attribute " + std::to_string(attribute) + ": fewer than 2 eligible identities");
  }
  return split;
}

}  // namespace oreo
