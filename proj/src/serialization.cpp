#include "oreo/serialization.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace oreo {

namespace {

constexpr char kCheckpointMagic[8] = {'O', 'R', 'E', 'O', 'C', 'K', 'P', 'T'};
constexpr char kEmbeddingMagic[8] = {'O', 'R', 'E', 'O', 'E', 'M', 'B', '1'};

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(U)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<U>(bytes);
  }
  return v;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), 4);
}

void put_f32(std::ostream& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t get_u32(std::istream& in, const std::string& what) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (in.gcount() != 4) throw FormatError("truncated file while reading " + what);
  return to_little(v);
}

float get_f32(std::istream& in, const std::string& what) { return std::bit_cast<float>(get_u32(in, what)); }

void check_magic(std::istream& in, const char (&magic)[8], const std::filesystem::path& path) {
  char buf[8] = {};
  in.read(buf, 8);
  if (in.gcount() != 8 || std::memcmp(buf, magic, 8) != 0) {
    throw FormatError("bad magic in " + path.string());
  }
}

struct RawTensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ModelParams<float>& params) {
  auto& mutable_params = const_cast<ModelParams<float>&>(params);
  const auto tensors = list_params(config, mutable_params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint: " + path.string());
  out.write(kCheckpointMagic, 8);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size() + 2));

  auto write_tensor = [&](const std::string& name, const std::vector<std::uint32_t>& dims, const float* data,
                          size_t size) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) put_u32(out, d);
    for (size_t i = 0; i < size; ++i) put_f32(out, data[i]);
  };
  const float image_size = static_cast<float>(config.backbone.image_size);
  const float oan = config.oan ? 1.0f : 0.0f;
  write_tensor("meta.image_size", {1}, &image_size, 1);
  write_tensor("meta.oan", {1}, &oan, 1);
  for (const auto& t : tensors) write_tensor(t.name, t.dims, t.data, t.size);
  if (!out) throw FormatError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path.string());
  check_magic(in, kCheckpointMagic, path);
  const auto version = get_u32(in, "version");
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = get_u32(in, "tensor count");

  std::map<std::string, RawTensor> raw;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = get_u32(in, "name length");
    if (name_len > 4096) throw FormatError("implausible tensor name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (static_cast<std::uint32_t>(in.gcount()) != name_len) throw FormatError("truncated tensor name");
    RawTensor tensor;
    const auto rank = get_u32(in, "rank");
    if (rank > 8) throw FormatError("implausible rank for " + name);
    size_t size = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      tensor.dims.push_back(get_u32(in, "dims"));
      size *= tensor.dims.back();
    }
    if (size > (1u << 28)) throw FormatError("implausible tensor size for " + name);
    tensor.values.resize(size);
    for (size_t i = 0; i < size; ++i) tensor.values[i] = get_f32(in, name);
    raw.emplace(std::move(name), std::move(tensor));
  }

  auto need = [&](const std::string& name) -> const RawTensor& {
    auto it = raw.find(name);
    if (it == raw.end()) throw FormatError("checkpoint lacks tensor " + name);
    return it->second;
  };

  Checkpoint ckpt;
  ModelConfig& cfg = ckpt.config;
  cfg.backbone.image_size = static_cast<int>(need("meta.image_size").values.at(0));
  cfg.oan = need("meta.oan").values.at(0) != 0.0f;
  for (int k = 0; k < 4; ++k) {
    cfg.backbone.channels[k] = static_cast<int>(need("backbone.conv" + std::to_string(k + 1) + ".weight").dims.at(0));
  }
  cfg.backbone.embedding_dim = static_cast<int>(need("backbone.embed.weight").dims.at(0));
  cfg.num_identities = static_cast<int>(need("classifier.weight").dims.at(0));
  cfg.num_attributes = static_cast<int>(need("attribute_head.weight").dims.at(0));
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint describes an invalid model: ") + e.what());
  }

  ckpt.params = zero_params<float>(cfg);
  for (auto& ref : list_params(cfg, ckpt.params)) {
    const RawTensor& t = need(ref.name);
    if (t.dims != ref.dims) throw FormatError("tensor " + ref.name + " has unexpected shape");
    std::copy(t.values.begin(), t.values.end(), ref.data);
  }
  return ckpt;
}

std::filesystem::path sidecar_path(const std::filesystem::path& embeddings) {
  auto p = embeddings;
  p.replace_extension(".csv");
  return p;
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingSet& set) {
  if (set.records.size() != set.count()) throw FormatError("one record per embedding row required");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write embeddings: " + path.string());
  out.write(kEmbeddingMagic, 8);
  put_u32(out, static_cast<std::uint32_t>(set.count()));
  put_u32(out, static_cast<std::uint32_t>(set.dim()));
  for (Eigen::Index i = 0; i < set.vectors.size(); ++i) put_f32(out, set.vectors.data()[i]);
  if (!out) throw FormatError("write failed: " + path.string());

  std::ofstream csv(sidecar_path(path));
  if (!csv) throw FormatError("cannot write sidecar for " + path.string());
  csv << "index,identity,set_id,occluded\n";
  for (size_t i = 0; i < set.records.size(); ++i) {
    const auto& r = set.records[i];
    csv << i << ',' << r.identity << ',' << r.set_id << ',' << (r.occluded ? 1 : 0) << '\n';
  }
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open embeddings: " + path.string());
  check_magic(in, kEmbeddingMagic, path);
  const auto count = get_u32(in, "count");
  const auto dim = get_u32(in, "dim");
  if (static_cast<std::uint64_t>(count) * dim > (1ull << 30)) throw FormatError("implausible embedding size");
  EmbeddingSet set;
  set.vectors.resize(count, dim);
  for (Eigen::Index i = 0; i < set.vectors.size(); ++i) set.vectors.data()[i] = get_f32(in, "embedding values");

  std::ifstream csv(sidecar_path(path));
  if (!csv) throw FormatError("missing sidecar " + sidecar_path(path).string());
  std::string line;
  if (!std::getline(csv, line) || line.rfind("index,identity,set_id,occluded", 0) != 0) {
    throw FormatError("sidecar header must be index,identity,set_id,occluded");
  }
  set.records.resize(count);
  std::vector<bool> seen(count, false);
  size_t rows = 0;
  while (std::getline(csv, line)) {
    if (line.empty() || line == "\r") continue;
    std::istringstream row(line);
    std::string f[4];
    for (auto& field : f) {
      if (!std::getline(row, field, ',')) throw FormatError("sidecar row has too few fields: " + line);
    }
    try {
      const unsigned long idx = std::stoul(f[0]);
      if (idx >= count || seen[idx]) throw FormatError("sidecar index out of range or repeated: " + f[0]);
      seen[idx] = true;
      set.records[idx] = {std::stoi(f[1]), std::stoi(f[2]), std::stoi(f[3]) != 0};
    } catch (const std::logic_error&) {
      throw FormatError("malformed sidecar row: " + line);
    }
    ++rows;
  }
  if (rows != count) throw FormatError("sidecar has " + std::to_string(rows) + " rows, expected " + std::to_string(count));
  return set;
}

}  // namespace oreo
