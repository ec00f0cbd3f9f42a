#include "vitloss/weights_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>

#include "vitloss/rng.hpp"

namespace vitloss::weights {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'V', 'P', 'W', '1'};

std::size_t align_up(std::size_t v) { return (v + kAlignment - 1) / kAlignment * kAlignment; }

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void put_f32_le(std::uint8_t* dst, float f) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) dst[i] = static_cast<std::uint8_t>(bits >> (8 * i));
}

float get_f32_le(const std::uint8_t* src) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | src[i];
  return std::bit_cast<float>(bits);
}

template <typename E = FormatError>
const json& field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw E(std::string("header is missing '") + key + "'");
  return j.at(key);
}

std::uint64_t as_u64(const json& j, const char* what) {
  if (!j.is_number_unsigned()) {
    throw FormatError(std::string("header field '") + what + "' must be a non-negative integer");
  }
  return j.get<std::uint64_t>();
}

double as_double(const json& j, const char* what) {
  if (!j.is_number()) throw FormatError(std::string("header field '") + what + "' must be a number");
  return j.get<double>();
}

std::vector<double> as_doubles(const json& j, const char* what) {
  if (!j.is_array()) throw FormatError(std::string("header field '") + what + "' must be an array");
  std::vector<double> out;
  for (const json& v : j) out.push_back(as_double(v, what));
  return out;
}

}  // namespace

json config_to_json(const ViTConfig& c) {
  return json{{"image_size", c.image_size},
              {"patch_size", c.patch_size},
              {"channels", c.channels},
              {"embed_dim", c.embed_dim},
              {"num_layers", c.num_layers},
              {"num_heads", c.num_heads},
              {"mlp_ratio", c.mlp_ratio},
              {"flavor", std::string(to_string(c.flavor))},
              {"norm_mean", c.norm_mean},
              {"norm_std", c.norm_std},
              {"ln_eps", c.ln_eps},
              {"final_norm", c.final_norm}};
}

ViTConfig config_from_json(const json& j) {
  if (!j.is_object()) throw FormatError("config must be a JSON object");
  ViTConfig c;
  c.image_size = as_u64(field(j, "image_size"), "image_size");
  c.patch_size = as_u64(field(j, "patch_size"), "patch_size");
  c.channels = as_u64(field(j, "channels"), "channels");
  c.embed_dim = as_u64(field(j, "embed_dim"), "embed_dim");
  c.num_layers = as_u64(field(j, "num_layers"), "num_layers");
  c.num_heads = as_u64(field(j, "num_heads"), "num_heads");
  c.mlp_ratio = as_double(field(j, "mlp_ratio"), "mlp_ratio");
  const json& flavor = field(j, "flavor");
  if (!flavor.is_string()) throw FormatError("config field 'flavor' must be a string");
  const json& final_norm = field(j, "final_norm");
  if (!final_norm.is_boolean()) throw FormatError("config field 'final_norm' must be a boolean");
  c.final_norm = final_norm.get<bool>();
  c.norm_mean = as_doubles(field(j, "norm_mean"), "norm_mean");
  c.norm_std = as_doubles(field(j, "norm_std"), "norm_std");
  c.ln_eps = as_double(field(j, "ln_eps"), "ln_eps");
  const bool plausible = c.image_size <= (1u << 16) && c.patch_size <= (1u << 16) &&
                         c.channels <= 64 && c.embed_dim <= (1u << 16) && c.num_layers <= 1024 &&
                         c.num_heads <= (1u << 16) && c.mlp_ratio <= 1024.0;
  if (!plausible) throw SchemaError("config dimensions are implausibly large");
  try {
    c.flavor = parse_flavor(flavor.get<std::string>());
    c.validate();
  } catch (const ContractError& e) {
    throw SchemaError(e.what());
  }
  // Guard against absurd sizes before anything is allocated from them.
  for (const TensorSpec& spec : tensor_schema(c)) {
    if (shape_numel(spec.shape) > (std::size_t{1} << 34)) {
      throw SchemaError("tensor '" + spec.name + "' implied by the config is implausibly large");
    }
  }
  return c;
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = ::crc32(crc, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> serialize(const WeightBundle<float>& bundle) {
  validate_bundle(bundle);

  json directory = json::array();
  std::size_t offset = 0;
  std::vector<std::pair<std::size_t, const Tensor<float>*>> placed;
  for_each_tensor<float>(bundle, [&](const std::string& name, const Tensor<float>& t) {
    const std::size_t nbytes = t.numel() * sizeof(float);
    directory.push_back(
        json{{"name", name}, {"shape", t.shape()}, {"dtype", "f32"}, {"offset", offset},
             {"nbytes", nbytes}});
    placed.emplace_back(offset, &t);
    offset = align_up(offset + nbytes);
  });
  const std::size_t payload_bytes =
      placed.empty() ? 0 : placed.back().first + placed.back().second->numel() * sizeof(float);

  std::vector<std::uint8_t> payload(payload_bytes, 0);
  for (const auto& [off, t] : placed) {
    const auto values = t->data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      put_f32_le(payload.data() + off + i * sizeof(float), values[i]);
    }
  }

  const json header{{"format", "VPW1"},
                    {"version", 1},
                    {"config", config_to_json(bundle.config)},
                    {"tensors", directory},
                    {"payload_bytes", payload_bytes},
                    {"payload_crc32", crc32(payload)}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u64_le(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.resize(align_up(out.size()), 0);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

WeightBundle<float> parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a VPW1 file (bad magic)");
  }
  if (bytes.size() < kPreambleBytes) throw CorruptionError("file truncated inside the preamble");
  const std::uint64_t header_len = get_u64_le(bytes.data() + 4);
  if (header_len > bytes.size() - kPreambleBytes) {
    throw CorruptionError("header length " + std::to_string(header_len) +
                          " exceeds the file size");
  }

  // The JSON parser stops at a NUL, which would let a header length that
  // reaches into the zero padding go unnoticed.
  const auto header_text = bytes.subspan(kPreambleBytes, static_cast<std::size_t>(header_len));
  if (std::find(header_text.begin(), header_text.end(), std::uint8_t{0}) != header_text.end()) {
    throw FormatError("header contains a NUL byte");
  }
  json header;
  try {
    header = json::parse(bytes.begin() + kPreambleBytes,
                         bytes.begin() + static_cast<std::ptrdiff_t>(kPreambleBytes + header_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) throw FormatError("header must be a JSON object");
  const json& format = field(header, "format");
  if (!format.is_string() || format.get<std::string>() != "VPW1") {
    throw FormatError("header format tag is not VPW1");
  }
  if (as_u64(field(header, "version"), "version") != 1) {
    throw FormatError("unsupported VPW1 version");
  }

  WeightBundle<float> bundle;
  bundle.config = config_from_json(field(header, "config"));
  bundle.layers.resize(bundle.config.num_layers);

  const std::size_t payload_start = align_up(kPreambleBytes + header_len);
  const std::uint64_t payload_bytes = as_u64(field(header, "payload_bytes"), "payload_bytes");
  if (payload_start > bytes.size() || payload_bytes != bytes.size() - payload_start) {
    throw CorruptionError("payload is " +
                          std::to_string(bytes.size() > payload_start ? bytes.size() - payload_start : 0) +
                          " bytes, header declares " + std::to_string(payload_bytes));
  }
  const auto payload = bytes.subspan(payload_start);

  struct Entry {
    Shape shape;
    std::uint64_t offset = 0;
    std::uint64_t nbytes = 0;
  };
  std::map<std::string, Entry> entries;
  const json& tensors = field(header, "tensors");
  if (!tensors.is_array()) throw FormatError("header field 'tensors' must be an array");
  for (const json& t : tensors) {
    const json& name = field(t, "name");
    const json& shape = field(t, "shape");
    const json& dtype = field(t, "dtype");
    if (!name.is_string() || !shape.is_array() || !dtype.is_string()) {
      throw FormatError("malformed tensor directory entry");
    }
    Entry e;
    for (const json& dim : shape) e.shape.push_back(as_u64(dim, "shape"));
    e.offset = as_u64(field(t, "offset"), "offset");
    e.nbytes = as_u64(field(t, "nbytes"), "nbytes");
    const std::string key = name.get<std::string>();
    if (dtype.get<std::string>() != "f32") {
      throw SchemaError("tensor '" + key + "' has dtype " + dtype.get<std::string>() +
                        ", expected f32");
    }
    if (!entries.emplace(key, std::move(e)).second) {
      throw SchemaError("tensor '" + key + "' listed twice");
    }
  }

  const auto schema = tensor_schema(bundle.config);
  std::set<std::string> expected;
  for (const TensorSpec& spec : schema) {
    expected.insert(spec.name);
    auto it = entries.find(spec.name);
    if (it == entries.end()) throw SchemaError("missing tensor '" + spec.name + "'");
    if (it->second.shape != spec.shape) {
      throw SchemaError("tensor '" + spec.name + "' has shape " + shape_str(it->second.shape) +
                        ", expected " + shape_str(spec.shape));
    }
    if (it->second.nbytes != shape_numel(spec.shape) * sizeof(float)) {
      throw SchemaError("tensor '" + spec.name + "' declares " +
                        std::to_string(it->second.nbytes) + " bytes for shape " +
                        shape_str(spec.shape));
    }
  }
  for (const auto& [name, e] : entries) {
    if (!expected.contains(name)) throw SchemaError("unexpected tensor '" + name + "'");
  }

  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  for (const auto& [name, e] : entries) {
    if (e.offset % kAlignment != 0) {
      throw CorruptionError("tensor '" + name + "' offset is not 64-byte aligned");
    }
    if (e.offset > payload.size() || e.nbytes > payload.size() - e.offset) {
      throw CorruptionError("tensor '" + name + "' extends past the end of the payload");
    }
    spans.emplace_back(e.offset, e.offset + e.nbytes);
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i].first < spans[i - 1].second) throw CorruptionError("tensor byte ranges overlap");
  }

  const std::uint64_t stored_crc = as_u64(field(header, "payload_crc32"), "payload_crc32");
  if (crc32(payload) != stored_crc) throw CorruptionError("payload CRC32 mismatch");

  for_each_tensor<float>(bundle, [&](const std::string& name, Tensor<float>& t) {
    const Entry& e = entries.at(name);
    std::vector<float> values(shape_numel(e.shape));
    for (std::size_t k = 0; k < values.size(); ++k) {
      values[k] = get_f32_le(payload.data() + e.offset + k * sizeof(float));
    }
    try {
      t = Tensor<float>(e.shape, std::move(values));
    } catch (const NumericError&) {
      throw CorruptionError("tensor '" + name + "' contains non-finite values");
    }
  });
  return bundle;
}

void save(const WeightBundle<float>& bundle, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = serialize(bundle);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

WeightBundle<float> load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading '" + path.string() + "'");
  return parse(bytes);
}

WeightBundle<float> generate_toy(const ViTConfig& config, std::uint64_t seed) {
  config.validate();
  WeightBundle<float> bundle;
  bundle.config = config;
  bundle.layers.resize(config.num_layers);
  const auto schema = tensor_schema(config);
  Xoshiro256 rng(seed);
  std::size_t i = 0;
  for_each_tensor<float>(bundle, [&](const std::string& name, Tensor<float>& t) {
    const TensorSpec& spec = schema.at(i++);
    const bool ln_gain = name.ends_with("norm1.weight") || name.ends_with("norm2.weight") ||
                         name == "norm.weight";
    std::vector<float> values(shape_numel(spec.shape));
    for (float& v : values) {
      const double u = 2.0 * rng.uniform() - 1.0;
      v = static_cast<float>((ln_gain ? 1.0 : 0.0) + 0.02 * u);
    }
    t = Tensor<float>(spec.shape, std::move(values));
  });
  return bundle;
}

}  // namespace vitloss::weights
