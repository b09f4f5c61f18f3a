#include "fgc/model_io.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <random>

#include "fgc/error.hpp"

namespace fgc {

using nlohmann::json;

namespace {

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw FormatError(where + ": missing field '" + key + "'");
  }
  return obj.at(key);
}

std::size_t require_count(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw FormatError(where + ": field '" + key + "' must be a nonnegative integer");
  }
  return v.get<std::size_t>();
}

std::size_t optional_count(const json& obj, const char* key, std::size_t fallback,
                           const std::string& where) {
  return obj.contains(key) ? require_count(obj, key, where) : fallback;
}

class BlobReader {
 public:
  explicit BlobReader(std::vector<float> values) : values_(std::move(values)) {}

  std::vector<double> read(const json& ref, std::size_t expected, const std::string& where) const {
    const std::size_t offset = require_count(ref, "offset", where);
    const std::size_t length = require_count(ref, "length", where);
    if (length != expected) {
      throw FormatError(where + ": tensor length " + std::to_string(length) + ", expected " +
                        std::to_string(expected));
    }
    if (offset + length > values_.size()) {
      throw FormatError(where + ": tensor range exceeds weight blob of " +
                        std::to_string(values_.size()) + " floats");
    }
    return std::vector<double>(values_.begin() + static_cast<std::ptrdiff_t>(offset),
                               values_.begin() + static_cast<std::ptrdiff_t>(offset + length));
  }

 private:
  std::vector<float> values_;
};

class BlobWriter {
 public:
  json append(const std::vector<double>& values) {
    json ref = {{"offset", values_.size()}, {"length", values.size()}};
    for (double v : values) values_.push_back(static_cast<float>(v));
    return ref;
  }
  const std::vector<float>& values() const { return values_; }

 private:
  std::vector<float> values_;
};

Shape3 parse_shape(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 3) throw FormatError(where + ": expected [C, H, W]");
  for (const auto& e : v) {
    if (!e.is_number_integer() || e.get<std::int64_t>() <= 0) {
      throw FormatError(where + ": dimensions must be positive integers");
    }
  }
  return Shape3{v[0].get<std::size_t>(), v[1].get<std::size_t>(), v[2].get<std::size_t>()};
}

std::string optional_string(const json& obj, const char* key) {
  if (!obj.contains(key)) return {};
  if (!obj.at(key).is_string()) throw FormatError(std::string("field '") + key + "' must be a string");
  return obj.at(key).get<std::string>();
}

LayerSpec parse_layer(const json& j, std::size_t index, const BlobReader* blob) {
  const std::string where = "layers[" + std::to_string(index) + "]";
  LayerSpec l;
  const json& id = require(j, "id", where);
  if (!id.is_string()) throw FormatError(where + ": field 'id' must be a string");
  l.id = id.get<std::string>();
  const std::string lw = where + " ('" + l.id + "')";
  const json& kind = require(j, "kind", lw);
  if (!kind.is_string()) throw FormatError(lw + ": field 'kind' must be a string");
  l.kind = layer_kind_from_string(kind.get<std::string>());
  l.input = optional_string(j, "input");
  l.source = optional_string(j, "source");
  l.stage = optional_string(j, "stage");

  switch (l.kind) {
    case LayerKind::conv: {
      ConvWeights c;
      c.shape.c_in = require_count(j, "c_in", lw);
      c.shape.c_out = require_count(j, "c_out", lw);
      c.shape.k = require_count(j, "kernel", lw);
      c.shape.stride = optional_count(j, "stride", 1, lw);
      c.shape.pad = optional_count(j, "pad", 0, lw);
      c.shape.groups = optional_count(j, "groups", 1, lw);
      try {
        c.shape.validate();
      } catch (const ShapeError& e) {
        throw FormatError(lw + ": " + e.what());
      }
      if (blob) {
        c.weights = blob->read(require(j, "weights", lw), c.shape.weight_count(), lw + ".weights");
        if (j.contains("bias")) c.bias = blob->read(j.at("bias"), c.shape.c_out, lw + ".bias");
      }
      if (j.contains("provenance")) {
        const json& p = j.at("provenance");
        c.provenance = Provenance{require(p, "source", lw + ".provenance").get<std::string>(),
                                  require_count(p, "n", lw + ".provenance"),
                                  require(p, "role", lw + ".provenance").get<std::string>()};
      }
      l.params = std::move(c);
      break;
    }
    case LayerKind::maxpool:
    case LayerKind::avgpool: {
      PoolParams p;
      p.global = j.value("global", false);
      if (!p.global) {
        p.k = require_count(j, "kernel", lw);
        p.stride = optional_count(j, "stride", p.k, lw);
        p.pad = optional_count(j, "pad", 0, lw);
        if (p.k == 0 || p.stride == 0) throw FormatError(lw + ": kernel and stride must be positive");
      }
      l.params = p;
      break;
    }
    case LayerKind::fc: {
      FullyConnected f;
      f.in_features = require_count(j, "in_features", lw);
      f.out_features = require_count(j, "out_features", lw);
      if (f.in_features == 0 || f.out_features == 0) {
        throw FormatError(lw + ": fc features must be positive");
      }
      if (blob) {
        f.weights = blob->read(require(j, "weights", lw), f.in_features * f.out_features,
                               lw + ".weights");
        if (j.contains("bias")) f.bias = blob->read(j.at("bias"), f.out_features, lw + ".bias");
      }
      l.params = std::move(f);
      break;
    }
    case LayerKind::channel_affine: {
      ChannelAffine a;
      a.channels = require_count(j, "channels", lw);
      if (a.channels == 0) throw FormatError(lw + ": channels must be positive");
      if (blob) {
        a.scale = blob->read(require(j, "scale", lw), a.channels, lw + ".scale");
        a.shift = blob->read(require(j, "shift", lw), a.channels, lw + ".shift");
      }
      l.params = std::move(a);
      break;
    }
    case LayerKind::add:
      if (l.source.empty()) throw FormatError(lw + ": add requires field 'source'");
      break;
    case LayerKind::relu:
      break;
  }
  return l;
}

json layer_header(const LayerSpec& l) {
  json j = {{"id", l.id}, {"kind", std::string(to_string(l.kind))}};
  if (!l.stage.empty()) j["stage"] = l.stage;
  if (!l.input.empty()) j["input"] = l.input;
  if (!l.source.empty()) j["source"] = l.source;
  switch (l.kind) {
    case LayerKind::conv: {
      const ConvShape& s = l.conv().shape;
      j["c_in"] = s.c_in;
      j["c_out"] = s.c_out;
      j["kernel"] = s.k;
      j["stride"] = s.stride;
      j["pad"] = s.pad;
      j["groups"] = s.groups;
      if (const auto& p = l.conv().provenance) {
        j["provenance"] = {{"source", p->source_layer}, {"n", p->n}, {"role", p->role}};
      }
      break;
    }
    case LayerKind::maxpool:
    case LayerKind::avgpool: {
      const PoolParams& p = l.pool();
      if (p.global) {
        j["global"] = true;
      } else {
        j["kernel"] = p.k;
        j["stride"] = p.stride;
        j["pad"] = p.pad;
      }
      break;
    }
    case LayerKind::fc:
      j["in_features"] = l.fc().in_features;
      j["out_features"] = l.fc().out_features;
      break;
    case LayerKind::channel_affine:
      j["channels"] = l.affine().channels;
      break;
    default:
      break;
  }
  return j;
}

json manifest_header(const NetworkSpec& net) {
  return json{{"format_version", kManifestFormatVersion},
              {"name", net.name},
              {"input_shape", {net.input_shape.channels, net.input_shape.height,
                               net.input_shape.width}}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("failed writing " + path.string());
}

double he_std(std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); }

}  // namespace

std::vector<float> read_f32_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open weight blob " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() % 4 != 0) {
    throw FormatError("weight blob " + path.string() + " size is not a multiple of 4 bytes");
  }
  std::vector<float> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t bits = static_cast<std::uint32_t>(bytes[4 * i]) |
                               static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8 |
                               static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16 |
                               static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24;
    values[i] = std::bit_cast<float>(bits);
  }
  return values;
}

void write_f32_blob(const std::filesystem::path& path, std::span<const float> values) {
  std::vector<char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

namespace {

NetworkSpec load_model_unchecked(const std::filesystem::path& manifest, const LoadOptions& options) {
  std::ifstream in(manifest);
  if (!in) throw FormatError("cannot open manifest " + manifest.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("manifest " + manifest.string() + " is not valid JSON: " + e.what());
  }
  const std::string where = manifest.filename().string();
  const std::size_t version = require_count(doc, "format_version", where);
  if (version != static_cast<std::size_t>(kManifestFormatVersion)) {
    throw FormatError(where + ": unsupported format_version " + std::to_string(version));
  }
  NetworkSpec net;
  net.name = doc.value("name", manifest.stem().string());
  net.input_shape = parse_shape(require(doc, "input_shape", where), where + ".input_shape");
  const json& layers = require(doc, "layers", where);
  if (!layers.is_array()) throw FormatError(where + ": field 'layers' must be an array");
  if (layers.empty()) throw FormatError(where + ": no layers");

  std::optional<BlobReader> blob;
  std::optional<std::uint64_t> init_seed;
  if (options.load_weights) {
    if (doc.contains("weights_file")) {
      const auto blob_path = manifest.parent_path() / doc.at("weights_file").get<std::string>();
      blob.emplace(read_f32_blob(blob_path));
    } else if (doc.contains("weight_init")) {
      const json& init = doc.at("weight_init");
      const std::string dist = require(init, "distribution", where + ".weight_init").get<std::string>();
      if (dist != "he_normal") {
        throw FormatError(where + ".weight_init: unsupported distribution '" + dist + "'");
      }
      init_seed = require(init, "seed", where + ".weight_init").get<std::uint64_t>();
    } else {
      throw FormatError(where + ": missing field 'weights_file' (or 'weight_init')");
    }
  }

  for (std::size_t i = 0; i < layers.size(); ++i) {
    net.layers.push_back(parse_layer(layers[i], i, blob ? &*blob : nullptr));
  }
  try {
    assign_default_stages(net);
  } catch (const ShapeError& e) {
    throw FormatError(where + ": " + e.what());
  }
  if (init_seed) initialize_weights(net, *init_seed);
  return net;
}

}  // namespace

NetworkSpec load_model(const std::filesystem::path& manifest, const LoadOptions& options) {
  try {
    return load_model_unchecked(manifest, options);
  } catch (const json::exception& e) {
    // Wrong value types in otherwise valid JSON.
    throw FormatError(manifest.filename().string() + ": " + e.what());
  }
}

void save_model(const NetworkSpec& net, const std::filesystem::path& manifest) {
  infer_shapes(net);
  BlobWriter blob;
  json layers = json::array();
  for (const auto& l : net.layers) {
    json j = layer_header(l);
    auto need = [&](bool ok) {
      if (!ok) throw FormatError("layer '" + l.id + "' is not materialized; cannot save weights");
    };
    switch (l.kind) {
      case LayerKind::conv:
        need(l.conv().materialized());
        j["weights"] = blob.append(l.conv().weights);
        if (!l.conv().bias.empty()) j["bias"] = blob.append(l.conv().bias);
        break;
      case LayerKind::fc:
        need(l.fc().materialized());
        j["weights"] = blob.append(l.fc().weights);
        if (!l.fc().bias.empty()) j["bias"] = blob.append(l.fc().bias);
        break;
      case LayerKind::channel_affine:
        need(l.affine().materialized());
        j["scale"] = blob.append(l.affine().scale);
        j["shift"] = blob.append(l.affine().shift);
        break;
      default:
        break;
    }
    layers.push_back(std::move(j));
  }
  auto blob_path = manifest;
  blob_path.replace_extension(".bin");
  json doc = manifest_header(net);
  doc["weights_file"] = blob_path.filename().string();
  doc["layers"] = std::move(layers);
  write_f32_blob(blob_path, blob.values());
  write_text(manifest, doc.dump(2) + "\n");
}

void save_model_architecture(const NetworkSpec& net, const std::filesystem::path& manifest,
                             std::uint64_t weight_seed) {
  infer_shapes(net);
  json layers = json::array();
  for (const auto& l : net.layers) layers.push_back(layer_header(l));
  json doc = manifest_header(net);
  doc["weight_init"] = {{"distribution", "he_normal"}, {"seed", weight_seed}};
  doc["layers"] = std::move(layers);
  write_text(manifest, doc.dump(2) + "\n");
}

void initialize_weights(NetworkSpec& net, std::uint64_t seed) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    LayerSpec& l = net.layers[i];
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    switch (l.kind) {
      case LayerKind::conv: {
        ConvWeights& c = l.conv();
        const double sd = he_std((c.shape.c_in / c.shape.groups) * c.shape.k * c.shape.k);
        c.weights.resize(c.shape.weight_count());
        for (double& w : c.weights) w = sd * normal(rng);
        c.bias.resize(c.shape.c_out);
        for (double& b : c.bias) b = 0.1 * normal(rng);
        break;
      }
      case LayerKind::fc: {
        FullyConnected& f = std::get<FullyConnected>(l.params);
        const double sd = he_std(f.in_features);
        f.weights.resize(f.in_features * f.out_features);
        for (double& w : f.weights) w = sd * normal(rng);
        f.bias.resize(f.out_features);
        for (double& b : f.bias) b = 0.1 * normal(rng);
        break;
      }
      case LayerKind::channel_affine: {
        ChannelAffine& a = std::get<ChannelAffine>(l.params);
        a.scale.resize(a.channels);
        a.shift.resize(a.channels);
        for (double& s : a.scale) s = 1.0 + 0.1 * normal(rng);
        for (double& s : a.shift) s = 0.1 * normal(rng);
        break;
      }
      default:
        break;
    }
  }
}

}  // namespace fgc
