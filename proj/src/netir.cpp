#include "fusenet/netir.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "fusenet/errors.hpp"
#include "json.hpp"

namespace fusenet {

using ordered_json = nlohmann::ordered_json;

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv3x3: return "conv3x3";
    case LayerKind::dw3x3: return "dw3x3";
    case LayerKind::pw: return "pw";
    case LayerKind::linear: return "linear";
    case LayerKind::avgpool_global: return "avgpool_global";
  }
  return "?";
}

LayerKind layer_kind_from_string(std::string_view s) {
  if (s == "conv3x3") return LayerKind::conv3x3;
  if (s == "dw3x3") return LayerKind::dw3x3;
  if (s == "pw") return LayerKind::pw;
  if (s == "linear") return LayerKind::linear;
  if (s == "avgpool_global") return LayerKind::avgpool_global;
  throw SchemaError("unknown layer kind '" + std::string(s) + "'");
}

std::string_view to_string(Layout layout) { return layout == Layout::HWC ? "HWC" : "CHW"; }

std::string_view to_string(Activation act) { return act == Activation::relu ? "relu" : "none"; }

std::uint64_t weight_count(LayerKind kind, int c_in, int c_out) {
  const auto ci = static_cast<std::uint64_t>(c_in);
  const auto co = static_cast<std::uint64_t>(c_out);
  switch (kind) {
    case LayerKind::conv3x3: return co * ci * 9;
    case LayerKind::dw3x3: return ci * 9;
    case LayerKind::pw:
    case LayerKind::linear: return co * ci;
    case LayerKind::avgpool_global: return 0;
  }
  return 0;
}

std::uint64_t bias_count(LayerKind kind, int c_out) {
  return kind == LayerKind::avgpool_global ? 0 : static_cast<std::uint64_t>(c_out);
}

std::span<const std::uint8_t> WeightBlob::raw(const BlobRef& ref) const {
  if (ref.offset > bytes.size() || ref.length > bytes.size() - ref.offset)
    throw BlobError("reference [" + std::to_string(ref.offset) + ", +" + std::to_string(ref.length) +
                    ") outside blob of " + std::to_string(bytes.size()) + " bytes");
  return std::span<const std::uint8_t>(bytes).subspan(ref.offset, ref.length);
}

std::span<const std::int8_t> WeightBlob::weights(const BlobRef& ref) const {
  auto r = raw(ref);
  return {reinterpret_cast<const std::int8_t*>(r.data()), r.size()};
}

std::vector<std::int32_t> WeightBlob::biases(const BlobRef& ref) const {
  auto r = raw(ref);
  if (r.size() % 4 != 0) throw BlobError("bias reference length is not a multiple of 4");
  std::vector<std::int32_t> out(r.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::uint32_t u = std::uint32_t{r[4 * i]} | (std::uint32_t{r[4 * i + 1]} << 8) |
                            (std::uint32_t{r[4 * i + 2]} << 16) | (std::uint32_t{r[4 * i + 3]} << 24);
    out[i] = static_cast<std::int32_t>(u);
  }
  return out;
}

namespace {

int conv_out_dim(int in, int pad, int stride) { return (in + 2 * pad - 3) / stride + 1; }

void check_layer_fields(const LayerDesc& l) {
  const std::string who = "layer '" + l.id + "'";
  if (l.c_in < 1 || l.c_out < 1) throw ShapeError(who + ": channel counts must be >= 1");
  if (l.stride != 1 && l.stride != 2) throw SchemaError(who + ": stride must be 1 or 2");
  if (l.pad != 0 && l.pad != 1) throw SchemaError(who + ": pad must be 0 or 1");
  if (l.quant.mult < 1) throw SchemaError(who + ": quant.mult must be >= 1");
  if (l.quant.shift < 0 || l.quant.shift > 31) throw SchemaError(who + ": quant.shift must be in [0,31]");
  switch (l.kind) {
    case LayerKind::dw3x3:
      if (l.c_in != l.c_out) throw ShapeError(who + ": dw3x3 requires c_in == c_out");
      break;
    case LayerKind::pw:
    case LayerKind::linear:
      if (l.stride != 1 || l.pad != 0)
        throw ShapeError(who + ": " + std::string(to_string(l.kind)) + " requires stride 1 and pad 0");
      break;
    case LayerKind::avgpool_global:
      if (l.c_in != l.c_out) throw ShapeError(who + ": avgpool_global requires c_in == c_out");
      if (l.stride != 1 || l.pad != 0) throw ShapeError(who + ": avgpool_global requires stride 1 and pad 0");
      break;
    case LayerKind::conv3x3:
      break;
  }
}

}  // namespace

TensorShape output_shape(const LayerDesc& layer, const TensorShape& in) {
  if (in.c != layer.c_in)
    throw ShapeError("layer '" + layer.id + "': expects " + std::to_string(layer.c_in) + " input channels, got " +
                     std::to_string(in.c));
  TensorShape out{in.h, in.w, layer.c_out, Layout::HWC};
  switch (layer.kind) {
    case LayerKind::conv3x3:
    case LayerKind::dw3x3:
      out.h = conv_out_dim(in.h, layer.pad, layer.stride);
      out.w = conv_out_dim(in.w, layer.pad, layer.stride);
      if (in.h + 2 * layer.pad < 3 || in.w + 2 * layer.pad < 3) out.h = out.w = 0;
      break;
    case LayerKind::pw:
      break;
    case LayerKind::linear:
      if (in.h != 1 || in.w != 1)
        throw ShapeError("layer '" + layer.id + "': linear expects a 1x1 input, got " + std::to_string(in.h) + "x" +
                         std::to_string(in.w));
      out.h = out.w = 1;
      break;
    case LayerKind::avgpool_global:
      out.h = out.w = 1;
      break;
  }
  if (out.h < 1 || out.w < 1) throw ShapeError("layer '" + layer.id + "': output spatial size becomes < 1");
  return out;
}

std::vector<TensorShape> propagate_shapes(const NetworkManifest& net) {
  std::vector<TensorShape> shapes;
  shapes.reserve(net.layers.size());
  TensorShape cur = net.input;
  for (const auto& l : net.layers) {
    cur = output_shape(l, cur);
    shapes.push_back(cur);
  }
  return shapes;
}

void validate(const NetworkManifest& net, std::span<const std::uint8_t> blob) {
  if (net.input.h < 1 || net.input.w < 1 || net.input.c < 1) throw ShapeError("input dimensions must be >= 1");
  if (net.input.layout != Layout::HWC) throw SchemaError("network input must be HWC");
  if (net.layers.empty()) throw SchemaError("manifest has no layers");

  std::set<std::string> ids;
  for (const auto& l : net.layers) {
    if (l.id.empty()) throw SchemaError("layer with empty id");
    if (!ids.insert(l.id).second) throw SchemaError("duplicate layer id '" + l.id + "'");
    check_layer_fields(l);
  }
  propagate_shapes(net);

  struct Extent {
    std::uint64_t begin, end;
    std::string what;
  };
  std::vector<Extent> extents;
  std::uint64_t total = 0;
  for (const auto& l : net.layers) {
    const auto check = [&](const BlobRef& ref, std::uint64_t expected, const char* what) {
      const std::string who = "layer '" + l.id + "' " + what;
      if (ref.length != expected)
        throw BlobError(who + ": length " + std::to_string(ref.length) + ", expected " + std::to_string(expected));
      if (ref.offset > blob.size() || ref.length > blob.size() - ref.offset)
        throw BlobError(who + ": extends past end of blob (" + std::to_string(blob.size()) + " bytes)");
      if (ref.length > 0) extents.push_back({ref.offset, ref.offset + ref.length, who});
      total += ref.length;
    };
    check(l.weights_ref, weight_count(l.kind, l.c_in, l.c_out), "weights");
    check(l.bias_ref, 4 * bias_count(l.kind, l.c_out), "bias");
  }
  std::sort(extents.begin(), extents.end(), [](const Extent& a, const Extent& b) { return a.begin < b.begin; });
  for (std::size_t i = 1; i < extents.size(); ++i)
    if (extents[i].begin < extents[i - 1].end)
      throw BlobError(extents[i].what + " overlaps " + extents[i - 1].what);
  if (total != blob.size())
    throw BlobError("blob is " + std::to_string(blob.size()) + " bytes but references cover " + std::to_string(total));
}

namespace {

const ordered_json& field(const ordered_json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(std::string("missing field '") + key + "'");
  return *it;
}

void expect_keys(const ordered_json& obj, std::initializer_list<std::string_view> keys, const std::string& where) {
  if (!obj.is_object()) throw SchemaError(where + " must be an object");
  for (const auto& [k, _] : obj.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      throw SchemaError(where + ": unexpected field '" + k + "'");
}

int get_int(const ordered_json& obj, const char* key) {
  const auto& v = field(obj, key);
  if (!v.is_number_integer()) throw SchemaError(std::string("field '") + key + "' must be an integer");
  const auto x = v.get<std::int64_t>();
  if (x < INT32_MIN || x > INT32_MAX) throw SchemaError(std::string("field '") + key + "' out of range");
  return static_cast<int>(x);
}

std::uint64_t get_u64(const ordered_json& obj, const char* key) {
  const auto& v = field(obj, key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw SchemaError(std::string("field '") + key + "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

std::string get_str(const ordered_json& obj, const char* key) {
  const auto& v = field(obj, key);
  if (!v.is_string()) throw SchemaError(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

BlobRef get_ref(const ordered_json& obj, const char* key, const std::string& where) {
  const auto& v = field(obj, key);
  expect_keys(v, {"offset", "length"}, where + "." + key);
  return {get_u64(v, "offset"), get_u64(v, "length")};
}

ordered_json ref_json(const BlobRef& r) { return ordered_json{{"offset", r.offset}, {"length", r.length}}; }

}  // namespace

NetworkManifest parse_manifest(std::string_view text, std::span<const std::uint8_t> blob) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("manifest is not valid JSON: ") + e.what());
  }
  expect_keys(doc, {"name", "input", "layers", "weights_file"}, "manifest");

  NetworkManifest net;
  net.name = get_str(doc, "name");
  net.weights_file = get_str(doc, "weights_file");

  const auto& in = field(doc, "input");
  expect_keys(in, {"h", "w", "c", "layout"}, "input");
  net.input.h = get_int(in, "h");
  net.input.w = get_int(in, "w");
  net.input.c = get_int(in, "c");
  const auto layout = get_str(in, "layout");
  if (layout == "HWC") net.input.layout = Layout::HWC;
  else if (layout == "CHW") net.input.layout = Layout::CHW;
  else throw SchemaError("unknown layout '" + layout + "'");

  const auto& layers = field(doc, "layers");
  if (!layers.is_array()) throw SchemaError("'layers' must be an array");
  for (const auto& lj : layers) {
    const std::string where = "layer";
    expect_keys(lj, {"id", "kind", "c_in", "c_out", "stride", "pad", "quant", "weights_ref", "bias_ref"}, where);
    LayerDesc l;
    l.id = get_str(lj, "id");
    l.kind = layer_kind_from_string(get_str(lj, "kind"));
    l.c_in = get_int(lj, "c_in");
    l.c_out = get_int(lj, "c_out");
    l.stride = get_int(lj, "stride");
    l.pad = get_int(lj, "pad");
    const auto& q = field(lj, "quant");
    expect_keys(q, {"mult", "shift", "activation"}, "quant");
    l.quant.mult = get_int(q, "mult");
    l.quant.shift = get_int(q, "shift");
    const auto act = get_str(q, "activation");
    if (act == "relu") l.quant.activation = Activation::relu;
    else if (act == "none") l.quant.activation = Activation::none;
    else throw SchemaError("unknown activation '" + act + "'");
    l.weights_ref = get_ref(lj, "weights_ref", "layer '" + l.id + "'");
    l.bias_ref = get_ref(lj, "bias_ref", "layer '" + l.id + "'");
    net.layers.push_back(std::move(l));
  }

  validate(net, blob);
  return net;
}

std::string serialize_manifest(const NetworkManifest& net) {
  ordered_json doc;
  doc["name"] = net.name;
  doc["input"] = ordered_json{
      {"h", net.input.h}, {"w", net.input.w}, {"c", net.input.c}, {"layout", std::string(to_string(net.input.layout))}};
  ordered_json layers = ordered_json::array();
  for (const auto& l : net.layers) {
    ordered_json lj;
    lj["id"] = l.id;
    lj["kind"] = std::string(to_string(l.kind));
    lj["c_in"] = l.c_in;
    lj["c_out"] = l.c_out;
    lj["stride"] = l.stride;
    lj["pad"] = l.pad;
    lj["quant"] = ordered_json{
        {"mult", l.quant.mult}, {"shift", l.quant.shift}, {"activation", std::string(to_string(l.quant.activation))}};
    lj["weights_ref"] = ref_json(l.weights_ref);
    lj["bias_ref"] = ref_json(l.bias_ref);
    layers.push_back(std::move(lj));
  }
  doc["layers"] = std::move(layers);
  doc["weights_file"] = net.weights_file;
  return doc.dump(2) + "\n";
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write '" + path + "'");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Network load_network(const std::string& manifest_path) {
  const auto text = read_file(manifest_path);
  const std::string_view sv(reinterpret_cast<const char*>(text.data()), text.size());
  // weights_file is needed before full validation, so peek at it first.
  std::string weights_file;
  try {
    const auto doc = ordered_json::parse(sv);
    weights_file = get_str(doc, "weights_file");
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("manifest is not valid JSON: ") + e.what());
  }
  const auto dir = std::filesystem::path(manifest_path).parent_path();
  Network net;
  net.blob.bytes = read_file((dir / weights_file).string());
  net.manifest = parse_manifest(sv, net.blob.bytes);
  return net;
}

void save_network(const Network& net, const std::string& manifest_path) {
  const auto text = serialize_manifest(net.manifest);
  write_file(manifest_path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  const auto dir = std::filesystem::path(manifest_path).parent_path();
  write_file((dir / net.manifest.weights_file).string(), net.blob.bytes);
}

std::uint64_t parameter_count(const NetworkManifest& net) {
  std::uint64_t n = 0;
  for (const auto& l : net.layers) n += weight_count(l.kind, l.c_in, l.c_out) + bias_count(l.kind, l.c_out);
  return n;
}

}  // namespace fusenet
