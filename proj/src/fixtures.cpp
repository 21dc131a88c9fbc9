#include "fusenet/fixtures.hpp"

#include <algorithm>
#include <random>

#include "fusenet/errors.hpp"
#include "fusenet/runtime.hpp"

namespace fusenet {

namespace {

// Raw engine output is portable across standard libraries; distributions are not.
std::int8_t next_int8(std::mt19937_64& rng, int span) {
  return static_cast<std::int8_t>(static_cast<int>(rng() % static_cast<std::uint64_t>(2 * span + 1)) - span);
}

void append_le32(std::vector<std::uint8_t>& out, std::int32_t v) {
  const auto u = static_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

constexpr std::int32_t kCalibrationMult = 91;

// Smallest shift whose outputs stay clear of saturation on `input`.
int calibrate_shift(Network& one_layer, const Tensor& input) {
  auto& q = one_layer.manifest.layers.front().quant;
  for (int shift = 0; shift <= 31; ++shift) {
    q.shift = shift;
    const auto out = run_golden(one_layer, input);
    const bool saturated = std::any_of(out.data.begin(), out.data.end(), [](std::int8_t v) { return v >= 127 || v <= -128; });
    if (!saturated) return shift;
  }
  return 31;
}

}  // namespace

Tensor random_tensor(const TensorShape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor t = Tensor::zeros(shape);
  for (auto& v : t.data) v = next_int8(rng, 127);
  return t;
}

Network build_network(const std::string& name, const TensorShape& input, const std::vector<LayerSpec>& specs,
                      std::uint64_t seed, const std::string& weights_file) {
  std::mt19937_64 rng(seed);
  Network net;
  net.manifest.name = name;
  net.manifest.input = input;
  net.manifest.weights_file = weights_file;

  Tensor act = random_tensor(input, seed ^ 0x5eedULL);
  TensorShape cur = input;
  for (const auto& s : specs) {
    LayerDesc l;
    l.id = s.id;
    l.kind = s.kind;
    l.c_in = cur.c;
    l.c_out = (s.kind == LayerKind::dw3x3 || s.kind == LayerKind::avgpool_global) ? cur.c : s.c_out;
    l.stride = s.stride;
    l.pad = s.pad;
    l.quant = {kCalibrationMult, 0, s.activation};

    Network layer_net;
    layer_net.manifest.name = s.id;
    layer_net.manifest.input = cur;
    const auto nw = weight_count(l.kind, l.c_in, l.c_out);
    const auto nb = bias_count(l.kind, l.c_out);
    l.weights_ref = {0, nw};
    l.bias_ref = {nw, 4 * nb};
    for (std::uint64_t i = 0; i < nw; ++i) layer_net.blob.bytes.push_back(static_cast<std::uint8_t>(next_int8(rng, 127)));
    for (std::uint64_t i = 0; i < nb; ++i)
      append_le32(layer_net.blob.bytes, static_cast<std::int32_t>(rng() % 4097) - 2048);
    layer_net.manifest.layers = {l};
    validate(layer_net.manifest, layer_net.blob.bytes);

    if (l.kind == LayerKind::avgpool_global) {
      layer_net.manifest.layers.front().quant = {1, 0, s.activation};
    } else {
      layer_net.manifest.layers.front().quant.shift = calibrate_shift(layer_net, act);
    }
    l.quant = layer_net.manifest.layers.front().quant;
    act = run_golden(layer_net, act);

    const auto base = net.blob.bytes.size();
    l.weights_ref.offset += base;
    l.bias_ref.offset += base;
    net.blob.bytes.insert(net.blob.bytes.end(), layer_net.blob.bytes.begin(), layer_net.blob.bytes.end());
    net.manifest.layers.push_back(l);
    cur = act.shape;
  }
  validate(net.manifest, net.blob.bytes);
  return net;
}

Network mobilenet_v1_025(std::uint64_t seed) {
  std::vector<LayerSpec> specs{{"conv0", LayerKind::conv3x3, 8, 2, 1}};
  struct Block {
    int stride, c_out;
  };
  const Block blocks[] = {{1, 16},  {2, 32},  {1, 32},  {2, 64},  {1, 64},  {2, 128}, {1, 128},
                          {1, 128}, {1, 128}, {1, 128}, {1, 128}, {2, 256}, {1, 256}};
  int i = 1;
  for (const auto& b : blocks) {
    specs.push_back({"dw" + std::to_string(i), LayerKind::dw3x3, 0, b.stride, 1});
    specs.push_back({"pw" + std::to_string(i), LayerKind::pw, b.c_out, 1, 0});
    ++i;
  }
  specs.push_back({"pool", LayerKind::avgpool_global, 0, 1, 0, Activation::none});
  specs.push_back({"fc", LayerKind::linear, 4, 1, 0, Activation::none});
  return build_network("mobilenet_v1_025", {96, 96, 1, Layout::HWC}, specs, seed, "mobilenet_v1_025.bin");
}

Network pw_dw_pair(std::uint64_t seed) {
  return build_network("pw_dw_pair", {32, 32, 16, Layout::HWC},
                       {{"pw", LayerKind::pw, 32, 1, 0}, {"dw", LayerKind::dw3x3, 0, 1, 1}}, seed, "pw_dw_pair.bin");
}

}  // namespace fusenet
