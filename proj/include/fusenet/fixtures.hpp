#pragma once

// Seeded network and tensor generators. Weights are uniform int8; each
// layer's requantization is calibrated on a seeded input so activations use
// most of the int8 range without saturating.

#include <cstdint>
#include <string>
#include <vector>

#include "fusenet/kernels.hpp"
#include "fusenet/netir.hpp"

namespace fusenet {

struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::pw;
  int c_out = 1;
  int stride = 1;
  int pad = 0;
  Activation activation = Activation::relu;
};

Network build_network(const std::string& name, const TensorShape& input, const std::vector<LayerSpec>& layers,
                      std::uint64_t seed, const std::string& weights_file);

// MobileNetV1 at width 0.25: a 3x3 stem, 13 depthwise-separable blocks, global
// average pooling and a 4-output linear head on a 96x96 greyscale input.
Network mobilenet_v1_025(std::uint64_t seed = 1);

// pw(16 -> 32) followed by dw3x3 (stride 1, pad 1) on a 32x32 input.
Network pw_dw_pair(std::uint64_t seed = 1);

Tensor random_tensor(const TensorShape& shape, std::uint64_t seed);

}  // namespace fusenet
