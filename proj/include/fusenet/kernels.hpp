#pragma once

// Bit-exact int8 reference kernels. Every kernel accumulates int8 x int8
// products in int32, adds the bias in the accumulator, then requantizes.

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "fusenet/netir.hpp"

namespace fusenet {

struct Tensor {
  TensorShape shape;
  std::vector<std::int8_t> data;

  static Tensor zeros(const TensorShape& shape) { return {shape, std::vector<std::int8_t>(shape.elements(), 0)}; }

  std::size_t index(int y, int x, int ch) const {
    const auto h = static_cast<std::size_t>(shape.h), w = static_cast<std::size_t>(shape.w),
               c = static_cast<std::size_t>(shape.c);
    return shape.layout == Layout::HWC ? (static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * c +
                                             static_cast<std::size_t>(ch)
                                       : (static_cast<std::size_t>(ch) * h + static_cast<std::size_t>(y)) * w +
                                             static_cast<std::size_t>(x);
  }
  std::int8_t at(int y, int x, int ch) const { return data[index(y, x, ch)]; }
  std::int8_t& at(int y, int x, int ch) { return data[index(y, x, ch)]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct KernelStats {
  std::uint64_t macs = 0;
  std::uint64_t intermediate_bytes = 0;

  KernelStats& operator+=(const KernelStats& o) {
    macs += o.macs;
    intermediate_bytes = std::max(intermediate_bytes, o.intermediate_bytes);
    return *this;
  }
};

// Weights, biases and requantization of one layer.
struct LayerParams {
  std::span<const std::int8_t> weights;
  std::span<const std::int32_t> bias;
  QuantParams quant;
};

// Output geometry of a 3x3 window. pad_top/pad_left give the number of virtual
// zero rows/columns before the first stored input row/column, so a row tile
// of a larger image can be computed with its real halo in place of padding.
struct Window {
  int stride = 1;
  int pad_top = 0;
  int pad_left = 0;
  int out_h = 0;
  int out_w = 0;

  static Window same_pad(int h, int w, int stride, int pad);
};

struct FusedConfig {
  int fb = 8;
};

std::int8_t requantize(std::int32_t acc, const QuantParams& q);

Tensor pw_conv(const Tensor& in, const LayerParams& p, KernelStats* stats = nullptr);

Tensor dw_conv3x3(const Tensor& in, const LayerParams& p, int stride, int pad, KernelStats* stats = nullptr);
Tensor dw_conv3x3(const Tensor& in, const LayerParams& p, const Window& win, KernelStats* stats = nullptr);

Tensor conv3x3(const Tensor& in, const LayerParams& p, int stride, int pad, KernelStats* stats = nullptr);
Tensor conv3x3(const Tensor& in, const LayerParams& p, const Window& win, KernelStats* stats = nullptr);

Tensor linear(const Tensor& in, const LayerParams& p, KernelStats* stats = nullptr);

// Mean over all pixels per channel, rounded half up, then requantized. Bias
// is optional (empty span means zero).
Tensor avgpool_global(const Tensor& in, const LayerParams& p, KernelStats* stats = nullptr);

struct LayoutConversion {
  Tensor tensor;
  std::uint64_t bytes_touched = 0;
};

LayoutConversion layout_convert(const Tensor& in, Layout target);

// PW+DW computed FB output channels at a time: each batch of PW channels is
// written channel-major into `scratch`, then the DW runs on that buffer.
// Input HWC, output CHW [K, out_h, out_w]. The effective batch is
// min(fb, K); scratch must hold at least h*w*min(fb, K) bytes.
Tensor fused_pw_dw(const Tensor& in, const LayerParams& pw, const LayerParams& dw, const Window& win, FusedConfig cfg,
                   std::span<std::int8_t> scratch, KernelStats* stats = nullptr);

// Same, allocating its own intermediate buffer.
Tensor fused_pw_dw(const Tensor& in, const LayerParams& pw, const LayerParams& dw, int stride, int pad, FusedConfig cfg,
                   KernelStats* stats = nullptr);

// Bytes of the fused kernel's intermediate buffer for an h x w input.
std::uint64_t fused_buffer_bytes(int h, int w, int k, FusedConfig cfg);

}  // namespace fusenet
