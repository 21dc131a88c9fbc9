#include "fusenet/kernels.hpp"

#include <string>

#include "fusenet/errors.hpp"

namespace fusenet {

namespace {

std::string dims(const TensorShape& s) {
  return std::to_string(s.h) + "x" + std::to_string(s.w) + "x" + std::to_string(s.c);
}

void require_layout(const Tensor& t, Layout layout, const char* kernel) {
  if (t.shape.layout != layout)
    throw ShapeError(std::string(kernel) + ": expects " + std::string(to_string(layout)) + " input");
  if (t.data.size() != t.shape.elements())
    throw ShapeError(std::string(kernel) + ": tensor data does not match shape " + dims(t.shape));
}

// Output channel count implied by the bias, checked against the weights.
int out_channels(const LayerParams& p, std::size_t weights_per_channel, const char* kernel) {
  const auto k = p.bias.size();
  if (k == 0) throw ShapeError(std::string(kernel) + ": empty bias");
  if (p.weights.size() != k * weights_per_channel)
    throw ShapeError(std::string(kernel) + ": " + std::to_string(p.weights.size()) + " weights for " +
                     std::to_string(k) + " output channels, expected " + std::to_string(k * weights_per_channel));
  return static_cast<int>(k);
}

void check_window(const Window& win, const char* kernel) {
  if (win.stride != 1 && win.stride != 2) throw ShapeError(std::string(kernel) + ": stride must be 1 or 2");
  if (win.out_h < 1 || win.out_w < 1) throw ShapeError(std::string(kernel) + ": empty output window");
  if (win.pad_top < 0 || win.pad_left < 0) throw ShapeError(std::string(kernel) + ": negative padding");
}

// One channel plane of a depthwise 3x3: `plane` is h x w row-major.
void dw_plane(const std::int8_t* plane, int h, int w, const std::int8_t* w9, std::int32_t bias, const Window& win,
              const QuantParams& q, std::int8_t* out) {
  for (int oy = 0; oy < win.out_h; ++oy) {
    for (int ox = 0; ox < win.out_w; ++ox) {
      std::int32_t acc = bias;
      for (int dy = 0; dy < 3; ++dy) {
        const int iy = oy * win.stride + dy - win.pad_top;
        if (iy < 0 || iy >= h) continue;
        for (int dx = 0; dx < 3; ++dx) {
          const int ix = ox * win.stride + dx - win.pad_left;
          if (ix < 0 || ix >= w) continue;
          acc += std::int32_t{plane[iy * w + ix]} * std::int32_t{w9[dy * 3 + dx]};
        }
      }
      out[oy * win.out_w + ox] = requantize(acc, q);
    }
  }
}

}  // namespace

Window Window::same_pad(int h, int w, int stride, int pad) {
  if (h + 2 * pad < 3 || w + 2 * pad < 3) throw ShapeError("3x3 window larger than padded input");
  return {stride, pad, pad, (h + 2 * pad - 3) / stride + 1, (w + 2 * pad - 3) / stride + 1};
}

std::int8_t requantize(std::int32_t acc, const QuantParams& q) {
  std::int64_t v = std::int64_t{acc} * std::int64_t{q.mult};
  if (q.shift > 0) v = (v + (std::int64_t{1} << (q.shift - 1))) >> q.shift;
  const std::int64_t lo = q.activation == Activation::relu ? 0 : -128;
  return static_cast<std::int8_t>(std::clamp<std::int64_t>(v, lo, 127));
}

Tensor pw_conv(const Tensor& in, const LayerParams& p, KernelStats* stats) {
  require_layout(in, Layout::HWC, "pw_conv");
  const int c = in.shape.c;
  const int k = out_channels(p, static_cast<std::size_t>(c), "pw_conv");
  Tensor out = Tensor::zeros({in.shape.h, in.shape.w, k, Layout::HWC});
  const std::size_t pixels = static_cast<std::size_t>(in.shape.h) * static_cast<std::size_t>(in.shape.w);
  for (std::size_t px = 0; px < pixels; ++px) {
    const std::int8_t* src = in.data.data() + px * static_cast<std::size_t>(c);
    std::int8_t* dst = out.data.data() + px * static_cast<std::size_t>(k);
    for (int ko = 0; ko < k; ++ko) {
      const std::int8_t* wr = p.weights.data() + static_cast<std::size_t>(ko) * static_cast<std::size_t>(c);
      std::int32_t acc = p.bias[static_cast<std::size_t>(ko)];
      for (int ci = 0; ci < c; ++ci) acc += std::int32_t{src[ci]} * std::int32_t{wr[ci]};
      dst[ko] = requantize(acc, p.quant);
    }
  }
  if (stats) stats->macs += pixels * static_cast<std::uint64_t>(c) * static_cast<std::uint64_t>(k);
  return out;
}

Tensor dw_conv3x3(const Tensor& in, const LayerParams& p, int stride, int pad, KernelStats* stats) {
  if (pad != 0 && pad != 1) throw ShapeError("dw_conv3x3: pad must be 0 or 1");
  return dw_conv3x3(in, p, Window::same_pad(in.shape.h, in.shape.w, stride, pad), stats);
}

Tensor dw_conv3x3(const Tensor& in, const LayerParams& p, const Window& win, KernelStats* stats) {
  require_layout(in, Layout::CHW, "dw_conv3x3");
  check_window(win, "dw_conv3x3");
  const int c = in.shape.c;
  if (out_channels(p, 9, "dw_conv3x3") != c) throw ShapeError("dw_conv3x3: bias length differs from channel count");
  Tensor out = Tensor::zeros({win.out_h, win.out_w, c, Layout::CHW});
  const std::size_t in_plane = static_cast<std::size_t>(in.shape.h) * static_cast<std::size_t>(in.shape.w);
  const std::size_t out_plane = static_cast<std::size_t>(win.out_h) * static_cast<std::size_t>(win.out_w);
  for (int ch = 0; ch < c; ++ch) {
    const auto uc = static_cast<std::size_t>(ch);
    dw_plane(in.data.data() + uc * in_plane, in.shape.h, in.shape.w, p.weights.data() + uc * 9, p.bias[uc], win,
             p.quant, out.data.data() + uc * out_plane);
  }
  if (stats) stats->macs += out_plane * static_cast<std::uint64_t>(c) * 9;
  return out;
}

Tensor conv3x3(const Tensor& in, const LayerParams& p, int stride, int pad, KernelStats* stats) {
  if (pad != 0 && pad != 1) throw ShapeError("conv3x3: pad must be 0 or 1");
  return conv3x3(in, p, Window::same_pad(in.shape.h, in.shape.w, stride, pad), stats);
}

Tensor conv3x3(const Tensor& in, const LayerParams& p, const Window& win, KernelStats* stats) {
  require_layout(in, Layout::HWC, "conv3x3");
  check_window(win, "conv3x3");
  const int c = in.shape.c;
  const int k = out_channels(p, static_cast<std::size_t>(c) * 9, "conv3x3");
  Tensor out = Tensor::zeros({win.out_h, win.out_w, k, Layout::HWC});
  for (int oy = 0; oy < win.out_h; ++oy) {
    for (int ox = 0; ox < win.out_w; ++ox) {
      for (int ko = 0; ko < k; ++ko) {
        const std::int8_t* wk = p.weights.data() + static_cast<std::size_t>(ko) * static_cast<std::size_t>(c) * 9;
        std::int32_t acc = p.bias[static_cast<std::size_t>(ko)];
        for (int dy = 0; dy < 3; ++dy) {
          const int iy = oy * win.stride + dy - win.pad_top;
          if (iy < 0 || iy >= in.shape.h) continue;
          for (int dx = 0; dx < 3; ++dx) {
            const int ix = ox * win.stride + dx - win.pad_left;
            if (ix < 0 || ix >= in.shape.w) continue;
            for (int ci = 0; ci < c; ++ci)
              acc += std::int32_t{in.at(iy, ix, ci)} * std::int32_t{wk[(ci * 3 + dy) * 3 + dx]};
          }
        }
        out.at(oy, ox, ko) = requantize(acc, p.quant);
      }
    }
  }
  if (stats)
    stats->macs += static_cast<std::uint64_t>(win.out_h) * static_cast<std::uint64_t>(win.out_w) *
                   static_cast<std::uint64_t>(c) * static_cast<std::uint64_t>(k) * 9;
  return out;
}

Tensor linear(const Tensor& in, const LayerParams& p, KernelStats* stats) {
  if (in.shape.h != 1 || in.shape.w != 1) throw ShapeError("linear: expects a 1x1 input, got " + dims(in.shape));
  const int c = in.shape.c;
  const int k = out_channels(p, static_cast<std::size_t>(c), "linear");
  Tensor out = Tensor::zeros({1, 1, k, Layout::HWC});
  for (int ko = 0; ko < k; ++ko) {
    std::int32_t acc = p.bias[static_cast<std::size_t>(ko)];
    for (int ci = 0; ci < c; ++ci)
      acc += std::int32_t{in.data[static_cast<std::size_t>(ci)]} *
             std::int32_t{p.weights[static_cast<std::size_t>(ko) * static_cast<std::size_t>(c) +
                                    static_cast<std::size_t>(ci)]};
    out.data[static_cast<std::size_t>(ko)] = requantize(acc, p.quant);
  }
  if (stats) stats->macs += static_cast<std::uint64_t>(c) * static_cast<std::uint64_t>(k);
  return out;
}

Tensor avgpool_global(const Tensor& in, const LayerParams& p, KernelStats* stats) {
  if (in.data.size() != in.shape.elements()) throw ShapeError("avgpool_global: tensor data does not match shape");
  if (!p.bias.empty() && p.bias.size() != static_cast<std::size_t>(in.shape.c))
    throw ShapeError("avgpool_global: bias length differs from channel count");
  const std::int64_t n = std::int64_t{in.shape.h} * std::int64_t{in.shape.w};
  Tensor out = Tensor::zeros({1, 1, in.shape.c, Layout::HWC});
  for (int ch = 0; ch < in.shape.c; ++ch) {
    std::int64_t sum = 0;
    for (int y = 0; y < in.shape.h; ++y)
      for (int x = 0; x < in.shape.w; ++x) sum += in.at(y, x, ch);
    // floor((sum + n/2) / n) with half rounded up, valid for negative sums.
    const std::int64_t num = 2 * sum + n;
    const std::int64_t den = 2 * n;
    std::int64_t avg = num / den;
    if ((num % den != 0) && (num < 0)) --avg;
    if (!p.bias.empty()) avg += p.bias[static_cast<std::size_t>(ch)];
    out.data[static_cast<std::size_t>(ch)] = requantize(static_cast<std::int32_t>(avg), p.quant);
  }
  if (stats) stats->macs += static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(in.shape.c);
  return out;
}

LayoutConversion layout_convert(const Tensor& in, Layout target) {
  LayoutConversion r;
  r.tensor.shape = in.shape;
  r.tensor.shape.layout = target;
  if (in.shape.layout == target) {
    r.tensor.data = in.data;
    return r;
  }
  r.tensor.data.resize(in.data.size());
  for (int y = 0; y < in.shape.h; ++y)
    for (int x = 0; x < in.shape.w; ++x)
      for (int ch = 0; ch < in.shape.c; ++ch) r.tensor.at(y, x, ch) = in.at(y, x, ch);
  r.bytes_touched = in.shape.elements();
  return r;
}

std::uint64_t fused_buffer_bytes(int h, int w, int k, FusedConfig cfg) {
  return static_cast<std::uint64_t>(h) * static_cast<std::uint64_t>(w) *
         static_cast<std::uint64_t>(std::min(cfg.fb, k));
}

Tensor fused_pw_dw(const Tensor& in, const LayerParams& pw, const LayerParams& dw, const Window& win, FusedConfig cfg,
                   std::span<std::int8_t> scratch, KernelStats* stats) {
  require_layout(in, Layout::HWC, "fused_pw_dw");
  check_window(win, "fused_pw_dw");
  if (cfg.fb < 1) throw ConfigError("fused_pw_dw: fb must be >= 1, got " + std::to_string(cfg.fb));
  const int h = in.shape.h, w = in.shape.w, c = in.shape.c;
  const int k = out_channels(pw, static_cast<std::size_t>(c), "fused_pw_dw (pw)");
  if (out_channels(dw, 9, "fused_pw_dw (dw)") != k)
    throw ShapeError("fused_pw_dw: dw channel count differs from pw output channels");
  const int fb = std::min(cfg.fb, k);
  const std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  const std::uint64_t buffer_bytes = plane * static_cast<std::size_t>(fb);
  if (scratch.size() < buffer_bytes)
    throw ConfigError("fused_pw_dw: intermediate buffer of " + std::to_string(scratch.size()) + " bytes, need " +
                      std::to_string(buffer_bytes));

  Tensor out = Tensor::zeros({win.out_h, win.out_w, k, Layout::CHW});
  const std::size_t out_plane = static_cast<std::size_t>(win.out_h) * static_cast<std::size_t>(win.out_w);

  for (int b = 0; b < k; b += fb) {
    const int nb = std::min(fb, k - b);
    // PW for channels [b, b+nb), written channel-strided into the buffer.
    for (std::size_t px = 0; px < plane; ++px) {
      const std::int8_t* src = in.data.data() + px * static_cast<std::size_t>(c);
      for (int j = 0; j < nb; ++j) {
        const auto ko = static_cast<std::size_t>(b + j);
        const std::int8_t* wr = pw.weights.data() + ko * static_cast<std::size_t>(c);
        std::int32_t acc = pw.bias[ko];
        for (int ci = 0; ci < c; ++ci) acc += std::int32_t{src[ci]} * std::int32_t{wr[ci]};
        scratch[static_cast<std::size_t>(j) * plane + px] = requantize(acc, pw.quant);
      }
    }
    for (int j = 0; j < nb; ++j) {
      const auto ko = static_cast<std::size_t>(b + j);
      dw_plane(scratch.data() + static_cast<std::size_t>(j) * plane, h, w, dw.weights.data() + ko * 9, dw.bias[ko], win,
               dw.quant, out.data.data() + ko * out_plane);
    }
  }

  if (stats) {
    stats->macs += plane * static_cast<std::uint64_t>(c) * static_cast<std::uint64_t>(k) +
                   out_plane * static_cast<std::uint64_t>(k) * 9;
    stats->intermediate_bytes = std::max(stats->intermediate_bytes, buffer_bytes);
  }
  return out;
}

Tensor fused_pw_dw(const Tensor& in, const LayerParams& pw, const LayerParams& dw, int stride, int pad, FusedConfig cfg,
                   KernelStats* stats) {
  if (cfg.fb < 1) throw ConfigError("fused_pw_dw: fb must be >= 1, got " + std::to_string(cfg.fb));
  if (pad != 0 && pad != 1) throw ShapeError("fused_pw_dw: pad must be 0 or 1");
  const int k = static_cast<int>(pw.bias.size());
  std::vector<std::int8_t> buffer(fused_buffer_bytes(in.shape.h, in.shape.w, std::max(k, 1), cfg));
  return fused_pw_dw(in, pw, dw, Window::same_pad(in.shape.h, in.shape.w, stride, pad), cfg, buffer, stats);
}

}  // namespace fusenet
