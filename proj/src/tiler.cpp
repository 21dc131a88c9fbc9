#include "fusenet/tiler.hpp"

#include <algorithm>
#include <optional>
#include <tuple>

#include "fusenet/errors.hpp"

namespace fusenet {

std::string_view to_string(LoopOrder order) { return order == LoopOrder::k_outer ? "k_outer" : "spatial_outer"; }

LoopOrder loop_order_from_string(std::string_view s) {
  if (s == "k_outer") return LoopOrder::k_outer;
  if (s == "spatial_outer") return LoopOrder::spatial_outer;
  throw SchemaError("unknown loop order '" + std::string(s) + "'");
}

TileTarget TileTarget::single(const LayerDesc& layer, const TensorShape& in) {
  TileTarget t;
  t.id = layer.id;
  t.layers = {layer.id};
  t.kind = layer.kind;
  t.in = in;
  t.out = output_shape(layer, in);
  t.stride = layer.stride;
  t.pad = layer.pad;
  t.weight_bytes_per_k = weight_count(layer.kind, layer.c_in, layer.c_out) / static_cast<std::uint64_t>(layer.c_out);
  t.bias_bytes_per_k = 4 * bias_count(layer.kind, layer.c_out) / static_cast<std::uint64_t>(layer.c_out);
  return t;
}

TileTarget TileTarget::fused_pair(const LayerDesc& pw, const LayerDesc& dw, const TensorShape& in) {
  if (pw.kind != LayerKind::pw || dw.kind != LayerKind::dw3x3)
    throw ShapeError("fused pair must be pw followed by dw3x3, got " + pw.id + ", " + dw.id);
  if (pw.c_out != dw.c_in) throw ShapeError("fused pair " + pw.id + "+" + dw.id + ": channel mismatch");
  TileTarget t;
  t.id = pw.id + "+" + dw.id;
  t.layers = {pw.id, dw.id};
  t.kind = LayerKind::dw3x3;
  t.fused = true;
  t.in = in;
  t.out = output_shape(dw, output_shape(pw, in));
  t.stride = dw.stride;
  t.pad = dw.pad;
  t.weight_bytes_per_k = static_cast<std::uint64_t>(pw.c_in) + 9;
  t.bias_bytes_per_k = 8;
  return t;
}

bool TileTarget::channel_tiled_input() const {
  return !fused && (kind == LayerKind::dw3x3 || kind == LayerKind::avgpool_global);
}

std::vector<RowSpan> output_row_tiles(int out_h, int rows_out) {
  std::vector<RowSpan> tiles;
  for (int y = 0; y < out_h; y += rows_out) tiles.push_back({y, std::min(out_h, y + rows_out)});
  return tiles;
}

RowSpan input_rows(const TileTarget& t, RowSpan out_rows) {
  switch (t.kind) {
    case LayerKind::pw:
      return out_rows;
    case LayerKind::linear:
    case LayerKind::avgpool_global:
      return {0, t.in.h};
    case LayerKind::conv3x3:
    case LayerKind::dw3x3:
      break;
  }
  RowSpan in{std::max(0, out_rows.begin * t.stride - t.pad),
             std::min(t.in.h, (out_rows.end - 1) * t.stride - t.pad + 3)};
  if (t.fused && out_rows.end == t.out.h) in.end = t.in.h;
  return in;
}

Footprint tile_footprint(const TileTarget& t, int in_rows, int out_rows, int k, int fb, bool weights_resident) {
  const auto uk = static_cast<std::uint64_t>(k);
  const auto in_pixels = static_cast<std::uint64_t>(in_rows) * static_cast<std::uint64_t>(t.in.w);
  const std::uint64_t in_bytes = in_pixels * (t.channel_tiled_input() ? uk : static_cast<std::uint64_t>(t.in.c));
  const std::uint64_t out_bytes = static_cast<std::uint64_t>(out_rows) * static_cast<std::uint64_t>(t.out.w) * uk;
  Footprint f;
  f.streamed = in_bytes + out_bytes;
  f.resident = weights_resident ? t.weight_bytes() : uk * (t.weight_bytes_per_k + t.bias_bytes_per_k);
  if (t.reorders_input()) f.resident += in_bytes;
  if (t.fused) f.resident += in_pixels * static_cast<std::uint64_t>(std::min(fb, k));
  return f;
}

bool may_pin_weights(const TileTarget& t, const MemoryConfig& cfg) { return t.weight_bytes() * 20 < cfg.l1_bytes; }

TrafficLedger predict_traffic(const TilePlan& plan, const TileTarget& t, const MemoryConfig& cfg) {
  const auto spans = output_row_tiles(t.out.h, plan.rows_out);
  const auto n_sp = static_cast<std::uint64_t>(spans.size());
  const auto n_k = static_cast<std::uint64_t>((t.k() + plan.k_tile - 1) / plan.k_tile);
  const auto K = static_cast<std::uint64_t>(t.k());

  std::uint64_t in_rows_total = 0;
  std::uint64_t peak = 0;
  for (const auto& s : spans) {
    const auto in = input_rows(t, s);
    in_rows_total += static_cast<std::uint64_t>(in.size());
    const auto fp = tile_footprint(t, in.size(), s.size(), plan.k_tile, plan.fb, plan.weights_resident);
    peak = std::max(peak, fp.effective(cfg.double_buffer));
  }
  const std::uint64_t row_bytes = static_cast<std::uint64_t>(t.in.w);

  TrafficLedger l;
  if (t.channel_tiled_input()) {
    // Each (row tile, channel tile) input block is loaded exactly once.
    l.load_bytes = in_rows_total * row_bytes * K;
  } else {
    const std::uint64_t one_pass = in_rows_total * row_bytes * static_cast<std::uint64_t>(t.in.c);
    l.load_bytes = plan.loop_order == LoopOrder::k_outer ? n_k * one_pass : one_pass;
  }
  if (t.reorders_input()) l.reorder_bytes = l.load_bytes;
  const bool weights_once = plan.weights_resident || plan.loop_order == LoopOrder::k_outer;
  l.load_bytes += weights_once ? t.weight_bytes() : n_sp * t.weight_bytes();
  l.store_bytes = static_cast<std::uint64_t>(t.out.h) * static_cast<std::uint64_t>(t.out.w) * K;
  l.peak_l1_bytes = peak;
  return l;
}

TilePlan make_plan(const TileTarget& t, const PlanCandidate& c, const MemoryConfig& cfg) {
  if (c.rows_out < 1 || c.rows_out > t.out.h) throw ConfigError(t.id + ": rows_out out of range");
  if (c.k_tile < 1 || c.k_tile > t.k()) throw ConfigError(t.id + ": k_tile out of range");
  if (t.fused && c.fb < 1) throw ConfigError(t.id + ": fb must be >= 1");
  TilePlan p;
  p.target = t.id;
  p.layers = t.layers;
  p.fused = t.fused;
  p.rows_out = c.rows_out;
  p.k_tile = c.k_tile;
  p.fb = t.fused ? std::min(c.fb, c.k_tile) : 0;
  p.loop_order = c.loop_order;
  p.weights_resident = c.weights_resident;
  p.n_tiles = ((t.out.h + c.rows_out - 1) / c.rows_out) * ((t.k() + c.k_tile - 1) / c.k_tile);
  p.predicted = predict_traffic(p, t, cfg);
  p.footprint_bytes = p.predicted.peak_l1_bytes;
  return p;
}

bool is_feasible(const TilePlan& plan, const MemoryConfig& cfg) { return check_fit(plan.footprint_bytes, cfg); }

namespace {

std::vector<int> fb_values(const TileTarget& t, const PlanOptions& opts) {
  if (!t.fused) return {0};
  std::vector<int> fbs = opts.fb_candidates;
  if (fbs.empty()) fbs.push_back(std::min(8, t.k()));
  for (int fb : fbs)
    if (fb < 1) throw ConfigError("fb candidates must be >= 1");
  return fbs;
}

// Lexicographic preference used to break equal-cost ties.
auto preference(const TilePlan& p) {
  return std::make_tuple(p.predicted.cost(), -p.rows_out, -p.k_tile, p.loop_order == LoopOrder::k_outer ? 0 : 1,
                         p.weights_resident ? 1 : 0, -p.fb);
}

}  // namespace

std::vector<PlanCandidate> enumerate_candidates(const TileTarget& t, const MemoryConfig& cfg, const PlanOptions& opts) {
  std::vector<PlanCandidate> out;
  const bool pin = may_pin_weights(t, cfg);
  for (int fb : fb_values(t, opts))
    for (int rows = 1; rows <= t.out.h; ++rows)
      for (int k = 1; k <= t.k(); ++k)
        for (auto order : {LoopOrder::k_outer, LoopOrder::spatial_outer})
          for (bool resident : {false, true}) {
            if (resident && !pin) continue;
            out.push_back({rows, k, order, fb, resident});
          }
  return out;
}

TilePlan plan_target(const TileTarget& t, const MemoryConfig& cfg, const PlanOptions& opts) {
  cfg.validate();
  std::optional<TilePlan> best;
  for (const auto& c : enumerate_candidates(t, cfg, opts)) {
    auto p = make_plan(t, c, cfg);
    if (!is_feasible(p, cfg)) continue;
    if (!best || preference(p) < preference(*best)) best = std::move(p);
  }
  if (!best)
    throw PlanInfeasible(t.id, "no tile fits in " + std::to_string(cfg.l1_bytes) + " bytes of L1 (smallest tile needs " +
                                   std::to_string(make_plan(t, {1, 1, LoopOrder::k_outer, 1, false}, cfg).footprint_bytes) +
                                   ")");
  return *best;
}

TilePlan plan_layer(const LayerDesc& layer, const TensorShape& in, const MemoryConfig& cfg, const LayerDesc* fuse_next,
                    const PlanOptions& opts) {
  const auto t = fuse_next ? TileTarget::fused_pair(layer, *fuse_next, in) : TileTarget::single(layer, in);
  return plan_target(t, cfg, opts);
}

}  // namespace fusenet
