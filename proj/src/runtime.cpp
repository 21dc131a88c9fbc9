#include "fusenet/runtime.hpp"

#include <algorithm>
#include <optional>

#include "fusenet/errors.hpp"

namespace fusenet {

ExecutionGraph fusion_pass(const NetworkManifest& net, bool enable) {
  ExecutionGraph g;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    if (enable && l.kind == LayerKind::pw && i + 1 < net.layers.size()) {
      const auto& next = net.layers[i + 1];
      if (next.kind == LayerKind::dw3x3 && next.c_in == l.c_out) {
        g.nodes.push_back({{i, i + 1}, true, {}, {}, false});
        ++i;
        continue;
      }
    }
    g.nodes.push_back({{i}, false, {}, {}, false});
  }
  return g;
}

namespace {

// Input shape of every layer: the network input followed by each output but the last.
std::vector<TensorShape> layer_inputs(const NetworkManifest& net) {
  std::vector<TensorShape> ins{net.input};
  const auto outs = propagate_shapes(net);
  ins.insert(ins.end(), outs.begin(), outs.end() - 1);
  return ins;
}

TileTarget make_target(const ExecNode& n, const NetworkManifest& net, const std::vector<TensorShape>& ins) {
  const auto& first = net.layers[n.layers.front()];
  return n.fused ? TileTarget::fused_pair(first, net.layers[n.layers[1]], ins[n.layers.front()])
                 : TileTarget::single(first, ins[n.layers.front()]);
}

}  // namespace

void plan_graph(ExecutionGraph& graph, const NetworkManifest& net, const MemoryConfig& cfg, const PlanOptions& opts) {
  const auto ins = layer_inputs(net);
  for (auto& n : graph.nodes) {
    n.target = make_target(n, net, ins);
    n.plan = plan_target(n.target, cfg, opts);
    n.planned = true;
  }
}

ExecutionGraph graph_from_plans(const NetworkManifest& net, const std::vector<TilePlan>& plans,
                                const MemoryConfig& cfg) {
  cfg.validate();
  const auto ins = layer_inputs(net);
  ExecutionGraph g;
  std::size_t next = 0;
  for (const auto& p : plans) {
    ExecNode n;
    n.fused = p.fused;
    if (p.layers.size() != (p.fused ? 2u : 1u))
      throw SchemaError("plan '" + p.target + "': wrong number of layers for a " + (p.fused ? "fused" : "single") +
                        " node");
    for (const auto& id : p.layers) {
      if (next >= net.layers.size() || net.layers[next].id != id)
        throw SchemaError("plan '" + p.target + "': layer '" + id + "' is not the next manifest layer");
      n.layers.push_back(next++);
    }
    n.target = make_target(n, net, ins);
    if (p.rows_out < 1 || p.rows_out > n.target.out.h || p.k_tile < 1 || p.k_tile > n.target.k() ||
        (p.fused && p.fb < 1))
      throw SchemaError("plan '" + p.target + "': tiling parameters out of range");
    if (p.weights_resident && !may_pin_weights(n.target, cfg))
      throw PlanInfeasible(n.target.id, "weights too large to pin resident");
    n.plan = make_plan(n.target, {p.rows_out, p.k_tile, p.loop_order, p.fb, p.weights_resident}, cfg);
    if (!is_feasible(n.plan, cfg))
      throw PlanInfeasible(n.target.id, "footprint " + std::to_string(n.plan.footprint_bytes) + " exceeds L1 of " +
                                            std::to_string(cfg.l1_bytes) + " bytes");
    n.planned = true;
    g.nodes.push_back(std::move(n));
  }
  if (next != net.layers.size()) throw SchemaError("plans do not cover every manifest layer");
  return g;
}

namespace {

// Copies rows [rows) and channels [c0, c1) of an HWC activation into a tile.
Tensor gather(const Tensor& src, RowSpan rows, int c0, int c1) {
  Tensor t = Tensor::zeros({rows.size(), src.shape.w, c1 - c0, Layout::HWC});
  for (int y = 0; y < rows.size(); ++y)
    for (int x = 0; x < src.shape.w; ++x)
      for (int c = c0; c < c1; ++c) t.at(y, x, c - c0) = src.at(rows.begin + y, x, c);
  return t;
}

// Writes an output tile (either layout) into the HWC activation at row y0, channel k0.
void scatter(const Tensor& tile, Tensor& dst, int y0, int k0) {
  for (int y = 0; y < tile.shape.h; ++y)
    for (int x = 0; x < tile.shape.w; ++x)
      for (int c = 0; c < tile.shape.c; ++c) dst.at(y0 + y, x, k0 + c) = tile.at(y, x, c);
}

struct LayerData {
  const LayerDesc* desc = nullptr;
  std::span<const std::int8_t> weights;
  std::vector<std::int32_t> bias;

  LayerParams slice(int k0, int k1) const {
    const auto per_k = desc->kind == LayerKind::avgpool_global
                           ? 0
                           : weight_count(desc->kind, desc->c_in, desc->c_out) / static_cast<std::uint64_t>(desc->c_out);
    const auto uk0 = static_cast<std::size_t>(k0), n = static_cast<std::size_t>(k1 - k0);
    LayerParams p;
    p.quant = desc->quant;
    if (!bias.empty()) {
      p.weights = weights.subspan(uk0 * per_k, n * per_k);
      p.bias = std::span<const std::int32_t>(bias).subspan(uk0, n);
    }
    return p;
  }
};

class NodeRunner {
 public:
  NodeRunner(const ExecNode& node, const Network& net, MemorySim& sim)
      : node_(node), t_(node.target), plan_(node.plan), sim_(sim) {
    for (auto idx : node.layers) {
      const auto& d = net.manifest.layers[idx];
      layers_.push_back({&d, net.blob.weights(d.weights_ref), net.blob.biases(d.bias_ref)});
    }
    spans_ = output_row_tiles(t_.out.h, plan_.rows_out);
  }

  Tensor run(const Tensor& in, NodeReport& rep) {
    Tensor out = Tensor::zeros({t_.out.h, t_.out.w, t_.out.c, Layout::HWC});
    const TrafficLedger before = sim_.ledger();
    sim_.l1().reset_peak();

    std::optional<Arena::Lease> pinned;
    if (plan_.weights_resident) {
      pinned = sim_.l1().allocate(t_.weight_bytes(), t_.id);
      sim_.load(t_.weight_bytes());
    }
    const int K = t_.k();
    const bool input_per_k = t_.channel_tiled_input();

    if (plan_.loop_order == LoopOrder::k_outer) {
      for (int k0 = 0; k0 < K; k0 += plan_.k_tile) {
        const int k1 = std::min(K, k0 + plan_.k_tile);
        auto w = load_weights(k0, k1);
        for (std::size_t s = 0; s < spans_.size(); ++s) {
          auto in_tile = load_input(in, s, input_per_k ? k0 : 0, input_per_k ? k1 : t_.in.c);
          compute(s, k0, k1, in_tile, out, rep);
        }
      }
    } else {
      for (std::size_t s = 0; s < spans_.size(); ++s) {
        std::optional<InputTile> shared;
        if (!input_per_k) shared = load_input(in, s, 0, t_.in.c);
        for (int k0 = 0; k0 < K; k0 += plan_.k_tile) {
          const int k1 = std::min(K, k0 + plan_.k_tile);
          auto w = load_weights(k0, k1);
          if (shared) {
            compute(s, k0, k1, *shared, out, rep);
          } else {
            auto in_tile = load_input(in, s, k0, k1);
            compute(s, k0, k1, in_tile, out, rep);
          }
        }
      }
    }
    pinned.reset();

    const TrafficLedger after = sim_.ledger();
    rep.ledger.load_bytes = after.load_bytes - before.load_bytes;
    rep.ledger.store_bytes = after.store_bytes - before.store_bytes;
    rep.ledger.reorder_bytes = after.reorder_bytes - before.reorder_bytes;
    rep.ledger.peak_l1_bytes = sim_.l1().peak();
    return out;
  }

 private:
  struct InputTile {
    Tensor data;
    RowSpan rows;
    Arena::Lease lease;
    Arena::Lease shadow;  // second buffer when double buffering
  };

  std::optional<Arena::Lease> load_weights(int k0, int k1) {
    if (plan_.weights_resident) return std::nullopt;
    const auto bytes = static_cast<std::uint64_t>(k1 - k0) * (t_.weight_bytes_per_k + t_.bias_bytes_per_k);
    auto lease = sim_.l1().allocate(bytes, t_.id);
    sim_.load(bytes);
    return lease;
  }

  InputTile load_input(const Tensor& in, std::size_t s, int c0, int c1) {
    const RowSpan rows = input_rows(t_, spans_[s]);
    InputTile tile{gather(in, rows, c0, c1), rows, {}, {}};
    const auto bytes = tile.data.data.size();
    tile.lease = sim_.l1().allocate(bytes, t_.id);
    if (sim_.config().double_buffer) tile.shadow = sim_.l1().allocate(bytes, t_.id);
    sim_.load(bytes);
    return tile;
  }

  void compute(std::size_t s, int k0, int k1, const InputTile& in, Tensor& out, NodeReport& rep) {
    const RowSpan rows = spans_[s];
    const int kc = k1 - k0;
    const auto out_bytes = static_cast<std::uint64_t>(rows.size()) * static_cast<std::uint64_t>(t_.out.w) *
                           static_cast<std::uint64_t>(kc);
    auto out_lease = sim_.l1().allocate(out_bytes, t_.id);
    Arena::Lease out_shadow;
    if (sim_.config().double_buffer) out_shadow = sim_.l1().allocate(out_bytes, t_.id);

    const Window win{t_.stride, in.rows.begin - (rows.begin * t_.stride - t_.pad), t_.pad, rows.size(), t_.out.w};
    KernelStats st;
    Tensor result;
    const auto& L0 = layers_.front();

    if (t_.fused) {
      const int fb = std::min(plan_.fb, kc);
      const auto scratch_bytes = fused_buffer_bytes(in.rows.size(), t_.in.w, kc, {fb});
      auto scratch_lease = sim_.l1().allocate(scratch_bytes, t_.id);
      std::vector<std::int8_t> scratch(scratch_bytes);
      result = fused_pw_dw(in.data, L0.slice(k0, k1), layers_[1].slice(k0, k1), win, {fb}, scratch, &st);
      rep.intermediate_bytes = std::max(rep.intermediate_bytes, st.intermediate_bytes);
      if (s > 0) {
        const RowSpan prev = input_rows(t_, spans_[s - 1]);
        const int overlap = std::max(0, prev.end - in.rows.begin);
        const auto redo = static_cast<std::uint64_t>(overlap) * static_cast<std::uint64_t>(t_.in.w) *
                          static_cast<std::uint64_t>(t_.in.c) * static_cast<std::uint64_t>(kc);
        rep.recompute_macs += redo;
        st.macs -= redo;
      }
    } else {
      switch (t_.kind) {
        case LayerKind::pw:
          result = pw_conv(in.data, L0.slice(k0, k1), &st);
          break;
        case LayerKind::conv3x3:
          result = conv3x3(in.data, L0.slice(k0, k1), win, &st);
          break;
        case LayerKind::dw3x3: {
          auto staging = sim_.l1().allocate(in.data.data.size(), t_.id);
          auto chw = layout_convert(in.data, Layout::CHW);
          sim_.reorder(chw.bytes_touched);
          result = dw_conv3x3(chw.tensor, L0.slice(k0, k1), win, &st);
          break;
        }
        case LayerKind::linear:
          result = linear(in.data, L0.slice(k0, k1), &st);
          break;
        case LayerKind::avgpool_global:
          result = avgpool_global(in.data, L0.slice(k0, k1), &st);
          break;
      }
    }
    if (result.shape.h != rows.size() || result.shape.w != t_.out.w || result.shape.c != kc)
      throw ShapeError(t_.id + ": kernel produced a tile of unexpected shape");
    rep.macs += st.macs;
    scatter(result, out, rows.begin, k0);
    sim_.store(out_bytes);
  }

  const ExecNode& node_;
  const TileTarget& t_;
  const TilePlan& plan_;
  MemorySim& sim_;
  std::vector<LayerData> layers_;
  std::vector<RowSpan> spans_;
};

}  // namespace

ExecutionResult execute(const ExecutionGraph& graph, const Network& net, const Tensor& input,
                        const MemoryConfig& cfg) {
  if (!input.shape.same_dims(net.manifest.input) || input.data.size() != input.shape.elements())
    throw ShapeError("input tensor does not match the manifest input shape");
  MemorySim sim(cfg);
  ExecutionResult r;

  auto blob_lease = sim.l2().allocate(net.blob.bytes.size(), "weights");
  Tensor act = input;
  act.shape.layout = Layout::HWC;
  auto act_lease = sim.l2().allocate(act.data.size(), "input");

  for (const auto& node : graph.nodes) {
    if (!node.planned) throw ConfigError("execution graph has an unplanned node");
    NodeReport rep;
    rep.target = node.target.id;
    rep.layers = node.target.layers;
    rep.fused = node.fused;
    rep.n_tiles = node.plan.n_tiles;
    rep.predicted = node.plan.predicted;
    if (!act.shape.same_dims(node.target.in)) throw ShapeError(node.target.id + ": activation shape mismatch");

    auto out_lease = sim.l2().allocate(node.target.out.elements(), node.target.id);
    Tensor out = NodeRunner(node, net, sim).run(act, rep);
    act = std::move(out);
    act_lease = std::move(out_lease);

    r.report.totals += rep.ledger;
    r.report.macs += rep.macs;
    r.report.recompute_macs += rep.recompute_macs;
    r.report.nodes.push_back(std::move(rep));
  }
  r.report.peak_l1_bytes = r.report.totals.peak_l1_bytes;
  r.report.peak_l2_bytes = sim.l2().peak();
  r.output = std::move(act);
  return r;
}

Tensor run_golden(const Network& net, const Tensor& input, std::uint64_t* macs) {
  if (!input.shape.same_dims(net.manifest.input) || input.data.size() != input.shape.elements())
    throw ShapeError("input tensor does not match the manifest input shape");
  Tensor act = input;
  act.shape.layout = Layout::HWC;
  KernelStats st;
  for (const auto& l : net.manifest.layers) {
    const auto bias = net.blob.biases(l.bias_ref);
    const LayerParams p{net.blob.weights(l.weights_ref), bias, l.quant};
    switch (l.kind) {
      case LayerKind::pw:
        act = pw_conv(act, p, &st);
        break;
      case LayerKind::conv3x3:
        act = conv3x3(act, p, l.stride, l.pad, &st);
        break;
      case LayerKind::dw3x3: {
        const auto chw = layout_convert(act, Layout::CHW).tensor;
        act = layout_convert(dw_conv3x3(chw, p, l.stride, l.pad, &st), Layout::HWC).tensor;
        break;
      }
      case LayerKind::linear:
        act = linear(act, p, &st);
        break;
      case LayerKind::avgpool_global:
        act = avgpool_global(act, p, &st);
        break;
    }
  }
  if (macs) *macs = st.macs;
  return act;
}

ExecutionResult run_network(const Network& net, const Tensor& input, const MemoryConfig& cfg, bool fuse,
                            const PlanOptions& opts) {
  auto g = fusion_pass(net.manifest, fuse);
  plan_graph(g, net.manifest, cfg, opts);
  return execute(g, net, input, cfg);
}

}  // namespace fusenet
