#pragma once

// Fusion pass and tiled executor. The executor stands in for the fabric
// controller: it moves every tile between simulated L2 and L1 through the
// memory simulator and hands the L1-resident tiles to the kernels.

#include <cstdint>
#include <string>
#include <vector>

#include "fusenet/kernels.hpp"
#include "fusenet/memsim.hpp"
#include "fusenet/netir.hpp"
#include "fusenet/tiler.hpp"

namespace fusenet {

struct ExecNode {
  std::vector<std::size_t> layers;  // indices into the manifest, one or two (pw, dw3x3)
  bool fused = false;
  TileTarget target;  // filled by plan_graph / graph_from_plans
  TilePlan plan;
  bool planned = false;
};

struct ExecutionGraph {
  std::vector<ExecNode> nodes;
};

// Groups adjacent (pw, dw3x3) layers into fused nodes when enabled. Scans left
// to right, so in pw, pw, dw3x3 the dw3x3 pairs with its immediate predecessor.
ExecutionGraph fusion_pass(const NetworkManifest& net, bool enable);

// Plans every node. Throws PlanInfeasible naming the offending target.
void plan_graph(ExecutionGraph& graph, const NetworkManifest& net, const MemoryConfig& cfg,
                const PlanOptions& opts = {});

// Rebuilds a planned graph from serialized plans: the plans must cover the
// manifest's layers in order. Footprint and prediction are recomputed from
// the tiling parameters under `cfg`. Throws SchemaError, PlanInfeasible.
ExecutionGraph graph_from_plans(const NetworkManifest& net, const std::vector<TilePlan>& plans,
                                const MemoryConfig& cfg);

struct NodeReport {
  std::string target;
  std::vector<std::string> layers;
  bool fused = false;
  int n_tiles = 0;
  std::uint64_t macs = 0;            // distinct MACs of the node's layers
  std::uint64_t recompute_macs = 0;  // PW MACs repeated on halo rows shared by fused row tiles
  std::uint64_t intermediate_bytes = 0;
  TrafficLedger ledger;  // instrumented
  TrafficLedger predicted;
};

struct TrafficReport {
  std::vector<NodeReport> nodes;
  TrafficLedger totals;
  std::uint64_t macs = 0;
  std::uint64_t recompute_macs = 0;
  std::uint64_t peak_l1_bytes = 0;
  std::uint64_t peak_l2_bytes = 0;
};

struct ExecutionResult {
  Tensor output;  // HWC
  TrafficReport report;
};

// Runs a planned graph tile by tile. Activations live in L2 between nodes.
// Throws ShapeError on an input mismatch and PlanInfeasible if any phase
// would overflow L1 or L2.
ExecutionResult execute(const ExecutionGraph& graph, const Network& net, const Tensor& input,
                        const MemoryConfig& cfg);

// Untiled, unfused execution with the plain kernels; the bit-exact oracle.
Tensor run_golden(const Network& net, const Tensor& input, std::uint64_t* macs = nullptr);

// Convenience: fusion pass, planning and execution in one call.
ExecutionResult run_network(const Network& net, const Tensor& input, const MemoryConfig& cfg, bool fuse,
                            const PlanOptions& opts = {});

}  // namespace fusenet
