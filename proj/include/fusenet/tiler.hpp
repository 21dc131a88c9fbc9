#pragma once

// Tile planning for a single layer or a fused PW+DW pair: picks output rows
// per tile, output channels per tile, loop order, FB and weight residency so
// that the L1 working set fits and predicted L2<->L1 traffic is minimal.
//
// Only output rows and output channels are tiled. Input channels are never
// split, so every tile produces finished (requantized) outputs.

#include <cstdint>
#include <string>
#include <vector>

#include "fusenet/memsim.hpp"
#include "fusenet/netir.hpp"

namespace fusenet {

enum class LoopOrder { k_outer, spatial_outer };

std::string_view to_string(LoopOrder order);
LoopOrder loop_order_from_string(std::string_view s);

// Shape summary of a schedulable unit: one layer, or a pw followed by a dw3x3.
struct TileTarget {
  std::string id;                   // layer id, or "pw_id+dw_id" for a fused pair
  std::vector<std::string> layers;  // member layer ids in order
  LayerKind kind = LayerKind::pw;   // kind of the single layer; dw3x3 for fused pairs
  bool fused = false;
  TensorShape in;
  TensorShape out;
  int stride = 1;
  int pad = 0;
  std::uint64_t weight_bytes_per_k = 0;  // int8 weights per output channel
  std::uint64_t bias_bytes_per_k = 0;

  static TileTarget single(const LayerDesc& layer, const TensorShape& in);
  // Throws ShapeError unless pw is a pw layer and dw a dw3x3 consuming its output.
  static TileTarget fused_pair(const LayerDesc& pw, const LayerDesc& dw, const TensorShape& in);

  int k() const { return out.c; }
  // Input tiles carry only the tile's channels (dw3x3, avgpool_global).
  bool channel_tiled_input() const;
  // Unfused dw3x3 converts every loaded HWC input tile to CHW in L1.
  bool reorders_input() const { return !fused && kind == LayerKind::dw3x3; }
  std::uint64_t weight_bytes() const { return static_cast<std::uint64_t>(k()) * (weight_bytes_per_k + bias_bytes_per_k); }
};

struct RowSpan {
  int begin = 0;
  int end = 0;
  int size() const { return end - begin; }
  friend bool operator==(const RowSpan&, const RowSpan&) = default;
};

// Output rows split into consecutive tiles of `rows_out` (last one partial).
std::vector<RowSpan> output_row_tiles(int out_h, int rows_out);

// Input rows an output-row tile reads, clipped to the image; halo rows are
// re-fetched by every tile that needs them. The last tile of a fused pair
// extends to the final input row so the PW covers the whole input.
RowSpan input_rows(const TileTarget& t, RowSpan out_rows);

// Working set of one tile phase.
Footprint tile_footprint(const TileTarget& t, int in_rows, int out_rows, int k, int fb, bool weights_resident);

struct TilePlan {
  std::string target;
  std::vector<std::string> layers;
  bool fused = false;
  int rows_out = 1;
  int k_tile = 1;
  int fb = 0;  // effective fused batch, min(requested, k_tile); 0 for single layers
  LoopOrder loop_order = LoopOrder::k_outer;
  bool weights_resident = false;
  int n_tiles = 1;
  std::uint64_t footprint_bytes = 0;  // effective (double-buffered) peak working set
  TrafficLedger predicted;

  friend bool operator==(const TilePlan&, const TilePlan&) = default;
};

struct PlanCandidate {
  int rows_out = 1;
  int k_tile = 1;
  LoopOrder loop_order = LoopOrder::k_outer;
  int fb = 0;
  bool weights_resident = false;
};

// Weights may be pinned in L1 for the whole node when below 5% of L1.
bool may_pin_weights(const TileTarget& t, const MemoryConfig& cfg);

// Builds the plan for one candidate (footprint and predicted traffic filled
// in) without checking feasibility.
TilePlan make_plan(const TileTarget& t, const PlanCandidate& c, const MemoryConfig& cfg);

// Closed-form traffic of a plan.
TrafficLedger predict_traffic(const TilePlan& plan, const TileTarget& t, const MemoryConfig& cfg);

bool is_feasible(const TilePlan& plan, const MemoryConfig& cfg);

struct PlanOptions {
  // FB values tried for fused targets; empty means {min(8, K)}.
  std::vector<int> fb_candidates;
};

// Every candidate the planner considers, feasible or not.
std::vector<PlanCandidate> enumerate_candidates(const TileTarget& t, const MemoryConfig& cfg,
                                                const PlanOptions& opts = {});

// Cheapest feasible plan by load+store+reorder bytes; ties go to more output
// rows, then more channels, then k_outer, then non-resident weights, then
// larger FB. Throws PlanInfeasible.
TilePlan plan_target(const TileTarget& t, const MemoryConfig& cfg, const PlanOptions& opts = {});

TilePlan plan_layer(const LayerDesc& layer, const TensorShape& in, const MemoryConfig& cfg,
                    const LayerDesc* fuse_next = nullptr, const PlanOptions& opts = {});

}  // namespace fusenet
