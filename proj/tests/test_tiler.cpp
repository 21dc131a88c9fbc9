#include <random>

#include "doctest.h"
#include "fusenet/errors.hpp"
#include "fusenet/tiler.hpp"

using namespace fusenet;

namespace {

LayerDesc desc(LayerKind kind, int c_in, int c_out, int stride = 1, int pad = 0, std::string id = "L") {
  LayerDesc l;
  l.id = std::move(id);
  l.kind = kind;
  l.c_in = c_in;
  l.c_out = c_out;
  l.stride = stride;
  l.pad = pad;
  return l;
}

// Loop-by-loop byte count of a plan, written from the loop-order rules without
// the closed-form sums: walks every tile in execution order.
std::uint64_t walk_cost(const TileTarget& t, const TilePlan& p) {
  const auto K = t.k();
  const auto spans = output_row_tiles(t.out.h, p.rows_out);
  const auto wpk = t.weight_bytes_per_k + t.bias_bytes_per_k;
  std::uint64_t bytes = p.weights_resident ? static_cast<std::uint64_t>(K) * wpk : 0;
  const auto in_bytes = [&](const RowSpan& s, int kc) {
    const auto r = input_rows(t, s);
    return static_cast<std::uint64_t>(r.size() * t.in.w * (t.channel_tiled_input() ? kc : t.in.c));
  };
  const auto tile = [&](const RowSpan& s, int kc) {
    std::uint64_t b = static_cast<std::uint64_t>(s.size() * t.out.w * kc);  // store
    if (t.reorders_input()) b += in_bytes(s, kc);
    return b;
  };
  if (p.loop_order == LoopOrder::k_outer) {
    for (int k0 = 0; k0 < K; k0 += p.k_tile) {
      const int kc = std::min(p.k_tile, K - k0);
      if (!p.weights_resident) bytes += static_cast<std::uint64_t>(kc) * wpk;
      for (const auto& s : spans) bytes += in_bytes(s, kc) + tile(s, kc);
    }
  } else {
    for (const auto& s : spans) {
      if (!t.channel_tiled_input()) bytes += in_bytes(s, 0);
      for (int k0 = 0; k0 < K; k0 += p.k_tile) {
        const int kc = std::min(p.k_tile, K - k0);
        if (!p.weights_resident) bytes += static_cast<std::uint64_t>(kc) * wpk;
        if (t.channel_tiled_input()) bytes += in_bytes(s, kc);
        bytes += tile(s, kc);
      }
    }
  }
  return bytes;
}

TileTarget random_target(std::mt19937& rng, int max_oh, int max_k) {
  const int kinds = 4;
  const int pick = static_cast<int>(rng() % kinds);
  const int h = 3 + static_cast<int>(rng() % static_cast<unsigned>(max_oh)), w = 3 + static_cast<int>(rng() % 12);
  const int c = 1 + static_cast<int>(rng() % 16), k = 1 + static_cast<int>(rng() % static_cast<unsigned>(max_k));
  const int stride = 1 + static_cast<int>(rng() % 2), pad = static_cast<int>(rng() % 2);
  const TensorShape in{h, w, c, Layout::HWC};
  switch (pick) {
    case 0: return TileTarget::single(desc(LayerKind::pw, c, k), in);
    case 1: return TileTarget::single(desc(LayerKind::dw3x3, c, c, stride, pad), in);
    case 2: return TileTarget::single(desc(LayerKind::conv3x3, c, k, stride, pad), in);
    default: {
      const auto pw = desc(LayerKind::pw, c, k, 1, 0, "p");
      return TileTarget::fused_pair(pw, desc(LayerKind::dw3x3, k, k, stride, pad, "d"), in);
    }
  }
}

}  // namespace

TEST_CASE("a layer that fits whole is a single tile with raw operand traffic") {
  const auto l = desc(LayerKind::pw, 8, 16);
  const TensorShape in{10, 10, 8, Layout::HWC};
  const auto p = plan_layer(l, in, MemoryConfig{});
  CHECK(p.n_tiles == 1);
  CHECK(p.rows_out == 10);
  CHECK(p.k_tile == 16);
  CHECK(p.predicted.load_bytes == 800 + 16 * 8 + 16 * 4);
  CHECK(p.predicted.store_bytes == 1600);
  CHECK(p.predicted.reorder_bytes == 0);
  CHECK(p.footprint_bytes == 800 + 128 + 64 + 1600);
  CHECK_FALSE(p.weights_resident);
}

TEST_CASE("unfused dw3x3 pays one reorder pass per loaded input tile") {
  const auto t = TileTarget::single(desc(LayerKind::dw3x3, 4, 4, 1, 1), {8, 8, 4, Layout::HWC});
  const auto p = make_plan(t, {4, 4, LoopOrder::k_outer, 0, false}, MemoryConfig{});
  // Two row tiles reading input rows [0,5) and [3,8): 5 rows x 8 cols x 4 channels each.
  CHECK(p.n_tiles == 2);
  CHECK(p.predicted.reorder_bytes == 2 * 5 * 8 * 4);

  SUBCASE("and the planner keeps it when tiling is forced by a small L1") {
    const auto big = TileTarget::single(desc(LayerKind::dw3x3, 32, 32, 1, 1), {32, 32, 32, Layout::HWC});
    const auto q = plan_target(big, {8192, 524288, false});
    CHECK(q.n_tiles > 1);
    CHECK(q.predicted.reorder_bytes == q.predicted.load_bytes - big.weight_bytes());
    CHECK(q.predicted.reorder_bytes >= 32 * 32 * 32);
  }
}

TEST_CASE("two row tiles at stride 1, pad 1 re-fetch exactly two halo rows") {
  const int h = 8, w = 6, c = 3;
  const auto t = TileTarget::single(desc(LayerKind::conv3x3, c, 4, 1, 1), {h, w, c, Layout::HWC});
  const auto p = make_plan(t, {4, 4, LoopOrder::k_outer, 0, false}, MemoryConfig{});
  CHECK(p.n_tiles == 2);
  const std::uint64_t raw_input = h * w * c;
  CHECK(p.predicted.load_bytes - t.weight_bytes() == raw_input + 2 * w * c);
}

TEST_CASE("fused tile input rows") {
  const auto pw = desc(LayerKind::pw, 4, 8, 1, 0, "p");
  SUBCASE("stride 2, pad 0 leaves a trailing row that the last tile still covers") {
    const auto t = TileTarget::fused_pair(pw, desc(LayerKind::dw3x3, 8, 8, 2, 0, "d"), {8, 5, 4, Layout::HWC});
    CHECK(t.out.h == 3);
    CHECK(input_rows(t, {0, 2}) == RowSpan{0, 5});
    CHECK(input_rows(t, {2, 3}) == RowSpan{4, 8});
    const auto single = TileTarget::single(desc(LayerKind::dw3x3, 8, 8, 2, 0), {8, 5, 8, Layout::HWC});
    CHECK(input_rows(single, {2, 3}) == RowSpan{4, 7});
  }
  SUBCASE("intermediate buffer term is exactly rows_in * w * fb") {
    const auto t = TileTarget::fused_pair(pw, desc(LayerKind::dw3x3, 8, 8, 1, 1, "d"), {12, 7, 4, Layout::HWC});
    const auto a = tile_footprint(t, 6, 4, 8, 3, false);
    const auto b = tile_footprint(t, 6, 4, 8, 0, false);
    CHECK(a.resident - b.resident == 6 * 7 * 3);
  }
}

TEST_CASE("loop order choice follows brute force on a weight-heavy layer") {
  // conv3x3 32 -> 64 on 16x16: weights (18432 + 256 bytes) dwarf the input rows.
  const auto t = TileTarget::single(desc(LayerKind::conv3x3, 32, 64, 1, 1), {16, 16, 32, Layout::HWC});
  const MemoryConfig cfg{16384, 524288, false};
  const auto p = plan_target(t, cfg);
  std::uint64_t best[2] = {UINT64_MAX, UINT64_MAX};
  for (const auto& c : enumerate_candidates(t, cfg)) {
    const auto q = make_plan(t, c, cfg);
    if (!is_feasible(q, cfg)) continue;
    auto& b = best[c.loop_order == LoopOrder::k_outer ? 0 : 1];
    b = std::min(b, q.predicted.cost());
  }
  CHECK(best[0] != best[1]);
  CHECK(p.predicted.cost() == std::min(best[0], best[1]));
  CHECK(p.loop_order == (best[0] < best[1] ? LoopOrder::k_outer : LoopOrder::spatial_outer));
}

TEST_CASE("fused pw(16->32)+dw on 32x32 with 8 kB L1 beats the unfused pair") {
  const auto pw = desc(LayerKind::pw, 16, 32, 1, 0, "pw");
  const auto dw = desc(LayerKind::dw3x3, 32, 32, 1, 1, "dw");
  const TensorShape in{32, 32, 16, Layout::HWC};
  const MemoryConfig cfg{8192, 524288, false};
  const auto fused = plan_layer(pw, in, cfg, &dw);
  const auto p1 = plan_layer(pw, in, cfg);
  const auto p2 = plan_layer(dw, {32, 32, 32, Layout::HWC}, cfg);
  const auto unfused_moved = p1.predicted.moved() + p2.predicted.moved();
  const auto refetch = fused.predicted.load_bytes - (32 * 32 * 16 + 32 * (16 + 9 + 8));
  CHECK(fused.fb == std::min(8, fused.k_tile));
  CHECK(fused.predicted.reorder_bytes == 0);
  CHECK(p2.predicted.reorder_bytes > 0);
  CHECK(fused.predicted.moved() < unfused_moved);
  CHECK(unfused_moved - fused.predicted.moved() >= 2 * 32768 - refetch);
}

TEST_CASE("closed-form prediction equals a loop-by-loop walk") {
  std::mt19937 rng(77);
  for (int i = 0; i < 200; ++i) {
    const auto t = random_target(rng, 14, 12);
    const PlanCandidate c{1 + static_cast<int>(rng() % static_cast<unsigned>(t.out.h)),
                          1 + static_cast<int>(rng() % static_cast<unsigned>(t.k())),
                          rng() % 2 ? LoopOrder::k_outer : LoopOrder::spatial_outer, 1 + static_cast<int>(rng() % 8),
                          rng() % 3 == 0};
    const auto p = make_plan(t, c, MemoryConfig{});
    CHECK(p.predicted.cost() == walk_cost(t, p));
  }
}

TEST_CASE("planner is optimal, feasible and monotone in L1 size") {
  std::mt19937 rng(99);
  for (int i = 0; i < 60; ++i) {
    const auto t = random_target(rng, 8, 16);
    if (t.out.h > 8) continue;
    std::uint64_t prev = UINT64_MAX;
    for (std::uint64_t l1 : {512u, 1024u, 2048u, 4096u, 16384u, 65536u}) {
      const MemoryConfig cfg{l1, 524288, false};
      std::uint64_t brute = UINT64_MAX;
      for (const auto& c : enumerate_candidates(t, cfg)) {
        const auto q = make_plan(t, c, cfg);
        if (q.footprint_bytes <= l1) brute = std::min(brute, walk_cost(t, q));
      }
      if (brute == UINT64_MAX) {
        CHECK_THROWS_AS(plan_target(t, cfg), PlanInfeasible);
        continue;
      }
      const auto p = plan_target(t, cfg);
      CHECK(check_fit(p.footprint_bytes, cfg));
      CHECK(p.predicted.cost() == brute);
      CHECK(p.predicted.cost() <= prev);
      prev = p.predicted.cost();
    }
  }
}

TEST_CASE("FB defaults to min(8, K) and honours a caller sweep") {
  const auto pw = desc(LayerKind::pw, 4, 16, 1, 0, "p");
  const auto dw = desc(LayerKind::dw3x3, 16, 16, 1, 1, "d");
  const TensorShape in{8, 8, 4, Layout::HWC};
  CHECK(plan_layer(pw, in, MemoryConfig{}, &dw).fb == 8);

  const auto pw3 = desc(LayerKind::pw, 4, 3, 1, 0, "p");
  const auto dw3 = desc(LayerKind::dw3x3, 3, 3, 1, 1, "d");
  CHECK(plan_layer(pw3, in, MemoryConfig{}, &dw3).fb == 3);

  // With a tight L1 a smaller FB can be what makes a bigger tile fit.
  const auto t = TileTarget::fused_pair(pw, dw, {32, 32, 4, Layout::HWC});
  const MemoryConfig tight{6000, 524288, false};
  const auto swept = plan_target(t, tight, {{1, 2, 4, 8}});
  const auto fixed = plan_target(t, tight);
  CHECK(swept.predicted.cost() <= fixed.predicted.cost());
}

TEST_CASE("weights are pinned only below 5% of L1") {
  const auto t = TileTarget::single(desc(LayerKind::pw, 16, 16), {8, 8, 16, Layout::HWC});
  // 16 * (16 + 4) = 320 bytes of weights.
  CHECK(may_pin_weights(t, {6401, 65536, false}));
  CHECK_FALSE(may_pin_weights(t, {6400, 65536, false}));
  for (const auto& c : enumerate_candidates(t, {6400, 65536, false})) CHECK_FALSE(c.weights_resident);
}

TEST_CASE("absurd budgets are infeasible") {
  const auto l = desc(LayerKind::conv3x3, 3, 8, 1, 1, "conv");
  try {
    plan_layer(l, {16, 16, 3, Layout::HWC}, {64, 524288, false});
    FAIL("expected PlanInfeasible");
  } catch (const PlanInfeasible& e) {
    CHECK(e.target() == "conv");
  }
}

TEST_CASE("double buffering is reflected in the footprint") {
  const auto t = TileTarget::single(desc(LayerKind::pw, 8, 8), {16, 16, 8, Layout::HWC});
  const auto a = make_plan(t, {4, 8, LoopOrder::k_outer, 0, false}, {65536, 524288, false});
  const auto b = make_plan(t, {4, 8, LoopOrder::k_outer, 0, false}, {65536, 524288, true});
  CHECK(b.footprint_bytes - a.footprint_bytes == 4 * 16 * 8 + 4 * 16 * 8);
  CHECK(a.predicted.moved() == b.predicted.moved());
}
