#include "fusenet/report.hpp"

#include "fusenet/errors.hpp"

namespace fusenet {

Json to_json(const TrafficLedger& l) {
  return Json{{"load_bytes", l.load_bytes},
              {"store_bytes", l.store_bytes},
              {"reorder_bytes", l.reorder_bytes},
              {"peak_l1_bytes", l.peak_l1_bytes}};
}

Json to_json(const TilePlan& p) {
  Json j;
  j["target"] = p.target;
  j["layers"] = p.layers;
  j["fused"] = p.fused;
  j["rows_out"] = p.rows_out;
  j["k_tile"] = p.k_tile;
  j["fb"] = p.fb;
  j["loop_order"] = std::string(to_string(p.loop_order));
  j["weights_resident"] = p.weights_resident;
  j["n_tiles"] = p.n_tiles;
  j["footprint_bytes"] = p.footprint_bytes;
  j["predicted"] = to_json(p.predicted);
  return j;
}

Json to_json(const NodeReport& n) {
  Json j;
  j["target"] = n.target;
  j["layers"] = n.layers;
  j["fused"] = n.fused;
  j["n_tiles"] = n.n_tiles;
  j["macs"] = n.macs;
  j["recompute_macs"] = n.recompute_macs;
  j["intermediate_bytes"] = n.intermediate_bytes;
  j["ledger"] = to_json(n.ledger);
  j["predicted"] = to_json(n.predicted);
  return j;
}

Json to_json(const TrafficReport& r) {
  Json j;
  Json nodes = Json::array();
  for (const auto& n : r.nodes) nodes.push_back(to_json(n));
  j["nodes"] = std::move(nodes);
  j["totals"] = to_json(r.totals);
  j["macs"] = r.macs;
  j["recompute_macs"] = r.recompute_macs;
  j["peak_l1_bytes"] = r.peak_l1_bytes;
  j["peak_l2_bytes"] = r.peak_l2_bytes;
  return j;
}

namespace {

template <typename T>
T get(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError(std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw SchemaError(std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace

TrafficLedger ledger_from_json(const Json& j) {
  TrafficLedger l;
  l.load_bytes = get<std::uint64_t>(j, "load_bytes");
  l.store_bytes = get<std::uint64_t>(j, "store_bytes");
  l.reorder_bytes = get<std::uint64_t>(j, "reorder_bytes");
  l.peak_l1_bytes = get<std::uint64_t>(j, "peak_l1_bytes");
  return l;
}

TilePlan plan_from_json(const Json& j) {
  if (!j.is_object()) throw SchemaError("plan entry must be an object");
  TilePlan p;
  p.target = get<std::string>(j, "target");
  p.layers = get<std::vector<std::string>>(j, "layers");
  p.fused = get<bool>(j, "fused");
  p.rows_out = get<int>(j, "rows_out");
  p.k_tile = get<int>(j, "k_tile");
  p.fb = get<int>(j, "fb");
  p.loop_order = loop_order_from_string(get<std::string>(j, "loop_order"));
  p.weights_resident = get<bool>(j, "weights_resident");
  p.n_tiles = get<int>(j, "n_tiles");
  p.footprint_bytes = get<std::uint64_t>(j, "footprint_bytes");
  if (auto it = j.find("predicted"); it != j.end()) p.predicted = ledger_from_json(*it);
  return p;
}

Json plan_document(const ExecutionGraph& g, const MemoryConfig& cfg, bool fuse) {
  Json doc;
  doc["l1_bytes"] = cfg.l1_bytes;
  doc["l2_bytes"] = cfg.l2_bytes;
  doc["double_buffer"] = cfg.double_buffer;
  doc["fuse"] = fuse;
  Json nodes = Json::array();
  TrafficLedger total;
  for (const auto& n : g.nodes) {
    nodes.push_back(to_json(n.plan));
    total += n.plan.predicted;
  }
  doc["nodes"] = std::move(nodes);
  doc["predicted_totals"] = to_json(total);
  return doc;
}

std::vector<TilePlan> plans_from_document(const Json& doc) {
  if (!doc.is_object()) throw SchemaError("plan document must be an object");
  auto it = doc.find("nodes");
  if (it == doc.end() || !it->is_array()) throw SchemaError("plan document needs a 'nodes' array");
  std::vector<TilePlan> plans;
  for (const auto& n : *it) plans.push_back(plan_from_json(n));
  return plans;
}

}  // namespace fusenet
