#pragma once

// JSON forms of plans, ledgers and traffic reports. Keys are emitted in a
// fixed order so output is byte-stable.

#include <string>
#include <vector>

#include "fusenet/memsim.hpp"
#include "fusenet/runtime.hpp"
#include "fusenet/tiler.hpp"
#include "json.hpp"

namespace fusenet {

using Json = nlohmann::ordered_json;

Json to_json(const TrafficLedger& l);
Json to_json(const TilePlan& p);
Json to_json(const NodeReport& n);
Json to_json(const TrafficReport& r);

TrafficLedger ledger_from_json(const Json& j);
TilePlan plan_from_json(const Json& j);

// Plan document: memory configuration plus one plan per node.
Json plan_document(const ExecutionGraph& g, const MemoryConfig& cfg, bool fuse);
std::vector<TilePlan> plans_from_document(const Json& doc);

}  // namespace fusenet
