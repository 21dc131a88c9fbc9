#include "fusenet/memsim.hpp"

#include <algorithm>

#include "fusenet/errors.hpp"

namespace fusenet {

void MemoryConfig::validate() const {
  if (l1_bytes == 0 || l2_bytes == 0) throw ConfigError("memory sizes must be positive");
  if (l1_bytes >= l2_bytes)
    throw ConfigError("l1_bytes (" + std::to_string(l1_bytes) + ") must be smaller than l2_bytes (" +
                      std::to_string(l2_bytes) + ")");
}

TrafficLedger& TrafficLedger::operator+=(const TrafficLedger& o) {
  load_bytes += o.load_bytes;
  store_bytes += o.store_bytes;
  reorder_bytes += o.reorder_bytes;
  peak_l1_bytes = std::max(peak_l1_bytes, o.peak_l1_bytes);
  return *this;
}

TrafficLedger record_transfer(TrafficLedger ledger, Direction dir, std::uint64_t n) {
  switch (dir) {
    case Direction::load: ledger.load_bytes += n; break;
    case Direction::store: ledger.store_bytes += n; break;
    case Direction::reorder: ledger.reorder_bytes += n; break;
  }
  return ledger;
}

bool check_fit(std::uint64_t footprint, const MemoryConfig& cfg) { return footprint <= cfg.l1_bytes; }

bool check_fit(const Footprint& footprint, const MemoryConfig& cfg) {
  return footprint.effective(cfg.double_buffer) <= cfg.l1_bytes;
}

Arena::Lease& Arena::Lease::operator=(Lease&& o) noexcept {
  if (this != &o) {
    release();
    arena_ = o.arena_;
    bytes_ = o.bytes_;
    o.arena_ = nullptr;
  }
  return *this;
}

void Arena::Lease::release() {
  if (arena_) arena_->live_ -= bytes_;
  arena_ = nullptr;
}

Arena::Lease Arena::allocate(std::uint64_t bytes, std::string_view owner) {
  if (bytes > capacity_ - live_)
    throw PlanInfeasible(std::string(owner), name_ + " allocation of " + std::to_string(bytes) + " bytes with " +
                                                 std::to_string(live_) + " live exceeds capacity " +
                                                 std::to_string(capacity_));
  live_ += bytes;
  peak_ = std::max(peak_, live_);
  return Lease(this, bytes);
}

MemorySim::MemorySim(const MemoryConfig& cfg) : cfg_(cfg), l1_("L1", cfg.l1_bytes), l2_("L2", cfg.l2_bytes) {
  cfg_.validate();
}

TrafficLedger MemorySim::ledger() const {
  TrafficLedger l = ledger_;
  l.peak_l1_bytes = l1_.peak();
  return l;
}

}  // namespace fusenet
