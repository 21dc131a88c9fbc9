#pragma once

// Byte-accurate model of a two-level memory hierarchy: a small L1 scratchpad
// in front of a larger L2, with DMA transfers between them.

#include <cstdint>
#include <string>
#include <string_view>

namespace fusenet {

struct MemoryConfig {
  std::uint64_t l1_bytes = 64 * 1024;
  std::uint64_t l2_bytes = 512 * 1024;
  bool double_buffer = false;

  // Throws ConfigError unless 0 < l1_bytes < l2_bytes.
  void validate() const;
};

struct TrafficLedger {
  std::uint64_t load_bytes = 0;     // L2 -> L1
  std::uint64_t store_bytes = 0;    // L1 -> L2
  std::uint64_t reorder_bytes = 0;  // in-L1 layout conversion passes
  std::uint64_t peak_l1_bytes = 0;

  std::uint64_t moved() const { return load_bytes + store_bytes; }
  std::uint64_t cost() const { return load_bytes + store_bytes + reorder_bytes; }

  // Sums the counters; peak is the maximum of the two.
  TrafficLedger& operator+=(const TrafficLedger& o);
  friend bool operator==(const TrafficLedger&, const TrafficLedger&) = default;
};

enum class Direction { load, store, reorder };

TrafficLedger record_transfer(TrafficLedger ledger, Direction dir, std::uint64_t n);

// L1 working set of one tile phase. Streamed buffers (input and output tiles)
// are the ones duplicated under double buffering.
struct Footprint {
  std::uint64_t streamed = 0;
  std::uint64_t resident = 0;

  std::uint64_t effective(bool double_buffer) const { return resident + (double_buffer ? 2 : 1) * streamed; }
};

bool check_fit(std::uint64_t footprint, const MemoryConfig& cfg);
bool check_fit(const Footprint& footprint, const MemoryConfig& cfg);

// Capacity-checked allocator that only tracks sizes. Allocation returns a
// lease that gives the bytes back when it goes out of scope.
class Arena {
 public:
  class Lease {
   public:
    Lease() = default;
    Lease(Lease&& o) noexcept : arena_(o.arena_), bytes_(o.bytes_) { o.arena_ = nullptr; }
    Lease& operator=(Lease&& o) noexcept;
    Lease(const Lease&) = delete;
    Lease& operator=(const Lease&) = delete;
    ~Lease() { release(); }

    std::uint64_t bytes() const { return bytes_; }
    void release();

   private:
    friend class Arena;
    Lease(Arena* arena, std::uint64_t bytes) : arena_(arena), bytes_(bytes) {}
    Arena* arena_ = nullptr;
    std::uint64_t bytes_ = 0;
  };

  Arena(std::string name, std::uint64_t capacity) : name_(std::move(name)), capacity_(capacity) {}
  Arena(const Arena&) = delete;
  Arena& operator=(const Arena&) = delete;

  // Throws PlanInfeasible naming `owner` if the allocation would exceed capacity.
  Lease allocate(std::uint64_t bytes, std::string_view owner);

  std::uint64_t live() const { return live_; }
  std::uint64_t peak() const { return peak_; }
  std::uint64_t capacity() const { return capacity_; }
  void reset_peak() { peak_ = live_; }

 private:
  std::string name_;
  std::uint64_t capacity_;
  std::uint64_t live_ = 0;
  std::uint64_t peak_ = 0;
};

// One execution's view of the hierarchy: both arenas and the traffic ledger.
class MemorySim {
 public:
  explicit MemorySim(const MemoryConfig& cfg);

  const MemoryConfig& config() const { return cfg_; }
  Arena& l1() { return l1_; }
  Arena& l2() { return l2_; }

  void load(std::uint64_t n) { ledger_ = record_transfer(ledger_, Direction::load, n); }
  void store(std::uint64_t n) { ledger_ = record_transfer(ledger_, Direction::store, n); }
  void reorder(std::uint64_t n) { ledger_ = record_transfer(ledger_, Direction::reorder, n); }

  // Ledger with peak_l1_bytes taken from the L1 arena.
  TrafficLedger ledger() const;

 private:
  MemoryConfig cfg_;
  Arena l1_;
  Arena l2_;
  TrafficLedger ledger_;
};

}  // namespace fusenet
