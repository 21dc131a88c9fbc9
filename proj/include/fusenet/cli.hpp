#pragma once

// Command layer behind the `fusenet` executable. Each command is also a
// library function so tests can drive it without a process boundary.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fusenet/memsim.hpp"
#include "fusenet/netir.hpp"
#include "fusenet/report.hpp"
#include "fusenet/runtime.hpp"

namespace fusenet::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kInfeasible = 2, kMismatch = 3 };

struct CliConfig {
  std::uint64_t l1 = 64 * 1024;
  std::uint64_t l2 = 512 * 1024;
  bool fuse = true;
  int fb = 8;
  bool double_buffer = false;
  std::uint64_t seed = 1;

  MemoryConfig memory() const { return {l1, l2, double_buffer}; }
  PlanOptions plan_options() const { return {{fb}}; }
  // Throws ConfigError.
  void validate() const;
};

// Planned graph for the manifest, as a plan document.
Json cmd_plan(const Network& net, const CliConfig& cfg);

struct RunOutput {
  Tensor output;
  Json report;
};

// Executes with the given plans (or freshly planned ones when none are given).
RunOutput cmd_run(const Network& net, const Tensor& input, const std::optional<Json>& plan_doc, const CliConfig& cfg);

// Fused vs unfused predicted traffic, per fused pair and in total.
Json cmd_compare(const Network& net, const CliConfig& cfg);
std::string format_compare(const Json& cmp);

struct VerifyOptions {
  std::vector<int> fb_sweep{1, 3, 8};
  // Flip one byte of the blob used by the engine paths (not the golden path).
  std::optional<std::size_t> corrupt_blob_byte;
};

struct VerifyCase {
  std::string name;
  bool pass = false;
};

struct VerifyResult {
  std::vector<VerifyCase> cases;
  bool pass() const;
};

// Golden path vs unfused, fused (FB sweep) and forced multi-tile executions
// on a seeded random input; every output must be bit-identical.
VerifyResult cmd_verify(const Network& net, const CliConfig& cfg, const VerifyOptions& opts = {});

Tensor read_input(const std::string& path, const TensorShape& shape);

// Full command-line entry point; returns the process exit code.
int main(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace fusenet::cli
