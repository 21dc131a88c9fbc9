#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "fusenet/cli.hpp"
#include "fusenet/errors.hpp"
#include "fusenet/fixtures.hpp"

using namespace fusenet;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = FIXTURE_DIR;
const std::string kMobileNet = kFixtures + "/mobilenet_v1_025.json";
const std::string kPair = kFixtures + "/pw_dw_pair.json";

struct Invocation {
  int code;
  std::string out, err;
};

Invocation fusenet_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "fusenet");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = cli::main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("fusenet_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string write_input(const TempDir& dir, const TensorShape& shape, std::uint64_t seed, const std::string& name) {
  const auto t = random_tensor(shape, seed);
  const auto path = dir / name;
  write_file(path, {reinterpret_cast<const std::uint8_t*>(t.data.data()), t.data.size()});
  return path;
}

std::string slurp(const std::string& path) {
  const auto b = read_file(path);
  return {b.begin(), b.end()};
}

int fused_nodes(const Json& plan) {
  int n = 0;
  for (const auto& node : plan["nodes"]) n += node["fused"].get<bool>();
  return n;
}

}  // namespace

TEST_CASE("plan: fused by default, one node per layer with --no-fuse") {
  const auto f = fusenet_cli({"plan", kMobileNet});
  REQUIRE(f.code == cli::kOk);
  const auto fused = Json::parse(f.out);
  CHECK(fused_nodes(fused) == 12);
  CHECK(fused["nodes"].size() == 17);

  const auto u = fusenet_cli({"plan", kMobileNet, "--no-fuse"});
  REQUIRE(u.code == cli::kOk);
  const auto unfused = Json::parse(u.out);
  CHECK(fused_nodes(unfused) == 0);
  CHECK(unfused["nodes"].size() == 29);

  for (const auto& node : fused["nodes"]) CHECK(node["footprint_bytes"].get<std::uint64_t>() <= 65536);
}

TEST_CASE("plan: an L1 too small for any tile exits 2 and names the layer") {
  const auto r = fusenet_cli({"plan", kMobileNet, "--l1", "64"});
  CHECK(r.code == cli::kInfeasible);
  CHECK(r.err.find("conv0") != std::string::npos);
}

TEST_CASE("usage and schema errors exit 1") {
  TempDir dir;
  CHECK(fusenet_cli({}).code == cli::kUsage);
  CHECK(fusenet_cli({"plan"}).code == cli::kUsage);
  CHECK(fusenet_cli({"plan", kMobileNet, "--fuse", "--no-fuse"}).code == cli::kUsage);
  CHECK(fusenet_cli({"plan", kMobileNet, "--fb", "0"}).code == cli::kUsage);
  CHECK(fusenet_cli({"plan", dir / "missing.json"}).code == cli::kUsage);

  // A manifest whose dw layer changes channel count.
  auto text = slurp(kPair);
  const auto pos = text.find("\"c_out\": 32", text.find("\"id\": \"dw\""));
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 11, "\"c_out\": 16");
  write_file(dir / "bad.json", {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  fs::copy_file(kFixtures + "/pw_dw_pair.bin", dir / "pw_dw_pair.bin");
  const auto r = fusenet_cli({"plan", dir / "bad.json"});
  CHECK(r.code == cli::kUsage);
  CHECK_FALSE(r.err.empty());
}

TEST_CASE("run: deterministic, byte-identical outputs and reports") {
  TempDir dir;
  const auto net = load_network(kMobileNet);
  const auto input = write_input(dir, net.manifest.input, 3, "in.bin");
  for (int i = 0; i < 2; ++i) {
    const auto r = fusenet_cli({"run", kMobileNet, input, "--out", dir / ("out" + std::to_string(i)),
                                "--report", dir / ("rep" + std::to_string(i))});
    REQUIRE(r.code == cli::kOk);
  }
  CHECK(slurp(dir / "out0") == slurp(dir / "out1"));
  CHECK(slurp(dir / "rep0") == slurp(dir / "rep1"));
  CHECK(read_file(dir / "out0").size() == 4);

  const auto golden = run_golden(net, cli::read_input(input, net.manifest.input));
  const auto out = read_file(dir / "out0");
  CHECK(std::equal(out.begin(), out.end(), golden.data.begin(),
                   [](std::uint8_t a, std::int8_t b) { return static_cast<std::int8_t>(a) == b; }));
}

TEST_CASE("run: fused and unfused agree on output, not on traffic") {
  TempDir dir;
  const auto net = load_network(kPair);
  const auto input = write_input(dir, net.manifest.input, 8, "in.bin");
  REQUIRE(fusenet_cli({"run", kPair, input, "--out", dir / "f.bin", "--report", dir / "f.json", "--l1", "8192"}).code ==
          0);
  REQUIRE(fusenet_cli({"run", kPair, input, "--out", dir / "u.bin", "--report", dir / "u.json", "--l1", "8192",
                       "--no-fuse"})
              .code == 0);
  CHECK(slurp(dir / "f.bin") == slurp(dir / "u.bin"));
  const auto f = Json::parse(slurp(dir / "f.json"))["traffic"]["totals"];
  const auto u = Json::parse(slurp(dir / "u.json"))["traffic"]["totals"];
  CHECK(f["reorder_bytes"] == 0);
  CHECK(u["reorder_bytes"].get<std::uint64_t>() > 0);
  CHECK(f["store_bytes"].get<std::uint64_t>() < u["store_bytes"].get<std::uint64_t>());
}

TEST_CASE("run: zero input gives bias-only output through the whole network") {
  TempDir dir;
  const auto net = load_network(kMobileNet);
  const auto zeros = Tensor::zeros(net.manifest.input);
  const auto path = dir / "zero.bin";
  write_file(path, {reinterpret_cast<const std::uint8_t*>(zeros.data.data()), zeros.data.size()});
  REQUIRE(fusenet_cli({"run", kMobileNet, path, "--out", dir / "o.bin", "--report", dir / "r.json"}).code == 0);
  const auto out = read_file(dir / "o.bin");
  const auto golden = run_golden(net, zeros);
  REQUIRE(out.size() == golden.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(static_cast<std::int8_t>(out[i]) == golden.data[i]);
}

TEST_CASE("run: wrong input size exits 1") {
  TempDir dir;
  write_file(dir / "short.bin", std::vector<std::uint8_t>(10, 0));
  CHECK(fusenet_cli({"run", kPair, dir / "short.bin"}).code == cli::kUsage);
}

TEST_CASE("run --plan reuses a saved plan exactly") {
  TempDir dir;
  const auto net = load_network(kMobileNet);
  const auto input = write_input(dir, net.manifest.input, 4, "in.bin");
  REQUIRE(fusenet_cli({"plan", kMobileNet, "--l1", "16384", "--out", dir / "plan.json"}).code == 0);
  REQUIRE(fusenet_cli({"run", kMobileNet, input, "--l1", "16384", "--plan", dir / "plan.json", "--report",
                       dir / "a.json"})
              .code == 0);
  REQUIRE(fusenet_cli({"run", kMobileNet, input, "--l1", "16384", "--report", dir / "b.json"}).code == 0);
  CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));

  const auto plan = Json::parse(slurp(dir / "plan.json"));
  const auto report = Json::parse(slurp(dir / "a.json"));
  CHECK(report["traffic"]["totals"]["load_bytes"] == plan["predicted_totals"]["load_bytes"]);
  CHECK(report["traffic"]["totals"]["store_bytes"] == plan["predicted_totals"]["store_bytes"]);

  SUBCASE("a plan built for a bigger L1 is refused with exit 2") {
    REQUIRE(fusenet_cli({"plan", kMobileNet, "--out", dir / "big.json"}).code == 0);
    CHECK(fusenet_cli({"run", kMobileNet, input, "--l1", "4096", "--plan", dir / "big.json"}).code ==
          cli::kInfeasible);
  }
  SUBCASE("a malformed plan exits 1") {
    write_file(dir / "junk.json", std::vector<std::uint8_t>{0x7b, 0x7d});
    CHECK(fusenet_cli({"run", kMobileNet, input, "--plan", dir / "junk.json"}).code == cli::kUsage);
  }
}

TEST_CASE("compare: a chain without pw->dw pairs shows no change") {
  const auto net = build_network("plain", {8, 8, 4, Layout::HWC},
                                 {{"a", LayerKind::conv3x3, 8, 1, 1}, {"b", LayerKind::pw, 6}}, 2, "plain.bin");
  const auto cmp = cli::cmd_compare(net, {});
  CHECK(cmp["pairs"].empty());
  CHECK(cmp["delta"]["moved_pct"].get<double>() == 0.0);
  CHECK(cmp["saved_moved_bytes"] == 0);
}

TEST_CASE("compare: pw(16->32)+dw at 8 kB saves at least the intermediate round trip minus halo refetch") {
  const auto net = load_network(kPair);
  cli::CliConfig cfg;
  cfg.l1 = 8192;
  const auto cmp = cli::cmd_compare(net, cfg);
  REQUIRE(cmp["pairs"].size() == 1);
  const auto& p = cmp["pairs"][0];
  const std::int64_t minimum_load = 32 * 32 * 16 + 32 * (16 + 9 + 8);
  const std::int64_t refetch = p["fused"]["load_bytes"].get<std::int64_t>() - minimum_load;
  CHECK(refetch >= 0);
  CHECK(cmp["saved_moved_bytes"].get<std::int64_t>() >= 2 * 32768 - refetch);
  CHECK(p["fused"]["reorder_bytes"] == 0);
  CHECK(p["unfused"]["reorder_bytes"].get<std::uint64_t>() > 0);

  const auto r = fusenet_cli({"compare", kPair, "--l1", "8192"});
  CHECK(r.code == 0);
  CHECK(r.out.find("pw+dw") != std::string::npos);
  CHECK(r.out.find("total") != std::string::npos);
}

TEST_CASE("compare: MobileNet saves traffic overall") {
  const auto cmp = cli::cmd_compare(load_network(kMobileNet), {});
  CHECK(cmp["pairs"].size() == 12);
  CHECK(cmp["saved_moved_bytes"].get<std::int64_t>() > 0);
  CHECK(cmp["delta"]["moved_pct"].get<double>() < 0.0);
}

TEST_CASE("verify: passes on fixtures, fails on a corrupted blob byte") {
  const auto r = fusenet_cli({"verify", kMobileNet});
  CHECK(r.code == cli::kOk);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(fusenet_cli({"verify", kPair, "--fb", "5"}).code == cli::kOk);

  const auto net = load_network(kPair);
  cli::VerifyOptions opts;
  opts.corrupt_blob_byte = 3;  // a pw weight
  const auto bad = cli::cmd_verify(net, {}, opts);
  CHECK_FALSE(bad.pass());
  CHECK_THROWS_AS(cli::cmd_verify(net, {}, {{8}, net.blob.bytes.size()}), ConfigError);
}

TEST_CASE("gen-fixture reproduces the shipped files") {
  TempDir dir;
  REQUIRE(fusenet_cli({"gen-fixture", "pw_dw_pair", dir / "pw_dw_pair.json"}).code == 0);
  CHECK(slurp(dir / "pw_dw_pair.json") == slurp(kPair));
  CHECK(read_file(dir / "pw_dw_pair.bin") == read_file(kFixtures + "/pw_dw_pair.bin"));
  CHECK(fusenet_cli({"gen-fixture", "resnet", dir / "x.json"}).code == cli::kUsage);
}
