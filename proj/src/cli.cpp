#include "fusenet/cli.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "fusenet/errors.hpp"
#include "fusenet/fixtures.hpp"

namespace fusenet::cli {

void CliConfig::validate() const {
  memory().validate();
  if (fb < 1) throw ConfigError("--fb must be >= 1");
}

Json cmd_plan(const Network& net, const CliConfig& cfg) {
  cfg.validate();
  auto g = fusion_pass(net.manifest, cfg.fuse);
  plan_graph(g, net.manifest, cfg.memory(), cfg.plan_options());
  return plan_document(g, cfg.memory(), cfg.fuse);
}

RunOutput cmd_run(const Network& net, const Tensor& input, const std::optional<Json>& plan_doc, const CliConfig& cfg) {
  cfg.validate();
  ExecutionGraph g;
  if (plan_doc) {
    g = graph_from_plans(net.manifest, plans_from_document(*plan_doc), cfg.memory());
  } else {
    g = fusion_pass(net.manifest, cfg.fuse);
    plan_graph(g, net.manifest, cfg.memory(), cfg.plan_options());
  }
  auto r = execute(g, net, input, cfg.memory());
  Json report;
  report["network"] = net.manifest.name;
  report["l1_bytes"] = cfg.l1;
  report["l2_bytes"] = cfg.l2;
  report["double_buffer"] = cfg.double_buffer;
  report["traffic"] = to_json(r.report);
  return {std::move(r.output), std::move(report)};
}

namespace {

double delta_pct(std::uint64_t fused, std::uint64_t unfused) {
  if (unfused == 0) return 0.0;
  return (static_cast<double>(fused) - static_cast<double>(unfused)) * 100.0 / static_cast<double>(unfused);
}

Json deltas(const TrafficLedger& f, const TrafficLedger& u) {
  return Json{{"load_pct", delta_pct(f.load_bytes, u.load_bytes)},
              {"store_pct", delta_pct(f.store_bytes, u.store_bytes)},
              {"reorder_pct", delta_pct(f.reorder_bytes, u.reorder_bytes)},
              {"moved_pct", delta_pct(f.moved(), u.moved())}};
}

Json ledger_row(const TrafficLedger& l) {
  Json j = to_json(l);
  j.erase("peak_l1_bytes");
  j["moved_bytes"] = l.moved();
  return j;
}

}  // namespace

Json cmd_compare(const Network& net, const CliConfig& cfg) {
  cfg.validate();
  auto fused = fusion_pass(net.manifest, true);
  auto unfused = fusion_pass(net.manifest, false);
  plan_graph(fused, net.manifest, cfg.memory(), cfg.plan_options());
  plan_graph(unfused, net.manifest, cfg.memory(), cfg.plan_options());

  // Unfused nodes are one per layer, so they index directly by layer.
  Json pairs = Json::array();
  TrafficLedger fused_total, unfused_total;
  for (const auto& n : unfused.nodes) unfused_total += n.plan.predicted;
  for (const auto& n : fused.nodes) {
    fused_total += n.plan.predicted;
    if (!n.fused) continue;
    TrafficLedger split;
    for (auto idx : n.layers) split += unfused.nodes[idx].plan.predicted;
    Json p;
    p["pw"] = net.manifest.layers[n.layers[0]].id;
    p["dw"] = net.manifest.layers[n.layers[1]].id;
    p["fused"] = ledger_row(n.plan.predicted);
    p["unfused"] = ledger_row(split);
    p["delta"] = deltas(n.plan.predicted, split);
    pairs.push_back(std::move(p));
  }
  Json doc;
  doc["network"] = net.manifest.name;
  doc["l1_bytes"] = cfg.l1;
  doc["pairs"] = std::move(pairs);
  doc["fused"] = ledger_row(fused_total);
  doc["unfused"] = ledger_row(unfused_total);
  doc["delta"] = deltas(fused_total, unfused_total);
  doc["saved_moved_bytes"] = static_cast<std::int64_t>(unfused_total.moved()) - static_cast<std::int64_t>(fused_total.moved());
  return doc;
}

std::string format_compare(const Json& cmp) {
  std::ostringstream os;
  const auto row = [&](const std::string& name, const Json& f, const Json& u, const Json& d) {
    os << std::left << std::setw(18) << name << std::right;
    for (const char* key : {"load_bytes", "store_bytes", "reorder_bytes"})
      os << std::setw(11) << u[key].get<std::uint64_t>() << std::setw(11) << f[key].get<std::uint64_t>();
    os << std::setw(10) << std::fixed << std::setprecision(2) << d["moved_pct"].get<double>() << "%\n";
  };
  os << std::left << std::setw(18) << "node" << std::right << std::setw(11) << "load(u)" << std::setw(11) << "load(f)"
     << std::setw(11) << "store(u)" << std::setw(11) << "store(f)" << std::setw(11) << "reord(u)" << std::setw(11)
     << "reord(f)" << std::setw(11) << "moved" << "\n";
  for (const auto& p : cmp["pairs"])
    row(p["pw"].get<std::string>() + "+" + p["dw"].get<std::string>(), p["fused"], p["unfused"], p["delta"]);
  row("total", cmp["fused"], cmp["unfused"], cmp["delta"]);
  return os.str();
}

bool VerifyResult::pass() const {
  return std::all_of(cases.begin(), cases.end(), [](const VerifyCase& c) { return c.pass; });
}

namespace {

// Forces every node into several row and channel tiles regardless of cost.
ExecutionGraph forced_tiling(const NetworkManifest& m, bool fuse, LoopOrder order, int fb, const MemoryConfig& big) {
  auto g = fusion_pass(m, fuse);
  plan_graph(g, m, big);
  for (auto& n : g.nodes) {
    const auto& t = n.target;
    const int rows = std::max(1, (t.out.h + 1) / 2);
    const int k = std::max(1, (t.k() + 2) / 3);
    n.plan = make_plan(t, {rows, k, order, fb, false}, big);
  }
  return g;
}

}  // namespace

VerifyResult cmd_verify(const Network& net, const CliConfig& cfg, const VerifyOptions& opts) {
  cfg.validate();
  const Tensor input = random_tensor(net.manifest.input, cfg.seed);
  const Tensor golden = run_golden(net, input);

  Network engine_net = net;
  if (opts.corrupt_blob_byte) {
    if (*opts.corrupt_blob_byte >= engine_net.blob.bytes.size()) throw ConfigError("corrupt byte outside blob");
    engine_net.blob.bytes[*opts.corrupt_blob_byte] ^= 0x5a;
  }

  VerifyResult r;
  const auto check = [&](std::string name, const Tensor& out) { r.cases.push_back({std::move(name), out == golden}); };
  const auto mem = cfg.memory();

  check("unfused", run_network(engine_net, input, mem, false).output);
  std::vector<int> fbs = opts.fb_sweep;
  if (std::find(fbs.begin(), fbs.end(), cfg.fb) == fbs.end()) fbs.push_back(cfg.fb);
  for (int fb : fbs) check("fused fb=" + std::to_string(fb), run_network(engine_net, input, mem, true, {{fb}}).output);

  const MemoryConfig big{std::uint64_t{1} << 32, std::uint64_t{1} << 33, cfg.double_buffer};
  for (bool fuse : {false, true})
    for (auto order : {LoopOrder::k_outer, LoopOrder::spatial_outer}) {
      const auto g = forced_tiling(engine_net.manifest, fuse, order, 3, big);
      check(std::string("tiled ") + (fuse ? "fused " : "unfused ") + std::string(to_string(order)),
            execute(g, engine_net, input, big).output);
    }
  return r;
}

Tensor read_input(const std::string& path, const TensorShape& shape) {
  const auto bytes = read_file(path);
  if (bytes.size() != shape.elements())
    throw ShapeError("input file '" + path + "' has " + std::to_string(bytes.size()) + " bytes, expected " +
                     std::to_string(shape.elements()));
  Tensor t{{shape.h, shape.w, shape.c, Layout::HWC}, std::vector<std::int8_t>(bytes.size())};
  std::memcpy(t.data.data(), bytes.data(), bytes.size());
  return t;
}

namespace {

void write_text(const std::string& path, const std::string& text) {
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

Json read_json(const std::string& path) {
  const auto bytes = read_file(path);
  try {
    return Json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fused PW+DW int8 inference engine on a simulated L1/L2 hierarchy"};
  app.require_subcommand(1);

  CliConfig cfg;
  std::string manifest_path, input_path, plan_path, out_path, report_path, fixture_name;
  bool no_fuse = false;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("manifest", manifest_path, "Network manifest (JSON)")->required();
    sub->add_option("--l1", cfg.l1, "L1 scratchpad bytes");
    sub->add_option("--l2", cfg.l2, "L2 memory bytes");
    auto* fuse = sub->add_flag("--fuse", cfg.fuse, "Fuse pw+dw3x3 pairs (default)");
    sub->add_flag("--no-fuse", no_fuse, "Run every layer separately")->excludes(fuse);
    sub->add_option("--fb", cfg.fb, "Fused batch size");
    sub->add_flag("--double-buffer", cfg.double_buffer, "Double-buffer input and output tiles");
    sub->add_option("--seed", cfg.seed, "Seed for generated inputs");
  };

  auto* plan = app.add_subcommand("plan", "Print the tile plan for every node");
  add_common(plan);
  plan->add_option("--out", out_path, "Write the plan JSON here instead of stdout");

  auto* run = app.add_subcommand("run", "Execute a network on a raw int8 HWC input");
  add_common(run);
  run->add_option("input", input_path, "Raw int8 HWC input file")->required();
  run->add_option("--plan", plan_path, "Plan JSON from `plan`");
  run->add_option("--out", out_path, "Raw int8 HWC output file");
  run->add_option("--report", report_path, "Traffic report JSON (stdout if omitted)");

  auto* compare = app.add_subcommand("compare", "Fused vs unfused traffic table");
  add_common(compare);
  compare->add_option("--report", report_path, "Also write the comparison JSON here");

  auto* verify = app.add_subcommand("verify", "Check fused and tiled execution against the golden path");
  add_common(verify);

  auto* gen = app.add_subcommand("gen-fixture", "Write a generated network (mobilenet_v1_025 or pw_dw_pair)");
  gen->add_option("name", fixture_name, "Fixture name")->required();
  gen->add_option("manifest", manifest_path, "Output manifest path")->required();
  gen->add_option("--seed", cfg.seed, "Weight seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  if (no_fuse) cfg.fuse = false;

  try {
    if (gen->parsed()) {
      Network n;
      if (fixture_name == "mobilenet_v1_025") n = mobilenet_v1_025(cfg.seed);
      else if (fixture_name == "pw_dw_pair") n = pw_dw_pair(cfg.seed);
      else throw ConfigError("unknown fixture '" + fixture_name + "'");
      save_network(n, manifest_path);
      return kOk;
    }

    const Network net = load_network(manifest_path);
    if (plan->parsed()) {
      const auto text = cmd_plan(net, cfg).dump(2) + "\n";
      if (out_path.empty()) out << text;
      else write_text(out_path, text);
    } else if (run->parsed()) {
      const Tensor input = read_input(input_path, net.manifest.input);
      std::optional<Json> plan_doc;
      if (!plan_path.empty()) plan_doc = read_json(plan_path);
      const auto r = cmd_run(net, input, plan_doc, cfg);
      if (!out_path.empty())
        write_file(out_path, {reinterpret_cast<const std::uint8_t*>(r.output.data.data()), r.output.data.size()});
      const auto text = r.report.dump(2) + "\n";
      if (report_path.empty()) out << text;
      else write_text(report_path, text);
    } else if (compare->parsed()) {
      const auto cmp = cmd_compare(net, cfg);
      out << format_compare(cmp);
      if (!report_path.empty()) write_text(report_path, cmp.dump(2) + "\n");
    } else if (verify->parsed()) {
      const auto r = cmd_verify(net, cfg);
      for (const auto& c : r.cases) out << (c.pass ? "PASS " : "FAIL ") << c.name << "\n";
      return r.pass() ? kOk : kMismatch;
    }
    return kOk;
  } catch (const PlanInfeasible& e) {
    err << "infeasible: " << e.what() << "\n";
    return kInfeasible;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
}

}  // namespace fusenet::cli
