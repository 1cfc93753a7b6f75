// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: single runs, grid sweeps, summaries, plot tables
// and the built-in self checks.
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "celora/celora.hpp"
#include "celora/selftest.hpp"

namespace fs = std::filesystem;
using namespace celora;

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kInvariant = 2;

struct CommonFlags {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
};

int cmd_run(const CommonFlags& f, bool event_log) {
  ScenarioConfig cfg = f.config.empty() ? ScenarioConfig{} : load_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (f.variant) cfg.variant = variant_from_string(*f.variant);
  cfg.validate();

  sim::RunOptions opt;
  opt.keep_slot_log = true;
  opt.keep_distill_log = true;
  opt.keep_event_log = event_log;
  const auto res = sim::run(cfg, opt);

  fs::create_directories(f.out);
  {
    harness::RowAppender rows((fs::path(f.out) / "results.csv").string());
    harness::ResultRow r = harness::make_row(cfg, res.metrics);
    if (!res.violations.empty()) {
      r.status = "invariant";
      r.error = res.violations.front();
    }
    rows(r);
  }
  harness::write_slot_log(res.slot_log, fs::path(f.out) / "slots.csv");
  harness::write_distill_log(res.distill_log, fs::path(f.out) / "distill.csv");
  if (event_log) {
    std::ofstream ev(fs::path(f.out) / "events.log", std::ios::trunc);
    for (const auto& line : res.event_log) ev << line << '\n';
  }

  const auto& m = res.metrics;
  std::cout << harness::scenario_id(cfg) << " variant=" << to_string(cfg.variant) << " seed=" << cfg.seed
            << " pdr=" << format_double(m.pdr) << " eer=" << format_double(m.eer) << " generated=" << m.generated
            << " delivered=" << m.delivered << " dl_sent=" << m.dl_sent << " dl_received=" << m.dl_received << '\n';
  for (const auto& v : res.violations) std::cerr << "invariant violation: " << v << '\n';
  return res.violations.empty() ? kOk : kInvariant;
}

int cmd_grid(const CommonFlags& f, unsigned workers) {
  if (f.config.empty()) throw ConfigError("grid needs --config <grid file>");
  harness::GridSpec grid = harness::grid_from_json(read_json_file(f.config));
  if (f.seed) grid.seeds = {*f.seed};
  if (f.variant) grid.variants = {variant_from_string(*f.variant)};
  if (workers) grid.workers = workers;

  fs::create_directories(f.out);
  harness::RowAppender sink((fs::path(f.out) / "results.csv").string());
  std::size_t invariant = 0, errors = 0;
  const auto rows = harness::run_grid(grid, [&](const harness::ResultRow& r) {
    sink(r);
    if (r.status == "invariant") ++invariant;
    if (r.status == "error") ++errors;
    if (r.status != "ok") std::cerr << r.scenario_id << " seed=" << r.seed << ": " << r.status << ": " << r.error << '\n';
  });
  const auto rep = harness::summarize(rows);
  harness::write_report(rep, f.out);
  harness::emit_plotdata(rep, fs::path(f.out) / "plots", grid.reference_delta, grid.reference_nodes);
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << rows.size() << " rows, " << errors << " errors, " << invariant << " invariant violations -> "
            << f.out << '\n';
  if (invariant) return kInvariant;
  return errors ? kFailure : kOk;
}

int cmd_summarize(const std::string& in, const std::string& out) {
  const auto rows = harness::read_rows(in);
  const auto rep = harness::summarize(rows);
  harness::write_report(rep, out);
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
  for (const auto& i : rep.improvements)
    if (i.baseline == "best-of-others")
      std::cout << i.metric << ' ' << i.variant << " vs best-of-others: " << format_double(i.percent) << " %\n";
  std::size_t invariant = 0;
  for (const auto& r : rows) invariant += r.status == "invariant";
  return invariant ? kInvariant : kOk;
}

int cmd_plotdata(const std::string& in, const std::string& out, std::optional<double> ref_delta,
                 std::optional<int> ref_nodes) {
  const auto rep = harness::read_report(in);
  for (const auto& p : harness::emit_plotdata(rep, out, ref_delta, ref_nodes)) std::cout << p.string() << '\n';
  return kOk;
}

int cmd_selftest(std::uint64_t seed) {
  bool ok = true;
  for (const auto& c : selftest::run_all(seed)) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " (" << c.detail << ")\n";
    ok = ok && c.passed;
  }
  return ok ? kOk : kInvariant;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"celora: LoRaWAN parameter-control simulator"};
  app.require_subcommand(1);

  CommonFlags f;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", f.config, "Config file (JSON with comments)");
    sub->add_option("-o,--out", f.out, "Output directory")->capture_default_str();
    sub->add_option("-s,--seed", f.seed, "Seed override");
    sub->add_option("-v,--variant", f.variant,
                    "Variant override: heat-ldl, only-local, only-distill, only-ly, local+distill, static-baseline, "
                    "adr-like, random");
  };

  auto* run = app.add_subcommand("run", "Run one scenario");
  add_common(run);
  bool event_log = false;
  run->add_flag("--event-log", event_log, "Also write the per-event log");

  auto* grid = app.add_subcommand("grid", "Run a sweep from a grid file");
  add_common(grid);
  unsigned workers = 0;
  grid->add_option("-j,--workers", workers, "Worker threads (overrides the grid file)");

  std::string in;
  auto* summarize = app.add_subcommand("summarize", "Aggregate a results table");
  summarize->add_option("-i,--in", in, "results.csv")->required();
  summarize->add_option("-o,--out", f.out, "Report directory")->capture_default_str();

  std::optional<double> ref_delta;
  std::optional<int> ref_nodes;
  auto* plot = app.add_subcommand("plotdata", "Write plot tables from a report directory");
  plot->add_option("-i,--in", in, "Report directory (summary.csv)")->required();
  plot->add_option("-o,--out", f.out, "Output directory")->capture_default_str();
  plot->add_option("--reference-delta", ref_delta, "Traffic intensity for the *_vs_n tables");
  plot->add_option("--reference-nodes", ref_nodes, "Node count for the *_vs_delta tables");

  auto* self = app.add_subcommand("selftest", "Run the built-in invariant and oracle checks");
  std::uint64_t self_seed = 1;
  self->add_option("-s,--seed", self_seed, "Seed for random instances")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(f, event_log);
    if (*grid) return cmd_grid(f, workers);
    if (*summarize) return cmd_summarize(in, f.out);
    if (*plot) return cmd_plotdata(in, f.out, ref_delta, ref_nodes);
    if (*self) return cmd_selftest(self_seed);
  } catch (const InvariantViolation& e) {
    std::cerr << "invariant violation: " << e.what() << '\n';
    return kInvariant;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
