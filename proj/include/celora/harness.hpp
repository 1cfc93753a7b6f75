// SPDX-License-Identifier: Apache-2.0
//
// Experiment grids: run scenario sweeps, aggregate per cell, compare
// variants, and write plot-ready tables.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "celora/config.hpp"
#include "celora/simcore.hpp"

namespace celora::harness {

// ---------------------------------------------------------------------------
// Rows and CSV

struct ResultRow {
  std::string scenario_id;
  std::string variant;
  int nodes = 0;
  int gateways = 0;
  double delta = 0.0;
  std::uint64_t seed = 0;
  std::string status = "ok";
  double pdr = 0.0;
  double eer = 0.0;
  std::vector<double> load_share;
  double mean_backlog = 0.0;
  std::uint64_t distill_bytes = 0;
  std::uint64_t generated = 0;
  std::uint64_t delivered = 0;
  double energy_j = 0.0;
  std::uint64_t dl_sent = 0;
  std::uint64_t dl_received = 0;
  std::uint64_t edge_decisions = 0;
  std::uint64_t distill_steps = 0;
  std::uint64_t dispatcher_decisions = 0;
  std::uint64_t log_hash = 0;
  std::string error;
};

inline const char* kRowHeader =
    "scenario_id,variant,nodes,gateways,delta,seed,status,pdr,eer,load_share,mean_backlog,distill_bytes,"
    "generated,delivered,energy_j,dl_sent,dl_received,edge_decisions,distill_steps,dispatcher_decisions,"
    "log_hash,error";

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

/// Keeps free text out of the delimiter set.
inline std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r' || c == ';') c = ' ';
  return s;
}

inline std::string to_csv(const ResultRow& r) {
  std::string share;
  for (std::size_t i = 0; i < r.load_share.size(); ++i) share += (i ? ";" : "") + format_double(r.load_share[i]);
  std::ostringstream os;
  os << r.scenario_id << ',' << r.variant << ',' << r.nodes << ',' << r.gateways << ',' << format_double(r.delta) << ','
     << r.seed << ',' << r.status << ',' << format_double(r.pdr) << ',' << format_double(r.eer) << ',' << share << ','
     << format_double(r.mean_backlog) << ',' << r.distill_bytes << ',' << r.generated << ',' << r.delivered << ','
     << format_double(r.energy_j) << ',' << r.dl_sent << ',' << r.dl_received << ',' << r.edge_decisions << ','
     << r.distill_steps << ',' << r.dispatcher_decisions << ',' << r.log_hash << ',' << sanitize(r.error);
  return os.str();
}

inline ResultRow row_from_csv(const std::string& line) {
  const auto f = split(line, ',');
  if (f.size() != 22) throw ConfigError("result row has " + std::to_string(f.size()) + " fields, expected 22");
  auto u64 = [](const std::string& s) { return static_cast<std::uint64_t>(std::stoull(s)); };
  ResultRow r;
  r.scenario_id = f[0];
  r.variant = f[1];
  r.nodes = std::stoi(f[2]);
  r.gateways = std::stoi(f[3]);
  r.delta = parse_double(f[4]);
  r.seed = u64(f[5]);
  r.status = f[6];
  r.pdr = parse_double(f[7]);
  r.eer = parse_double(f[8]);
  if (!f[9].empty())
    for (const auto& s : split(f[9], ';')) r.load_share.push_back(parse_double(s));
  r.mean_backlog = parse_double(f[10]);
  r.distill_bytes = u64(f[11]);
  r.generated = u64(f[12]);
  r.delivered = u64(f[13]);
  r.energy_j = parse_double(f[14]);
  r.dl_sent = u64(f[15]);
  r.dl_received = u64(f[16]);
  r.edge_decisions = u64(f[17]);
  r.distill_steps = u64(f[18]);
  r.dispatcher_decisions = u64(f[19]);
  r.log_hash = u64(f[20]);
  r.error = f[21];
  return r;
}

inline std::vector<ResultRow> read_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open result table '" + path + "'");
  std::string line;
  std::vector<ResultRow> rows;
  if (!std::getline(in, line) || line != kRowHeader) throw ConfigError("'" + path + "' is not a result table");
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(row_from_csv(line));
  return rows;
}

inline std::string scenario_id(const ScenarioConfig& c) {
  return "N" + std::to_string(c.nodes) + "-G" + std::to_string(c.gateways) + "-d" + format_double(c.traffic_intensity) +
         "-" + to_string(c.variant);
}

inline ResultRow make_row(const ScenarioConfig& c, const sim::Metrics& m) {
  ResultRow r;
  r.scenario_id = scenario_id(c);
  r.variant = to_string(c.variant);
  r.nodes = c.nodes;
  r.gateways = c.gateways;
  r.delta = c.traffic_intensity;
  r.seed = c.seed;
  r.pdr = m.pdr;
  r.eer = m.eer;
  r.load_share = m.gateway_load_share;
  r.mean_backlog = m.mean_backlog;
  r.distill_bytes = m.distill_logit_bytes;
  r.generated = m.generated;
  r.delivered = m.delivered;
  r.energy_j = m.energy_j;
  r.dl_sent = m.dl_sent;
  r.dl_received = m.dl_received;
  r.edge_decisions = m.edge_decisions;
  r.distill_steps = m.distill_steps;
  r.dispatcher_decisions = m.dispatcher_decisions;
  r.log_hash = m.log_hash;
  return r;
}

// ---------------------------------------------------------------------------
// Grid

struct GridSpec {
  ScenarioConfig base;
  std::vector<int> nodes{100, 200, 300, 400};
  std::vector<double> deltas{2.0};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<Variant> variants{std::begin(kAllVariants), std::end(kAllVariants)};
  unsigned workers = 1;
  std::optional<double> reference_delta;
  std::optional<int> reference_nodes;

  std::vector<ScenarioConfig> expand() const {
    std::vector<ScenarioConfig> out;
    for (int n : nodes)
      for (double d : deltas)
        for (Variant v : variants)
          for (std::uint64_t s : seeds) {
            ScenarioConfig c = base;
            c.nodes = n;
            c.traffic_intensity = d;
            c.variant = v;
            c.seed = s;
            out.push_back(std::move(c));
          }
    return out;
  }
};

/// Grid file: {"base": <scenario config>, "nodes": [...], "traffic_intensity":
/// [...], "seeds": [...], "variants": [...], "workers": n,
/// "reference_delta": x, "reference_nodes": n}.
inline GridSpec grid_from_json(const Json& j, const std::optional<ScenarioConfig>& base = std::nullopt) {
  detail::check_keys(j, "<grid>",
                     {"base", "nodes", "traffic_intensity", "seeds", "variants", "workers", "reference_delta",
                      "reference_nodes"});
  GridSpec g;
  if (base) g.base = *base;
  if (j.contains("base")) apply_json(g.base, j["base"]);
  detail::read_vector(j, "nodes", g.nodes, "grid");
  detail::read_vector(j, "traffic_intensity", g.deltas, "grid");
  detail::read_vector(j, "seeds", g.seeds, "grid");
  detail::read(j, "workers", g.workers, "grid");
  if (j.contains("variants")) {
    std::vector<std::string> names;
    detail::read_vector(j, "variants", names, "grid");
    g.variants.clear();
    for (const auto& n : names) g.variants.push_back(variant_from_string(n));
  }
  if (j.contains("reference_delta")) {
    double d = 0.0;
    detail::read(j, "reference_delta", d, "grid");
    g.reference_delta = d;
  }
  if (j.contains("reference_nodes")) {
    int n = 0;
    detail::read(j, "reference_nodes", n, "grid");
    g.reference_nodes = n;
  }
  if (g.nodes.empty() || g.deltas.empty() || g.seeds.empty() || g.variants.empty())
    throw ConfigError("grid: nodes, traffic_intensity, seeds and variants must be nonempty");
  if (g.workers == 0) g.workers = 1;
  for (const auto& c : g.expand()) c.validate();
  return g;
}

/// Runs one grid cell; failures become error rows.
inline ResultRow run_row(const ScenarioConfig& c) {
  try {
    auto res = sim::run(c);
    ResultRow r = make_row(c, res.metrics);
    if (!res.violations.empty()) {
      r.status = "invariant";
      r.error = res.violations.front();
    }
    return r;
  } catch (const std::exception& e) {
    ResultRow r;
    r.scenario_id = scenario_id(c);
    r.variant = to_string(c.variant);
    r.nodes = c.nodes;
    r.gateways = c.gateways;
    r.delta = c.traffic_intensity;
    r.seed = c.seed;
    r.status = "error";
    r.error = e.what();
    return r;
  }
}

/// Runs every (scenario, seed) of the grid. Rows reach `sink` in grid order
/// as soon as every earlier row is done, one call per row, serialized.
inline std::vector<ResultRow> run_grid(const GridSpec& grid, const std::function<void(const ResultRow&)>& sink = {}) {
  const auto cells = grid.expand();
  std::vector<std::optional<ResultRow>> done(cells.size());
  std::vector<ResultRow> rows;
  rows.reserve(cells.size());
  std::mutex mu;
  std::size_t next_task = 0, next_emit = 0;

  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next_task >= cells.size()) return;
        i = next_task++;
      }
      ResultRow r = run_row(cells[i]);
      std::lock_guard<std::mutex> lock(mu);
      done[i] = std::move(r);
      while (next_emit < done.size() && done[next_emit]) {
        if (sink) sink(*done[next_emit]);
        rows.push_back(*done[next_emit]);
        ++next_emit;
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(grid.workers, static_cast<unsigned>(cells.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return rows;
}

/// Appends rows to a CSV file, writing the header first; flushed per row.
class RowAppender {
 public:
  explicit RowAppender(const std::string& path) : out_(path, std::ios::trunc) {
    if (!out_) throw ConfigError("cannot write '" + path + "'");
    out_ << kRowHeader << '\n' << std::flush;
  }
  void operator()(const ResultRow& r) { out_ << to_csv(r) << '\n' << std::flush; }

 private:
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Summary

struct CellKey {
  int nodes = 0;
  int gateways = 0;
  double delta = 0.0;
  auto tie() const { return std::tie(nodes, gateways, delta); }
  friend bool operator<(const CellKey& a, const CellKey& b) { return a.tie() < b.tie(); }
  friend bool operator==(const CellKey& a, const CellKey& b) { return a.tie() == b.tie(); }
};

struct CellStats {
  CellKey key;
  std::string variant;
  std::size_t runs = 0;
  double pdr_mean = 0.0, pdr_std = 0.0;
  double eer_mean = 0.0, eer_std = 0.0;
};

struct Improvement {
  std::string metric;    // pdr | eer
  std::string variant;
  std::string baseline;  // another variant, or "best-of-others"
  double percent = 0.0;
  std::size_t cells = 0;
};

struct Report {
  std::vector<CellStats> cells;  // sorted by key, then variant
  std::vector<Improvement> improvements;
  std::vector<std::string> warnings;

  const CellStats* find(const CellKey& k, const std::string& variant) const {
    for (const auto& c : cells)
      if (c.key == k && c.variant == variant) return &c;
    return nullptr;
  }
};

inline std::pair<double, double> mean_std(const std::vector<double>& x) {
  if (x.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  if (x.size() < 2) return {m, 0.0};
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return {m, std::sqrt(s / static_cast<double>(x.size() - 1))};
}

/// Per-cell mean and sample standard deviation, then relative improvements:
/// for each variant A against each other variant B, the mean over shared
/// cells of (A - B) / B; against "best-of-others", B is the per-cell maximum
/// over every other variant.
inline Report summarize(const std::vector<ResultRow>& rows) {
  Report rep;
  std::map<std::pair<CellKey, std::string>, std::pair<std::vector<double>, std::vector<double>>> acc;
  std::set<std::pair<CellKey, std::string>> seen;
  for (const auto& r : rows) {
    const auto key = std::make_pair(CellKey{r.nodes, r.gateways, r.delta}, r.variant);
    seen.insert(key);
    if (r.status != "ok") continue;
    acc[key].first.push_back(r.pdr);
    acc[key].second.push_back(r.eer);
  }
  for (const auto& k : seen)
    if (!acc.count(k))
      rep.warnings.push_back("cell N=" + std::to_string(k.first.nodes) + " G=" + std::to_string(k.first.gateways) +
                             " delta=" + format_double(k.first.delta) + " " + k.second + " has no valid rows; omitted");
  for (const auto& [k, v] : acc) {
    CellStats c;
    c.key = k.first;
    c.variant = k.second;
    c.runs = v.first.size();
    std::tie(c.pdr_mean, c.pdr_std) = mean_std(v.first);
    std::tie(c.eer_mean, c.eer_std) = mean_std(v.second);
    rep.cells.push_back(c);
  }

  std::set<std::string> variants;
  std::set<CellKey> keys;
  for (const auto& c : rep.cells) {
    variants.insert(c.variant);
    keys.insert(c.key);
  }
  if (variants.size() < 2) return rep;

  for (const char* metric : {"pdr", "eer"}) {
    auto value = [metric](const CellStats& c) { return std::string(metric) == "pdr" ? c.pdr_mean : c.eer_mean; };
    for (const auto& a : variants) {
      for (const auto& b : variants) {
        if (a == b) continue;
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& k : keys) {
          const auto* ca = rep.find(k, a);
          const auto* cb = rep.find(k, b);
          if (!ca || !cb || value(*cb) == 0.0) continue;
          sum += (value(*ca) - value(*cb)) / value(*cb);
          ++n;
        }
        if (n) rep.improvements.push_back({metric, a, b, 100.0 * sum / static_cast<double>(n), n});
      }
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& k : keys) {
        const auto* ca = rep.find(k, a);
        if (!ca) continue;
        std::optional<double> best;
        for (const auto& b : variants) {
          if (b == a) continue;
          if (const auto* cb = rep.find(k, b)) best = std::max(best.value_or(value(*cb)), value(*cb));
        }
        if (!best || *best == 0.0) continue;
        sum += (value(*ca) - *best) / *best;
        ++n;
      }
      if (n) rep.improvements.push_back({metric, a, "best-of-others", 100.0 * sum / static_cast<double>(n), n});
    }
  }
  return rep;
}

inline const char* kSummaryHeader = "nodes,gateways,delta,variant,runs,pdr_mean,pdr_std,eer_mean,eer_std";
inline const char* kImprovementHeader = "metric,variant,baseline,improvement_pct,cells";

inline void write_report(const Report& rep, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream s(dir / "summary.csv", std::ios::trunc);
  s << kSummaryHeader << '\n';
  for (const auto& c : rep.cells)
    s << c.key.nodes << ',' << c.key.gateways << ',' << format_double(c.key.delta) << ',' << c.variant << ',' << c.runs
      << ',' << format_double(c.pdr_mean) << ',' << format_double(c.pdr_std) << ',' << format_double(c.eer_mean) << ','
      << format_double(c.eer_std) << '\n';
  std::ofstream i(dir / "improvements.csv", std::ios::trunc);
  i << kImprovementHeader << '\n';
  for (const auto& m : rep.improvements)
    i << m.metric << ',' << m.variant << ',' << m.baseline << ',' << format_double(m.percent) << ',' << m.cells << '\n';
  if (!s || !i) throw ConfigError("cannot write report files in '" + dir.string() + "'");
}

inline Report read_report(const std::filesystem::path& dir) {
  std::ifstream s(dir / "summary.csv");
  if (!s) throw ConfigError("cannot open '" + (dir / "summary.csv").string() + "'");
  Report rep;
  std::string line;
  if (!std::getline(s, line) || line != kSummaryHeader) throw ConfigError("summary.csv has an unexpected header");
  while (std::getline(s, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 9) throw ConfigError("summary.csv: malformed row");
    CellStats c;
    c.key = {std::stoi(f[0]), std::stoi(f[1]), parse_double(f[2])};
    c.variant = f[3];
    c.runs = std::stoul(f[4]);
    c.pdr_mean = parse_double(f[5]);
    c.pdr_std = parse_double(f[6]);
    c.eer_mean = parse_double(f[7]);
    c.eer_std = parse_double(f[8]);
    rep.cells.push_back(c);
  }
  std::ifstream i(dir / "improvements.csv");
  if (i && std::getline(i, line)) {
    while (std::getline(i, line)) {
      if (line.empty()) continue;
      const auto f = split(line, ',');
      if (f.size() != 5) throw ConfigError("improvements.csv: malformed row");
      rep.improvements.push_back({f[0], f[1], f[2], parse_double(f[3]), std::stoul(f[4])});
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Plot data

struct PlotPoint {
  double x = 0.0;
  std::string variant;
  double mean = 0.0;
  double stddev = 0.0;
};

inline const char* kPlotHeader = "x,variant,mean,stddev";

/// Value present in the report that is closest to the requested reference,
/// or the most common one when no reference is given.
template <typename T, typename Get>
T pick_reference(const Report& rep, std::optional<T> want, Get get) {
  std::map<T, int> count;
  for (const auto& c : rep.cells) ++count[get(c)];
  if (count.empty()) return T{};
  if (want && count.count(*want)) return *want;
  return std::max_element(count.begin(), count.end(), [](const auto& a, const auto& b) { return a.second < b.second; })
      ->first;
}

/// Writes pdr_vs_n.csv, eer_vs_n.csv (cells at the reference delta) and
/// pdr_vs_delta.csv, eer_vs_delta.csv (cells at the reference node count).
/// Returns the written paths.
inline std::vector<std::filesystem::path> emit_plotdata(const Report& rep, const std::filesystem::path& dir,
                                                        std::optional<double> reference_delta = std::nullopt,
                                                        std::optional<int> reference_nodes = std::nullopt) {
  std::filesystem::create_directories(dir);
  const double ref_d = pick_reference<double>(rep, reference_delta, [](const CellStats& c) { return c.key.delta; });
  const int ref_n = pick_reference<int>(rep, reference_nodes, [](const CellStats& c) { return c.key.nodes; });

  auto write = [&](const std::string& name, bool vs_nodes, bool pdr) {
    std::vector<PlotPoint> pts;
    for (const auto& c : rep.cells) {
      if (vs_nodes ? c.key.delta != ref_d : c.key.nodes != ref_n) continue;
      pts.push_back({vs_nodes ? static_cast<double>(c.key.nodes) : c.key.delta, c.variant, pdr ? c.pdr_mean : c.eer_mean,
                     pdr ? c.pdr_std : c.eer_std});
    }
    std::stable_sort(pts.begin(), pts.end(), [](const PlotPoint& a, const PlotPoint& b) {
      return std::tie(a.variant, a.x) < std::tie(b.variant, b.x);
    });
    const auto path = dir / name;
    std::ofstream out(path, std::ios::trunc);
    out << kPlotHeader << '\n';
    for (const auto& p : pts)
      out << format_double(p.x) << ',' << p.variant << ',' << format_double(p.mean) << ',' << format_double(p.stddev)
          << '\n';
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    return path;
  };
  return {write("pdr_vs_n.csv", true, true), write("eer_vs_n.csv", true, false), write("pdr_vs_delta.csv", false, true),
          write("eer_vs_delta.csv", false, false)};
}

inline std::vector<PlotPoint> read_plotdata(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kPlotHeader) throw ConfigError("unexpected plot data header");
  std::vector<PlotPoint> pts;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 4) throw ConfigError("malformed plot data row");
    pts.push_back({parse_double(f[0]), f[1], parse_double(f[2]), parse_double(f[3])});
  }
  return pts;
}

// ---------------------------------------------------------------------------
// Per-run logs

inline void write_slot_log(const std::vector<sched::SlotLog>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  out << "slot,gateway,backlog,load,lyapunov,drift,drift_plus_penalty,decisions,drops,dispatched,critic_loss,"
         "actor_loss\n";
  for (const auto& s : log)
    for (std::size_t g = 0; g < s.backlog.size(); ++g)
      out << s.slot << ',' << g << ',' << format_double(s.backlog[g]) << ',' << format_double(s.loads[g]) << ','
          << format_double(s.lyapunov) << ',' << format_double(s.drift) << ',' << format_double(s.drift_plus_penalty)
          << ',' << s.decisions << ',' << s.drops << ',' << s.dispatched[g] << ',' << format_double(s.critic_loss)
          << ',' << format_double(s.actor_loss) << '\n';
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
}

inline void write_distill_log(const std::vector<sim::DistillLogRow>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  out << "time,node,loss,agree,degenerate,logit_bytes\n";
  for (const auto& r : log)
    out << format_double(r.time) << ',' << r.node << ',' << format_double(r.loss) << ',' << (r.agree ? 1 : 0) << ','
        << (r.degenerate ? 1 : 0) << ',' << r.logit_bytes << '\n';
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
}

}  // namespace celora::harness
