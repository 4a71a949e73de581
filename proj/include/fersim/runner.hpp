// Experiment orchestration: cohort construction, the per-tick loop and all
// run outputs (metrics CSV, degradation CSV, snapshot stream, manifest).
//
// Tick contract, for t in [0, t_learn + |sigma| * t_block):
//   0. from t = t_learn on, every agent is frozen;
//   1. every agent draws its display at sigma(t) from its own substream;
//   2. in a seeded permutation, each agent classifies its occupied Moore
//      neighbors; while learning it then trains on its own display and on
//      each confidently classified neighbor, in neighbor order;
//   3. in the same permutation, each agent decides and attempts its move,
//      then updates its trust trace.
#pragma once

#include <atomic>
#include <charconv>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fersim/adapter.hpp"
#include "fersim/agents.hpp"
#include "fersim/config.hpp"
#include "fersim/corpus.hpp"
#include "fersim/errors.hpp"
#include "fersim/lattice.hpp"
#include "fersim/metrics.hpp"
#include "fersim/rng.hpp"
#include "fersim/schedule.hpp"
#include "fersim/synthetic.hpp"

namespace fersim {

inline constexpr int kMetricsCsvVersion = 1;
inline constexpr int kSnapshotVersion = 1;

inline constexpr const char* kTickOrdering =
    "display-all; perceive+self-train+peer-train in permutation; move+trust in permutation";

/// Stream id used for the per-tick permutation (not an agent id).
inline constexpr std::uint64_t kSchedulerStream = ~std::uint64_t{0};

/// Per-group counts in store group order, e.g. "8/2".
inline std::string cohort_label(const ExperimentConfig& cfg, const EmbeddingStore& store) {
  std::string out;
  for (std::size_t g = 0; g < store.groups().size(); ++g) {
    if (g) out += "/";
    auto it = cfg.cohort.find(store.groups()[g]);
    out += std::to_string(it == cfg.cohort.end() ? 0 : it->second);
  }
  return out;
}

/// Store-dependent config checks.
inline void validate_against_store(const ExperimentConfig& cfg, const EmbeddingStore& store) {
  for (const auto& [name, count] : cfg.cohort) {
    const auto g = store.group_index(name);
    if (!g) throw ConfigError("cohort group '" + name + "' is not in the embedding store");
    if (count > store.identities_per_group()[*g]) {
      throw ConfigError("cohort asks for " + std::to_string(count) + " '" + name + "' agents but the store has " +
                        std::to_string(store.identities_per_group()[*g]) + " identities");
    }
  }
  if (cfg.t_learn > 0 && !store.has_sigma(0)) throw ConfigError("store lacks sigma 0 needed for learning");
  for (int s : cfg.sigma_levels) {
    if (!store.has_sigma(s)) throw ConfigError("sigma level " + std::to_string(s) + " is not in the store");
  }
}

struct Cohort {
  std::vector<Agent> agents;
  Occupancy occupancy;
};

/// Identities are drawn without replacement per group, cells without
/// replacement over the whole lattice, adapters from per-agent seeds.
inline Cohort build_cohort(const ExperimentConfig& cfg, const EmbeddingStore& store) {
  validate_against_store(cfg, store);
  const Torus torus(cfg.grid_width, cfg.grid_height);
  Cohort cohort{{}, Occupancy(torus)};

  for (std::size_t g = 0; g < store.groups().size(); ++g) {
    auto it = cfg.cohort.find(store.groups()[g]);
    if (it == cfg.cohort.end() || it->second == 0) continue;
    std::vector<std::size_t> ids(static_cast<std::size_t>(store.identities_per_group()[g]));
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    Engine rng = substream(cfg.seed, g, 0, Stream::kIdentity);
    shuffle(ids.begin(), ids.end(), rng);
    for (int k = 0; k < it->second; ++k) {
      Agent a;
      a.id = static_cast<AgentId>(cohort.agents.size());
      a.group = g;
      a.identity = ids[static_cast<std::size_t>(k)];
      a.expressions = store.expressions_of(g, a.identity);
      auto [params, opt] = init_params<SimReal>(store.dim(), cfg.training.hidden,
                                                mix_seed({cfg.seed, static_cast<std::uint64_t>(a.id)}));
      a.params = std::move(params);
      a.opt = std::move(opt);
      a.trust = cfg.behavior.initial_trust;
      cohort.agents.push_back(std::move(a));
    }
  }

  std::vector<std::size_t> cells(torus.cell_count());
  std::iota(cells.begin(), cells.end(), std::size_t{0});
  Engine rng = substream(cfg.seed, kSchedulerStream, 0, Stream::kPlacement);
  shuffle(cells.begin(), cells.end(), rng);
  for (auto& a : cohort.agents) {
    a.position = torus.at_index(cells[static_cast<std::size_t>(a.id)]);
    cohort.occupancy.place(a.id, a.position);
  }
  return cohort;
}

/// What happened during the most recent tick.
struct TickTrace {
  int tick = -1;
  int sigma = 0;
  std::vector<Expression> displayed;         // indexed by agent id
  std::vector<PerceptionEvent> events;       // in processing order
  std::vector<AgentId> order;                // the tick's permutation
  std::size_t peer_steps = 0;
};

class Simulation {
 public:
  Simulation(ExperimentConfig cfg, std::shared_ptr<const EmbeddingStore> store)
      : cfg_(std::move(cfg)),
        store_(std::move(store)),
        schedule_(cfg_.t_learn, cfg_.t_block, cfg_.sigma_levels),
        cohort_(build_cohort(cfg_, *store_)) {
    for (const Window& w : schedule_.windows()) windows_.emplace_back(w.index, w.sigma, w.start, w.end);
  }

  const ExperimentConfig& config() const noexcept { return cfg_; }
  const EmbeddingStore& store() const noexcept { return *store_; }
  const BlurSchedule& schedule() const noexcept { return schedule_; }
  const std::vector<Agent>& agents() const noexcept { return cohort_.agents; }
  const Occupancy& occupancy() const noexcept { return cohort_.occupancy; }
  const std::vector<BlockMetrics>& windows() const noexcept { return windows_; }
  const TickTrace& last_tick() const noexcept { return trace_; }
  int tick() const noexcept { return tick_; }
  bool done() const noexcept { return tick_ >= schedule_.run_length(); }

  void step() {
    if (done()) throw RangeError("simulation already finished");
    const int t = tick_;
    const Phase phase = schedule_.block_of(t);
    const int sigma = phase.sigma;
    auto& agents = cohort_.agents;
    auto& occupancy = cohort_.occupancy;
    BlockMetrics& window = windows_[static_cast<std::size_t>(schedule_.window_of(t))];
    const std::size_t n = agents.size();
    const auto ut = static_cast<std::uint64_t>(t);

    if (!phase.learning) {
      for (auto& a : agents) a.frozen = true;
    }

    trace_ = TickTrace{};
    trace_.tick = t;
    trace_.sigma = sigma;

    // Phase 1: every agent displays.
    std::vector<Display> displays(n);
    for (std::size_t i = 0; i < n; ++i) {
      Engine rng = substream(cfg_.seed, i, ut, Stream::kDisplay);
      displays[i] = display(agents[i], sigma, *store_, rng);
      trace_.displayed.push_back(displays[i].label);
    }

    std::vector<AgentId> order(n);
    std::iota(order.begin(), order.end(), AgentId{0});
    Engine perm_rng = substream(cfg_.seed, kSchedulerStream, ut, Stream::kPermutation);
    shuffle(order.begin(), order.end(), perm_rng);
    trace_.order = order;

    // Phase 2: perceive, then learn.
    std::vector<std::vector<PerceptionEvent>> events(n);
    for (AgentId id : order) {
      Agent& agent = agents[static_cast<std::size_t>(id)];
      std::vector<NeighborDisplay> seen;
      for (Position q : moore_neighbors(occupancy.torus(), agent.position)) {
        if (auto other = occupancy.at(q)) {
          const auto& target = agents[static_cast<std::size_t>(*other)];
          seen.push_back({*other, target.group, displays[static_cast<std::size_t>(*other)]});
        }
      }
      auto& mine = events[static_cast<std::size_t>(id)];
      mine = perceive_neighbors(agent, t, sigma, seen, cfg_.training.ln_eps);
      for (const auto& e : mine) {
        window.accumulate(e);
        trace_.events.push_back(e);
      }
      if (agent.frozen) continue;
      Engine rng = substream(cfg_.seed, static_cast<std::uint64_t>(id), ut, Stream::kTrain);
      const Display& own = displays[static_cast<std::size_t>(id)];
      self_train(agent, own.label, own.x, cfg_.training, rng);
      for (std::size_t k = 0; k < mine.size(); ++k) {
        if (peer_learn(agent, mine[k], seen[k].display.x, cfg_.training, cfg_.behavior.peer_threshold, rng)) {
          ++trace_.peer_steps;
        }
      }
    }

    // Phase 3: move, then trust.
    for (AgentId id : order) {
      Agent& agent = agents[static_cast<std::size_t>(id)];
      Engine rng = substream(cfg_.seed, static_cast<std::uint64_t>(id), ut, Stream::kMove);
      const MoveIntent intent = valence_decision(agent, events[static_cast<std::size_t>(id)], occupancy,
                                                 cfg_.behavior, rng);
      if (intent.destination && occupancy.try_move(id, *intent.destination)) agent.position = *intent.destination;
      if (cfg_.trust_enabled) trust_update(agent, events[static_cast<std::size_t>(id)], cfg_.behavior.trust_lambda);
    }

    ++tick_;
  }

  void run() {
    while (!done()) step();
  }

 private:
  ExperimentConfig cfg_;
  std::shared_ptr<const EmbeddingStore> store_;
  BlurSchedule schedule_;
  Cohort cohort_;
  std::vector<BlockMetrics> windows_;
  TickTrace trace_;
  int tick_ = 0;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline std::string format_optional(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace detail

/// One snapshot line: tick, sigma and every agent's id, group, position,
/// displayed label and trust.
inline std::string emit_snapshot(int tick, int sigma, std::span<const Agent> agents,
                                 std::span<const Expression> displayed, const std::vector<std::string>& groups) {
  nlohmann::json rec;
  rec["tick"] = tick;
  rec["sigma"] = sigma;
  auto& list = rec["agents"] = nlohmann::json::array();
  for (const Agent& a : agents) {
    list.push_back({{"id", a.id},
                    {"group", groups.at(a.group)},
                    {"x", a.position.x},
                    {"y", a.position.y},
                    {"label", std::string(name_of(displayed[static_cast<std::size_t>(a.id)]))},
                    {"trust", a.trust}});
  }
  return rec.dump();
}

inline std::string metrics_csv_header() { return "run_id,cohort,block,sigma,view,n_events,macro_f1,mean_conf,ece\n"; }
inline std::string degradation_csv_header() { return "run_id,cohort,sigma,delta\n"; }

struct RunOutput {
  std::filesystem::path metrics_csv;
  std::filesystem::path degradation_csv;
  std::filesystem::path snapshots;
  std::filesystem::path manifest;
  std::string cohort;
  int learning_windows = 0;
  std::vector<std::vector<ViewSummary>> windows;  // per reporting window
  std::vector<int> window_sigmas;
  std::vector<DegradationRow> degradation;
  std::string degradation_error;

  /// Global Macro-F1 of reporting window w, if any event was recorded.
  std::optional<double> global_f1(std::size_t w) const { return view_f1(w, "global"); }

  std::optional<double> view_f1(std::size_t w, std::string_view view) const {
    for (const auto& v : windows.at(w)) {
      if (v.view == view) return v.macro_f1;
    }
    return std::nullopt;
  }
};

inline std::shared_ptr<const EmbeddingStore> load_embeddings(const ExperimentConfig& cfg) {
  if (cfg.store_path) return std::make_shared<const EmbeddingStore>(load_store(*cfg.store_path));
  return std::make_shared<const EmbeddingStore>(generate_synthetic(cfg.resolved_synthetic()));
}

/// Runs one experiment and writes its outputs into cfg.out_dir.
inline RunOutput run_experiment(const ExperimentConfig& cfg, std::shared_ptr<const EmbeddingStore> store = nullptr) {
  cfg.validate();
  if (!store) store = load_embeddings(cfg);
  Simulation sim(cfg, store);

  std::filesystem::create_directories(cfg.out_dir);
  RunOutput out;
  out.metrics_csv = cfg.out_dir / "metrics.csv";
  out.degradation_csv = cfg.out_dir / "degradation.csv";
  out.snapshots = cfg.out_dir / "snapshots.jsonl";
  out.manifest = cfg.out_dir / "manifest.json";
  out.cohort = cohort_label(cfg, *store);
  out.learning_windows = sim.schedule().learning_window_count();

  std::ofstream snaps(out.snapshots, std::ios::binary | std::ios::trunc);
  if (!snaps) throw IoError("cannot open '" + out.snapshots.string() + "' for writing");
  while (!sim.done()) {
    sim.step();
    const auto& tr = sim.last_tick();
    if (cfg.snapshot_due(tr.tick)) {
      snaps << emit_snapshot(tr.tick, tr.sigma, sim.agents(), tr.displayed, store->groups()) << '\n';
    }
  }
  snaps.close();
  if (!snaps) throw IoError("failed writing '" + out.snapshots.string() + "'");

  std::string metrics = metrics_csv_header();
  std::vector<std::pair<int, std::optional<double>>> eval_f1;
  for (const BlockMetrics& w : sim.windows()) {
    auto views = w.summarize(store->groups(), cfg.ece_bins);
    for (const auto& v : views) {
      metrics += cfg.run_id + "," + out.cohort + "," + std::to_string(w.block()) + "," + std::to_string(w.sigma()) +
                 "," + v.view + "," + std::to_string(v.n_events) + "," + detail::format_optional(v.macro_f1) + "," +
                 detail::format_optional(v.mean_confidence) + "," + detail::format_optional(v.ece) + "\n";
      if (v.view == "global" && w.block() >= out.learning_windows) eval_f1.emplace_back(w.sigma(), v.macro_f1);
    }
    out.window_sigmas.push_back(w.sigma());
    out.windows.push_back(std::move(views));
  }
  detail::write_text(out.metrics_csv, metrics);

  std::string degradation = degradation_csv_header();
  try {
    out.degradation = degradation_table(eval_f1, cfg.delta_form);
    for (const auto& row : out.degradation) {
      degradation += cfg.run_id + "," + out.cohort + "," + std::to_string(row.sigma) + "," +
                     detail::format_double(row.delta) + "\n";
    }
  } catch (const Error& e) {
    out.degradation_error = e.what();
  }
  detail::write_text(out.degradation_csv, degradation);

  nlohmann::json manifest;
  manifest["manifest_version"] = kManifestVersion;
  manifest["config"] = config_to_json(cfg);
  manifest["formats"] = {{"embs", kStoreFormatVersion},
                         {"metrics_csv", kMetricsCsvVersion},
                         {"snapshots", kSnapshotVersion}};
  manifest["tick_ordering"] = kTickOrdering;
  manifest["run_length"] = sim.schedule().run_length();
  manifest["learning_windows"] = out.learning_windows;
  manifest["cohort"] = out.cohort;
  manifest["store"] = {{"dim", store->dim()},
                       {"groups", store->groups()},
                       {"sigma_levels", store->sigma_levels()},
                       {"record_count", store->record_count()}};
  if (!out.degradation_error.empty()) manifest["degradation_error"] = out.degradation_error;
  detail::write_text(out.manifest, manifest.dump(2) + "\n");
  return out;
}

struct SeedRange {
  std::uint64_t first = 0;
  std::uint64_t last = 0;
};

/// Parses "a..b" (inclusive) or a single seed.
inline SeedRange parse_seed_range(std::string_view text) {
  auto parse = [&](std::string_view s) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) {
      throw ConfigError("bad seed range '" + std::string(text) + "'");
    }
    return v;
  };
  const auto dots = text.find("..");
  SeedRange r;
  if (dots == std::string_view::npos) {
    r.first = r.last = parse(text);
  } else {
    r.first = parse(text.substr(0, dots));
    r.last = parse(text.substr(dots + 2));
  }
  if (r.last < r.first) throw ConfigError("seed range '" + std::string(text) + "' is empty");
  return r;
}

/// The config of seed s within a sweep: its own run id and output directory.
inline ExperimentConfig sweep_member(const ExperimentConfig& base, std::uint64_t seed) {
  ExperimentConfig c = base;
  c.seed = seed;
  c.run_id = base.run_id + "-seed" + std::to_string(seed);
  c.out_dir = base.out_dir / ("seed_" + std::to_string(seed));
  return c;
}

/// Independent seeded runs; at most `jobs` execute concurrently.
inline std::vector<RunOutput> sweep(const ExperimentConfig& base, SeedRange seeds, unsigned jobs = 1) {
  const std::size_t n = static_cast<std::size_t>(seeds.last - seeds.first + 1);
  std::vector<RunOutput> results(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        results[i] = run_experiment(sweep_member(base, seeds.first + i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
  std::vector<std::thread> pool;
  for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

struct DegradationSummaryRow {
  std::string cohort;
  int sigma = 0;
  std::size_t n = 0;
  double mean = 0;
  double stddev = 0;  // sample standard deviation; 0 for a single run
};

/// Merges every degradation.csv below dir into per-(cohort, sigma) mean and
/// standard deviation, and writes dir/degradation_summary.csv.
inline std::vector<DegradationSummaryRow> report(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("runs directory '" + dir.string() + "' does not exist");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().filename() == "degradation.csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no degradation.csv files under '" + dir.string() + "'");

  std::map<std::pair<std::string, int>, std::vector<double>> values;
  for (const auto& f : files) {
    std::ifstream in(f);
    std::string line;
    std::getline(in, line);
    if (line + "\n" != degradation_csv_header()) throw FormatError("unexpected header in '" + f.string() + "'");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> cells;
      std::stringstream ss(line);
      for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
      if (cells.size() != 4) throw FormatError("malformed row in '" + f.string() + "'");
      try {
        values[{cells[1], std::stoi(cells[2])}].push_back(std::stod(cells[3]));
      } catch (const std::exception&) {
        throw FormatError("malformed number in '" + f.string() + "'");
      }
    }
  }

  std::vector<DegradationSummaryRow> rows;
  std::string csv = "cohort,sigma,n,mean,std\n";
  for (const auto& [key, v] : values) {
    DegradationSummaryRow r{key.first, key.second, v.size(), 0, 0};
    for (double x : v) r.mean += x;
    r.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
      double ss = 0;
      for (double x : v) ss += (x - r.mean) * (x - r.mean);
      r.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    csv += r.cohort + "," + std::to_string(r.sigma) + "," + std::to_string(r.n) + "," +
           detail::format_double(r.mean) + "," + detail::format_double(r.stddev) + "\n";
    rows.push_back(std::move(r));
  }
  detail::write_text(dir / "degradation_summary.csv", csv);
  return rows;
}

}  // namespace fersim
