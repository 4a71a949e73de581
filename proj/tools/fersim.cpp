// Command-line front end: run, sweep, gen-corpus, validate, report.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "fersim/fersim.hpp"

namespace {

int fail(std::string_view kind, std::string_view message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << '\n';
  return 1;
}

fersim::ExperimentConfig resolve_config(const std::string& path, const std::optional<std::uint64_t>& seed,
                                        const std::optional<std::string>& out) {
  auto cfg = fersim::load_config(path);
  if (seed) cfg.seed = *seed;
  if (out) cfg.out_dir = *out;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Agent-based simulator of cross-cultural expression recognition under blur"};
  app.require_subcommand(1);

  std::string config_path, spec_path, store_path, out_path, runs_dir, seeds_text;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  unsigned jobs = 1;

  auto* run = app.add_subcommand("run", "Run one experiment");
  run->add_option("--config", config_path, "Config file (JSON)")->required();
  run->add_option("--seed", seed, "Override the run seed");
  run->add_option("--out", out_dir, "Override the output directory");

  auto* sweep = app.add_subcommand("sweep", "Run one experiment per seed");
  sweep->add_option("--config", config_path, "Config file (JSON)")->required();
  sweep->add_option("--seeds", seeds_text, "Inclusive seed range a..b")->required();
  sweep->add_option("--out", out_dir, "Override the output directory");
  sweep->add_option("--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic embedding store");
  gen->add_option("--spec", spec_path, "Synthetic corpus spec (JSON); defaults when omitted");
  gen->add_option("--out", out_path, "Output .embs path")->required();
  gen->add_option("--seed", seed, "Override the corpus seed");

  auto* validate = app.add_subcommand("validate", "Validate an embedding store");
  validate->add_option("--store", store_path, "Store (.embs)")->required();

  auto* report = app.add_subcommand("report", "Merge degradation tables across runs");
  report->add_option("--runs", runs_dir, "Directory holding run outputs")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("UsageError", e.what());
    return e.get_exit_code() != 0 ? e.get_exit_code() : 2;
  }

  try {
    if (*run) {
      const auto cfg = resolve_config(config_path, seed, out_dir);
      const auto result = fersim::run_experiment(cfg);
      std::cout << nlohmann::json{{"run_id", cfg.run_id},
                                  {"cohort", result.cohort},
                                  {"out_dir", cfg.out_dir.generic_string()}}
                       .dump()
                << '\n';
    } else if (*sweep) {
      const auto cfg = resolve_config(config_path, std::nullopt, out_dir);
      const auto range = fersim::parse_seed_range(seeds_text);
      fersim::sweep(cfg, range, jobs);
      std::cout << nlohmann::json{{"runs", range.last - range.first + 1},
                                  {"out_dir", cfg.out_dir.generic_string()}}
                       .dump()
                << '\n';
    } else if (*gen) {
      fersim::SyntheticCorpusSpec spec;
      if (!spec_path.empty()) {
        std::ifstream in(spec_path);
        if (!in) throw fersim::IoError("cannot open spec '" + spec_path + "'");
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
          throw fersim::ConfigError("spec '" + spec_path + "' is not valid JSON: " + e.what());
        }
        fersim::read_synthetic_spec(j, spec);
      }
      if (seed) spec.seed = *seed;
      const auto store = fersim::generate_synthetic(spec);
      fersim::write_store(store, out_path);
      std::cout << nlohmann::json{{"out", out_path}, {"records", store.record_count()}}.dump() << '\n';
    } else if (*validate) {
      const auto store = fersim::load_store(store_path);
      std::cout << nlohmann::json{{"valid", true},
                                  {"dim", store.dim()},
                                  {"groups", store.groups()},
                                  {"sigma_levels", store.sigma_levels()},
                                  {"records", store.record_count()}}
                       .dump()
                << '\n';
    } else if (*report) {
      const auto rows = fersim::report(runs_dir);
      std::cout << "cohort,sigma,n,mean,std\n";
      for (const auto& r : rows) {
        std::cout << r.cohort << ',' << r.sigma << ',' << r.n << ',' << fersim::detail::format_double(r.mean) << ','
                  << fersim::detail::format_double(r.stddev) << '\n';
      }
    }
  } catch (const fersim::Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail("IoError", e.what());
  } catch (const std::exception& e) {
    return fail("Error", e.what());
  }
  return 0;
}
