// SPDX-License-Identifier: Apache-2.0
// fedmm: run multi-model federated experiments and compare their traces.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "fedmm/experiment/config.hpp"
#include "fedmm/experiment/presets.hpp"
#include "fedmm/experiment/run.hpp"
#include "fedmm/version.hpp"

namespace fs = std::filesystem;
namespace fx = fedmm::experiment;

namespace {

fs::path default_out_root() {
  if (const char* env = std::getenv("FEDMULTI_OUT_DIR"); env && *env) return env;
  return "out";
}

void report(const fx::ExperimentResult& res, const fs::path& dir) {
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << "wrote " << dir.string() << '\n';
  for (const auto& g : res.gains) {
    std::cout << "  gain " << g.algo << " M=" << g.M << " E=" << g.E << " eps=" << fx::format_double(g.epsilon)
              << ": " << (g.gain ? fx::format_double(*g.gain) : std::string("not reached")) << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-model federated learning simulator"};
  app.set_version_flag("--version", std::string(fedmm::kVersion));
  app.require_subcommand(1);

  std::string config_path, preset_name, out_dir;
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "Run a config file or a preset and write its artifacts");
  auto* cfg_opt = run->add_option("--config", config_path, "YAML (or JSON manifest) config file");
  auto* preset_opt = run->add_option("--preset", preset_name, "Named preset (see 'presets list')");
  cfg_opt->excludes(preset_opt);
  run->add_option("--out", out_dir, "Output directory (default $FEDMULTI_OUT_DIR/<name> or out/<name>)");
  run->add_option("--jobs", jobs, "Worker threads for seed runs (default: hardware threads)")->check(CLI::PositiveNumber);
  run->add_option("--seed", seed, "Override the master seed");

  std::string dir_a, dir_b;
  int tail = 100;
  auto* compare = app.add_subcommand("compare", "Compare two single-algorithm artifact directories");
  compare->add_option("a", dir_a, "First directory")->required();
  compare->add_option("b", dir_b, "Second directory")->required();
  compare->add_option("--tail", tail, "Rounds in the tail-variance window")->check(CLI::PositiveNumber);

  auto* presets = app.add_subcommand("presets", "Preset utilities");
  presets->require_subcommand(1);
  auto* presets_list = presets->add_subcommand("list", "List presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*presets_list) {
      for (const auto& p : fx::presets()) std::cout << p.name << "\t" << p.description << '\n';
      return 0;
    }
    if (*compare) {
      const auto r = fx::compare_runs(dir_a, dir_b, std::cout, tail);
      (void)r;
      return 0;
    }
    if (*run) {
      if (config_path.empty() && preset_name.empty()) throw fedmm::ConfigError("--config", "give --config or --preset");
      fx::RunOptions opt;
      opt.jobs = jobs;
      opt.log = [](const std::string& m) { std::cerr << "  " << m << '\n'; };
      std::vector<fx::ExperimentConfig> configs;
      std::string name;
      if (!config_path.empty()) {
        configs.push_back(fx::load_config(config_path));
        name = configs.front().name;
      } else {
        auto p = fx::find_preset(preset_name);
        configs = p.configs;
        name = p.name;
      }
      const fs::path root = out_dir.empty() ? default_out_root() / name : fs::path(out_dir);
      for (auto& c : configs) {
        if (seed) c.master_seed = *seed;
        const fs::path dir = configs.size() > 1 ? root / c.name : root;
        report(fx::run_experiment(c, dir, opt), dir);
      }
      return 0;
    }
  } catch (const fedmm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
