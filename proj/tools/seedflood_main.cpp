#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "seedflood/config.hpp"

int main(int argc, char** argv) {
  CLI::App app{"seedflood: decentralized zeroth-order training simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  uint64_t seed_override = 0;
  bool has_seed = false;
  size_t jobs = 1;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "JSON config file")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed_override, "override the run seed")
        ->each([&](const std::string&) { has_seed = true; });
    sub->add_option("--jobs", jobs, "parallel variants (sweep)");
  };

  auto* run_cmd = app.add_subcommand("run", "execute the run(s) in a config");
  add_common(run_cmd);
  auto* validate_cmd =
      app.add_subcommand("validate", "parse and validate a config");
  add_common(validate_cmd);
  auto* sweep_cmd =
      app.add_subcommand("sweep", "execute a sweep config (alias of run)");
  add_common(sweep_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    auto spec = seedflood::parse_config(config_path);
    if (has_seed) {
      for (auto& [name, cfg] : spec.variants) {
        cfg.seed = seedflood::Seed{seed_override};
      }
    }
    if (app.got_subcommand(validate_cmd)) {
      std::printf("ok: %zu variant(s)\n", spec.variants.size());
      for (const auto& [name, cfg] : spec.variants) {
        std::printf("  %s\n", name.c_str());
      }
      return 0;
    }
    return seedflood::execute(spec, out_dir, jobs);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
