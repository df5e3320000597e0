#include <cstdio>
#include <exception>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fedarks/errors.hpp"
#include "fedarks/harness.hpp"

namespace {

struct CommonArgs {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> rounds;
  std::optional<std::string> aggregator;
  std::optional<std::string> rk;
  std::optional<int> held_out;
  std::optional<std::string> out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_file,
                  "flat key = value config file");
  cmd->add_option("--set", args.sets,
                  "override any config key, e.g. --set ks.beta=2.5");
  cmd->add_option("--seed", args.seed, "experiment seed");
  cmd->add_option("--rounds", args.rounds, "federation rounds");
  cmd->add_option("--aggregator", args.aggregator, "ks or fedavg");
  cmd->add_option("--rk", args.rk, "dual-branch client training: on or off");
  cmd->add_option("--held-out", args.held_out, "held-out domain id");
  cmd->add_option("--out-dir", args.out_dir, "artifact directory");
}

// Precedence: defaults, then config file, then --set, then named flags.
fedarks::ExperimentConfig build_config(const CommonArgs& args) {
  fedarks::ExperimentConfig cfg;
  if (!args.config_file.empty()) {
    cfg = fedarks::load_config_file(args.config_file);
  }
  for (const std::string& kv : args.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw fedarks::ConfigError("--set expects key=value, got '" + kv +
                                 "'");
    }
    fedarks::apply_config_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (args.seed) {
    cfg.seed = *args.seed;
  }
  if (args.rounds) {
    cfg.rounds = *args.rounds;
  }
  if (args.aggregator) {
    fedarks::apply_config_kv(cfg, "aggregator", *args.aggregator);
  }
  if (args.rk) {
    fedarks::apply_config_kv(cfg, "rk", *args.rk);
  }
  if (args.held_out) {
    cfg.held_out_domain = *args.held_out;
  }
  if (args.out_dir) {
    cfg.out_dir = *args.out_dir;
  }
  if (cfg.out_dir.empty()) {
    cfg.out_dir = "out";
  }
  return cfg;
}

int dispatch(const std::string& cmd, const CommonArgs& args) {
  const fedarks::ExperimentConfig cfg = build_config(args);
  if (cmd == "run") {
    const fedarks::RunReport report = fedarks::run_experiment(cfg);
    std::printf("run %s: held_out=%d rounds=%d\n", report.run_id.c_str(),
                report.held_out_domain, cfg.rounds);
    std::printf("final mAP=%.4f rank1=%.4f dropped=%d\n",
                report.final_eval.mean_ap, report.final_eval.rank1(),
                report.final_eval.dropped_queries);
    std::printf("artifacts in %s\n", cfg.out_dir.string().c_str());
  } else if (cmd == "sweep") {
    const fedarks::SweepReport sweep = fedarks::run_sweep(cfg);
    for (const fedarks::RunReport& r : sweep.tasks) {
      std::printf("task d%d: mAP=%.4f rank1=%.4f\n", r.held_out_domain,
                  r.final_eval.mean_ap, r.final_eval.rank1());
    }
    std::printf("savg: mAP=%.4f rank1=%.4f\n", sweep.summary.mean_ap,
                sweep.summary.rank1);
    std::printf("artifacts in %s\n", cfg.out_dir.string().c_str());
  } else if (cmd == "ablate") {
    const fedarks::AblationReport report = fedarks::run_ablation(cfg);
    for (const fedarks::AblationCell& cell : report.cells) {
      std::printf("cell %-5s rk=%-3s ks=%-3s savg mAP=%.4f rank1=%.4f\n",
                  cell.name.c_str(), cell.rk ? "on" : "off",
                  cell.ks ? "on" : "off", cell.sweep.summary.mean_ap,
                  cell.sweep.summary.rank1);
    }
    std::printf("%s\n", report.ordering_note.c_str());
    std::printf("artifacts in %s\n", cfg.out_dir.string().c_str());
  } else if (cmd == "export-data") {
    const fedarks::Federation fed =
        fedarks::generate_federation(cfg.federation);
    const auto dir = cfg.out_dir / "data";
    fedarks::export_federation(fed, dir);
    std::printf("federation exported to %s\n", dir.string().c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deterministic multi-domain federation simulator"};
  app.require_subcommand(1);

  CommonArgs run_args, sweep_args, ablate_args, export_args;
  add_common(app.add_subcommand("run", "single leave-one-domain-out run"),
             run_args);
  add_common(app.add_subcommand("sweep", "hold out every domain in turn"),
             sweep_args);
  add_common(app.add_subcommand("ablate", "2x2 mechanism ablation grid"),
             ablate_args);
  add_common(
      app.add_subcommand("export-data", "write the generated federation"),
      export_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("run")) {
      return dispatch("run", run_args);
    }
    if (app.got_subcommand("sweep")) {
      return dispatch("sweep", sweep_args);
    }
    if (app.got_subcommand("ablate")) {
      return dispatch("ablate", ablate_args);
    }
    return dispatch("export-data", export_args);
  } catch (const fedarks::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const fedarks::NumericalError& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
