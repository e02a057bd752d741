#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kmspc/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
using namespace kmspc;

// CLI flags land in this override map and win over config-file keys; the
// generic --set covers every documented key.
struct CliOverrides {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::vector<std::string> sets;
};

RunConfig resolve_config(const CliOverrides& cli) {
  std::map<std::string, std::string> kv;
  if (!cli.config_path.empty()) kv = parse_config_file(cli.config_path);
  for (const auto& s : cli.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ValidationError("--set expects key=value, got '" + s + "'");
    kv[detail::trim_ws(s.substr(0, eq))] = detail::trim_ws(s.substr(eq + 1));
  }
  for (const auto& [key, value] : cli.values) kv[key] = value;
  return config_from_map(kv);
}

void add_common_flags(CLI::App* cmd, CliOverrides& cli) {
  cmd->add_option("--config", cli.config_path, "Path to a key = value config file");
  auto bind = [cmd, &cli](const std::string& flag, const std::string& key,
                          const std::string& help) {
    cmd->add_option_function<std::string>(
        flag, [&cli, key](const std::string& v) { cli.values[key] = v; }, help);
  };
  bind("--healthy", "healthy", "Healthy (in-control) training data CSV");
  bind("--monitor", "monitor", "Data CSV to monitor");
  bind("--calibration", "calibration", "Labeled calibration data CSV");
  bind("--seed", "seed", "Random seed");
  bind("--kernel", "kernel", "Kernel family: se or ard");
  bind("--route", "route", "Calibration route: gpc, kpcr, or unsupervised:<m1..m10>");
  bind("--sampler", "sampler", "Posterior sampler: am, dram, hmc, or nuts");
  bind("--draws", "draws", "Number of posterior draws");
  bind("--burn-in", "burn_in", "Burn-in fraction in [0, 1)");
  bind("--confidence", "confidence", "Control limit confidence level");
  bind("--credible", "credible", "Credible band tail mass");
  bind("--workers", "workers", "Worker thread count");
  bind("--out", "out", "Output directory");
  cmd->add_option("--set", cli.sets,
                  "Override any config key as key=value (repeatable)")
      ->take_all();
}

int report_error(const std::string& where, const std::exception& e) {
  std::cerr << where << ": " << e.what() << '\n';
  return 1;
}

void prepare_out_dir(const RunConfig& cfg) {
  fs::create_directories(fs::path(cfg.out_dir));
}

int cmd_calibrate(const CliOverrides& cli) {
  const RunConfig cfg = resolve_config(cli);
  validate_config(cfg);
  prepare_out_dir(cfg);
  PipelineContext ctx;
  stage_ingest(cfg, ctx);
  stage_calibrate(cfg, ctx);
  const std::string path = (fs::path(cfg.out_dir) / "theta_hat.txt").string();
  write_theta(path, ctx.names, ctx.theta_hat);
  std::cout << "wrote " << path << '\n';
  for (Index i = 0; i < ctx.theta_hat.size(); ++i)
    std::cout << ctx.names[static_cast<std::size_t>(i)] << " = "
              << format_double(ctx.theta_hat[i]) << '\n';
  return 0;
}

int cmd_tune_unsupervised(const CliOverrides& cli) {
  const RunConfig cfg = resolve_config(cli);
  if (cfg.route.kind != RouteKind::Unsupervised)
    throw ValidationError(
        "tune-unsupervised requires route = unsupervised:<m1..m10>");
  return cmd_calibrate(cli);
}

int cmd_sample(const CliOverrides& cli) {
  const RunConfig cfg = resolve_config(cli);
  validate_config(cfg);
  prepare_out_dir(cfg);
  PipelineContext ctx;
  stage_ingest(cfg, ctx);
  const fs::path dir(cfg.out_dir);
  ctx.theta_hat = read_theta((dir / "theta_hat.txt").string(), ctx.names);
  if (cfg.route.kind == RouteKind::Unsupervised) {
    const Dataset pseudo =
        load_dataset((dir / "pseudo_labels.csv").string(), load_options(cfg));
    if (!pseudo.has_labels() ||
        pseudo.labels.size() != static_cast<std::size_t>(ctx.X_monitor.rows()))
      throw ValidationError("pseudo_labels.csv does not label the monitored data");
    ctx.pseudo_labels = pseudo.labels;
  }
  stage_sample(cfg, ctx);
  write_chain_csv((dir / "chain.csv").string(), ctx.chain, ctx.names);
  std::cout << "wrote " << (dir / "chain.csv").string() << '\n'
            << "acceptance_rate = " << format_double(ctx.chain.acceptance_rate)
            << '\n';
  return 0;
}

int cmd_propagate(const CliOverrides& cli) {
  const RunConfig cfg = resolve_config(cli);
  validate_config(cfg);
  prepare_out_dir(cfg);
  PipelineContext ctx;
  stage_ingest(cfg, ctx);
  const fs::path dir(cfg.out_dir);
  ctx.chain = read_chain_csv((dir / "chain.csv").string(), ctx.names);
  stage_propagate(cfg, ctx);
  write_chart_files(cfg, ctx);
  std::cout << "wrote chart_t2.csv, chart_spe.csv, contrib_t2.csv, "
               "contrib_spe.csv in "
            << cfg.out_dir << '\n'
            << "retained = " << ctx.stats.retained
            << ", skipped = " << ctx.stats.skipped << '\n';
  return 0;
}

int cmd_chart(const CliOverrides& cli) {
  const RunConfig cfg = resolve_config(cli);
  emit_plots(cfg.out_dir);
  std::cout << "wrote SVG plots in " << cfg.out_dir << '\n';
  return 0;
}

int cmd_evaluate(const CliOverrides& cli) {
  const RunConfig cfg = resolve_config(cli);
  validate_config(cfg);
  std::vector<int> labels;
  if (!cfg.monitor_path.empty()) {
    const Dataset monitor = load_dataset(cfg.monitor_path, load_options(cfg));
    labels = monitor.labels;
  }
  const fs::path dir(cfg.out_dir);
  const auto rows = evaluate_chart_files((dir / "chart_t2.csv").string(),
                                         (dir / "chart_spe.csv").string(), labels);
  write_metrics_csv((dir / "metrics.csv").string(), rows);
  for (const auto& [name, value] : rows)
    std::cout << name << " = " << format_double(value) << '\n';
  return 0;
}

int cmd_run(const CliOverrides& cli) {
  const RunConfig cfg = resolve_config(cli);
  const RunManifest manifest = run_pipeline(cfg);
  std::cout << "run complete; manifest at "
            << (fs::path(cfg.out_dir) / "manifest.txt").string() << '\n';
  for (const auto& s : manifest.stages_completed) std::cout << "  stage " << s << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernel-based multivariate statistical process control"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* help;
    int (*fn)(const CliOverrides&);
    CliOverrides cli;
  };
  std::vector<Sub> subs = {
      {"calibrate", "Fit kernel parameters on labeled calibration data",
       cmd_calibrate, {}},
      {"tune-unsupervised", "Tune the lengthscale from healthy data only",
       cmd_tune_unsupervised, {}},
      {"sample", "Draw posterior kernel parameters with MCMC", cmd_sample, {}},
      {"propagate", "Push posterior draws through the monitoring charts",
       cmd_propagate, {}},
      {"chart", "Render SVG plots from chart files", cmd_chart, {}},
      {"evaluate", "Score chart alarms against labels", cmd_evaluate, {}},
      {"run", "Execute the full pipeline", cmd_run, {}},
  };
  for (auto& sub : subs) {
    CLI::App* cmd = app.add_subcommand(sub.name, sub.help);
    add_common_flags(cmd, sub.cli);
  }

  CLI11_PARSE(app, argc, argv);

  for (auto& sub : subs) {
    if (!app.got_subcommand(sub.name)) continue;
    try {
      return sub.fn(sub.cli);
    } catch (const Error& e) {
      return report_error(sub.name, e);
    } catch (const std::exception& e) {
      return report_error(sub.name, e);
    }
  }
  return 64;
}
