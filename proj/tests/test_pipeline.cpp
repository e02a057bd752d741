#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "kmspc/pipeline.hpp"

using namespace kmspc;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("kmspc_pipeline_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string write_file(const TempDir& dir, const std::string& name,
                       const std::string& content) {
  const std::string p = dir.file(name);
  std::ofstream out(p);
  out << content;
  return p;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Two latent factors drive three nonlinear channels plus one noise channel;
// the fault shifts the first latent factor.
void write_benchmark(const TempDir& dir, Index n_healthy, Index n_monitor,
                     Index fault_start, double shift, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto sample_row = [&](double s) {
    const double z1 = gauss(rng) + s;
    const double z2 = gauss(rng);
    std::vector<double> x(4);
    x[0] = z1 + 0.1 * gauss(rng);
    x[1] = z1 * z2 + 0.1 * gauss(rng);
    x[2] = std::sin(z2) + z1 * z1 * 0.3 + 0.1 * gauss(rng);
    x[3] = gauss(rng);
    return x;
  };
  {
    std::ofstream out(dir.file("healthy.csv"));
    out << "x1,x2,x3,x4\n";
    for (Index i = 0; i < n_healthy; ++i) {
      const auto x = sample_row(0.0);
      out << x[0] << ',' << x[1] << ',' << x[2] << ',' << x[3] << '\n';
    }
  }
  {
    std::ofstream out(dir.file("monitor.csv"));
    out << "x1,x2,x3,x4,label\n";
    for (Index i = 0; i < n_monitor; ++i) {
      const bool faulty = i >= fault_start;
      const auto x = sample_row(faulty ? shift : 0.0);
      out << x[0] << ',' << x[1] << ',' << x[2] << ',' << x[3] << ','
          << (faulty ? 1 : 0) << '\n';
    }
  }
  {
    std::ofstream out(dir.file("calibration.csv"));
    out << "x1,x2,x3,x4,label\n";
    for (Index i = 0; i < n_monitor; ++i) {
      const bool faulty = i >= fault_start;
      const auto x = sample_row(faulty ? shift : 0.0);
      out << x[0] << ',' << x[1] << ',' << x[2] << ',' << x[3] << ','
          << (faulty ? 1 : 0) << '\n';
    }
  }
}

RunConfig base_config(const TempDir& dir, const std::string& out_name) {
  RunConfig cfg;
  cfg.healthy_path = dir.file("healthy.csv");
  cfg.monitor_path = dir.file("monitor.csv");
  cfg.calibration_path = dir.file("calibration.csv");
  cfg.out_dir = dir.file(out_name);
  cfg.route = parse_route("gpc");
  cfg.sampler = SamplerKind::DRAM;
  cfg.draws = 60;
  cfg.burn_in = 0.25;
  cfg.optimizer_iters = 12;
  cfg.seed = 17;
  return cfg;
}

const std::vector<std::string> kOutputs = {
    "theta_hat.txt", "chain.csv",      "chart_t2.csv",   "chart_spe.csv",
    "contrib_t2.csv", "contrib_spe.csv", "metrics.csv",    "manifest.txt",
    "chart_t2.svg",  "chart_spe.svg",  "contrib_t2.svg", "contrib_spe.svg"};

}  // namespace

TEST_CASE("config files parse into validated settings") {
  TempDir dir;

  SECTION("keys, comments, and whitespace") {
    const auto p = write_file(dir, "a.conf",
                              "# comment\n"
                              "healthy = h.csv\n"
                              "draws=500   # trailing comment\n"
                              "sampler = nuts\n"
                              "route = unsupervised:m3\n"
                              "retention = fixed:4\n"
                              "\n"
                              "seed = 42\n");
    const RunConfig cfg = config_from_map(parse_config_file(p));
    REQUIRE(cfg.healthy_path == "h.csv");
    REQUIRE(cfg.draws == 500);
    REQUIRE(cfg.sampler == SamplerKind::NUTS);
    REQUIRE(cfg.route.kind == RouteKind::Unsupervised);
    REQUIRE(cfg.route.method == UnsupervisedMethodId::M3);
    REQUIRE(cfg.retention.kind == RetentionPolicy::Kind::Fixed);
    REQUIRE(cfg.retention.fixed_r == 4);
    REQUIRE(cfg.seed == 42);
    REQUIRE(cfg.burn_in == 0.4);
  }

  SECTION("unknown keys and malformed values are named") {
    REQUIRE_THROWS_MATCHES(
        config_from_map({{"drawz", "10"}}), ValidationError,
        Catch::Matchers::MessageMatches(
            Catch::Matchers::ContainsSubstring("drawz")));
    REQUIRE_THROWS_MATCHES(
        config_from_map({{"draws", "ten"}}), ValidationError,
        Catch::Matchers::MessageMatches(
            Catch::Matchers::ContainsSubstring("draws")));
    REQUIRE_THROWS_AS(config_from_map({{"route", "banana"}}), ValidationError);
    REQUIRE_THROWS_AS(config_from_map({{"sampler", "gibbs"}}), ValidationError);
    REQUIRE_THROWS_AS(config_from_map({{"retention", "all"}}), ValidationError);
    const auto bad = write_file(dir, "b.conf", "healthy\n");
    REQUIRE_THROWS_AS(parse_config_file(bad), ValidationError);
  }

  SECTION("framework-incompatible combinations are rejected") {
    RunConfig cfg;
    cfg.healthy_path = "h.csv";
    cfg.kernel = KernelFamily::ARD;
    cfg.route = parse_route("unsupervised:m1");
    REQUIRE_THROWS_MATCHES(validate_config(cfg), ValidationError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("ARD")));
    cfg.kernel = KernelFamily::SE;
    REQUIRE_NOTHROW(validate_config(cfg));
    cfg.route = parse_route("gpc");
    REQUIRE_THROWS_MATCHES(
        validate_config(cfg), ValidationError,
        Catch::Matchers::MessageMatches(
            Catch::Matchers::ContainsSubstring("calibration")));
    cfg.calibration_path = "c.csv";
    REQUIRE_NOTHROW(validate_config(cfg));
    cfg.draws = 0;
    REQUIRE_THROWS_AS(validate_config(cfg), ValidationError);
    cfg.draws = 10;
    cfg.burn_in = 1.0;
    REQUIRE_THROWS_AS(validate_config(cfg), ValidationError);
  }
}

TEST_CASE("stage files round-trip exactly") {
  TempDir dir;
  const std::vector<std::string> names = {"log_lengthscale", "log_signal_sd",
                                          "log_noise_sd"};

  SECTION("parameter file") {
    Vector theta(3);
    theta << 0.123456789012345, -2.5, 1e-7;
    write_theta(dir.file("t.txt"), names, theta);
    const Vector back = read_theta(dir.file("t.txt"), names);
    REQUIRE((back - theta).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE_THROWS_AS(
        read_theta(dir.file("t.txt"),
                   {"log_lengthscale_0", "log_signal_sd", "log_noise_sd"}),
        IngestionError);
  }

  SECTION("chain file keeps burn-in split and exact values") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Chain chain;
    chain.draws.resize(25, 3);
    chain.log_post.resize(25);
    for (Index i = 0; i < 25; ++i) {
      for (Index j = 0; j < 3; ++j) chain.draws(i, j) = gauss(rng);
      chain.log_post[i] = gauss(rng);
    }
    chain.burn_in = 10;
    write_chain_csv(dir.file("chain.csv"), chain, names);
    const Chain back = read_chain_csv(dir.file("chain.csv"), names);
    REQUIRE(back.burn_in == 10);
    REQUIRE((back.draws - chain.draws).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((back.log_post - chain.log_post).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("chart table file") {
    ChartTable t;
    const Index n = 7;
    t.timestamp.resize(n);
    for (Index i = 0; i < n; ++i) t.timestamp[i] = double(i);
    std::mt19937_64 rng(8);
    std::normal_distribution<double> gauss(2.0, 0.5);
    for (Vector* v : {&t.point, &t.point_limit, &t.mean, &t.median, &t.lower,
                      &t.upper, &t.limit_mean, &t.limit_lower, &t.limit_upper}) {
      v->resize(n);
      for (Index i = 0; i < n; ++i) (*v)[i] = gauss(rng);
    }
    write_chart_csv(dir.file("chart.csv"), t);
    const ChartTable back = read_chart_csv(dir.file("chart.csv"));
    REQUIRE(back.rows() == n);
    REQUIRE((back.point - t.point).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((back.upper - t.upper).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((back.limit_lower - t.limit_lower).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("contribution file keeps block structure") {
    std::vector<ContributionBlock> blocks(2);
    for (Index b = 0; b < 2; ++b) {
      auto& block = blocks[static_cast<std::size_t>(b)];
      block.timestamp = 5 + b;
      block.variables = {"x1", "x2", "x3"};
      block.mean.resize(3);
      block.lower.resize(3);
      block.upper.resize(3);
      for (Index j = 0; j < 3; ++j) {
        block.mean[j] = double(j) - 1.5 + double(b);
        block.lower[j] = block.mean[j] - 0.5;
        block.upper[j] = block.mean[j] + 0.5;
      }
      block.rank = {3, 2, 1};
    }
    write_contrib_csv(dir.file("contrib.csv"), blocks);
    const auto back = read_contrib_csv(dir.file("contrib.csv"));
    REQUIRE(back.size() == 2);
    REQUIRE(back[0].timestamp == 5);
    REQUIRE(back[1].timestamp == 6);
    REQUIRE(back[0].variables == blocks[0].variables);
    REQUIRE(back[1].rank == blocks[1].rank);
    REQUIRE((back[1].mean - blocks[1].mean).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("metrics file") {
    const std::vector<std::pair<std::string, double>> rows = {
        {"far_t2", 0.0125}, {"fdr_t2", 0.97}, {"ci", 0.97875}};
    write_metrics_csv(dir.file("m.csv"), rows);
    const auto back = read_metrics_csv(dir.file("m.csv"));
    REQUIRE(back == rows);
  }
}

TEST_CASE("svg emission is deterministic and total") {
  TempDir dir;

  SECTION("zero-width band still draws polygon and line") {
    ChartTable t;
    const Index n = 5;
    t.timestamp.resize(n);
    t.point.resize(n);
    for (Index i = 0; i < n; ++i) {
      t.timestamp[i] = double(i);
      t.point[i] = 1.0 + 0.1 * double(i);
    }
    t.mean = t.point;
    t.median = t.point;
    t.lower = t.point;  // zero-width credible band
    t.upper = t.point;
    t.point_limit = Vector::Constant(n, 2.0);
    t.limit_mean = Vector::Constant(n, 2.0);
    t.limit_lower = Vector::Constant(n, 2.0);
    t.limit_upper = Vector::Constant(n, 2.0);
    emit_chart_svg(t, dir.file("flat.svg"), "flat");
    const std::string svg = read_file(dir.file("flat.svg"));
    REQUIRE(svg.find("<polygon") != std::string::npos);
    REQUIRE(svg.find("<polyline") != std::string::npos);
    REQUIRE(svg.find("</svg>") != std::string::npos);
  }

  SECTION("empty or malformed chart files are rejected") {
    REQUIRE_THROWS_AS(
        emit_chart_svg_file(write_file(dir, "empty.csv", ""), dir.file("x.svg"),
                            "x"),
        IngestionError);
    REQUIRE_THROWS_AS(
        emit_chart_svg_file(write_file(dir, "hdr.csv",
                                       std::string(chart_csv_header()) + "\n"),
                            dir.file("x.svg"), "x"),
        IngestionError);
    REQUIRE_THROWS_AS(
        emit_chart_svg_file(write_file(dir, "bad.csv", "a,b\n1,2\n"),
                            dir.file("x.svg"), "x"),
        IngestionError);
  }

  SECTION("golden file comparison") {
    const std::string data_dir = KMSPC_TEST_DATA_DIR;
    emit_chart_svg_file(data_dir + "/golden_chart.csv", dir.file("golden.svg"),
                        "golden");
    REQUIRE(read_file(dir.file("golden.svg")) ==
            read_file(data_dir + "/golden_chart.svg"));
  }
}

TEST_CASE("full pipeline runs and reproduces itself") {
  TempDir dir;
  write_benchmark(dir, 50, 30, 15, 2.5, 2024);
  const RunConfig cfg = base_config(dir, "out_a");
  const RunManifest manifest = run_pipeline(cfg);

  SECTION("all documented outputs exist") {
    REQUIRE(manifest.status == "ok");
    for (const auto& name : kOutputs)
      REQUIRE(fs::exists(fs::path(cfg.out_dir) / name));
    REQUIRE(fs::exists(fs::path(cfg.out_dir) / "timings.txt"));
    const std::string mf = read_file((fs::path(cfg.out_dir) / "manifest.txt").string());
    REQUIRE(mf.find("status = ok") != std::string::npos);
    REQUIRE(mf.find("config.sampler = dram") != std::string::npos);
    REQUIRE(mf.find("theta_hat.log_lengthscale") != std::string::npos);
    REQUIRE(mf.find("posterior.mean.log_noise_sd") != std::string::npos);
    REQUIRE(mf.find("stages_completed = "
                    "ingest,calibrate,sample,propagate,evaluate,plot") !=
            std::string::npos);
  }

  SECTION("identical config and seed give byte-identical artifacts") {
    RunConfig cfg_b = cfg;
    cfg_b.out_dir = dir.file("out_b");
    run_pipeline(cfg_b);
    for (const auto& name : kOutputs) {
      if (name == "manifest.txt") continue;
      INFO(name);
      REQUIRE(read_file((fs::path(cfg.out_dir) / name).string()) ==
              read_file((fs::path(cfg_b.out_dir) / name).string()));
    }
  }

  SECTION("a different seed changes the chain") {
    RunConfig cfg_c = cfg;
    cfg_c.out_dir = dir.file("out_c");
    cfg_c.seed = 18;
    run_pipeline(cfg_c);
    REQUIRE(read_file((fs::path(cfg.out_dir) / "chain.csv").string()) !=
            read_file((fs::path(cfg_c.out_dir) / "chain.csv").string()));
  }

  SECTION("chart alarms agree with the exported metrics") {
    const ChartTable t2 =
        read_chart_csv((fs::path(cfg.out_dir) / "chart_t2.csv").string());
    const Dataset monitor = load_dataset(cfg.monitor_path);
    const auto rows =
        evaluate_chart_files((fs::path(cfg.out_dir) / "chart_t2.csv").string(),
                             (fs::path(cfg.out_dir) / "chart_spe.csv").string(),
                             monitor.labels);
    const auto file_rows =
        read_metrics_csv((fs::path(cfg.out_dir) / "metrics.csv").string());
    REQUIRE(rows.size() == file_rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      REQUIRE(rows[i].first == file_rows[i].first);
      REQUIRE(rows[i].second == Catch::Approx(file_rows[i].second).margin(1e-16));
    }
    REQUIRE(t2.rows() == 30);
  }
}

TEST_CASE("single draw at the calibrated parameters collapses to the "
          "deterministic chart files") {
  TempDir dir;
  write_benchmark(dir, 45, 24, 12, 2.5, 77);

  RunConfig det = base_config(dir, "out_det");
  det.deterministic = true;
  run_pipeline(det);

  RunConfig m1 = base_config(dir, "out_m1");
  m1.draws = 1;
  m1.burn_in = 0.0;
  run_pipeline(m1);

  for (const auto& name : {"chart_t2.csv", "chart_spe.csv", "contrib_t2.csv",
                           "contrib_spe.csv", "chart_t2.svg", "chart_spe.svg",
                           "theta_hat.txt"}) {
    INFO(name);
    REQUIRE(read_file((fs::path(det.out_dir) / name).string()) ==
            read_file((fs::path(m1.out_dir) / name).string()));
  }
  const ChartTable t2 = read_chart_csv((fs::path(det.out_dir) / "chart_t2.csv").string());
  REQUIRE((t2.mean - t2.point).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((t2.lower - t2.upper).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("unsupervised route completes on healthy-only data") {
  TempDir dir;
  write_benchmark(dir, 45, 24, 12, 2.5, 31);
  RunConfig cfg;
  cfg.healthy_path = dir.file("healthy.csv");
  cfg.out_dir = dir.file("out_unsup");
  cfg.route = parse_route("unsupervised:m1");
  cfg.sampler = SamplerKind::AM;
  cfg.draws = 40;
  cfg.burn_in = 0.25;
  cfg.seed = 5;
  const RunManifest manifest = run_pipeline(cfg);

  REQUIRE(manifest.status == "ok");
  REQUIRE(std::find(manifest.stages_completed.begin(),
                    manifest.stages_completed.end(),
                    "pseudo-label") != manifest.stages_completed.end());
  REQUIRE(fs::exists(fs::path(cfg.out_dir) / "pseudo_labels.csv"));
  const Dataset pseudo =
      load_dataset((fs::path(cfg.out_dir) / "pseudo_labels.csv").string());
  REQUIRE(pseudo.has_labels());
  REQUIRE(pseudo.X.rows() == 45);
  const auto rows =
      read_metrics_csv((fs::path(cfg.out_dir) / "metrics.csv").string());
  REQUIRE(rows.size() == 2);
  REQUIRE(rows[0].first == "alarm_rate_t2");

  SECTION("the tuned lengthscale matches the closed-form statistic") {
    const Dataset healthy = load_dataset(cfg.healthy_path);
    const Scaler scaler = fit_scaler(healthy);
    UnsupervisedMethod m1;
    const double expected =
        tune_unsupervised(m1, apply_scaler(scaler, healthy).X);
    const Vector theta = read_theta(
        (fs::path(cfg.out_dir) / "theta_hat.txt").string(),
        param_names(KernelSpec{KernelFamily::SE, 4}));
    REQUIRE(theta[0] == std::log(expected));
  }
}

TEST_CASE("permuting the monitored data permutes the statistics") {
  TempDir dir;
  write_benchmark(dir, 45, 24, 12, 2.5, 13);

  RunConfig cfg = base_config(dir, "out_perm_a");
  cfg.deterministic = true;
  cfg.diagnose = {0};
  run_pipeline(cfg);

  const Dataset monitor = load_dataset(cfg.monitor_path);
  std::vector<Index> perm(static_cast<std::size_t>(monitor.X.rows()));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::mt19937_64 rng(55);
  std::shuffle(perm.begin(), perm.end(), rng);
  Dataset shuffled = monitor;
  for (Index i = 0; i < monitor.X.rows(); ++i) {
    shuffled.X.row(i) = monitor.X.row(perm[static_cast<std::size_t>(i)]);
    shuffled.labels[static_cast<std::size_t>(i)] =
        monitor.labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  save_dataset(dir.file("monitor_perm.csv"), shuffled);

  RunConfig cfg_p = cfg;
  cfg_p.monitor_path = dir.file("monitor_perm.csv");
  cfg_p.out_dir = dir.file("out_perm_b");
  run_pipeline(cfg_p);

  const ChartTable a = read_chart_csv((fs::path(cfg.out_dir) / "chart_t2.csv").string());
  const ChartTable b =
      read_chart_csv((fs::path(cfg_p.out_dir) / "chart_t2.csv").string());
  for (Index i = 0; i < a.rows(); ++i) {
    REQUIRE(b.point[i] == a.point[perm[static_cast<std::size_t>(i)]]);
    REQUIRE(b.point_limit[i] == a.point_limit[i]);
  }
}

TEST_CASE("stage failures abort with the stage name and a partial manifest") {
  TempDir dir;
  write_file(dir, "bad.csv", "v1,v2\n1.0,xyz\n");
  RunConfig cfg;
  cfg.healthy_path = dir.file("bad.csv");
  cfg.route = parse_route("unsupervised:m1");
  cfg.out_dir = dir.file("out_fail");
  REQUIRE_THROWS_AS(run_pipeline(cfg), IngestionError);
  const std::string mf = read_file((fs::path(cfg.out_dir) / "manifest.txt").string());
  REQUIRE(mf.find("status = failed") != std::string::npos);
  REQUIRE(mf.find("failed_stage = ingest") != std::string::npos);
  REQUIRE(mf.find("non-numeric cell") != std::string::npos);
}

TEST_CASE("command line interface drives the pipeline") {
  TempDir dir;
  write_benchmark(dir, 45, 24, 12, 2.5, 61);
  const std::string conf = write_file(
      dir, "run.conf",
      "healthy = " + dir.file("healthy.csv") + "\n" +
          "monitor = " + dir.file("monitor.csv") + "\n" +
          "calibration = " + dir.file("calibration.csv") + "\n" +
          "route = gpc\nsampler = am\ndraws = 30\nburn_in = 0.2\n" +
          "optimizer_iters = 8\nseed = 9\n");
  const std::string cli = KMSPC_CLI_PATH;

  SECTION("run subcommand produces the documented files") {
    const std::string cmd = cli + " run --config " + conf + " --out " +
                            dir.file("cli_out") + " > /dev/null 2>&1";
    REQUIRE(std::system(cmd.c_str()) == 0);
    for (const auto& name : kOutputs)
      REQUIRE(fs::exists(fs::path(dir.file("cli_out")) / name));
  }

  SECTION("invalid combinations exit nonzero") {
    const std::string cmd = cli + " run --config " + conf +
                            " --kernel ard --route unsupervised:m1 --out " +
                            dir.file("cli_bad") + " > /dev/null 2>&1";
    REQUIRE(std::system(cmd.c_str()) != 0);
  }

  SECTION("staged subcommands chain through shared files") {
    const std::string out = dir.file("cli_staged");
    const std::string base = cli + " %s --config " + conf + " --out " + out +
                             " > /dev/null 2>&1";
    auto run_stage = [&](const std::string& sub) {
      std::string cmd = base;
      cmd.replace(cmd.find("%s"), 2, sub);
      return std::system(cmd.c_str());
    };
    REQUIRE(run_stage("calibrate") == 0);
    REQUIRE(fs::exists(fs::path(out) / "theta_hat.txt"));
    REQUIRE(run_stage("sample") == 0);
    REQUIRE(fs::exists(fs::path(out) / "chain.csv"));
    REQUIRE(run_stage("propagate") == 0);
    REQUIRE(fs::exists(fs::path(out) / "chart_t2.csv"));
    REQUIRE(run_stage("evaluate") == 0);
    REQUIRE(fs::exists(fs::path(out) / "metrics.csv"));
    REQUIRE(run_stage("chart") == 0);
    REQUIRE(fs::exists(fs::path(out) / "chart_t2.svg"));
  }
}
