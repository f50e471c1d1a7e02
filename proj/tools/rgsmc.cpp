// rgsmc: run experiment configs, verify against the oracle, aggregate runs.
//
// Exit codes: 0 ok, 1 verify failure, 2 config or usage error, 3 runtime error.

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "rgsmc/core.hpp"
#include "rgsmc/experiment.hpp"
#include "rgsmc/parallel.hpp"
#include "rgsmc/verify.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kVerifyFailed = 1;
constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reward-guided sequential Monte Carlo over tabular language models"};
  app.require_subcommand(1);
  app.footer(std::string("Worker threads: set ") + rgsmc::kWorkersEnv + " (default: hardware concurrency).");

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  auto* run = app.add_subcommand("run", "Run an experiment config");
  run->add_option("--config", config_path, "JSON run config")->required();
  run->add_option("--seed", seed, "Override the base seed");
  run->add_option("--out", out_dir, "Output directory (default: config 'out', else runs/<name>)");

  rgsmc::VerifyOptions vopts;
  std::string model_path;
  auto* verify = app.add_subcommand("verify", "Check the samplers against the exact oracle");
  verify->add_option("--filter", vopts.filter, "Run suites whose name contains this");
  verify->add_option("--model", model_path, "Use this model file instead of the built-in fixtures");
  verify->add_option("--horizon", vopts.horizon, "Horizon T for --model")->check(CLI::Range(1, 12));
  verify->add_option("--seed", vopts.seed, "Seed");
  verify->add_flag("--list", "List suites and exit");
  verify->add_flag("--tamper-mh", vopts.tamper_mh)->group("");

  std::string report_dir;
  std::string format = "csv";
  auto* report = app.add_subcommand("report", "Aggregate finished runs under a directory");
  report->add_option("dir", report_dir, "Directory to scan for manifest.json")->required();
  report->add_option("--format", format, "csv or jsonl")->check(CLI::IsMember({"csv", "jsonl"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    const std::size_t workers = rgsmc::worker_count();
    if (run->parsed()) {
      const rgsmc::RunConfig cfg = rgsmc::load_run_config(config_path);
      std::optional<std::filesystem::path> out;
      if (!out_dir.empty()) out = out_dir;
      const rgsmc::RunOutput res = rgsmc::cmd_run(cfg, seed, out, workers);
      std::size_t extinct = 0;
      for (const auto& r : res.rows) extinct += r.extinct ? 1 : 0;
      std::cout << "wrote " << res.rows.size() << " rows to " << res.dir.string() << " (config "
                << res.config_hash << ", " << extinct << " extinct, " << res.wall_seconds << " s)\n";
      return kOk;
    }
    if (verify->parsed()) {
      if (verify->count("--list")) {
        for (const auto& s : rgsmc::verify_suites()) std::cout << s << '\n';
        return kOk;
      }
      if (!model_path.empty()) vopts.model = model_path;
      vopts.workers = workers;
      const auto rows = rgsmc::run_verify(vopts, std::cout);
      std::size_t failed = 0;
      for (const auto& r : rows) failed += r.passed ? 0 : 1;
      std::cout << rows.size() - failed << "/" << rows.size() << " checks passed\n";
      return failed ? kVerifyFailed : kOk;
    }
    if (report->parsed()) {
      std::cout << rgsmc::cmd_report(report_dir, format);
      return kOk;
    }
  } catch (const rgsmc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}
