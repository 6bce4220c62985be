#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "sober/bench/functions.hpp"
#include "sober/bench/report.hpp"
#include "sober/bench/runner.hpp"

namespace {

unsigned default_workers() {
  if (const char* env = std::getenv("SOBER_BENCH_WORKERS")) {
    try {
      const int v = std::stoi(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
    std::cerr << "ignoring invalid SOBER_BENCH_WORKERS=" << env << '\n';
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace

int main(int argc, char** argv) {
  namespace sb = sober::bench;
  CLI::App app{"Batch Bayesian optimisation benchmark harness"};
  app.require_subcommand(1);

  auto* run_cmd = app.add_subcommand("run", "Run a benchmark suite");
  std::string suite_path, out_dir;
  unsigned workers = default_workers();
  run_cmd->add_option("suite", suite_path, "Suite JSON file")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--out", out_dir, "Output directory")->required();
  run_cmd->add_option("--workers", workers, "Worker threads (default: SOBER_BENCH_WORKERS or core count)")
      ->check(CLI::PositiveNumber);

  auto* report_cmd = app.add_subcommand("report", "Aggregate a run directory into CSV and SVG charts");
  std::string report_dir;
  report_cmd->add_option("dir", report_dir, "Directory written by `bench run`")->required()->check(CLI::ExistingDirectory);

  auto* list_cmd = app.add_subcommand("list-functions", "List available test functions");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      const auto suite = sb::load_suite(suite_path);
      std::vector<sb::RunResult> results;
      const bool ok = sb::run_benchmark(suite, out_dir, workers, &results);
      for (const auto& r : results) {
        std::cout << (r.ok ? "ok     " : "FAILED ") << r.spec.function << ' ' << r.spec.policy << " seed " << r.spec.seed;
        if (!r.ok) std::cout << ": " << r.error;
        std::cout << '\n';
      }
      return ok ? 0 : 1;
    }
    if (*report_cmd) {
      for (const auto& p : sb::emit_report(sb::load_records(report_dir), report_dir)) std::cout << p.string() << '\n';
      return 0;
    }
    if (*list_cmd) {
      for (const auto& f : sb::all_functions()) {
        std::cout << f.name << "\t d=" << f.dim() << "\t constraints=" << f.constraints.size()
                  << "\t batch=" << f.default_batch << "\t " << f.description << '\n';
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
