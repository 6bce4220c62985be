#pragma once

// Benchmark suites: (function, policy, config, seeds) entries executed in a
// worker pool, one CSV per run plus a JSON summary.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "../solver.hpp"
#include "functions.hpp"

namespace sober::bench {

using json = nlohmann::json;

inline const std::vector<std::string>& policy_names() {
  static const std::vector<std::string> names{"sober-lfi", "sober-ts", "random", "batch-ts-baseline"};
  return names;
}

/// Maps a policy name onto the solver's policy and target mode.
inline void apply_policy(const std::string& name, SolverConfig& cfg) {
  if (name == "sober-lfi") {
    cfg.policy = Policy::Sober;
    cfg.mode = SolverMode::BO_LFI;
  } else if (name == "sober-ts") {
    cfg.policy = Policy::Sober;
    cfg.mode = SolverMode::BO_TS;
  } else if (name == "random") {
    cfg.policy = Policy::Random;
  } else if (name == "batch-ts-baseline") {
    cfg.policy = Policy::BatchThompson;
  } else {
    throw std::invalid_argument("unknown policy: " + name);
  }
}

inline SolverConfig config_from_json(const json& j, SolverConfig cfg = {}) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    if (k == "N") cfg.N = v.get<Index>();
    else if (k == "M") cfg.M = v.get<Index>();
    else if (k == "n_max") cfg.n_max = v.get<Index>();
    else if (k == "eps_lp") cfg.eps_lp = v.get<double>();
    else if (k == "eps_policy") {
      const auto s = v.get<std::string>();
      if (s == "fixed") cfg.eps_policy = EpsPolicy::Fixed;
      else if (s == "adaptive") cfg.eps_policy = EpsPolicy::Adaptive;
      else throw std::invalid_argument("eps_policy must be fixed or adaptive");
    } else if (k == "lp_mode") {
      const auto s = v.get<std::string>();
      if (s == "recombination") cfg.lp_mode = LpMode::ExactRecombination;
      else if (s == "tolerance-lp") cfg.lp_mode = LpMode::ToleranceLP;
      else throw std::invalid_argument("lp_mode must be recombination or tolerance-lp");
    } else if (k == "delta") {
      cfg.delta = v.is_string() && v.get<std::string>() == "inf" ? std::numeric_limits<double>::infinity() : v.get<double>();
    } else if (k == "max_iterations") cfg.max_iterations = v.get<int>();
    else if (k == "acquisition") {
      const auto r = v.value("reward", std::string("zero"));
      if (r == "zero") cfg.acquisition.reward = RewardKind::Zero;
      else if (r == "ucb") cfg.acquisition.reward = RewardKind::UCB;
      else if (r == "ei") cfg.acquisition.reward = RewardKind::EI;
      else throw std::invalid_argument("reward must be zero, ucb or ei");
      cfg.acquisition.beta = v.value("beta", cfg.acquisition.beta);
    } else if (k == "initial_design") cfg.initial_design = v.get<Index>();
    else if (k == "hyper_restarts") cfg.hyper_restarts = v.get<int>();
    else if (k == "hyper_iterations") cfg.hyper_iterations = v.get<int>();
    else if (k == "noise_variance") cfg.noise_variance = v.get<double>();
    else if (k == "hyper_noise") cfg.hyper_noise = v.get<double>();
    else if (k == "proposal_components") cfg.proposal_components = v.get<Index>();
    else if (k == "ts_candidates") cfg.ts_candidates = v.get<Index>();
    else if (k == "ts_draws") cfg.ts_draws = v.get<Index>();
    else throw std::invalid_argument("unknown config field: " + k);
  }
  return cfg;
}

struct SuiteEntry {
  std::string function;
  std::vector<std::string> policies;
  SolverConfig config;
  std::vector<std::uint64_t> seeds;
};

struct BenchmarkSuite {
  std::vector<SuiteEntry> entries;
  std::string output;

  void validate() const {
    if (entries.empty()) throw std::invalid_argument("suite has no entries");
    for (const auto& e : entries) {
      make_function(e.function);
      if (e.policies.empty()) throw std::invalid_argument("entry for " + e.function + " lists no policies");
      for (const auto& p : e.policies) {
        SolverConfig c;
        apply_policy(p, c);
      }
      std::vector<std::uint64_t> s = e.seeds;
      std::sort(s.begin(), s.end());
      if (s.empty() || std::adjacent_find(s.begin(), s.end()) != s.end())
        throw std::invalid_argument("seeds must be non-empty and distinct for " + e.function);
      e.config.validate();
    }
  }
};

inline BenchmarkSuite suite_from_json(const json& j) {
  BenchmarkSuite s;
  s.output = j.value("output", std::string());
  for (const auto& e : j.at("entries")) {
    SuiteEntry entry;
    entry.function = e.at("function").get<std::string>();
    entry.policies = e.at("policies").get<std::vector<std::string>>();
    const TestFunction f = make_function(entry.function);
    SolverConfig base;
    base.n_max = f.default_batch;
    entry.config = config_from_json(e.value("config", json::object()), base);
    if (e.contains("seeds")) {
      entry.seeds = e.at("seeds").get<std::vector<std::uint64_t>>();
    } else {
      const auto reps = e.value("repetitions", 1);
      for (int r = 0; r < reps; ++r) entry.seeds.push_back(static_cast<std::uint64_t>(r));
    }
    s.entries.push_back(std::move(entry));
  }
  s.validate();
  return s;
}

inline BenchmarkSuite load_suite(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open suite file " + path.string());
  return suite_from_json(json::parse(in));
}

// ---------------------------------------------------------------------------
// Runs

struct RunSpec {
  std::string function;
  std::string policy;
  std::uint64_t seed = 0;
  SolverConfig config;
};

struct RunResult {
  RunSpec spec;
  History history;
  bool ok = false;
  std::string error;
};

inline Problem make_problem(const TestFunction& f) {
  Problem p;
  p.objective = f.evaluate;
  p.constraints = f.constraints;
  p.prior = f.prior;
  p.x_star = f.x_star;
  p.y_star = f.y_star;
  return p;
}

inline RunResult execute(const RunSpec& spec) {
  RunResult r;
  r.spec = spec;
  try {
    const TestFunction f = make_function(spec.function);
    SolverConfig cfg = spec.config;
    cfg.seed = spec.seed;
    apply_policy(spec.policy, cfg);
    r.history = run(make_problem(f), cfg);
    r.ok = !r.history.aborted;
    r.error = r.history.error;
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  return r;
}

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline const char* csv_header() {
  return "iteration,batch_size,eps_lp,eps_vio,mmd2,mv,md,simple_regret,z_mean,z_var,wall_ms";
}

inline std::string history_csv(const History& h) {
  std::ostringstream out;
  out << csv_header() << '\n';
  for (const auto& r : h.records) {
    out << r.iteration << ',' << r.batch_size << ',' << format_number(r.eps_lp) << ',' << format_number(r.eps_vio) << ','
        << format_number(r.mmd2) << ',' << format_number(r.mv) << ',' << format_number(r.md) << ','
        << format_number(r.simple_regret) << ',' << format_number(r.z_mean) << ',' << format_number(r.z_var) << ','
        << format_number(r.wall_ms) << '\n';
  }
  return out.str();
}

inline std::string run_file_name(const RunSpec& s) {
  return s.function + "__" + s.policy + "__seed" + std::to_string(s.seed) + ".csv";
}

inline std::vector<RunSpec> expand(const BenchmarkSuite& suite) {
  std::vector<RunSpec> specs;
  for (const auto& e : suite.entries)
    for (const auto& p : e.policies)
      for (auto seed : e.seeds) specs.push_back(RunSpec{e.function, p, seed, e.config});
  return specs;
}

/// Runs every spec on `workers` threads; results keep the input order.
inline std::vector<RunResult> run_all(const std::vector<RunSpec>& specs, unsigned workers) {
  std::vector<RunResult> results(specs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < specs.size(); i = next++) results[i] = execute(specs[i]);
  };
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(specs.size(), 1))));
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return results;
}

inline json summary_json(const std::vector<RunResult>& results) {
  json runs = json::array();
  for (const auto& r : results) {
    json j;
    j["function"] = r.spec.function;
    j["policy"] = r.spec.policy;
    j["seed"] = r.spec.seed;
    j["ok"] = r.ok;
    j["file"] = run_file_name(r.spec);
    if (!r.ok) j["error"] = r.error;
    j["iterations"] = r.history.records.size();
    j["evaluations"] = r.history.X.rows();
    if (std::isfinite(r.history.best_observed)) j["best_observed"] = r.history.best_observed;
    if (!r.history.records.empty() && std::isfinite(r.history.records.back().simple_regret))
      j["final_simple_regret"] = r.history.records.back().simple_regret;
    runs.push_back(j);
  }
  return json{{"runs", runs}};
}

/// Executes the suite and writes runs/<file>.csv and summary.json under `out`.
/// Returns true when every run succeeded.
inline bool run_benchmark(const BenchmarkSuite& suite, const std::filesystem::path& out, unsigned workers,
                          std::vector<RunResult>* results_out = nullptr) {
  suite.validate();
  std::filesystem::create_directories(out / "runs");
  const auto results = run_all(expand(suite), workers);
  bool all_ok = true;
  for (const auto& r : results) {
    all_ok = all_ok && r.ok;
    std::ofstream f(out / "runs" / run_file_name(r.spec));
    f << history_csv(r.history);
  }
  std::ofstream(out / "summary.json") << summary_json(results).dump(2) << '\n';
  if (results_out) *results_out = results;
  return all_ok;
}

}  // namespace sober::bench
