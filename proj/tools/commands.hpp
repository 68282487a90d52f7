#pragma once

#include "twochan/config.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace twochan::cli {

enum ExitCode {
  kOk = 0,
  kFailure = 1,
  kInfeasible = 2,
  kUsage = 64,
  kMissingInput = 66,
};

/// What a command needs besides its own flags.
struct RunContext {
  Experiment experiment;
  nlohmann::json config_input;    // file contents as given
  std::vector<std::string> argv;  // for the manifest
  std::string out_dir;            // empty: no files
  std::ostream *out = nullptr;    // human-readable report
};

struct AnalyzeOptions {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  std::string mode = "auto";  // linear | polytopic | auto
  std::optional<int> bisect;  // channel whose rate is free
  double fixed = 0.0;
  double tol = 1e-4;
  std::string trace_mode = "worst";  // worst | joint | linearized
  bool strict_psi = false;
};

struct SweepOptions {
  std::optional<std::string> grid;  // overrides the config candidates
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<double> duration;
  std::string mode = "auto";
  int jobs = 1;  // worker threads
};

struct ScheduleOptions {
  std::string mode = "static";  // static | iterative
  std::optional<double> delta;
  std::optional<double> duration;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::string analysis = "auto";  // static mode: linear | polytopic | auto
  std::optional<std::string> grid;  // overrides the config candidates
};

struct SimulateOptions {
  std::string mode = "scheduled";  // stochastic | scheduled
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
  bool with_bound = true;  // trace bound in the summary
};

struct ReplayOptions {
  std::string log_path;
  long steps = 0;
};

/// Machine-readable result of the last command (also written to files).
struct Report {
  int exit_code = kOk;
  nlohmann::json data;
  std::vector<std::string> files;
};

Report cmd_analyze(const RunContext &ctx, const AnalyzeOptions &o);
Report cmd_sweep(const RunContext &ctx, const SweepOptions &o);
Report cmd_schedule(const RunContext &ctx, const ScheduleOptions &o);
Report cmd_simulate(const RunContext &ctx, const SimulateOptions &o);
Report cmd_replay(const RunContext &ctx, const ReplayOptions &o);

/// Full CLI: parses argv, dispatches, writes outputs and the manifest.
/// Returns the process exit code.
int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

/// Write a file through a temporary and a rename.
void write_atomic(const std::string &path, const std::string &contents);

const char *version();

}  // namespace twochan::cli
