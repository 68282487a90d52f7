#pragma once

#include "twochan/filter.hpp"
#include "twochan/scheduler.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace twochan {

enum class SimMode { Stochastic, Scheduled, Iterative };

const char *to_string(SimMode m);

struct SimConfig {
  SimMode mode = SimMode::Stochastic;
  RatePair rates;                  // stochastic
  Period period1, period2;         // scheduled
  CandidateSet candidates;         // iterative
  double delta = 0.1;              // iterative
  SchedulerOptions scheduler;      // iterative
  double duration = 600.0;         // seconds
  std::uint64_t seed = 1;
  Vec x0;                          // truth at k = 0 (zero if empty)
  Vec x_hat0;                      // estimate at k = 0 (zero if empty)
  Mat P0;                          // identity if empty
  /// Multiplies the process noise injected into the truth (the filter
  /// still uses Q). 0 gives a noiseless truth trajectory.
  double truth_noise_scale = 1.0;
};

/// One step k: the prior covariance P(k|k-1), the arrivals, and the
/// estimate after the update at k.
struct StepRecord {
  long k = 0;
  Vec x_true;  // empty in replay
  Vec x_hat;
  double trace = 0.0;       // trace P(k|k-1)
  double trace_post = 0.0;  // trace P(k|k)
  bool gamma1 = false;
  bool gamma2 = false;
  std::optional<Vec> y1, y2;  // delivered measurements
  Period period1, period2;    // schedule in force (scheduled / iterative)
};

struct SimSummary {
  double steady_trace = 0.0;  // mean trace over the final 20% of steps
  Vec rmse;                   // per state, empty without truth
  long reads1 = 0;
  long reads2 = 0;
  int recomputations = 0;
  std::optional<double> tau;
};

struct SimResult {
  std::vector<StepRecord> steps;
  SimSummary summary;
};

/// Number of steps for a duration: floor(duration / Ts).
long step_count(const SystemModel &model, double duration);

/// Truth x+ = f(x) + w, y = C x + v with seeded Gaussian noise; arrivals
/// Bernoulli in stochastic mode, periodic otherwise. Measurement noise is
/// drawn every step, read or not. Throws NumericalError with the step
/// index on filter failure.
SimResult run(const SystemModel &model, const SimConfig &config);

/// Mean trace over the final 20% of the records (at least one record).
double steady_state_trace(const std::vector<StepRecord> &steps);

/// Measurement received on one channel at step k.
struct LogEntry {
  long k = 0;
  int channel = 1;
  Vec y;
};

/// Delivered measurements of a run, in step order, channel 1 first.
std::vector<LogEntry> make_log(const SimResult &result);

/// CSV `k,channel,y1,...` with a header; values printed round-trip exact.
void write_log(const std::vector<LogEntry> &log, std::ostream &out);

/// Parses a measurement log. Rows need k >= 0, channel 1 or 2 and exactly
/// as many values as the channel has outputs; k may not decrease and a
/// (k, channel) pair may not repeat. Errors carry the line number.
std::vector<LogEntry> read_log(std::istream &in, const SystemModel &model);

/// Drives the filter with recorded measurements for `steps` steps (the last
/// logged step + 1 when zero).
SimResult replay(const SystemModel &model, const std::vector<LogEntry> &log, long steps,
                 const Vec &x_hat0 = {}, const Mat &P0 = {});

struct SweepRow {
  RatePair rates;
  sdp::Status feasibility = sdp::Status::NumericalFailure;
  sdp::Status trace_status = sdp::Status::NumericalFailure;
  double tau = 0.0;
  double sim_trace = 0.0;  // mean steady trace over seeds
  std::vector<double> seed_traces;
  std::string error;  // per-cell failure, sweep continues
};

/// For each pair in grid order: boundedness test, trace bound and the mean
/// simulated steady trace over the seeds (stochastic arrivals).
std::vector<SweepRow> grid_sweep(const SystemModel &model, const std::vector<Mat> &vertices,
                                 const CandidateSet &grid, const SimConfig &base,
                                 const std::vector<std::uint64_t> &seeds,
                                 const SchedulerOptions &options = {});

/// CSV `k,trace,gamma1,gamma2,err_1..err_n` (err = x_true - x_hat; empty
/// error columns in replay).
void write_result_csv(const SimResult &result, std::size_t state_dim, std::ostream &out);

/// CSV `k,x_hat_1..x_hat_n,trace_post`.
void write_estimates_csv(const SimResult &result, std::ostream &out);

/// SplitMix64 step, used to derive independent stream seeds.
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace twochan
