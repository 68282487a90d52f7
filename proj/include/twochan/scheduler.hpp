#pragma once

#include "twochan/model.hpp"
#include "twochan/stability.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace twochan {

/// Finite list of candidate rate pairs.
struct CandidateSet {
  std::vector<RatePair> pairs;

  /// Cartesian product values1 x values2, channel 1 varying slowest.
  static CandidateSet grid(const std::vector<double> &values1,
                           const std::vector<double> &values2);
  /// Throws std::invalid_argument when empty or when a pair is out of range.
  void validate() const;
};

/// Read period in steps; nullopt means the channel is never read.
using Period = std::optional<long>;

/// floor(1 / lambda) for lambda > 0, never for lambda = 0.
Period rate_to_period(double lambda);

/// exp(min(1 / (1 - lambda), 50)).
double rate_penalty(double lambda);

/// tau + penalty(l1) + penalty(l2).
double schedule_objective(double tau, const RatePair &rates);

struct CandidateEvaluation {
  RatePair rates;
  /// Whether the pair was solved at all; pruned pairs have a penalty that
  /// already exceeds the best objective found.
  bool evaluated = false;
  bool feasible = false;
  sdp::Status feasibility_status = sdp::Status::NumericalFailure;
  sdp::Status trace_status = sdp::Status::NumericalFailure;
  double tau = 0.0;
  double objective = 0.0;  // +inf unless feasible with a finite tau
};

struct Schedule {
  RatePair chosen;
  Period period1;
  Period period2;
  double objective_value = 0.0;
  double tau = 0.0;
  std::vector<CandidateEvaluation> evaluations;  // candidate order
};

struct SchedulerOptions {
  StabilityOptions stability;
  TraceMode trace_mode = TraceMode::WorstVertex;
  /// Skip candidates whose penalty alone cannot beat the incumbent.
  bool prune = true;
};

/// Raised when no candidate passes the boundedness test with a finite bound.
class NoFeasibleCandidate : public std::runtime_error {
 public:
  NoFeasibleCandidate(const std::string &what, std::vector<CandidateEvaluation> evals)
      : std::runtime_error(what), evaluations(std::move(evals)) {}
  std::vector<CandidateEvaluation> evaluations;
};

/// Index of the winning evaluation: smallest objective, ties within 1e-12
/// broken by smaller l1 + l2, then smaller l1. -1 if none is finite.
int select_best(const std::vector<CandidateEvaluation> &evals);

/// Boundedness test and trace bound for every candidate over the given
/// vertex set (one vertex for the linear conditions), then select_best.
Schedule optimize_rates(const std::vector<Mat> &vertices, const SystemModel &model,
                        const CandidateSet &candidates, const SchedulerOptions &options = {});

/// Read decision for a fixed period: k - last >= period, always true when
/// the channel has not been read yet.
bool due(const Period &period, const std::optional<long> &last_read, long k);

/// State of the relinearizing scheduler.
struct IterativeState {
  std::optional<long> k1;  // last read per channel
  std::optional<long> k2;
  long k_lin = 0;
  Mat A_lin;
  double delta = 0.1;
  Schedule schedule;
  bool initialized = false;
  int recomputations = 0;
};

struct IterativeDecision {
  bool read1 = false;
  bool read2 = false;
  bool recomputed = false;
};

/// One step: relinearize at x_hat, re-solve the linear conditions when k is
/// the first step or the Jacobian moved by at least delta (spectral norm)
/// and a channel was read since the last recomputation; then decide reads.
IterativeDecision iterative_step(IterativeState &state, long k, const Vec &x_hat,
                                 const SystemModel &model, const CandidateSet &candidates,
                                 const SchedulerOptions &options = {});

std::string describe(const CandidateEvaluation &e);

}  // namespace twochan
