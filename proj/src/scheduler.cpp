#include "twochan/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace twochan {

CandidateSet CandidateSet::grid(const std::vector<double> &values1,
                                const std::vector<double> &values2) {
  CandidateSet c;
  for (double a : values1)
    for (double b : values2) c.pairs.push_back({a, b});
  return c;
}

void CandidateSet::validate() const {
  if (pairs.empty()) throw std::invalid_argument("candidate set is empty");
  for (const auto &p : pairs) validate_rates(p);
}

Period rate_to_period(double lambda) {
  validate_rates({lambda, 0.0});
  if (lambda == 0.0) return std::nullopt;
  return static_cast<long>(std::floor(1.0 / lambda));
}

double rate_penalty(double lambda) {
  validate_rates({lambda, 0.0});
  if (lambda >= 1.0) return std::exp(50.0);
  return std::exp(std::min(1.0 / (1.0 - lambda), 50.0));
}

double schedule_objective(double tau, const RatePair &rates) {
  return tau + rate_penalty(rates.lambda1) + rate_penalty(rates.lambda2);
}

int select_best(const std::vector<CandidateEvaluation> &evals) {
  int best = -1;
  for (int i = 0; i < static_cast<int>(evals.size()); ++i) {
    const auto &e = evals[i];
    if (!std::isfinite(e.objective)) continue;
    if (best < 0) {
      best = i;
      continue;
    }
    const auto &b = evals[best];
    if (e.objective < b.objective - 1e-12) {
      best = i;
    } else if (std::abs(e.objective - b.objective) <= 1e-12) {
      const double se = e.rates.lambda1 + e.rates.lambda2;
      const double sb = b.rates.lambda1 + b.rates.lambda2;
      if (se < sb || (se == sb && e.rates.lambda1 < b.rates.lambda1)) best = i;
    }
  }
  return best;
}

std::string describe(const CandidateEvaluation &e) {
  std::ostringstream os;
  os << "(" << e.rates.lambda1 << ", " << e.rates.lambda2 << "): ";
  if (!e.evaluated) {
    os << "pruned";
  } else if (!e.feasible) {
    os << "boundedness test " << sdp::to_string(e.feasibility_status);
  } else if (e.trace_status != sdp::Status::Optimal) {
    os << "feasible, trace bound " << sdp::to_string(e.trace_status);
  } else {
    os << "tau " << e.tau << ", objective " << e.objective;
  }
  return os.str();
}

Schedule optimize_rates(const std::vector<Mat> &vertices, const SystemModel &model,
                        const CandidateSet &candidates, const SchedulerOptions &options) {
  candidates.validate();
  const auto &pairs = candidates.pairs;
  std::vector<CandidateEvaluation> evals(pairs.size());
  std::vector<double> penalty(pairs.size());
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    evals[i].rates = pairs[i];
    evals[i].objective = std::numeric_limits<double>::infinity();
    penalty[i] = rate_penalty(pairs[i].lambda1) + rate_penalty(pairs[i].lambda2);
    order[i] = i;
  }
  // cheapest penalties first so that pruning bites early
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return penalty[a] < penalty[b]; });

  double incumbent = std::numeric_limits<double>::infinity();
  for (std::size_t i : order) {
    auto &e = evals[i];
    if (options.prune && penalty[i] > incumbent) continue;
    e.evaluated = true;
    const auto cert = check_boundedness(vertices, model, e.rates, options.stability);
    e.feasibility_status = cert.status;
    e.feasible = cert.feasible;
    if (!e.feasible) continue;
    const auto tb = trace_bound(vertices, model, e.rates, options.trace_mode,
                                options.stability.solver);
    e.trace_status = tb.status;
    e.tau = tb.tau;
    if (tb.ok()) {
      e.objective = schedule_objective(tb.tau, e.rates);
      incumbent = std::min(incumbent, e.objective);
    }
  }

  const int best = select_best(evals);
  if (best < 0) {
    std::ostringstream os;
    os << "no candidate is feasible with a finite trace bound:";
    for (const auto &e : evals) os << "\n  " << describe(e);
    throw NoFeasibleCandidate(os.str(), std::move(evals));
  }
  Schedule s;
  s.chosen = evals[best].rates;
  s.period1 = rate_to_period(s.chosen.lambda1);
  s.period2 = rate_to_period(s.chosen.lambda2);
  s.objective_value = evals[best].objective;
  s.tau = evals[best].tau;
  s.evaluations = std::move(evals);
  return s;
}

bool due(const Period &period, const std::optional<long> &last_read, long k) {
  if (!period) return false;
  if (!last_read) return true;
  return k - *last_read >= *period;
}

IterativeDecision iterative_step(IterativeState &state, long k, const Vec &x_hat,
                                 const SystemModel &model, const CandidateSet &candidates,
                                 const SchedulerOptions &options) {
  if (k < 0) throw std::invalid_argument("step index must be non-negative");
  if (!(state.delta > 0.0)) throw std::invalid_argument("delta must be positive");
  IterativeDecision d;
  const Mat A = model.jacobian(x_hat);
  bool recompute = !state.initialized || k == 0;
  if (!recompute) {
    const double moved = Eigen::JacobiSVD<Mat>(A - state.A_lin).singularValues()(0);
    const std::optional<long> last =
        state.k1 && state.k2 ? std::max(*state.k1, *state.k2) : state.k1 ? state.k1 : state.k2;
    recompute = moved >= state.delta && last && state.k_lin <= *last;
  }
  if (recompute) {
    state.schedule = optimize_rates({A}, model, candidates, options);
    state.A_lin = A;
    state.k_lin = k;
    state.initialized = true;
    ++state.recomputations;
    d.recomputed = true;
  }
  d.read1 = due(state.schedule.period1, state.k1, k);
  d.read2 = due(state.schedule.period2, state.k2, k);
  if (d.read1) state.k1 = k;
  if (d.read2) state.k2 = k;
  return d;
}

}  // namespace twochan
