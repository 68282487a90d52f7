#include "twochan/sim.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace twochan {

const char *to_string(SimMode m) {
  switch (m) {
    case SimMode::Stochastic: return "stochastic";
    case SimMode::Scheduled: return "scheduled";
    case SimMode::Iterative: return "iterative";
  }
  return "?";
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

long step_count(const SystemModel &model, double duration) {
  if (!(duration > 0.0)) throw std::invalid_argument("duration must be positive");
  // guard against 600 / 0.05 landing just below an integer
  return static_cast<long>(std::floor(duration / model.sample_period() * (1.0 + 1e-12)));
}

double steady_state_trace(const std::vector<StepRecord> &steps) {
  if (steps.empty()) return 0.0;
  const std::size_t tail = std::max<std::size_t>(1, steps.size() / 5);
  double s = 0.0;
  for (std::size_t i = steps.size() - tail; i < steps.size(); ++i) s += steps[i].trace;
  return s / static_cast<double>(tail);
}

namespace {

Mat chol_factor(const Mat &M, const char *what) {
  if (M.size() == 0) return M;
  Eigen::LLT<Mat> llt(M);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument(std::string(what) + " is not positive definite");
  return llt.matrixL();
}

Vec gaussian(std::mt19937_64 &rng, Eigen::Index n) {
  std::normal_distribution<double> g;
  Vec z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = g(rng);
  return z;
}

FilterState initial_state(const SystemModel &model, const Vec &x_hat0, const Mat &P0) {
  const auto n = model.state_dim();
  FilterState s;
  s.x_hat = x_hat0.size() ? x_hat0 : Vec::Zero(n);
  s.P = P0.size() ? P0 : Mat::Identity(n, n);
  if (s.x_hat.size() != n || s.P.rows() != n || s.P.cols() != n)
    throw std::invalid_argument("initial estimate or covariance has the wrong dimension");
  return s;
}

void summarize(SimResult &r) {
  auto &sm = r.summary;
  sm.steady_trace = steady_state_trace(r.steps);
  sm.reads1 = sm.reads2 = 0;
  for (const auto &st : r.steps) {
    sm.reads1 += st.gamma1;
    sm.reads2 += st.gamma2;
  }
  if (!r.steps.empty() && r.steps.front().x_true.size()) {
    Vec acc = Vec::Zero(r.steps.front().x_true.size());
    for (const auto &st : r.steps) acc += (st.x_true - st.x_hat).cwiseAbs2();
    sm.rmse = (acc / static_cast<double>(r.steps.size())).cwiseSqrt();
  }
}

// Update, record and predict one step; shared by run and replay.
void filter_step(const SystemModel &model, FilterState &s, StepRecord &rec) {
  rec.trace = s.P.trace();
  try {
    s = update_2c(model, s, {rec.gamma1, rec.gamma2}, rec.y1, rec.y2);
    rec.x_hat = s.x_hat;
    rec.trace_post = s.P.trace();
    s = predict(model, s);
  } catch (const NumericalError &e) {
    throw NumericalError("step " + std::to_string(rec.k) + ": " + e.what());
  }
}

}  // namespace

SimResult run(const SystemModel &model, const SimConfig &config) {
  const auto n = model.state_dim();
  const long N = step_count(model, config.duration);
  if (config.mode == SimMode::Stochastic) validate_rates(config.rates);
  if (config.mode == SimMode::Iterative) config.candidates.validate();

  Vec x = config.x0.size() ? config.x0 : Vec::Zero(n);
  if (x.size() != n) throw std::invalid_argument("initial truth has the wrong dimension");
  FilterState s = initial_state(model, config.x_hat0, config.P0);
  const Mat LQ = chol_factor(model.Q(), "Q");
  const Mat LR = chol_factor(model.R(), "R");
  std::mt19937_64 noise(splitmix64(config.seed));
  std::mt19937_64 arrivals(splitmix64(config.seed ^ 0x5851f42d4c957f2dULL));
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  IterativeState it;
  it.delta = config.delta;
  std::optional<long> last1, last2;

  SimResult r;
  r.steps.reserve(static_cast<std::size_t>(N));
  const auto n1 = model.ch1_dim();
  for (long k = 0; k < N; ++k) {
    StepRecord rec;
    rec.k = k;
    rec.x_true = x;
    const Vec y = model.C() * x + LR * gaussian(noise, model.meas_dim());
    const double u1 = unif(arrivals), u2 = unif(arrivals);
    switch (config.mode) {
      case SimMode::Stochastic:
        rec.gamma1 = u1 < config.rates.lambda1;
        rec.gamma2 = u2 < config.rates.lambda2;
        break;
      case SimMode::Scheduled:
        rec.gamma1 = due(config.period1, last1, k);
        rec.gamma2 = due(config.period2, last2, k);
        rec.period1 = config.period1;
        rec.period2 = config.period2;
        break;
      case SimMode::Iterative: {
        const auto d = iterative_step(it, k, s.x_hat, model, config.candidates, config.scheduler);
        rec.gamma1 = d.read1;
        rec.gamma2 = d.read2;
        rec.period1 = it.schedule.period1;
        rec.period2 = it.schedule.period2;
        break;
      }
    }
    if (rec.gamma1) last1 = k;
    if (rec.gamma2) last2 = k;
    if (rec.gamma1) rec.y1 = y.head(n1);
    if (rec.gamma2) rec.y2 = y.tail(model.ch2_dim());
    filter_step(model, s, rec);
    r.steps.push_back(std::move(rec));

    const Vec w = LQ * gaussian(noise, n);
    x = model.f(x) + config.truth_noise_scale * w;
  }
  summarize(r);
  r.summary.recomputations = it.recomputations;
  return r;
}

std::vector<LogEntry> make_log(const SimResult &result) {
  std::vector<LogEntry> log;
  for (const auto &st : result.steps) {
    if (st.y1) log.push_back({st.k, 1, *st.y1});
    if (st.y2) log.push_back({st.k, 2, *st.y2});
  }
  return log;
}

namespace {

std::string exact(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv(const std::string &line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <class T>
bool parse_number(std::string s, T &out) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && s[b] == ' ') ++b;
  const char *first = s.data() + b;
  const char *last = s.data() + s.size();
  auto res = std::from_chars(first, last, out);
  return res.ec == std::errc() && res.ptr == last && first != last;
}

}  // namespace

void write_log(const std::vector<LogEntry> &log, std::ostream &out) {
  std::size_t width = 0;
  for (const auto &e : log) width = std::max<std::size_t>(width, e.y.size());
  out << "k,channel";
  for (std::size_t i = 1; i <= width; ++i) out << ",y" << i;
  out << '\n';
  for (const auto &e : log) {
    out << e.k << ',' << e.channel;
    for (Eigen::Index i = 0; i < e.y.size(); ++i) out << ',' << exact(e.y(i));
    // pad so every row has the header's width
    for (std::size_t i = e.y.size(); i < width; ++i) out << ',';
    out << '\n';
  }
}

std::vector<LogEntry> read_log(std::istream &in, const SystemModel &model) {
  std::vector<LogEntry> log;
  std::string line;
  long lineno = 0;
  bool header = false;
  long last_k = -1;
  bool seen[3] = {false, false, false};
  auto fail = [&](const std::string &msg) {
    throw std::invalid_argument("log line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      const auto cols = split_csv(line);
      if (cols.size() < 2 || cols[0] != "k" || cols[1] != "channel")
        fail("expected header starting with k,channel");
      header = true;
      continue;
    }
    const auto cols = split_csv(line);
    if (cols.size() < 2) fail("too few columns");
    LogEntry e;
    if (!parse_number(cols[0], e.k) || e.k < 0) fail("bad step index '" + cols[0] + "'");
    if (!parse_number(cols[1], e.channel) || (e.channel != 1 && e.channel != 2))
      fail("channel must be 1 or 2");
    const auto dim = e.channel == 1 ? model.ch1_dim() : model.ch2_dim();
    std::vector<double> vals;
    for (std::size_t i = 2; i < cols.size(); ++i) {
      if (cols[i].empty() || cols[i] == "\r") {
        // trailing padding only
        for (std::size_t j = i; j < cols.size(); ++j)
          if (!cols[j].empty() && cols[j] != "\r") fail("empty value before data");
        break;
      }
      double v = 0.0;
      if (!parse_number(cols[i], v)) fail("bad value '" + cols[i] + "'");
      vals.push_back(v);
    }
    if (static_cast<Eigen::Index>(vals.size()) != dim)
      fail("channel " + std::to_string(e.channel) + " needs " + std::to_string(dim) +
           " values, got " + std::to_string(vals.size()));
    if (e.k < last_k) fail("step index decreases");
    if (e.k > last_k) seen[1] = seen[2] = false;
    if (seen[e.channel]) fail("duplicate measurement for this step and channel");
    seen[e.channel] = true;
    last_k = e.k;
    e.y = Eigen::Map<Vec>(vals.data(), static_cast<Eigen::Index>(vals.size()));
    log.push_back(std::move(e));
  }
  if (!header) throw std::invalid_argument("log is empty (no header)");
  return log;
}

SimResult replay(const SystemModel &model, const std::vector<LogEntry> &log, long steps,
                 const Vec &x_hat0, const Mat &P0) {
  if (steps <= 0) steps = log.empty() ? 0 : log.back().k + 1;
  FilterState s = initial_state(model, x_hat0, P0);
  SimResult r;
  std::size_t next = 0;
  for (long k = 0; k < steps; ++k) {
    StepRecord rec;
    rec.k = k;
    while (next < log.size() && log[next].k == k) {
      const auto &e = log[next++];
      if (e.channel == 1) {
        rec.gamma1 = true;
        rec.y1 = e.y;
      } else {
        rec.gamma2 = true;
        rec.y2 = e.y;
      }
    }
    if (next < log.size() && log[next].k < k)
      throw std::invalid_argument("log is not sorted by step");
    filter_step(model, s, rec);
    r.steps.push_back(std::move(rec));
  }
  summarize(r);
  return r;
}

std::vector<SweepRow> grid_sweep(const SystemModel &model, const std::vector<Mat> &vertices,
                                 const CandidateSet &grid, const SimConfig &base,
                                 const std::vector<std::uint64_t> &seeds,
                                 const SchedulerOptions &options) {
  grid.validate();
  if (seeds.empty()) throw std::invalid_argument("at least one seed is required");
  std::vector<SweepRow> rows;
  for (const auto &rates : grid.pairs) {
    SweepRow row;
    row.rates = rates;
    try {
      const auto cert = check_boundedness(vertices, model, rates, options.stability);
      row.feasibility = cert.status;
      const auto tb =
          trace_bound(vertices, model, rates, options.trace_mode, options.stability.solver);
      row.trace_status = tb.status;
      row.tau = tb.tau;
      SimConfig cfg = base;
      cfg.mode = SimMode::Stochastic;
      cfg.rates = rates;
      double sum = 0.0;
      for (auto seed : seeds) {
        cfg.seed = seed;
        const double t = run(model, cfg).summary.steady_trace;
        row.seed_traces.push_back(t);
        sum += t;
      }
      row.sim_trace = sum / static_cast<double>(seeds.size());
    } catch (const std::exception &e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_result_csv(const SimResult &result, std::size_t state_dim, std::ostream &out) {
  out << "k,trace,gamma1,gamma2";
  for (std::size_t i = 1; i <= state_dim; ++i) out << ",err_" << i;
  out << '\n';
  for (const auto &st : result.steps) {
    out << st.k << ',' << exact(st.trace) << ',' << int(st.gamma1) << ',' << int(st.gamma2);
    for (std::size_t i = 0; i < state_dim; ++i) {
      out << ',';
      if (st.x_true.size()) out << exact(st.x_true(i) - st.x_hat(i));
    }
    out << '\n';
  }
}

void write_estimates_csv(const SimResult &result, std::ostream &out) {
  const auto n = result.steps.empty() ? 0 : result.steps.front().x_hat.size();
  out << "k";
  for (Eigen::Index i = 1; i <= n; ++i) out << ",x_hat_" << i;
  out << ",trace_post\n";
  for (const auto &st : result.steps) {
    out << st.k;
    for (Eigen::Index i = 0; i < n; ++i) out << ',' << exact(st.x_hat(i));
    out << ',' << exact(st.trace_post) << '\n';
  }
}

}  // namespace twochan
