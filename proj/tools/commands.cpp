#include "commands.hpp"

#include "plot.hpp"
#include "twochan/filter.hpp"
#include "twochan/stability.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>
#include <unistd.h>

#ifndef TWOCHAN_VERSION
#define TWOCHAN_VERSION "0.0.0"
#endif

namespace twochan::cli {

namespace fs = std::filesystem;
using nlohmann::json;

const char *version() { return TWOCHAN_VERSION; }

namespace {

std::string exact(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

std::string sig(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream o;
  o << std::setprecision(6) << v;
  return o.str();
}

std::string rates_str(const RatePair &r) {
  return "(" + sig(r.lambda1) + ", " + sig(r.lambda2) + ")";
}

std::string period_str(const Period &p) { return p ? std::to_string(*p) : "never"; }

json period_json(const Period &p) { return p ? json(*p) : json(nullptr); }

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::ostream &console(const RunContext &ctx) {
  static std::ostringstream sink;
  if (ctx.out) return *ctx.out;
  sink.str("");
  return sink;
}

/// Files of one command, written atomically into the output directory.
class Outputs {
 public:
  explicit Outputs(const RunContext &ctx) : ctx_(ctx), started_(utc_now()) {}

  void write(const std::string &name, const std::string &contents) {
    if (ctx_.out_dir.empty()) return;
    write_atomic((fs::path(ctx_.out_dir) / name).string(), contents);
    files_.push_back(name);
  }

  template <class F>
  void write_with(const std::string &name, F &&fill) {
    if (ctx_.out_dir.empty()) return;
    std::ostringstream o;
    fill(o);
    write(name, o.str());
  }

  void finish(Report &report, const std::string &command, const json &options,
              const std::vector<std::uint64_t> &seeds) {
    report.files = files_;
    if (ctx_.out_dir.empty()) return;
    json outputs = json::array();
    for (const auto &f : files_)
      outputs.push_back({{"name", f}, {"bytes", fs::file_size(fs::path(ctx_.out_dir) / f)}});
    json m;
    m["command"] = command;
    m["argv"] = ctx_.argv;
    m["options"] = options;
    m["tool_version"] = version();
    m["config"] = ctx_.experiment.resolved;
    m["config_input"] = ctx_.config_input;
    m["seeds"] = seeds;
    m["timestamps"] = {{"started", started_}, {"finished", utc_now()}};
    m["outputs"] = outputs;
    m["exit_code"] = report.exit_code;
    write_atomic((fs::path(ctx_.out_dir) / "manifest.json").string(), m.dump(2) + "\n");
    report.files.push_back("manifest.json");
  }

 private:
  const RunContext &ctx_;
  std::string started_;
  std::vector<std::string> files_;
};

bool use_polytope(const Experiment &e, const std::string &mode) {
  if (mode == "linear") return false;
  if (mode == "polytopic") return true;
  if (mode == "auto") return !e.model.constant_jacobian();
  throw ConfigError("analysis mode must be linear, polytopic or auto, got '" + mode + "'");
}

TraceMode trace_mode_of(const std::string &s) {
  if (s == "worst") return TraceMode::WorstVertex;
  if (s == "joint") return TraceMode::Joint;
  if (s == "linearized") return TraceMode::Linearized;
  throw ConfigError("trace mode must be worst, joint or linearized, got '" + s + "'");
}

std::string summary_json(const SimSummary &s, const std::optional<double> &tau, json extra = {}) {
  json j = extra.is_null() ? json::object() : std::move(extra);
  j["steady_trace"] = s.steady_trace;
  json rmse = json::array();
  for (Eigen::Index i = 0; i < s.rmse.size(); ++i) rmse.push_back(s.rmse(i));
  j["rmse"] = rmse;
  j["reads1"] = s.reads1;
  j["reads2"] = s.reads2;
  j["tau"] = tau && std::isfinite(*tau) ? json(*tau) : json(nullptr);
  return j.dump(2) + "\n";
}

std::string trace_svg(const SimResult &r, double Ts, const std::optional<double> &tau,
                      const std::string &title) {
  plot::Series s{"trace P(k|k-1)", {}, {}, false};
  for (const auto &st : r.steps) {
    s.x.push_back(static_cast<double>(st.k) * Ts);
    s.y.push_back(st.trace);
  }
  std::vector<plot::Series> all{s};
  if (tau && std::isfinite(*tau) && !s.x.empty())
    all.push_back({"bound", {s.x.front(), s.x.back()}, {*tau, *tau}, false});
  return plot::line_svg(title, "time [s]", "trace", all, true);
}

std::string periods_csv(const SimResult &r) {
  std::ostringstream o;
  o << "k,period1,period2\n";
  for (const auto &st : r.steps)
    o << st.k << ',' << (st.period1 ? std::to_string(*st.period1) : "") << ','
      << (st.period2 ? std::to_string(*st.period2) : "") << '\n';
  return o.str();
}

std::string periods_svg(const SimResult &r, double Ts) {
  plot::Series p1{"channel 1", {}, {}, true}, p2{"channel 2", {}, {}, true};
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto &st : r.steps) {
    const double t = static_cast<double>(st.k) * Ts;
    p1.x.push_back(t);
    p2.x.push_back(t);
    p1.y.push_back(st.period1 ? static_cast<double>(*st.period1) : nan);
    p2.y.push_back(st.period2 ? static_cast<double>(*st.period2) : nan);
  }
  return plot::line_svg("read periods", "time [s]", "period [steps]", {p1, p2}, true);
}

void write_sim_files(Outputs &files, const SimResult &r, const SystemModel &m,
                     const std::optional<double> &tau, const std::string &title) {
  files.write_with("result.csv", [&](std::ostream &o) {
    write_result_csv(r, static_cast<std::size_t>(m.state_dim()), o);
  });
  files.write_with("estimates.csv", [&](std::ostream &o) { write_estimates_csv(r, o); });
  files.write("trace.svg", trace_svg(r, m.sample_period(), tau, title));
}

std::string evaluations_csv(const std::vector<CandidateEvaluation> &evals) {
  std::ostringstream o;
  o << "lambda1,lambda2,evaluated,feasibility,trace_status,tau,objective\n";
  for (const auto &e : evals)
    o << exact(e.rates.lambda1) << ',' << exact(e.rates.lambda2) << ',' << int(e.evaluated)
      << ',' << (e.evaluated ? sdp::to_string(e.feasibility_status) : "skipped") << ','
      << (e.evaluated ? sdp::to_string(e.trace_status) : "skipped") << ',' << exact(e.tau)
      << ',' << exact(e.objective) << '\n';
  return o.str();
}

std::vector<std::uint64_t> seeds_or(const std::optional<std::vector<std::uint64_t>> &s,
                                    const std::vector<std::uint64_t> &fallback) {
  if (s) {
    if (s->empty()) throw ConfigError("--seeds needs at least one seed");
    return *s;
  }
  return fallback;
}

double duration_or(const std::optional<double> &d, double fallback) {
  if (!d) return fallback;
  if (!(*d > 0.0)) throw ConfigError("--duration must be positive");
  return *d;
}

std::string csv_safe(std::string s) {
  for (char &c : s)
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ' ';
  return s;
}

}  // namespace

void write_atomic(const std::string &path, const std::string &contents) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    f << contents;
    f.flush();
    if (!f) throw std::runtime_error("write to '" + tmp.string() + "' failed");
  }
  fs::rename(tmp, p);
}

Report cmd_analyze(const RunContext &ctx, const AnalyzeOptions &o) {
  const auto &e = ctx.experiment;
  auto &out = console(ctx);
  Outputs files(ctx);
  Report rep;
  const bool poly = use_polytope(e, o.mode);
  const auto vertices = analysis_vertices(e, poly);
  StabilityOptions so;
  if (o.strict_psi) so.form = PsiForm::WithoutOpenLoop;

  json j;
  j["mode"] = poly ? "polytopic" : "linear";
  j["vertices"] = vertices.size();
  out << "model " << e.model.name() << ", " << (poly ? "polytopic" : "linear") << " analysis, "
      << vertices.size() << " vertex" << (vertices.size() == 1 ? "" : "es") << "\n";

  if (o.bisect) {
    if (*o.bisect != 1 && *o.bisect != 2) throw ConfigError("--bisect takes 1 or 2");
    if (!(o.fixed >= 0.0 && o.fixed <= 1.0)) throw ConfigError("--fixed must lie in [0, 1]");
    if (!(o.tol > 0.0)) throw ConfigError("--tol must be positive");
    const auto c = critical_lambda(vertices, e.model, *o.bisect, o.fixed, o.tol, so);
    j["critical"] = {{"channel", *o.bisect}, {"fixed", o.fixed}, {"value", c.value},
                     {"attainable", c.attainable}, {"solves", c.solves}, {"tol", o.tol}};
    if (c.attainable)
      out << "critical lambda" << *o.bisect << " = " << sig(c.value) << " (other rate "
          << sig(o.fixed) << ", tol " << sig(o.tol) << ", " << c.solves << " solves)\n";
    else
      out << "critical lambda" << *o.bisect << ": INFEASIBLE even at rate 1 (other rate "
          << sig(o.fixed) << ")\n";
    rep.exit_code = c.attainable ? kOk : kInfeasible;
  } else {
    const RatePair r{o.lambda1, o.lambda2};
    validate_rates(r);
    j["lambda1"] = r.lambda1;
    j["lambda2"] = r.lambda2;
    const auto cert = check_boundedness(vertices, e.model, r, so);
    j["feasibility"] = sdp::to_string(cert.status);
    j["feasible"] = cert.feasible;
    j["margin"] = cert.margin;
    j["eps"] = cert.eps;
    j["diagnostic"] = cert.diagnostic;
    const auto tb = trace_bound(vertices, e.model, r, trace_mode_of(o.trace_mode), so.solver);
    j["trace_status"] = sdp::to_string(tb.status);
    j["tau"] = tb.ok() ? json(tb.tau) : json("UNBOUNDED");
    j["worst_vertex"] = tb.worst_vertex;
    j["per_vertex_tau"] = tb.per_vertex;

    out << "rates " << rates_str(r) << "\n";
    if (cert.feasible)
      out << "boundedness: FEASIBLE (margin " << sig(cert.margin) << ", eps " << sig(cert.eps)
          << ")\n";
    else if (cert.status == sdp::Status::Infeasible)
      out << "boundedness: INFEASIBLE\n";
    else
      out << "boundedness: solver failure (" << sdp::to_string(cert.status) << ") "
          << cert.diagnostic << "\n";
    if (tb.ok())
      out << "tau = " << sig(tb.tau) << "\n";
    else if (tb.status == sdp::Status::Unbounded)
      out << "tau: UNBOUNDED\n";
    else
      out << "tau: solver failure (" << sdp::to_string(tb.status) << ") " << tb.diagnostic
          << "\n";

    if (cert.status == sdp::Status::NumericalFailure ||
        tb.status == sdp::Status::NumericalFailure)
      rep.exit_code = kFailure;
    else if (!cert.feasible || !tb.ok())
      rep.exit_code = kInfeasible;
  }
  rep.data = j;
  files.write("analysis.json", j.dump(2) + "\n");
  json opts{{"lambda1", o.lambda1}, {"lambda2", o.lambda2}, {"mode", o.mode},
            {"tol", o.tol},         {"trace_mode", o.trace_mode}, {"strict_psi", o.strict_psi}};
  if (o.bisect) opts["bisect"] = *o.bisect, opts["fixed"] = o.fixed;
  files.finish(rep, "analyze", opts, {});
  return rep;
}

Report cmd_sweep(const RunContext &ctx, const SweepOptions &o) {
  const auto &e = ctx.experiment;
  auto &out = console(ctx);
  Outputs files(ctx);
  Report rep;
  const CandidateSet grid = o.grid ? parse_grid_spec(*o.grid) : e.candidates;
  grid.validate();
  const auto seeds = seeds_or(o.seeds, e.seeds);
  const bool poly = use_polytope(e, o.mode);
  const auto vertices = analysis_vertices(e, poly);
  SimConfig base = e.sim;
  base.duration = duration_or(o.duration, e.sim.duration);

  // cells are independent; results land at their grid index
  std::vector<SweepRow> rows(grid.pairs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < grid.pairs.size();)
      rows[i] = grid_sweep(e.model, vertices, CandidateSet{{grid.pairs[i]}}, base, seeds).front();
  };
  const int n = std::max(1, std::min<int>(o.jobs, static_cast<int>(grid.pairs.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto &t : pool) t.join();

  std::ostringstream csv;
  csv << "lambda1,lambda2,feasibility,trace_status,tau,sim_trace";
  for (auto s : seeds) csv << ",sim_trace_seed_" << s;
  csv << ",error\n";
  json table = json::array();
  int failures = 0;
  out << "lambda1  lambda2  feasibility  tau  sim_trace\n";
  for (const auto &r : rows) {
    const bool bounded = r.trace_status == sdp::Status::Optimal;
    csv << exact(r.rates.lambda1) << ',' << exact(r.rates.lambda2) << ','
        << sdp::to_string(r.feasibility) << ',' << sdp::to_string(r.trace_status) << ','
        << (bounded ? exact(r.tau) : "inf") << ',' << exact(r.sim_trace);
    for (std::size_t i = 0; i < seeds.size(); ++i)
      csv << ',' << (i < r.seed_traces.size() ? exact(r.seed_traces[i]) : "");
    csv << ',' << csv_safe(r.error) << '\n';
    if (!r.error.empty() || r.feasibility == sdp::Status::NumericalFailure) ++failures;
    table.push_back({{"lambda1", r.rates.lambda1},
                     {"lambda2", r.rates.lambda2},
                     {"feasibility", sdp::to_string(r.feasibility)},
                     {"trace_status", sdp::to_string(r.trace_status)},
                     {"tau", bounded ? json(r.tau) : json(nullptr)},
                     {"sim_trace", finite_or_null(r.sim_trace)},
                     {"error", r.error}});
    out << sig(r.rates.lambda1) << "  " << sig(r.rates.lambda2) << "  "
        << sdp::to_string(r.feasibility) << "  " << (bounded ? sig(r.tau) : "UNBOUNDED") << "  "
        << sig(r.sim_trace) << (r.error.empty() ? "" : "  error: " + r.error) << "\n";
  }
  files.write("sweep.csv", csv.str());

  // gridded plot data: lambda1 down, lambda2 across
  std::set<double> s1, s2;
  for (const auto &p : grid.pairs) s1.insert(p.lambda1), s2.insert(p.lambda2);
  const std::vector<double> v1(s1.begin(), s1.end()), v2(s2.begin(), s2.end());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<double>> tau_grid(v1.size(), std::vector<double>(v2.size(), nan));
  auto sim_grid = tau_grid;
  for (const auto &r : rows) {
    const auto i = static_cast<std::size_t>(
        std::lower_bound(v1.begin(), v1.end(), r.rates.lambda1) - v1.begin());
    const auto k = static_cast<std::size_t>(
        std::lower_bound(v2.begin(), v2.end(), r.rates.lambda2) - v2.begin());
    tau_grid[i][k] = r.trace_status == sdp::Status::Optimal
                         ? r.tau
                         : std::numeric_limits<double>::infinity();
    sim_grid[i][k] = r.error.empty() ? r.sim_trace : nan;
  }
  std::ostringstream g;
  g << "quantity,lambda1";
  for (double b : v2) g << ",lambda2=" << exact(b);
  g << '\n';
  for (const auto *which : {&tau_grid, &sim_grid})
    for (std::size_t i = 0; i < v1.size(); ++i) {
      g << (which == &tau_grid ? "tau" : "sim_trace") << ',' << exact(v1[i]);
      for (double x : (*which)[i]) g << ',' << (std::isnan(x) ? "" : exact(x));
      g << '\n';
    }
  files.write("sweep_grid.csv", g.str());
  std::vector<std::string> xl, yl;
  for (double b : v2) xl.push_back(sig(b));
  for (double a : v1) yl.push_back(sig(a));
  files.write("sweep_tau.svg", plot::heat_svg("trace bound tau", xl, yl, tau_grid));
  files.write("sweep_sim.svg", plot::heat_svg("simulated steady trace", xl, yl, sim_grid));
  plot::Series bound{"bound tau", {}, {}, false}, sim{"simulated", {}, {}, false};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    bound.x.push_back(static_cast<double>(i));
    sim.x.push_back(static_cast<double>(i));
    bound.y.push_back(rows[i].trace_status == sdp::Status::Optimal ? rows[i].tau : nan);
    sim.y.push_back(rows[i].error.empty() ? rows[i].sim_trace : nan);
  }
  files.write("sweep.svg",
              plot::line_svg("bound versus simulated trace", "grid cell", "trace", {bound, sim},
                             true));

  rep.exit_code = failures ? kFailure : kOk;
  rep.data = {{"rows", table}, {"failures", failures}};
  json opts{{"grid", o.grid ? json(*o.grid) : json(nullptr)},
            {"duration", base.duration},
            {"mode", poly ? "polytopic" : "linear"}};
  files.finish(rep, "sweep", opts, seeds);
  return rep;
}

Report cmd_schedule(const RunContext &ctx, const ScheduleOptions &o) {
  const auto &grid_spec = o.grid;
  const auto &e = ctx.experiment;
  auto &out = console(ctx);
  Outputs files(ctx);
  Report rep;
  const CandidateSet cands = grid_spec ? parse_grid_spec(*grid_spec) : e.candidates;
  cands.validate();
  SimConfig cfg = e.sim;
  cfg.duration = duration_or(o.duration, e.sim.duration);
  json opts{{"mode", o.mode}, {"duration", cfg.duration}, {"analysis", o.analysis}};
  if (grid_spec) opts["grid"] = *grid_spec;

  if (o.mode == "static") {
    const auto seeds = seeds_or(o.seeds, e.seeds);
    const bool poly = use_polytope(e, o.analysis);
    const auto vertices = analysis_vertices(e, poly);
    out << "static schedule, " << (poly ? "polytopic" : "linear") << " analysis over "
        << vertices.size() << " vertices, " << cands.pairs.size() << " candidates\n";
    Schedule s;
    try {
      s = optimize_rates(vertices, e.model, cands);
    } catch (const NoFeasibleCandidate &nf) {
      out << "no candidate is feasible:\n";
      for (const auto &ev : nf.evaluations) out << "  " << describe(ev) << "\n";
      files.write("candidates.csv", evaluations_csv(nf.evaluations));
      rep.exit_code = kInfeasible;
      rep.data = {{"error", nf.what()}};
      files.write("schedule.json", rep.data.dump(2) + "\n");
      files.finish(rep, "schedule", opts, seeds);
      return rep;
    }
    out << "chosen " << rates_str(s.chosen) << ", periods " << period_str(s.period1) << " / "
        << period_str(s.period2) << " steps, tau = " << sig(s.tau) << ", objective "
        << sig(s.objective_value) << "\n";
    cfg.mode = SimMode::Scheduled;
    cfg.period1 = s.period1;
    cfg.period2 = s.period2;
    std::vector<double> traces;
    SimResult first;
    for (auto seed : seeds) {
      cfg.seed = seed;
      auto r = run(e.model, cfg);
      traces.push_back(r.summary.steady_trace);
      if (traces.size() == 1) first = std::move(r);
    }
    double mean = 0.0;
    for (double t : traces) mean += t / static_cast<double>(traces.size());
    out << "simulated steady trace " << sig(mean) << " (mean of " << traces.size()
        << " seeds)\n";

    json extra{{"chosen", {s.chosen.lambda1, s.chosen.lambda2}},
               {"period1", period_json(s.period1)},
               {"period2", period_json(s.period2)},
               {"objective", s.objective_value},
               {"seeds", seeds},
               {"seed_traces", traces},
               {"mean_steady_trace", mean}};
    files.write("summary.json", summary_json(first.summary, s.tau, extra));
    files.write("candidates.csv", evaluations_csv(s.evaluations));
    files.write("periods.csv", periods_csv(first));
    write_sim_files(files, first, e.model, s.tau, "static schedule " + rates_str(s.chosen));
    rep.data = extra;
    rep.data["tau"] = s.tau;
    rep.data["steady_trace"] = first.summary.steady_trace;
    files.finish(rep, "schedule", opts, seeds);
    return rep;
  }
  if (o.mode != "iterative") throw ConfigError("--mode must be static or iterative");

  const auto seeds = seeds_or(o.seeds, {e.seeds.front()});
  cfg.mode = SimMode::Iterative;
  cfg.candidates = cands;
  cfg.delta = o.delta ? *o.delta : e.sim.delta;
  if (!(cfg.delta > 0.0)) throw ConfigError("--delta must be positive");
  opts["delta"] = cfg.delta;
  out << "iterative schedule, delta " << sig(cfg.delta) << ", " << cands.pairs.size()
      << " candidates\n";
  std::vector<double> traces;
  SimResult first;
  for (auto seed : seeds) {
    cfg.seed = seed;
    SimResult r;
    try {
      r = run(e.model, cfg);
    } catch (const NoFeasibleCandidate &nf) {
      out << "no candidate is feasible at a relinearization:\n";
      for (const auto &ev : nf.evaluations) out << "  " << describe(ev) << "\n";
      rep.exit_code = kInfeasible;
      rep.data = {{"error", nf.what()}};
      files.write("schedule.json", rep.data.dump(2) + "\n");
      files.finish(rep, "schedule", opts, seeds);
      return rep;
    }
    traces.push_back(r.summary.steady_trace);
    if (traces.size() == 1) first = std::move(r);
  }
  double mean = 0.0;
  for (double t : traces) mean += t / static_cast<double>(traces.size());
  auto avg_period = [&](bool ch1) {
    double sum = 0.0;
    long n = 0;
    for (const auto &st : first.steps) {
      const auto &p = ch1 ? st.period1 : st.period2;
      if (p) sum += static_cast<double>(*p), ++n;
    }
    return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::infinity();
  };
  const double ap1 = avg_period(true), ap2 = avg_period(false);
  out << "steady trace " << sig(first.summary.steady_trace) << ", " << first.summary.recomputations
      << " recomputations, mean periods " << sig(ap1) << " / " << sig(ap2) << " steps\n";
  if (seeds.size() > 1) out << "mean steady trace over seeds " << sig(mean) << "\n";
  json extra{{"recomputations", first.summary.recomputations},
             {"mean_period1", finite_or_null(ap1)},
             {"mean_period2", finite_or_null(ap2)},
             {"delta", cfg.delta},
             {"seeds", seeds},
             {"seed_traces", traces},
             {"mean_steady_trace", mean}};
  files.write("summary.json", summary_json(first.summary, first.summary.tau, extra));
  files.write("periods.csv", periods_csv(first));
  files.write("periods.svg", periods_svg(first, e.model.sample_period()));
  write_sim_files(files, first, e.model, first.summary.tau, "iterative schedule");
  rep.data = extra;
  rep.data["steady_trace"] = first.summary.steady_trace;
  files.finish(rep, "schedule", opts, seeds);
  return rep;
}

Report cmd_simulate(const RunContext &ctx, const SimulateOptions &o) {
  const auto &e = ctx.experiment;
  auto &out = console(ctx);
  Outputs files(ctx);
  Report rep;
  const RatePair rates{o.lambda1, o.lambda2};
  validate_rates(rates);
  SimConfig cfg = e.sim;
  cfg.duration = duration_or(o.duration, e.sim.duration);
  cfg.seed = o.seed ? *o.seed : e.seeds.front();
  cfg.rates = rates;
  if (o.mode == "stochastic") {
    cfg.mode = SimMode::Stochastic;
  } else if (o.mode == "scheduled") {
    cfg.mode = SimMode::Scheduled;
    cfg.period1 = rate_to_period(rates.lambda1);
    cfg.period2 = rate_to_period(rates.lambda2);
  } else {
    throw ConfigError("--mode must be stochastic or scheduled, got '" + o.mode + "'");
  }
  std::optional<double> tau;
  if (o.with_bound) {
    const auto tb = trace_bound(analysis_vertices(e, use_polytope(e, "auto")), e.model, rates);
    if (tb.ok()) tau = tb.tau;
  }
  const auto r = run(e.model, cfg);
  out << o.mode << " simulation " << rates_str(rates) << ", seed " << cfg.seed << ", "
      << r.steps.size() << " steps\n";
  out << "steady trace " << sig(r.summary.steady_trace) << ", reads " << r.summary.reads1 << " / "
      << r.summary.reads2 << ", tau " << (tau ? sig(*tau) : std::string("UNBOUNDED")) << "\n";
  json extra{{"mode", o.mode}, {"seed", cfg.seed}, {"lambda1", rates.lambda1},
             {"lambda2", rates.lambda2}};
  if (cfg.mode == SimMode::Scheduled)
    extra["period1"] = period_json(cfg.period1), extra["period2"] = period_json(cfg.period2);
  files.write("summary.json", summary_json(r.summary, tau, extra));
  write_sim_files(files, r, e.model, tau, o.mode + " " + rates_str(rates));
  files.write_with("measurements.csv", [&](std::ostream &os) { write_log(make_log(r), os); });
  rep.data = extra;
  rep.data["steady_trace"] = r.summary.steady_trace;
  rep.data["tau"] = tau ? json(*tau) : json(nullptr);
  json opts{{"mode", o.mode}, {"lambda1", o.lambda1}, {"lambda2", o.lambda2},
            {"duration", cfg.duration}};
  files.finish(rep, "simulate", opts, {cfg.seed});
  return rep;
}

Report cmd_replay(const RunContext &ctx, const ReplayOptions &o) {
  const auto &e = ctx.experiment;
  auto &out = console(ctx);
  Outputs files(ctx);
  Report rep;
  std::ifstream in(o.log_path);
  if (!in) throw MissingInput("cannot open measurement log '" + o.log_path + "'");
  std::vector<LogEntry> log;
  try {
    log = read_log(in, e.model);
  } catch (const std::invalid_argument &err) {
    throw ConfigError("'" + o.log_path + "': " + err.what());
  }
  if (o.steps < 0) throw ConfigError("--steps must be non-negative");
  const auto r = replay(e.model, log, o.steps, e.sim.x_hat0, e.sim.P0);
  out << "replayed " << log.size() << " measurements over " << r.steps.size()
      << " steps, steady trace "
      << (r.steps.empty() ? std::string("n/a") : sig(r.summary.steady_trace)) << "\n";
  json extra{{"log", o.log_path}, {"measurements", log.size()}, {"steps", r.steps.size()}};
  files.write("summary.json", summary_json(r.summary, std::nullopt, extra));
  write_sim_files(files, r, e.model, std::nullopt, "replay");
  rep.data = extra;
  rep.data["steady_trace"] = r.summary.steady_trace;
  files.finish(rep, "replay", {{"log", o.log_path}, {"steps", o.steps}}, {});
  return rep;
}

namespace {

struct Overrides {
  std::optional<json> config;
  std::optional<std::string> out_dir;
};

std::string default_out_dir() {
  if (const char *env = std::getenv("TWOCHAN_OUT_DIR"); env && *env) return env;
  return "twochan_out";
}

int dispatch(const std::vector<std::string> &args, const Overrides &ov, std::ostream &out,
             std::ostream &err);

int rerun(const std::string &manifest_path, const std::optional<std::string> &out_dir,
          std::ostream &out, std::ostream &err) {
  std::ifstream in(manifest_path);
  if (!in) throw MissingInput("cannot open manifest '" + manifest_path + "'");
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception &e) {
    throw ConfigError("manifest '" + manifest_path + "' is not valid JSON: " + e.what());
  }
  if (!m.contains("argv") || !m.contains("config_input"))
    throw ConfigError("manifest '" + manifest_path + "' lacks argv or config_input");
  auto args = m["argv"].get<std::vector<std::string>>();
  if (args.empty()) throw ConfigError("manifest '" + manifest_path + "' has an empty argv");
  if (m.value("tool_version", "") != version())
    err << "warning: manifest written by version " << m.value("tool_version", "?")
        << ", running " << version() << "\n";
  Overrides ov;
  ov.config = m["config_input"];
  ov.out_dir = out_dir ? *out_dir : default_out_dir();
  return dispatch(args, ov, out, err);
}

int dispatch(const std::vector<std::string> &args, const Overrides &ov, std::ostream &out,
             std::ostream &err) {
  CLI::App app{"Two-channel intermittent filtering: boundedness, trace bounds, read scheduling",
               "twochan"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);

  std::string config_path, out_dir;
  auto common = [&](CLI::App *s, bool files_by_default) {
    s->add_option("--config", config_path, "experiment JSON file")->required(!ov.config);
    s->add_option("--out", out_dir,
                  files_by_default ? "output directory (default $TWOCHAN_OUT_DIR or twochan_out)"
                                   : "write analysis.json and a manifest here");
  };

  AnalyzeOptions ao;
  auto *an = app.add_subcommand("analyze", "boundedness test and trace bound for one rate pair");
  common(an, false);
  an->add_option("lambda1", ao.lambda1, "arrival rate of channel 1");
  an->add_option("lambda2", ao.lambda2, "arrival rate of channel 2");
  an->add_option("--mode", ao.mode, "linear | polytopic | auto")
      ->check(CLI::IsMember({"linear", "polytopic", "auto"}));
  std::optional<int> bisect;
  an->add_option("--bisect", bisect, "find the critical rate of this channel")
      ->check(CLI::IsMember({1, 2}));
  an->add_option("--fixed", ao.fixed, "rate of the other channel when bisecting");
  an->add_option("--tol", ao.tol, "bisection tolerance");
  an->add_option("--trace-mode", ao.trace_mode, "worst | joint | linearized")
      ->check(CLI::IsMember({"worst", "joint", "linearized"}));
  an->add_flag("--strict-psi", ao.strict_psi, "drop the open-loop block of Psi");

  SweepOptions swo;
  std::string sw_grid;
  std::vector<std::uint64_t> sw_seeds;
  double sw_duration = 0.0;
  swo.jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  auto *sw = app.add_subcommand("sweep", "bound and simulated trace over a rate grid");
  common(sw, true);
  auto *sw_grid_opt = sw->add_option("--grid", sw_grid, "'l1 list;l2 list', lists as a,b,c or lo:step:hi");
  auto *sw_seeds_opt = sw->add_option("--seeds", sw_seeds, "comma separated seeds")->delimiter(',');
  auto *sw_dur_opt = sw->add_option("--duration", sw_duration, "simulated seconds");
  sw->add_option("--mode", swo.mode, "linear | polytopic | auto")
      ->check(CLI::IsMember({"linear", "polytopic", "auto"}));
  sw->add_option("--jobs", swo.jobs, "worker threads")->check(CLI::PositiveNumber);

  ScheduleOptions sco;
  std::string sc_grid;
  std::vector<std::uint64_t> sc_seeds;
  double sc_duration = 0.0, sc_delta = 0.0;
  auto *sc = app.add_subcommand("schedule", "choose read periods and simulate them");
  common(sc, true);
  sc->add_option("--mode", sco.mode, "static | iterative")
      ->check(CLI::IsMember({"static", "iterative"}));
  auto *sc_grid_opt = sc->add_option("--grid", sc_grid, "candidate grid spec");
  auto *sc_delta_opt = sc->add_option("--delta", sc_delta, "relinearization threshold");
  auto *sc_dur_opt = sc->add_option("--duration", sc_duration, "simulated seconds");
  auto *sc_seeds_opt = sc->add_option("--seeds,--seed", sc_seeds,
                                      "seeds (static default: config seeds; iterative: first)")
                           ->delimiter(',');
  sc->add_option("--analysis", sco.analysis, "linear | polytopic | auto")
      ->check(CLI::IsMember({"linear", "polytopic", "auto"}));

  SimulateOptions smo;
  std::uint64_t sm_seed = 0;
  double sm_duration = 0.0;
  bool no_bound = false;
  auto *sm = app.add_subcommand("simulate", "one simulation at fixed rates");
  common(sm, true);
  sm->add_option("--mode", smo.mode, "stochastic | scheduled")
      ->check(CLI::IsMember({"stochastic", "scheduled"}));
  sm->add_option("lambda1", smo.lambda1, "arrival rate of channel 1")->required();
  sm->add_option("lambda2", smo.lambda2, "arrival rate of channel 2")->required();
  auto *sm_seed_opt = sm->add_option("--seed", sm_seed, "seed (default: first config seed)");
  auto *sm_dur_opt = sm->add_option("--duration", sm_duration, "simulated seconds");
  sm->add_flag("--no-bound", no_bound, "skip the trace bound in the summary");

  ReplayOptions rpo;
  auto *rp = app.add_subcommand("replay", "run the filter on a recorded measurement log");
  common(rp, true);
  rp->add_option("--log", rpo.log_path, "measurement CSV")->required();
  rp->add_option("--steps", rpo.steps, "steps to run (default: last logged step + 1)");

  std::string manifest_path;
  auto *rr = app.add_subcommand("rerun", "repeat a run from its manifest.json");
  rr->add_option("--manifest", manifest_path, "manifest written by an earlier run")->required();
  rr->add_option("--out", out_dir, "output directory");

  std::vector<const char *> cargv{"twochan"};
  for (const auto &a : args) cargv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  if (rr->parsed()) {
    if (ov.config) throw ConfigError("a manifest cannot rerun another rerun");
    return rerun(manifest_path, out_dir.empty() ? std::nullopt : std::optional(out_dir), out,
                 err);
  }

  json input = ov.config ? *ov.config : read_config_json(config_path);
  Experiment experiment = parse_experiment_from(
      input, ov.config ? "manifest config" : "config file '" + config_path + "'");
  RunContext ctx{std::move(experiment), std::move(input), args, "", &out};
  const bool explicit_out = !out_dir.empty() || std::getenv("TWOCHAN_OUT_DIR");
  if (ov.out_dir) ctx.out_dir = *ov.out_dir;
  else if (!out_dir.empty()) ctx.out_dir = out_dir;
  else if (!an->parsed() || explicit_out) ctx.out_dir = default_out_dir();

  Report rep;
  if (an->parsed()) {
    ao.bisect = bisect;
    rep = cmd_analyze(ctx, ao);
  } else if (sw->parsed()) {
    if (*sw_grid_opt) swo.grid = sw_grid;
    if (*sw_seeds_opt) swo.seeds = sw_seeds;
    if (*sw_dur_opt) swo.duration = sw_duration;
    rep = cmd_sweep(ctx, swo);
  } else if (sc->parsed()) {
    if (*sc_seeds_opt) sco.seeds = sc_seeds;
    if (*sc_dur_opt) sco.duration = sc_duration;
    if (*sc_delta_opt) sco.delta = sc_delta;
    if (*sc_grid_opt) sco.grid = sc_grid;
    rep = cmd_schedule(ctx, sco);
  } else if (sm->parsed()) {
    if (*sm_seed_opt) smo.seed = sm_seed;
    if (*sm_dur_opt) smo.duration = sm_duration;
    smo.with_bound = !no_bound;
    rep = cmd_simulate(ctx, smo);
  } else if (rp->parsed()) {
    rep = cmd_replay(ctx, rpo);
  }
  if (!ctx.out_dir.empty() && !rep.files.empty())
    out << "wrote " << rep.files.size() << " files to " << ctx.out_dir << "\n";
  return rep.exit_code;
}

}  // namespace

int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  try {
    return dispatch(args, {}, out, err);
  } catch (const MissingInput &e) {
    err << "error: " << e.what() << "\n";
    return kMissingInput;
  } catch (const ConfigError &e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError &e) {
    err << "numerical failure: " << e.what() << "\n";
    return kFailure;
  } catch (const std::invalid_argument &e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::length_error &e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception &e) {
    err << "failure: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace twochan::cli
