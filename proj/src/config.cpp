#include "twochan/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

namespace twochan {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string &msg) { throw ConfigError(msg); }

double number(const json &j, const std::string &what) {
  if (!j.is_number()) bad(what + " must be a number");
  return j.get<double>();
}

Vec vector_of(const json &j, const std::string &what) {
  if (!j.is_array()) bad(what + " must be an array of numbers");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    v(static_cast<Eigen::Index>(i)) = number(j[i], what + "[" + std::to_string(i) + "]");
  return v;
}

// Row-major nested arrays; [] is a matrix with zero rows and `cols` columns.
Mat matrix_of(const json &j, const std::string &what, Eigen::Index cols = -1) {
  if (!j.is_array()) bad(what + " must be an array of rows");
  if (j.empty()) return Mat(0, std::max<Eigen::Index>(cols, 0));
  const auto r = static_cast<Eigen::Index>(j.size());
  if (!j[0].is_array()) bad(what + " must be an array of rows");
  const auto c = static_cast<Eigen::Index>(j[0].size());
  Mat M(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    const auto &row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != c)
      bad(what + " has ragged rows");
    for (Eigen::Index k = 0; k < c; ++k)
      M(i, k) = number(row[static_cast<std::size_t>(k)], what);
  }
  if (cols >= 0 && c != cols)
    bad(what + " must have " + std::to_string(cols) + " columns");
  return M;
}

json matrix_json(const Mat &M) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < M.cols(); ++k) row.push_back(M(i, k));
    rows.push_back(row);
  }
  return rows;
}

json vector_json(const Vec &v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Mat diag_of(const json &j, const std::string &what, Eigen::Index n) {
  const Vec d = vector_of(j, what);
  if (d.size() != n) bad(what + " must have " + std::to_string(n) + " entries");
  return d.asDiagonal();
}

SystemModel build_model(const json &j) {
  if (!j.contains("type") || !j["type"].is_string())
    bad("`type` is required (linear | kinematic5dof | custom_linear)");
  const auto type = j["type"].get<std::string>();
  std::optional<SystemModel> m;
  if (type == "linear") {
    m = linear_benchmark_model();
  } else if (type == "kinematic5dof") {
    auto variant = KinematicsVariant::Corrected;
    if (j.contains("variant")) {
      const auto v = j["variant"].get<std::string>();
      if (v == "duplicated_row") variant = KinematicsVariant::DuplicatedRow;
      else if (v != "corrected") bad("variant must be corrected or duplicated_row");
    }
    m = kinematic5dof_model(variant);
  } else if (type == "custom_linear") {
    for (const char *k : {"A", "C1", "C2", "Q_diag", "R_diag", "Ts"})
      if (!j.contains(k)) bad(std::string("custom_linear needs `") + k + "`");
    const Mat A = matrix_of(j["A"], "A");
    const auto n = A.rows();
    if (A.cols() != n) bad("A must be square");
    const Mat B = j.contains("B") ? matrix_of(j["B"], "B") : Mat(Mat::Zero(n, 1));
    const Mat C1 = matrix_of(j["C1"], "C1", n);
    const Mat C2 = matrix_of(j["C2"], "C2", n);
    const Mat Q = diag_of(j["Q_diag"], "Q_diag", n);
    const Mat R = diag_of(j["R_diag"], "R_diag", C1.rows() + C2.rows());
    const double Ts = number(j["Ts"], "Ts");
    m = SystemModel::linear(j.value("name", "custom_linear"), A, B, C1, C2, Q, R, Ts);
  } else {
    bad("unknown model type '" + type + "'");
  }
  if (type != "custom_linear" && (j.contains("Q_diag") || j.contains("R_diag"))) {
    const auto n = m->state_dim();
    const Mat Q = j.contains("Q_diag") ? diag_of(j["Q_diag"], "Q_diag", n) : m->Q();
    const Mat R =
        j.contains("R_diag") ? diag_of(j["R_diag"], "R_diag", m->meas_dim()) : m->R();
    m = m->with_noise(Q, R);
  }
  try {
    validate_model(*m);
  } catch (const std::invalid_argument &e) {
    bad(e.what());
  }
  return *m;
}

Envelope envelope_of(const json &j, Eigen::Index n) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != n)
    bad("envelope must list one [lo, hi] pair per state (" + std::to_string(n) + ")");
  constexpr double inf = std::numeric_limits<double>::infinity();
  Envelope env;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto &p = j[i];
    if (!p.is_array() || p.size() != 2) bad("envelope entries must be [lo, hi]");
    const double lo = p[0].is_null() ? -inf : number(p[0], "envelope");
    const double hi = p[1].is_null() ? inf : number(p[1], "envelope");
    if (lo > hi) bad("envelope entry " + std::to_string(i) + " has lo > hi");
    env.push_back({lo, hi});
  }
  return env;
}

json envelope_json(const Envelope &env) {
  json a = json::array();
  for (const auto &iv : env) {
    json lo = std::isfinite(iv.lo) ? json(iv.lo) : json(nullptr);
    json hi = std::isfinite(iv.hi) ? json(iv.hi) : json(nullptr);
    a.push_back(json::array({lo, hi}));
  }
  return a;
}

std::vector<double> rates_of(const json &j, const std::string &what) {
  if (!j.is_array() || j.empty()) bad(what + " must be a non-empty array");
  std::vector<double> v;
  for (const auto &x : j) {
    const double r = number(x, what);
    if (!(r >= 0.0 && r <= 1.0)) bad(what + " values must lie in [0, 1]");
    v.push_back(r);
  }
  return v;
}

CandidateSet candidates_of(const json &j) {
  if (j.contains("pairs")) {
    CandidateSet c;
    for (const auto &p : j["pairs"]) {
      if (!p.is_array() || p.size() != 2) bad("candidate pairs must be [l1, l2]");
      const auto v = rates_of(p, "candidate pair");
      c.pairs.push_back({v[0], v[1]});
    }
    if (c.pairs.empty()) bad("candidate pairs are empty");
    return c;
  }
  if (!j.contains("lambda1") || !j.contains("lambda2"))
    bad("candidates need `pairs` or both `lambda1` and `lambda2`");
  return CandidateSet::grid(rates_of(j["lambda1"], "lambda1"), rates_of(j["lambda2"], "lambda2"));
}

double round12(double v) { return std::round(v * 1e12) / 1e12; }

}  // namespace

Experiment parse_experiment(const json &j) {
  if (!j.is_object()) bad("config must be a JSON object");
  SystemModel model = build_model(j);
  const auto n = model.state_dim();
  Experiment e{std::move(model), {}, 4096, Vec::Zero(n), {}, {}, {}, {}};
  const auto &m = e.model;

  if (j.contains("envelope")) e.envelope = envelope_of(j["envelope"], n);
  else if (j["type"] == "kinematic5dof") e.envelope = kinematic5dof_default_envelope();
  else e.envelope = Envelope(static_cast<std::size_t>(n), Interval{-1.0, 1.0});
  if (j.contains("max_vertices")) {
    const double mv = number(j["max_vertices"], "max_vertices");
    if (!(mv >= 1.0)) bad("max_vertices must be at least 1");
    e.max_vertices = static_cast<std::size_t>(mv);
  }
  if (j.contains("linearization_point")) {
    e.linearization_point = vector_of(j["linearization_point"], "linearization_point");
    if (e.linearization_point.size() != n) bad("linearization_point has the wrong length");
  }

  std::vector<double> tenths;
  for (int i = 0; i <= 10; ++i) tenths.push_back(i / 10.0);
  e.candidates = j.contains("candidates") ? candidates_of(j["candidates"])
                                          : CandidateSet::grid(tenths, tenths);

  const json sim = j.value("simulation", json::object());
  if (!sim.is_object()) bad("simulation must be an object");
  e.sim.duration = sim.contains("duration") ? number(sim["duration"], "duration") : 600.0;
  if (!(e.sim.duration > 0.0)) bad("duration must be positive");
  if (sim.contains("seeds")) {
    for (const auto &s : sim["seeds"]) {
      if (!s.is_number_unsigned()) bad("seeds must be non-negative integers");
      e.seeds.push_back(s.get<std::uint64_t>());
    }
  }
  if (e.seeds.empty()) e.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  e.sim.seed = e.seeds.front();
  e.sim.x0 = sim.contains("x0") ? vector_of(sim["x0"], "x0") : Vec(Vec::Zero(n));
  e.sim.x_hat0 = sim.contains("x_hat0") ? vector_of(sim["x_hat0"], "x_hat0") : Vec(Vec::Zero(n));
  e.sim.P0 = sim.contains("P0_diag") ? diag_of(sim["P0_diag"], "P0_diag", n)
                                     : Mat(Mat::Identity(n, n));
  if (e.sim.x0.size() != n || e.sim.x_hat0.size() != n) bad("x0 / x_hat0 have the wrong length");
  e.sim.truth_noise_scale =
      sim.contains("truth_noise_scale") ? number(sim["truth_noise_scale"], "truth_noise_scale")
                                        : 1.0;
  if (!(e.sim.truth_noise_scale >= 0.0)) bad("truth_noise_scale must be non-negative");
  e.sim.delta = sim.contains("delta") ? number(sim["delta"], "delta") : 0.1;
  if (!(e.sim.delta > 0.0)) bad("delta must be positive");
  e.sim.candidates = e.candidates;

  // resolved form, defaults included
  json r;
  r["type"] = j["type"];
  if (j.contains("variant")) r["variant"] = j["variant"];
  if (j.contains("notes")) r["notes"] = j["notes"];
  r["name"] = m.name();
  r["A_at_linearization_point"] = matrix_json(m.jacobian(e.linearization_point));
  r["B"] = matrix_json(m.B());
  r["C1"] = matrix_json(m.C1());
  r["C2"] = matrix_json(m.C2());
  r["Q"] = matrix_json(m.Q());
  r["R"] = matrix_json(m.R());
  r["Ts"] = m.sample_period();
  r["envelope"] = envelope_json(e.envelope);
  r["max_vertices"] = e.max_vertices;
  r["linearization_point"] = vector_json(e.linearization_point);
  json pairs = json::array();
  for (const auto &p : e.candidates.pairs) pairs.push_back(json::array({p.lambda1, p.lambda2}));
  r["candidates"] = {{"pairs", pairs}};
  r["simulation"] = {{"duration", e.sim.duration},
                     {"seeds", e.seeds},
                     {"x0", vector_json(e.sim.x0)},
                     {"x_hat0", vector_json(e.sim.x_hat0)},
                     {"P0_diag", vector_json(e.sim.P0.diagonal())},
                     {"truth_noise_scale", e.sim.truth_noise_scale},
                     {"delta", e.sim.delta}};
  e.resolved = std::move(r);
  return e;
}

json read_config_json(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw MissingInput("cannot open config file '" + path + "'");
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::exception &e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

Experiment parse_experiment_from(const json &j, const std::string &origin) {
  try {
    return parse_experiment(j);
  } catch (const json::exception &e) {
    throw ConfigError(origin + ": " + e.what());
  } catch (const ConfigError &e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

Experiment load_experiment(const std::string &path) {
  return parse_experiment_from(read_config_json(path), "config file '" + path + "'");
}

std::vector<double> parse_rate_list(const std::string &spec) {
  auto num = [&](const std::string &s) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &pos);
    } catch (const std::exception &) {
      bad("bad number '" + s + "' in '" + spec + "'");
    }
    if (pos != s.size()) bad("bad number '" + s + "' in '" + spec + "'");
    return v;
  };
  std::vector<double> out;
  if (spec.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream is(spec);
    while (std::getline(is, cur, ':')) parts.push_back(cur);
    if (parts.size() != 3) bad("range must be lo:step:hi, got '" + spec + "'");
    const double lo = num(parts[0]), step = num(parts[1]), hi = num(parts[2]);
    if (!(step > 0.0) || lo > hi) bad("range '" + spec + "' is empty or has a bad step");
    const long count = static_cast<long>(std::floor((hi - lo) / step + 1e-9)) + 1;
    if (count > 100000) bad("range '" + spec + "' is too long");
    for (long i = 0; i < count; ++i) out.push_back(round12(lo + static_cast<double>(i) * step));
  } else {
    std::string cur;
    std::istringstream is(spec);
    while (std::getline(is, cur, ',')) out.push_back(num(cur));
  }
  if (out.empty()) bad("empty rate list");
  for (double v : out)
    if (!(v >= 0.0 && v <= 1.0)) bad("rate " + std::to_string(v) + " is outside [0, 1]");
  return out;
}

CandidateSet parse_grid_spec(const std::string &spec) {
  const auto semi = spec.find(';');
  if (semi == std::string::npos) {
    const auto v = parse_rate_list(spec);
    return CandidateSet::grid(v, v);
  }
  return CandidateSet::grid(parse_rate_list(spec.substr(0, semi)),
                            parse_rate_list(spec.substr(semi + 1)));
}

std::vector<Mat> analysis_vertices(const Experiment &e, bool polytopic) {
  if (!polytopic) return {e.model.jacobian(e.linearization_point)};
  return build_polytope(e.model, e.envelope, e.max_vertices).vertices;
}

}  // namespace twochan
