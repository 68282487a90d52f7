#include "twochan/stability.hpp"

#include "twochan/filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace twochan {

void validate_rates(const RatePair &rates) {
  if (!rates.valid() || std::isnan(rates.lambda1) || std::isnan(rates.lambda2))
    throw std::invalid_argument("arrival rates must lie in [0, 1]");
}

BranchWeights branch_weights(const RatePair &r) {
  validate_rates(r);
  return {std::sqrt(r.lambda1 * r.lambda2), std::sqrt(r.lambda1 * (1.0 - r.lambda2)),
          std::sqrt(r.lambda2 * (1.0 - r.lambda1)),
          std::sqrt((1.0 - r.lambda1) * (1.0 - r.lambda2))};
}

double strict_margin(const std::vector<Mat> &vertices) {
  double a = 0.0;
  for (const auto &A : vertices) {
    Eigen::JacobiSVD<Mat> svd(A);
    a = std::max(a, svd.singularValues()(0));
  }
  return 1e-8 * (1.0 + a);
}

// ---------------------------------------------------------------------------
// Operators

Mat g_operator(const Mat &A, const SystemModel &model, const RatePair &rates, const Mat &X) {
  validate_rates(rates);
  const double l1 = rates.lambda1, l2 = rates.lambda2;
  Mat G = A * X * A.transpose() + model.Q();
  if (l1 * l2 > 0.0)
    G -= l1 * l2 * riccati_correction(A, X, model.C(), model.R(), "both channels (C, R)");
  if (l1 * (1.0 - l2) > 0.0)
    G -= l1 * (1.0 - l2) *
         riccati_correction(A, X, model.C1(), model.R11(), "channel 1 (C1, R11)");
  if ((1.0 - l1) * l2 > 0.0)
    G -= (1.0 - l1) * l2 *
         riccati_correction(A, X, model.C2(), model.R22(), "channel 2 (C2, R22)");
  return symmetrize(G);
}

namespace {

void check_gains(const SystemModel &model, const GainTriple &g) {
  const auto n = model.state_dim();
  if (g.K.rows() != n || g.K.cols() != model.meas_dim() || g.K1.rows() != n ||
      g.K1.cols() != model.ch1_dim() || g.K2.rows() != n || g.K2.cols() != model.ch2_dim())
    throw std::invalid_argument("gain dimensions do not match the model");
}

Mat neg_gain(const Mat &A, const Mat &X, const Mat &C, const Mat &R, const char *what) {
  if (C.rows() == 0) return Mat::Zero(A.rows(), 0);
  return -A * kalman_gain(X, C, R, what);
}

}  // namespace

GainTriple optimal_gains(const Mat &A, const SystemModel &model, const Mat &X) {
  return {neg_gain(A, X, model.C(), model.R(), "both channels (C, R)"),
          neg_gain(A, X, model.C1(), model.R11(), "channel 1 (C1, R11)"),
          neg_gain(A, X, model.C2(), model.R22(), "channel 2 (C2, R22)")};
}

Mat L_operator(const Mat &A, const SystemModel &model, const RatePair &rates,
               const GainTriple &gains, const Mat &Y) {
  validate_rates(rates);
  check_gains(model, gains);
  const double l1 = rates.lambda1, l2 = rates.lambda2;
  const Mat F = A + gains.K * model.C();
  const Mat F1 = A + gains.K1 * model.C1();
  const Mat F2 = A + gains.K2 * model.C2();
  return (1.0 - l1) * (1.0 - l2) * A * Y * A.transpose() + l1 * l2 * F * Y * F.transpose() +
         l1 * (1.0 - l2) * F1 * Y * F1.transpose() + (1.0 - l1) * l2 * F2 * Y * F2.transpose();
}

Mat U_term(const SystemModel &model, const RatePair &rates, const GainTriple &gains) {
  validate_rates(rates);
  check_gains(model, gains);
  const double l1 = rates.lambda1, l2 = rates.lambda2;
  const Mat &Q = model.Q();
  const Mat V = Q + gains.K * model.R() * gains.K.transpose();
  const Mat V1 = Q + gains.K1 * model.R11() * gains.K1.transpose();
  const Mat V2 = Q + gains.K2 * model.R22() * gains.K2.transpose();
  return (1.0 - l1) * (1.0 - l2) * Q + l1 * l2 * V + l1 * (1.0 - l2) * V1 +
         (1.0 - l1) * l2 * V2;
}

Mat phi_operator(const Mat &A, const SystemModel &model, const RatePair &rates,
                 const GainTriple &gains, const Mat &X) {
  return L_operator(A, model, rates, gains, X) + U_term(model, rates, gains);
}

// ---------------------------------------------------------------------------
// Psi

namespace {

struct Branch {
  double weight;
  Mat C;  // empty rows for the no-arrival branch
  int which;  // 0 both, 1 ch1, 2 ch2, 3 none
};

std::vector<Branch> psi_branches(const SystemModel &model, const RatePair &rates,
                                 PsiForm form) {
  const auto w = branch_weights(rates);
  const auto n = model.state_dim();
  std::vector<Branch> out;
  if (w.both > 0.0) out.push_back({w.both, model.C(), 0});
  if (w.ch1 > 0.0) out.push_back({w.ch1, model.C1(), 1});
  if (w.ch2 > 0.0) out.push_back({w.ch2, model.C2(), 2});
  if (form == PsiForm::WithOpenLoop && w.none > 0.0) out.push_back({w.none, Mat(0, n), 3});
  return out;
}

bool is_selection(const Mat &C) {
  for (int i = 0; i < C.rows(); ++i) {
    int ones = 0;
    for (int j = 0; j < C.cols(); ++j) {
      if (C(i, j) == 1.0) ++ones;
      else if (C(i, j) != 0.0) return false;
    }
    if (ones != 1) return false;
  }
  return true;
}

double min_eig(const Mat &M) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace

Mat null_basis(const Mat &C) {
  const auto n = C.cols();
  if (C.rows() == 0) return Mat::Identity(n, n);
  if (is_selection(C)) {
    std::vector<char> used(n, 0);
    for (int i = 0; i < C.rows(); ++i)
      for (int j = 0; j < n; ++j)
        if (C(i, j) == 1.0) used[j] = 1;
    std::vector<int> free;
    for (int j = 0; j < n; ++j)
      if (!used[j]) free.push_back(j);
    Mat N = Mat::Zero(n, static_cast<Eigen::Index>(free.size()));
    for (std::size_t k = 0; k < free.size(); ++k) N(free[k], static_cast<Eigen::Index>(k)) = 1.0;
    return N;
  }
  Eigen::JacobiSVD<Mat> svd(C, Eigen::ComputeFullV);
  const auto &s = svd.singularValues();
  const double tol = std::max(C.rows(), n) * std::numeric_limits<double>::epsilon() *
                     (s.size() > 0 ? s(0) : 0.0);
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > tol) ++rank;
  Mat N = svd.matrixV().rightCols(n - rank);
  for (Eigen::Index i = 0; i < N.size(); ++i)
    if (std::abs(N.data()[i]) < 1e-15) N.data()[i] = 0.0;
  return N;
}

PsiProgram assemble_psi(const std::vector<Mat> &vertices, const SystemModel &model,
                        const RatePair &rates, PsiForm form) {
  if (vertices.empty()) throw std::invalid_argument("no vertices");
  const int n = static_cast<int>(model.state_dim());
  const auto branches = psi_branches(model, rates, form);
  PsiProgram prog;
  prog.eps = strict_margin(vertices);
  auto &p = prog.problem;
  prog.Y = p.add_symmetric("Y", n);
  const int dim = n * (1 + static_cast<int>(branches.size()));
  for (std::size_t j = 0; j < vertices.size(); ++j) {
    const Mat &A = vertices[j];
    const auto tag = std::to_string(j);
    sdp::VarRef Z, Z1, Z2;
    if (model.meas_dim() > 0) Z = p.add_matrix("Z" + tag, n, static_cast<int>(model.meas_dim()));
    if (model.ch1_dim() > 0) Z1 = p.add_matrix("Z1_" + tag, n, static_cast<int>(model.ch1_dim()));
    if (model.ch2_dim() > 0) Z2 = p.add_matrix("Z2_" + tag, n, static_cast<int>(model.ch2_dim()));
    prog.Z.push_back(Z);
    prog.Z1.push_back(Z1);
    prog.Z2.push_back(Z2);

    auto con = p.add_constraint("Psi vertex " + tag, dim);
    const Mat I = Mat::Identity(n, n);
    p.add_var(con, 0, 0, prog.Y);
    for (std::size_t b = 0; b < branches.size(); ++b) {
      const auto &br = branches[b];
      const int off = n * static_cast<int>(b + 1);
      p.add_var(con, off, off, prog.Y);
      p.add_term(con, 0, off, I, prog.Y, A, br.weight);
      const sdp::VarRef zb = br.which == 0 ? Z : br.which == 1 ? Z1 : br.which == 2 ? Z2 : sdp::VarRef{};
      if (zb.id >= 0) p.add_term(con, 0, off, I, zb, br.C, br.weight);
    }
    p.add_identity(con, 0, dim, -prog.eps);
  }
  auto upper = p.add_constraint("I - Y", n);
  p.add_identity(upper, 0, n, 1.0);
  p.add_var(upper, 0, 0, prog.Y, -1.0);
  return prog;
}

Mat evaluate_psi(const Mat &A, const SystemModel &model, const RatePair &rates, const Mat &Y,
                 const Mat &Z, const Mat &Z1, const Mat &Z2, PsiForm form) {
  const auto n = model.state_dim();
  const auto branches = psi_branches(model, rates, form);
  const auto nb = static_cast<Eigen::Index>(branches.size());
  Mat Psi = Mat::Zero(n * (1 + nb), n * (1 + nb));
  Psi.topLeftCorner(n, n) = Y;
  for (Eigen::Index b = 0; b < nb; ++b) {
    const auto &br = branches[b];
    Mat blk = Y * A;
    if (br.which == 0) blk += Z * model.C();
    if (br.which == 1) blk += Z1 * model.C1();
    if (br.which == 2) blk += Z2 * model.C2();
    blk *= br.weight;
    Psi.block(0, n * (b + 1), n, n) = blk;
    Psi.block(n * (b + 1), 0, n, n) = blk.transpose();
    Psi.block(n * (b + 1), n * (b + 1), n, n) = Y;
  }
  return Psi;
}

std::vector<GainTriple> FeasibilityCertificate::gains() const {
  std::vector<GainTriple> out;
  if (!feasible) return out;
  const Eigen::LDLT<Mat> ldlt(Y);
  for (std::size_t j = 0; j < Z.size(); ++j)
    out.push_back({ldlt.solve(Z[j]), ldlt.solve(Z1[j]), ldlt.solve(Z2[j])});
  return out;
}

double certificate_margin(const FeasibilityCertificate &cert, const std::vector<Mat> &vertices,
                          const SystemModel &model, const RatePair &rates, PsiForm form) {
  double m = min_eig(Mat::Identity(cert.Y.rows(), cert.Y.cols()) - cert.Y) + cert.eps;
  for (std::size_t j = 0; j < vertices.size(); ++j) {
    m = std::min(m, min_eig(evaluate_psi(vertices[j], model, rates, cert.Y, cert.Z.at(j),
                                         cert.Z1.at(j), cert.Z2.at(j), form)));
  }
  return m - cert.eps;
}

namespace {

// Closed-form minimizer of the branch block for fixed Y: with P = Y^{-1},
// K = -A P C'(C P C')^+ and Z = Y K.
Mat recover_z(const Mat &A, const Mat &Y, const Mat &P, const Mat &C) {
  if (C.rows() == 0) return Mat::Zero(A.rows(), 0);
  const Mat CPCt = C * P * C.transpose();
  const Mat K = -(A * P * C.transpose()) *
                Eigen::CompleteOrthogonalDecomposition<Mat>(CPCt).pseudoInverse();
  return Y * K;
}

struct Reduced {
  sdp::Problem problem;
  sdp::VarRef Y;
};

// Psi with the Z variables projected out: for branch b with null-space
// basis N_b of C_b, the block row reads c_b Y A N_b against N_b' Y N_b.
Reduced assemble_reduced(const std::vector<Mat> &vertices, const SystemModel &model,
                         const RatePair &rates, PsiForm form, double eps) {
  const int n = static_cast<int>(model.state_dim());
  auto branches = psi_branches(model, rates, form);
  std::vector<Mat> N;
  std::vector<double> w;
  for (const auto &br : branches) {
    Mat Nb = null_basis(br.C);
    if (Nb.cols() == 0) continue;
    N.push_back(std::move(Nb));
    w.push_back(br.weight);
  }
  int dim = n;
  for (const auto &Nb : N) dim += static_cast<int>(Nb.cols());
  Reduced r;
  auto &p = r.problem;
  r.Y = p.add_symmetric("Y", n);
  const Mat I = Mat::Identity(n, n);
  for (std::size_t j = 0; j < vertices.size(); ++j) {
    auto con = p.add_constraint("reduced Psi vertex " + std::to_string(j), dim);
    p.add_var(con, 0, 0, r.Y);
    int off = n;
    for (std::size_t b = 0; b < N.size(); ++b) {
      p.add_term(con, 0, off, I, r.Y, vertices[j] * N[b], w[b]);
      p.add_term(con, off, off, N[b].transpose(), r.Y, N[b]);
      off += static_cast<int>(N[b].cols());
    }
    p.add_identity(con, 0, dim, -eps);
  }
  auto upper = p.add_constraint("I - Y", n);
  p.add_identity(upper, 0, n, 1.0);
  p.add_var(upper, 0, 0, r.Y, -1.0);
  return r;
}

}  // namespace

FeasibilityCertificate check_boundedness(const std::vector<Mat> &vertices,
                                         const SystemModel &model, const RatePair &rates,
                                         const StabilityOptions &options) {
  validate_rates(rates);
  if (vertices.empty()) throw std::invalid_argument("no vertices");
  for (const auto &A : vertices)
    if (A.rows() != model.state_dim() || A.cols() != model.state_dim())
      throw std::invalid_argument("vertex dimension does not match the model");

  FeasibilityCertificate cert;
  cert.eps = strict_margin(vertices);
  const int n = static_cast<int>(model.state_dim());

  if (!options.eliminate_gains) {
    auto prog = assemble_psi(vertices, model, rates, options.form);
    auto sol = sdp::solve(prog.problem, options.solver);
    cert.status = sol.status;
    cert.iterations = sol.iterations;
    cert.diagnostic = sol.diagnostic;
    if (!sol.ok()) return cert;
    const auto &p = prog.problem;
    cert.Y = p.value(prog.Y, sol.assignment);
    for (std::size_t j = 0; j < vertices.size(); ++j) {
      cert.Z.push_back(prog.Z[j].id >= 0 ? p.value(prog.Z[j], sol.assignment)
                                         : Mat::Zero(n, 0));
      cert.Z1.push_back(prog.Z1[j].id >= 0 ? p.value(prog.Z1[j], sol.assignment)
                                           : Mat::Zero(n, 0));
      cert.Z2.push_back(prog.Z2[j].id >= 0 ? p.value(prog.Z2[j], sol.assignment)
                                           : Mat::Zero(n, 0));
    }
    cert.margin = certificate_margin(cert, vertices, model, rates, options.form);
    cert.feasible = cert.margin > 0.0;
    if (!cert.feasible) {
      cert.status = sdp::Status::NumericalFailure;
      cert.diagnostic = "solver point fails the dense re-check";
    }
    return cert;
  }

  auto opts = options.solver;
  opts.feasibility_margin = std::max(opts.feasibility_margin, 1e-6);
  for (int attempt = 0; attempt < 3; ++attempt) {
    auto red = assemble_reduced(vertices, model, rates, options.form, cert.eps);
    auto sol = sdp::solve(red.problem, opts);
    cert.status = sol.status;
    cert.iterations += sol.iterations;
    cert.diagnostic = sol.diagnostic;
    if (!sol.ok()) return cert;

    cert.Y = red.problem.value(red.Y, sol.assignment);
    cert.Y = 0.5 * (cert.Y + cert.Y.transpose());
    const Mat P = cert.Y.ldlt().solve(Mat::Identity(n, n));
    cert.Z.clear();
    cert.Z1.clear();
    cert.Z2.clear();
    for (const auto &A : vertices) {
      cert.Z.push_back(recover_z(A, cert.Y, P, model.C()));
      cert.Z1.push_back(recover_z(A, cert.Y, P, model.C1()));
      cert.Z2.push_back(recover_z(A, cert.Y, P, model.C2()));
    }
    cert.margin = certificate_margin(cert, vertices, model, rates, options.form);
    if (cert.margin > 0.0) {
      cert.feasible = true;
      return cert;
    }
    // push further into the interior and try again
    opts.feasibility_margin *= 100.0;
  }
  cert.status = sdp::Status::NumericalFailure;
  cert.diagnostic = "recovered gains fail the dense re-check";
  return cert;
}

CriticalLambda critical_lambda(const std::vector<Mat> &vertices, const SystemModel &model,
                               int channel, double fixed_value, double tol,
                               const StabilityOptions &options) {
  if (channel != 1 && channel != 2) throw std::invalid_argument("channel must be 1 or 2");
  if (!(tol > 0.0)) throw std::invalid_argument("tolerance must be positive");
  if (!(fixed_value >= 0.0 && fixed_value <= 1.0))
    throw std::invalid_argument("fixed rate must lie in [0, 1]");
  CriticalLambda out;
  auto feasible = [&](double free) {
    const RatePair r = channel == 1 ? RatePair{free, fixed_value} : RatePair{fixed_value, free};
    ++out.solves;
    const auto c = check_boundedness(vertices, model, r, options);
    if (c.status == sdp::Status::NumericalFailure)
      throw std::runtime_error("solver failure at rate " + std::to_string(free) + ": " +
                               c.diagnostic);
    return c.feasible;
  };
  if (feasible(0.0)) {
    out.value = 0.0;
    out.attainable = true;
    return out;
  }
  if (!feasible(1.0)) {
    out.value = 1.0 + tol;
    out.attainable = false;
    return out;
  }
  double lo = 0.0, hi = 1.0;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    (feasible(mid) ? hi : lo) = mid;
  }
  out.value = hi;
  out.attainable = true;
  return out;
}

// ---------------------------------------------------------------------------
// Trace bound

namespace {

struct GammaBranch {
  double weight;
  Mat C;
  Mat R;
};

std::vector<GammaBranch> gamma_branches(const SystemModel &model, const RatePair &rates) {
  const auto w = branch_weights(rates);
  std::vector<GammaBranch> out;
  if (w.both > 0.0 && model.meas_dim() > 0) out.push_back({w.both, model.C(), model.R()});
  if (w.ch1 > 0.0 && model.ch1_dim() > 0) out.push_back({w.ch1, model.C1(), model.R11()});
  if (w.ch2 > 0.0 && model.ch2_dim() > 0) out.push_back({w.ch2, model.C2(), model.R22()});
  return out;
}

void add_gamma(sdp::Problem &p, sdp::VarRef V, const Mat &A, const SystemModel &model,
               const std::vector<GammaBranch> &branches, bool linearized, const std::string &tag) {
  const int n = static_cast<int>(model.state_dim());
  int dim = n;
  for (const auto &b : branches) dim += static_cast<int>(b.C.rows());
  if (linearized) dim += n;
  auto con = p.add_constraint("Gamma vertex " + tag, dim);
  const Mat I = Mat::Identity(n, n);
  if (linearized) {
    p.add_constant(con, 0, 0, A + A.transpose());
  } else {
    p.add_term(con, 0, 0, A, V, A.transpose());
  }
  p.add_constant(con, 0, 0, model.Q());
  p.add_var(con, 0, 0, V, -1.0);
  int off = n;
  for (const auto &b : branches) {
    const int m = static_cast<int>(b.C.rows());
    p.add_term(con, 0, off, A, V, b.C.transpose(), b.weight);
    p.add_term(con, off, off, b.C, V, b.C.transpose());
    p.add_constant(con, off, off, b.R);
    off += m;
  }
  if (linearized) {
    p.add_constant(con, 0, off, I);
    p.add_var(con, off, off, V);
  }
}

TraceBoundResult solve_trace(const std::vector<const Mat *> &verts, const SystemModel &model,
                             const RatePair &rates, bool linearized, double eps,
                             const sdp::Options &solver) {
  const int n = static_cast<int>(model.state_dim());
  const auto branches = gamma_branches(model, rates);
  sdp::Problem p;
  auto V = p.add_symmetric("V", n);
  for (std::size_t j = 0; j < verts.size(); ++j)
    add_gamma(p, V, *verts[j], model, branches, linearized, std::to_string(j));
  auto pos = p.add_constraint("V - eps I", n);
  p.add_var(pos, 0, 0, V);
  p.add_identity(pos, 0, n, -eps);
  p.add_objective_trace(V);
  auto sol = sdp::solve(p, solver);
  TraceBoundResult r;
  r.status = sol.status;
  r.iterations = sol.iterations;
  r.diagnostic = sol.diagnostic;
  if (sol.status == sdp::Status::Optimal) {
    r.V = p.value(V, sol.assignment);
    r.tau = r.V.trace();
  } else if (sol.status == sdp::Status::Unbounded) {
    r.tau = std::numeric_limits<double>::infinity();
  }
  return r;
}

}  // namespace

Mat evaluate_gamma(const Mat &A, const SystemModel &model, const RatePair &rates,
                   const Mat &V) {
  const auto branches = gamma_branches(model, rates);
  const auto n = model.state_dim();
  Eigen::Index dim = n;
  for (const auto &b : branches) dim += b.C.rows();
  Mat G = Mat::Zero(dim, dim);
  G.topLeftCorner(n, n) = A * V * A.transpose() + model.Q() - V;
  Eigen::Index off = n;
  for (const auto &b : branches) {
    const auto m = b.C.rows();
    const Mat blk = b.weight * A * V * b.C.transpose();
    G.block(0, off, n, m) = blk;
    G.block(off, 0, m, n) = blk.transpose();
    G.block(off, off, m, m) = b.C * V * b.C.transpose() + b.R;
    off += m;
  }
  return G;
}

TraceBoundResult trace_bound(const std::vector<Mat> &vertices, const SystemModel &model,
                             const RatePair &rates, TraceMode mode,
                             const sdp::Options &solver) {
  validate_rates(rates);
  if (vertices.empty()) throw std::invalid_argument("no vertices");
  const double eps = strict_margin(vertices);
  if (mode != TraceMode::WorstVertex) {
    std::vector<const Mat *> all;
    for (const auto &A : vertices) all.push_back(&A);
    return solve_trace(all, model, rates, mode == TraceMode::Linearized, eps, solver);
  }
  TraceBoundResult worst;
  worst.status = sdp::Status::Optimal;
  worst.tau = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < vertices.size(); ++j) {
    auto r = solve_trace({&vertices[j]}, model, rates, false, eps, solver);
    worst.iterations += r.iterations;
    worst.per_vertex.push_back(r.tau);
    if (r.status != sdp::Status::Optimal) {
      worst.status = r.status;
      worst.tau = r.tau;
      worst.worst_vertex = static_cast<int>(j);
      worst.diagnostic = "vertex " + std::to_string(j) + ": " + r.diagnostic;
      worst.V = Mat();
      return worst;
    }
    if (r.tau > worst.tau) {
      worst.tau = r.tau;
      worst.V = r.V;
      worst.worst_vertex = static_cast<int>(j);
    }
  }
  return worst;
}

}  // namespace twochan
