#include "twochan/sdp.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <tuple>
#include <utility>

namespace twochan::sdp {

const char *to_string(Status s) {
  switch (s) {
    case Status::Optimal: return "optimal";
    case Status::Feasible: return "feasible";
    case Status::Infeasible: return "infeasible";
    case Status::Unbounded: return "unbounded";
    case Status::NumericalFailure: return "numerical_failure";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Problem construction

VarRef Problem::add_symmetric(std::string name, int n) {
  if (finalized_) throw std::logic_error("problem already finalized");
  if (n <= 0) throw std::invalid_argument("variable size must be positive");
  vars_.push_back({std::move(name), VarKind::Symmetric, n, n, num_scalars_});
  num_scalars_ += vars_.back().scalar_count();
  objective_.conservativeResize(num_scalars_);
  objective_.tail(vars_.back().scalar_count()).setZero();
  return {static_cast<int>(vars_.size()) - 1};
}

VarRef Problem::add_matrix(std::string name, int rows, int cols) {
  if (finalized_) throw std::logic_error("problem already finalized");
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("variable size must be positive");
  vars_.push_back({std::move(name), VarKind::Matrix, rows, cols, num_scalars_});
  num_scalars_ += vars_.back().scalar_count();
  objective_.conservativeResize(num_scalars_);
  objective_.tail(vars_.back().scalar_count()).setZero();
  return {static_cast<int>(vars_.size()) - 1};
}

ConRef Problem::add_constraint(std::string label, int dim) {
  if (finalized_) throw std::logic_error("problem already finalized");
  if (dim <= 0) throw std::invalid_argument("constraint dimension must be positive");
  Constraint c;
  c.label = std::move(label);
  c.dim = dim;
  cons_.push_back(std::move(c));
  raw_.emplace_back();
  return {static_cast<int>(cons_.size()) - 1};
}

void Problem::check_open(ConRef c) const {
  if (finalized_) throw std::logic_error("problem already finalized");
  if (c.id < 0 || c.id >= static_cast<int>(cons_.size()))
    throw std::out_of_range("bad constraint handle");
}

void Problem::push(ConRef c, int scalar, int row, int col, double value) {
  if (value == 0.0) return;
  const int d = cons_[c.id].dim;
  if (row < 0 || col < 0 || row >= d || col >= d)
    throw std::out_of_range("term falls outside constraint '" + cons_[c.id].label + "'");
  raw_[c.id].push_back({scalar, row, col, value});
}

// Terms sharing G (or H) with an existing one are folded into it.
void Problem::push_term(ConRef c, int var, bool transposed, Mat G, Mat H) {
  for (auto &t : cons_[c.id].terms) {
    if (t.var != var || t.transposed != transposed) continue;
    if (t.G == G) {
      t.H += H;
      return;
    }
    if (t.H == H) {
      t.G += G;
      return;
    }
  }
  cons_[c.id].terms.push_back({var, transposed, std::move(G), std::move(H)});
}

int Problem::scalar_index(VarRef v, int r, int c) const {
  const auto &var = vars_.at(v.id);
  if (r < 0 || c < 0 || r >= var.rows || c >= var.cols)
    throw std::out_of_range("index outside variable " + var.name);
  if (var.kind == VarKind::Matrix) return var.offset + r * var.cols + c;
  if (r > c) std::swap(r, c);
  // row-major upper triangle
  return var.offset + r * var.rows - r * (r - 1) / 2 + (c - r);
}

std::string Problem::scalar_name(int scalar) const {
  for (std::size_t k = 0; k < vars_.size(); ++k) {
    const auto &var = vars_[k];
    if (scalar < var.offset || scalar >= var.offset + var.scalar_count()) continue;
    for (int r = 0; r < var.rows; ++r) {
      for (int c = var.kind == VarKind::Symmetric ? r : 0; c < var.cols; ++c) {
        if (scalar_index({static_cast<int>(k)}, r, c) == scalar)
          return var.name + "[" + std::to_string(r) + "," + std::to_string(c) + "]";
      }
    }
  }
  throw std::out_of_range("scalar index out of range");
}

void Problem::add_constant(ConRef c, int r0, int c0, const Mat &M) {
  check_open(c);
  for (int i = 0; i < M.rows(); ++i) {
    for (int j = 0; j < M.cols(); ++j) {
      push(c, -1, r0 + i, c0 + j, M(i, j));
      if (r0 != c0) push(c, -1, c0 + j, r0 + i, M(i, j));
    }
  }
}

void Problem::add_identity(ConRef c, int r0, int n, double scale) {
  check_open(c);
  for (int i = 0; i < n; ++i) push(c, -1, r0 + i, r0 + i, scale);
}

void Problem::add_term(ConRef c, int r0, int c0, const Mat &L, VarRef v, const Mat &R,
                       double scale) {
  check_open(c);
  const auto &var = vars_.at(v.id);
  if (L.cols() != var.rows || R.rows() != var.cols)
    throw std::invalid_argument("term dimensions do not match variable " + var.name);
  // nonzero pattern of L columns and R rows
  std::vector<std::vector<std::pair<int, double>>> lcol(L.cols()), rrow(R.rows());
  for (int a = 0; a < L.cols(); ++a)
    for (int i = 0; i < L.rows(); ++i)
      if (L(i, a) != 0.0) lcol[a].emplace_back(i, L(i, a));
  for (int b = 0; b < R.rows(); ++b)
    for (int j = 0; j < R.cols(); ++j)
      if (R(b, j) != 0.0) rrow[b].emplace_back(j, R(b, j));

  {
    const int d = cons_[c.id].dim;
    Mat G = Mat::Zero(d, var.rows);
    Mat H = Mat::Zero(d, var.cols);
    if (r0 + L.rows() > d || c0 + R.cols() > d)
      throw std::out_of_range("term falls outside constraint '" + cons_[c.id].label + "'");
    G.middleRows(r0, L.rows()) = L;
    H.middleRows(c0, R.cols()) = scale * R.transpose();
    if (r0 != c0) push_term(c, v.id, var.kind == VarKind::Matrix, H, G);
    push_term(c, v.id, false, std::move(G), std::move(H));
  }

  auto emit = [&](int scalar, int a, int b) {
    for (auto [i, li] : lcol[a]) {
      for (auto [j, rj] : rrow[b]) {
        const double val = scale * li * rj;
        push(c, scalar, r0 + i, c0 + j, val);
        if (r0 != c0) push(c, scalar, c0 + j, r0 + i, val);
      }
    }
  };
  for (int a = 0; a < var.rows; ++a) {
    for (int b = var.kind == VarKind::Symmetric ? a : 0; b < var.cols; ++b) {
      const int s = scalar_index(v, a, b);
      emit(s, a, b);
      if (var.kind == VarKind::Symmetric && a != b) emit(s, b, a);
    }
  }
}

void Problem::add_var(ConRef c, int r0, int c0, VarRef v, double scale) {
  const auto &var = vars_.at(v.id);
  add_term(c, r0, c0, Mat::Identity(var.rows, var.rows), v, Mat::Identity(var.cols, var.cols),
           scale);
}

void Problem::add_objective_trace(VarRef v, double coeff) {
  if (finalized_) throw std::logic_error("problem already finalized");
  const auto &var = vars_.at(v.id);
  if (var.rows != var.cols) throw std::invalid_argument("trace of a non-square variable");
  for (int i = 0; i < var.rows; ++i) objective_(scalar_index(v, i, i)) += coeff;
}

void Problem::add_objective(int scalar, double coeff) {
  if (finalized_) throw std::logic_error("problem already finalized");
  if (scalar < 0 || scalar >= num_scalars_) throw std::out_of_range("scalar index");
  objective_(scalar) += coeff;
}

void Problem::finalize() {
  if (finalized_) return;
  for (std::size_t k = 0; k < cons_.size(); ++k) {
    auto &raw = raw_[k];
    std::sort(raw.begin(), raw.end(), [](const Raw &x, const Raw &y) {
      return std::tie(x.scalar, x.row, x.col) < std::tie(y.scalar, y.row, y.col);
    });
    std::vector<Raw> merged;
    for (const auto &e : raw) {
      if (!merged.empty() && merged.back().scalar == e.scalar && merged.back().row == e.row &&
          merged.back().col == e.col) {
        merged.back().value += e.value;
      } else {
        merged.push_back(e);
      }
    }
    auto &con = cons_[k];
    std::size_t i = 0;
    while (i < merged.size()) {
      const int s = merged[i].scalar;
      std::size_t j = i;
      while (j < merged.size() && merged[j].scalar == s) ++j;
      Mat F = Mat::Zero(con.dim, con.dim);
      for (std::size_t q = i; q < j; ++q) F(merged[q].row, merged[q].col) = merged[q].value;
      const double scale = std::max(1.0, F.cwiseAbs().maxCoeff());
      if ((F - F.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw std::logic_error("constraint '" + con.label + "' is not symmetric in " +
                               (s < 0 ? std::string("its constant term") : scalar_name(s)));
      }
      std::vector<Entry> upper;
      for (int r = 0; r < con.dim; ++r)
        for (int c = r; c < con.dim; ++c)
          if (F(r, c) != 0.0) upper.push_back({r, c, 0.5 * (F(r, c) + F(c, r))});
      if (s < 0) {
        con.constant = std::move(upper);
      } else if (!upper.empty()) {
        con.coefficients.push_back({s, std::move(upper)});
      }
      i = j;
    }
    raw.clear();
    raw.shrink_to_fit();
  }
  finalized_ = true;
}

Mat Problem::evaluate(int c, const Vec &y) const {
  if (!finalized_) throw std::logic_error("problem not finalized");
  const auto &con = cons_.at(c);
  Mat F = Mat::Zero(con.dim, con.dim);
  for (const auto &e : con.constant) F(e.row, e.col) += e.value;
  for (const auto &co : con.coefficients) {
    const double yi = y(co.scalar);
    if (yi == 0.0) continue;
    for (const auto &e : co.upper) F(e.row, e.col) += yi * e.value;
  }
  F.triangularView<Eigen::StrictlyLower>() = F.transpose().triangularView<Eigen::StrictlyLower>();
  return F;
}

Mat Problem::value(VarRef v, const Vec &y) const {
  const auto &var = vars_.at(v.id);
  Mat M(var.rows, var.cols);
  for (int r = 0; r < var.rows; ++r)
    for (int c = 0; c < var.cols; ++c) M(r, c) = y(scalar_index(v, r, c));
  return M;
}

void Problem::assign(VarRef v, const Mat &M, Vec &y) const {
  const auto &var = vars_.at(v.id);
  if (M.rows() != var.rows || M.cols() != var.cols)
    throw std::invalid_argument("assignment has the wrong shape for " + var.name);
  if (y.size() != num_scalars_) y = Vec::Zero(num_scalars_);
  for (int r = 0; r < var.rows; ++r)
    for (int c = var.kind == VarKind::Symmetric ? r : 0; c < var.cols; ++c)
      y(scalar_index(v, r, c)) =
          var.kind == VarKind::Symmetric ? 0.5 * (M(r, c) + M(c, r)) : M(r, c);
}

// ---------------------------------------------------------------------------
// Verification

bool VerifyReport::passes(double tol) const {
  for (std::size_t i = 0; i < min_eigenvalues.size(); ++i)
    if (min_eigenvalues[i] < -tol * scales[i]) return false;
  return true;
}

VerifyReport verify(const Problem &problem, const Vec &assignment) {
  if (assignment.size() != problem.num_scalars())
    throw std::invalid_argument("assignment size does not match the problem");
  VerifyReport rep;
  rep.worst = std::numeric_limits<double>::infinity();
  const auto &cons = problem.constraints();
  for (std::size_t c = 0; c < cons.size(); ++c) {
    const Mat F = problem.evaluate(static_cast<int>(c), assignment);
    Eigen::SelfAdjointEigenSolver<Mat> es(F, Eigen::EigenvaluesOnly);
    const double lmin = es.eigenvalues().minCoeff();
    double scale = 1.0;
    for (const auto &e : cons[c].constant) scale = std::max(scale, std::abs(e.value));
    for (const auto &co : cons[c].coefficients)
      for (const auto &e : co.upper)
        scale = std::max(scale, std::abs(e.value * assignment(co.scalar)));
    rep.min_eigenvalues.push_back(lmin);
    rep.scales.push_back(scale);
    rep.worst = std::min(rep.worst, lmin);
  }
  if (cons.empty()) rep.worst = 0.0;
  return rep;
}

void dump(const Problem &problem, std::ostream &out) {
  if (!problem.finalized()) throw std::logic_error("problem not finalized");
  out << "# variables\n";
  for (const auto &v : problem.variables()) {
    out << "# " << v.name << ' ' << (v.kind == VarKind::Symmetric ? "sym" : "mat") << ' '
        << v.rows << 'x' << v.cols << '\n';
  }
  out << "# objective";
  for (int i = 0; i < problem.num_scalars(); ++i)
    if (problem.objective()(i) != 0.0)
      out << ' ' << problem.scalar_name(i) << '=' << problem.objective()(i);
  out << '\n';
  const auto &cons = problem.constraints();
  out.precision(17);
  for (std::size_t c = 0; c < cons.size(); ++c) {
    out << "# constraint " << c << ' ' << cons[c].label << " dim " << cons[c].dim << '\n';
    for (const auto &e : cons[c].constant)
      out << c << ' ' << e.row << ' ' << e.col << " const " << e.value << '\n';
    for (const auto &co : cons[c].coefficients) {
      const auto name = problem.scalar_name(co.scalar);
      for (const auto &e : co.upper)
        out << c << ' ' << e.row << ' ' << e.col << ' ' << name << ' ' << e.value << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Interior-point core
//
// Dual form:   max b'y   s.t. S = F0 + sum_i y_i F_i >= 0
// Primal form: min <F0, X>  s.t. <F_i, X> = -b_i, X >= 0
//
// S is always recomputed from y, so every iterate y is strictly feasible
// and only X carries a residual. Search direction HKM with Mehrotra
// predictor-corrector.

namespace {

struct SparseSym {
  std::vector<int> r, c;  // both triangles
  std::vector<double> v;
  std::vector<int> rows;  // distinct rows touched
};

// Matrix variable as seen by the solver: local index of every entry
// (-1 for entries that never appear).
struct Slot {
  int rows = 0;
  int cols = 0;
  bool symmetric = false;
  std::vector<int> local;  // rows*cols, row-major
  // scalar list: local index and entry (a, b), a <= b when symmetric
  std::vector<std::array<int, 3>> scalars;
};

struct BlockTerm {
  int slot = 0;
  bool transposed = false;
  Mat G, H;
};

struct Block {
  int dim = 0;
  Mat F0;
  std::vector<int> var;
  std::vector<SparseSym> F;
  std::vector<BlockTerm> terms;  // empty: use the sparse coefficients
  int margin_var = -1;           // variable with coefficient -I (feasibility phase)
};

struct Core {
  int m = 0;
  std::vector<Block> blocks;
  std::vector<Slot> slots;
  Vec b;
};

constexpr std::size_t kHeavy = 24;

SparseSym make_sparse(const std::vector<Entry> &upper, double scale) {
  SparseSym s;
  std::vector<char> seen;
  int maxrow = 0;
  for (const auto &e : upper) maxrow = std::max({maxrow, e.row, e.col});
  seen.assign(maxrow + 1, 0);
  for (const auto &e : upper) {
    s.r.push_back(e.row);
    s.c.push_back(e.col);
    s.v.push_back(e.value * scale);
    if (e.row != e.col) {
      s.r.push_back(e.col);
      s.c.push_back(e.row);
      s.v.push_back(e.value * scale);
    }
    seen[e.row] = seen[e.col] = 1;
  }
  for (int i = 0; i <= maxrow; ++i)
    if (seen[i]) s.rows.push_back(i);
  return s;
}

SparseSym identity_sparse(int n, double scale) {
  SparseSym s;
  for (int i = 0; i < n; ++i) {
    s.r.push_back(i);
    s.c.push_back(i);
    s.v.push_back(scale);
    s.rows.push_back(i);
  }
  return s;
}

Mat eval_block(const Block &B, const Vec &y) {
  Mat S = B.F0;
  for (std::size_t k = 0; k < B.var.size(); ++k) {
    const double yi = y(B.var[k]);
    if (yi == 0.0) continue;
    const auto &F = B.F[k];
    for (std::size_t e = 0; e < F.v.size(); ++e) S(F.r[e], F.c[e]) += yi * F.v[e];
  }
  return S;
}

Mat lin_block(const Block &B, const Vec &dy) {
  Mat S = Mat::Zero(B.dim, B.dim);
  for (std::size_t k = 0; k < B.var.size(); ++k) {
    const double yi = dy(B.var[k]);
    if (yi == 0.0) continue;
    const auto &F = B.F[k];
    for (std::size_t e = 0; e < F.v.size(); ++e) S(F.r[e], F.c[e]) += yi * F.v[e];
  }
  return S;
}

// <F, G> = sum_pq F_pq G_qp
double inner(const SparseSym &F, const Mat &G) {
  double s = 0.0;
  for (std::size_t e = 0; e < F.v.size(); ++e) s += F.v[e] * G(F.c[e], F.r[e]);
  return s;
}

// Largest step alpha <= 1 keeping M + alpha dM PSD, given chol(M) = L L'.
double max_step(const Eigen::LLT<Mat> &llt, const Mat &dM) {
  Mat W = llt.matrixL().solve(dM);
  W = llt.matrixL().solve(W.transpose()).transpose();
  W = 0.5 * (W + W.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(W, Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues().minCoeff();
  if (lmin >= 0.0) return std::numeric_limits<double>::infinity();
  return -1.0 / lmin;
}

struct IpmResult {
  enum Kind { Converged, Stopped, Unbounded, MaxIter, Stalled, Failed } kind = Failed;
  Vec y;
  int iterations = 0;
  double gap = 0.0;
  double residual = 0.0;
  std::string message;
};

// Schur complement M_ij = <F_i, X F_j S^{-1}> accumulated block by block.
void add_schur(const Block &B, const Mat &X, const Mat &Sinv, Mat &M) {
  const std::size_t nv = B.var.size();
  std::vector<char> heavy(nv);
  for (std::size_t k = 0; k < nv; ++k) heavy[k] = B.F[k].v.size() > kHeavy;
  Mat T;
  for (std::size_t j = 0; j < nv; ++j) {
    const auto &Fj = B.F[j];
    const int gj = B.var[j];
    if (heavy[j]) {
      // T = X F_j S^{-1}, built through the touched rows of F_j only
      const int nr = static_cast<int>(Fj.rows.size());
      std::vector<int> pos(B.dim, -1);
      for (int q = 0; q < nr; ++q) pos[Fj.rows[q]] = q;
      Mat W = Mat::Zero(nr, B.dim);
      Mat Xc(B.dim, nr);
      for (std::size_t e = 0; e < Fj.v.size(); ++e) W.row(pos[Fj.r[e]]) += Fj.v[e] * Sinv.row(Fj.c[e]);
      for (int q = 0; q < nr; ++q) Xc.col(q) = X.col(Fj.rows[q]);
      T.noalias() = Xc * W;
      for (std::size_t i = 0; i < nv; ++i) {
        if (i > j && heavy[i]) continue;
        const double v = inner(B.F[i], T);
        const int gi = B.var[i];
        M(gi, gj) += v;
        if (gi != gj) M(gj, gi) += v;
      }
    } else {
      for (std::size_t i = 0; i <= j; ++i) {
        if (heavy[i]) continue;
        const auto &Fi = B.F[i];
        double v = 0.0;
        for (std::size_t a = 0; a < Fi.v.size(); ++a) {
          const int p = Fi.r[a], q = Fi.c[a];
          double inner_sum = 0.0;
          for (std::size_t e = 0; e < Fj.v.size(); ++e)
            inner_sum += Fj.v[e] * X(q, Fj.r[e]) * Sinv(Fj.c[e], p);
          v += Fi.v[a] * inner_sum;
        }
        const int gi = B.var[i];
        M(gi, gj) += v;
        if (gi != gj) M(gj, gi) += v;
      }
    }
  }
}

// Same Schur contribution from the factored terms. For terms
// (G_t, H_t) of variable v and (G_u, H_u) of variable w,
//   <F(E_i), X F(E_j) S^{-1}> = sum_{t,u} Abar_tu[q,r] Bbar_ut[s,p]
// with E_i = e_p e_q', E_j = e_r e_s', Abar_tu = H_t' X G_u and
// Bbar_ut = H_u' S^{-1} G_t. All (t,u) pairs of one variable pair go
// through a single product.
void add_schur_terms(const Block &B, const std::vector<Slot> &slots, const Mat &X,
                     const Mat &Sinv, Mat &M) {
  const std::size_t nt = B.terms.size();
  std::vector<Mat> XG(nt), SG(nt);
  for (std::size_t t = 0; t < nt; ++t) {
    XG[t].noalias() = X * B.terms[t].G;
    SG[t].noalias() = Sinv * B.terms[t].G;
  }
  if (B.margin_var >= 0) {
    const int tv = B.margin_var;
    M(tv, tv) += X.cwiseProduct(Sinv).sum();
    for (std::size_t t = 0; t < nt; ++t) {
      const auto &bt = B.terms[t];
      const Mat Pm = bt.H.transpose() * (Sinv * XG[t]);  // cols x rows
      for (const auto &sc : slots[bt.slot].scalars) {
        int p = sc[1], q = sc[2];
        if (bt.transposed) std::swap(p, q);
        double v = Pm(q, p);
        if (slots[bt.slot].symmetric && p != q) v += Pm(p, q);
        M(tv, sc[0]) -= v;
        M(sc[0], tv) -= v;
      }
    }
  }
  std::vector<int> used;
  for (const auto &t : B.terms)
    if (std::find(used.begin(), used.end(), t.slot) == used.end()) used.push_back(t.slot);
  std::sort(used.begin(), used.end());

  for (std::size_t iv = 0; iv < used.size(); ++iv) {
    for (std::size_t iw = iv; iw < used.size(); ++iw) {
      const Slot &sv = slots[used[iv]], &sw = slots[used[iw]];
      for (int fv = 0; fv < 2; ++fv) {
        for (int fw = 0; fw < 2; ++fw) {
          std::vector<std::pair<std::size_t, std::size_t>> pairs;
          for (std::size_t t = 0; t < nt; ++t) {
            if (B.terms[t].slot != used[iv] || B.terms[t].transposed != (fv == 1)) continue;
            for (std::size_t u = 0; u < nt; ++u)
              if (B.terms[u].slot == used[iw] && B.terms[u].transposed == (fw == 1))
                pairs.emplace_back(t, u);
          }
          if (pairs.empty()) continue;
          // a transposed term acts on V', so rows and columns swap roles
          const int cv = fv ? sv.rows : sv.cols, rv = fv ? sv.cols : sv.rows;
          const int cw = fw ? sw.rows : sw.cols, rw = fw ? sw.cols : sw.rows;
          Mat Aall(cv * rw, pairs.size()), Ball(cw * rv, pairs.size());
          for (std::size_t k = 0; k < pairs.size(); ++k) {
            const auto [t, u] = pairs[k];
            const Mat Ab = B.terms[t].H.transpose() * XG[u];
            const Mat Bb = B.terms[u].H.transpose() * SG[t];
            Aall.col(k) = Eigen::Map<const Vec>(Ab.data(), Ab.size());
            Ball.col(k) = Eigen::Map<const Vec>(Bb.data(), Bb.size());
          }
          const Mat big = Aall * Ball.transpose();
          for (const auto &si : sv.scalars) {
            int p0 = si[1], q0 = si[2];
            if (fv) std::swap(p0, q0);
            const bool si2 = sv.symmetric && p0 != q0;
            for (const auto &sj : sw.scalars) {
              if (iv == iw && sj[0] < si[0]) continue;
              int r0 = sj[1], s0 = sj[2];
              if (fw) std::swap(r0, s0);
              const bool sj2 = sw.symmetric && r0 != s0;
              double v = big(q0 + r0 * cv, s0 + p0 * cw);
              if (si2) v += big(p0 + r0 * cv, s0 + q0 * cw);
              if (sj2) v += big(q0 + s0 * cv, r0 + p0 * cw);
              if (si2 && sj2) v += big(p0 + s0 * cv, r0 + q0 * cw);
              M(si[0], sj[0]) += v;
              if (si[0] != sj[0]) M(sj[0], si[0]) += v;
            }
          }
        }
      }
    }
  }
}

IpmResult ipm(const Core &P, Vec y, const Options &opt,
              const std::function<bool(const Vec &)> &stop, bool detect_unbounded) {
  IpmResult res;
  const std::size_t nb = P.blocks.size();
  const int m = P.m;
  int N = 0;
  for (const auto &B : P.blocks) N += B.dim;

  std::vector<Mat> X(nb), S(nb), Sinv(nb);
  std::vector<Eigen::LLT<Mat>> Sllt(nb);
  for (std::size_t c = 0; c < nb; ++c) {
    S[c] = eval_block(P.blocks[c], y);
    Sllt[c].compute(S[c]);
    if (Sllt[c].info() != Eigen::Success) {
      res.message = "starting point is not strictly feasible";
      return res;
    }
    X[c] = Mat::Identity(P.blocks[c].dim, P.blocks[c].dim);
  }
  const double bnorm = P.b.norm();
  double best_residual = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int it = 0; it < opt.max_iterations; ++it) {
    res.iterations = it;
    double xs = 0.0;
    Vec rp = -P.b;
    for (std::size_t c = 0; c < nb; ++c) {
      const auto &B = P.blocks[c];
      Sinv[c] = Sllt[c].solve(Mat::Identity(B.dim, B.dim));
      Sinv[c] = 0.5 * (Sinv[c] + Sinv[c].transpose());
      xs += (X[c].cwiseProduct(S[c])).sum();
      for (std::size_t k = 0; k < B.var.size(); ++k) rp(B.var[k]) -= inner(B.F[k], X[c]);
    }
    const double mu = xs / N;
    const double dobj = P.b.dot(y);
    res.gap = xs / (1.0 + std::abs(dobj));
    res.residual = rp.norm() / (1.0 + bnorm);
    res.y = y;
    if (stop && stop(y)) {
      res.kind = IpmResult::Stopped;
      return res;
    }
    if (detect_unbounded && dobj > opt.unbounded_threshold) {
      res.kind = IpmResult::Unbounded;
      return res;
    }
    if (res.gap < opt.tol && res.residual < opt.tol) {
      res.kind = IpmResult::Converged;
      return res;
    }
    // the gap has closed but X can no longer be made more feasible
    if (res.residual < 0.9 * best_residual) {
      best_residual = res.residual;
      since_best = 0;
    } else if (++since_best >= 10 && res.gap < opt.tol) {
      res.kind = IpmResult::Stalled;
      return res;
    }

    Mat M = Mat::Zero(m, m);
    for (std::size_t c = 0; c < nb; ++c) {
      if (P.blocks[c].terms.empty()) add_schur(P.blocks[c], X[c], Sinv[c], M);
      else add_schur_terms(P.blocks[c], P.slots, X[c], Sinv[c], M);
    }
    Eigen::LLT<Mat> Mllt(M);
    if (Mllt.info() != Eigen::Success) {
      const double shift = 1e-12 * std::max(1.0, M.diagonal().cwiseAbs().maxCoeff());
      Mllt.compute(M + shift * Mat::Identity(m, m));
      if (Mllt.info() != Eigen::Success) {
        res.message = "Schur complement is singular";
        return res;
      }
    }

    // predictor
    const Vec dya = Mllt.solve(P.b);
    std::vector<Mat> dSa(nb), dXa(nb);
    double ap = 1.0, ad = 1.0;
    bool recession = detect_unbounded && P.b.dot(dya) > 0.0;
    for (std::size_t c = 0; c < nb; ++c) {
      dSa[c] = lin_block(P.blocks[c], dya);
      Mat t = -X[c] - X[c] * dSa[c] * Sinv[c];
      dXa[c] = 0.5 * (t + t.transpose());
      ap = std::min(ap, max_step(Eigen::LLT<Mat>(X[c]), dXa[c]));
      ad = std::min(ad, max_step(Sllt[c], dSa[c]));
      if (recession) {
        Eigen::SelfAdjointEigenSolver<Mat> es(dSa[c], Eigen::EigenvaluesOnly);
        const double sc = std::max(1e-300, dSa[c].cwiseAbs().maxCoeff());
        if (es.eigenvalues().minCoeff() < -1e-12 * sc) recession = false;
      }
    }
    if (recession && dobj > 1.0) {
      res.kind = IpmResult::Unbounded;
      res.message = "recession direction found";
      return res;
    }
    double xs_aff = 0.0;
    for (std::size_t c = 0; c < nb; ++c)
      xs_aff += ((X[c] + ap * dXa[c]).cwiseProduct(S[c] + ad * dSa[c])).sum();
    const double sigma = std::clamp(std::pow(std::max(xs_aff, 0.0) / xs, 3.0), 0.0, 1.0);

    // corrector
    std::vector<Mat> G(nb);
    Vec rhs = P.b;
    for (std::size_t c = 0; c < nb; ++c) {
      const auto &B = P.blocks[c];
      G[c] = (sigma * mu * Mat::Identity(B.dim, B.dim) - dXa[c] * dSa[c]) * Sinv[c];
      for (std::size_t k = 0; k < B.var.size(); ++k) rhs(B.var[k]) += inner(B.F[k], G[c]);
    }
    const Vec dy = Mllt.solve(rhs);
    std::vector<Mat> dS(nb), dX(nb);
    ap = 1.0;
    ad = 1.0;
    for (std::size_t c = 0; c < nb; ++c) {
      dS[c] = lin_block(P.blocks[c], dy);
      Mat t = G[c] - X[c] - X[c] * dS[c] * Sinv[c];
      dX[c] = 0.5 * (t + t.transpose());
      ap = std::min(ap, 0.95 * max_step(Eigen::LLT<Mat>(X[c]), dX[c]));
      ad = std::min(ad, 0.95 * max_step(Sllt[c], dS[c]));
    }

    Vec ynew;
    bool ok = false;
    for (int tries = 0; tries < 30 && !ok; ++tries, ad *= 0.5) {
      ynew = y + ad * dy;
      ok = true;
      for (std::size_t c = 0; c < nb && ok; ++c) {
        S[c] = eval_block(P.blocks[c], ynew);
        Sllt[c].compute(S[c]);
        ok = Sllt[c].info() == Eigen::Success;
      }
    }
    if (!ok) {
      res.message = "lost strict feasibility";
      return res;
    }
    y = ynew;
    for (std::size_t c = 0; c < nb; ++c) {
      X[c] += ap * dX[c];
      X[c] = 0.5 * (X[c] + X[c].transpose());
    }
    if (!y.allFinite()) {
      res.message = "non-finite iterate";
      return res;
    }
  }
  res.kind = IpmResult::MaxIter;
  res.iterations = opt.max_iterations;
  return res;
}

}  // namespace

Solution solve(Problem &problem, const Options &options) {
  problem.finalize();
  Solution sol;
  const int n = problem.num_scalars();
  sol.assignment = Vec::Zero(n);

  // map active scalars to solver indices
  std::vector<int> local(n, -1);
  int m = 0;
  for (const auto &con : problem.constraints())
    for (const auto &co : con.coefficients)
      if (local[co.scalar] < 0) local[co.scalar] = 0;
  for (int i = 0; i < n; ++i) {
    if (local[i] == 0) local[i] = m++;
    else if (problem.objective()(i) != 0.0) {
      sol.status = Status::Unbounded;
      sol.diagnostic = problem.scalar_name(i) + " is unconstrained";
      return sol;
    }
  }

  Core core;
  core.m = m;
  core.b = Vec::Zero(m);
  for (int i = 0; i < n; ++i)
    if (local[i] >= 0) core.b(local[i]) = problem.objective()(i);
  for (const auto &con : problem.constraints()) {
    double scale = 0.0;
    for (const auto &e : con.constant) scale = std::max(scale, std::abs(e.value));
    for (const auto &co : con.coefficients)
      for (const auto &e : co.upper) scale = std::max(scale, std::abs(e.value));
    if (scale == 0.0) continue;
    Block B;
    B.dim = con.dim;
    B.F0 = Mat::Zero(con.dim, con.dim);
    for (const auto &e : con.constant) {
      B.F0(e.row, e.col) = e.value / scale;
      B.F0(e.col, e.row) = e.value / scale;
    }
    for (const auto &co : con.coefficients) {
      B.var.push_back(local[co.scalar]);
      B.F.push_back(make_sparse(co.upper, 1.0 / scale));
    }
    for (const auto &t : con.terms)
      B.terms.push_back({t.var, t.transposed, t.G, t.H / scale});
    core.blocks.push_back(std::move(B));
  }
  for (std::size_t v = 0; v < problem.variables().size(); ++v) {
    const auto &var = problem.variables()[v];
    Slot sl;
    sl.rows = var.rows;
    sl.cols = var.cols;
    sl.symmetric = var.kind == VarKind::Symmetric;
    sl.local.assign(static_cast<std::size_t>(var.rows) * var.cols, -1);
    for (int a = 0; a < var.rows; ++a) {
      for (int b = 0; b < var.cols; ++b) {
        const int li = local[problem.scalar_index({static_cast<int>(v)}, a, b)];
        sl.local[static_cast<std::size_t>(a) * var.cols + b] = li;
        if (li >= 0 && (!sl.symmetric || a <= b)) sl.scalars.push_back({li, a, b});
      }
    }
    core.slots.push_back(std::move(sl));
  }

  auto expand = [&](const Vec &ylocal) {
    Vec full = Vec::Zero(n);
    for (int i = 0; i < n; ++i)
      if (local[i] >= 0) full(i) = ylocal(local[i]);
    return full;
  };
  auto finish = [&](Status st, const Vec &ylocal, int iters, std::string msg) {
    sol.status = st;
    sol.assignment = expand(ylocal);
    sol.iterations += iters;
    sol.objective_value = problem.objective().dot(sol.assignment);
    sol.min_eigenvalue_margin = verify(problem, sol.assignment).worst;
    if (!msg.empty()) sol.diagnostic = std::move(msg);
    return sol;
  };

  if (core.blocks.empty()) {
    if (core.b.cwiseAbs().sum() > 0.0) {
      sol.status = Status::Unbounded;
      sol.diagnostic = "objective variables are unconstrained";
      return sol;
    }
    return finish(Status::Feasible, Vec::Zero(m), 0, "");
  }

  // Phase 1: maximize t subject to F(y) - t I >= 0 and t <= cap.
  Core p1;
  p1.m = m + 1;
  p1.blocks = core.blocks;
  p1.slots = core.slots;
  double lmin0 = std::numeric_limits<double>::infinity();
  for (auto &B : p1.blocks) {
    Eigen::SelfAdjointEigenSolver<Mat> es(B.F0, Eigen::EigenvaluesOnly);
    lmin0 = std::min(lmin0, es.eigenvalues().minCoeff());
    B.var.push_back(m);
    B.F.push_back(identity_sparse(B.dim, -1.0));
    B.margin_var = m;
  }
  const double t0 = lmin0 - 1.0;
  const double cap = std::max(1.0, t0 + 1.0);
  {
    Block cb;
    cb.dim = 1;
    cb.F0 = Mat::Constant(1, 1, cap);
    cb.var.push_back(m);
    cb.F.push_back(identity_sparse(1, -1.0));
    p1.blocks.push_back(std::move(cb));
  }
  p1.b = Vec::Zero(m + 1);
  p1.b(m) = 1.0;
  Vec y1 = Vec::Zero(m + 1);
  y1(m) = t0;

  const bool has_obj = core.b.cwiseAbs().sum() > 0.0;
  const double target = has_obj ? std::max(1e-3, options.feasibility_margin)
                                 : options.feasibility_margin;
  auto r1 = ipm(p1, y1, options, [&](const Vec &y) { return y(m) >= target; }, false);
  sol.iterations = r1.iterations;
  if (r1.kind == IpmResult::Failed) {
    sol.status = Status::NumericalFailure;
    sol.diagnostic = "feasibility phase: " + r1.message;
    return sol;
  }
  const double t = r1.y(m);
  const Vec yfeas = r1.y.head(m);
  if (!(t > 0.0)) {
    if (r1.kind == IpmResult::Converged || r1.kind == IpmResult::Stalled) {
      return finish(Status::Infeasible, yfeas, 0,
                    "largest common margin " + std::to_string(t) + " is not positive");
    }
    sol.status = Status::NumericalFailure;
    sol.diagnostic = "feasibility phase did not converge (margin " + std::to_string(t) + ")";
    return sol;
  }
  if (!has_obj) return finish(Status::Feasible, yfeas, 0, "");

  // Phase 2: maximize b'y from the strictly feasible point.
  auto r2 = ipm(core, yfeas, options, {}, true);
  switch (r2.kind) {
    case IpmResult::Converged: return finish(Status::Optimal, r2.y, r2.iterations, "");
    case IpmResult::Unbounded:
      return finish(Status::Unbounded, r2.y, r2.iterations, r2.message);
    case IpmResult::Stalled:
      // S is rebuilt from y every step, so y stays feasible; with the gap
      // closed the objective is exact up to the leftover dual residual
      if (r2.residual < std::sqrt(options.tol))
        return finish(Status::Optimal, r2.y, r2.iterations, "reduced accuracy");
      return finish(Status::NumericalFailure, r2.y, r2.iterations, "stalled");
    case IpmResult::MaxIter:
      if (r2.gap < 1e3 * options.tol && r2.residual < 1e3 * options.tol)
        return finish(Status::Optimal, r2.y, r2.iterations, "reduced accuracy");
      return finish(Status::NumericalFailure, r2.y, r2.iterations, "iteration limit reached");
    case IpmResult::Stopped:
    case IpmResult::Failed: break;
  }
  sol.status = Status::NumericalFailure;
  sol.diagnostic = "optimization phase: " + r2.message;
  return sol;
}

}  // namespace twochan::sdp
