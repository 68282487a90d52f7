#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <string>
#include <vector>

namespace twochan::sdp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class VarKind { Symmetric, Matrix };

/// Handle to a matrix-valued decision variable.
struct VarRef {
  int id = -1;
};

/// Handle to a PSD constraint block.
struct ConRef {
  int id = -1;
};

struct Variable {
  std::string name;
  VarKind kind = VarKind::Matrix;
  int rows = 0;
  int cols = 0;
  int offset = 0;  // index of the first scalar

  [[nodiscard]] int scalar_count() const {
    return kind == VarKind::Symmetric ? rows * (rows + 1) / 2 : rows * cols;
  }
};

/// Upper-triangular entry of a symmetric coefficient matrix.
struct Entry {
  int row = 0;
  int col = 0;
  double value = 0.0;
};

struct Coefficient {
  int scalar = 0;
  std::vector<Entry> upper;
};

/// Structured form of a variable's contribution to a constraint:
/// G V H' (or G V' H' when transposed), G dim x rows(V), H dim x cols(V).
struct Term {
  int var = 0;
  bool transposed = false;
  Mat G;
  Mat H;
};

/// One constraint F0 + sum_i y_i F_i >= 0 (PSD), stored sparsely.
struct Constraint {
  std::string label;
  int dim = 0;
  std::vector<Entry> constant;
  std::vector<Coefficient> coefficients;  // sorted by scalar
  std::vector<Term> terms;                // same coefficients, factored
};

/// Maximize a linear functional of the decision variables subject to a list
/// of symmetric block constraints, each affine in the variables and required
/// to be PSD. Without an objective the problem is a pure feasibility test.
///
/// Terms are added per sub-block: add_term(c, r0, c0, L, V, R, s) adds
/// s * L * V * R at rows r0.. and columns c0.. of constraint c, and its
/// transpose at (c0, r0) when r0 != c0. finalize() checks that every
/// coefficient matrix came out symmetric.
class Problem {
 public:
  VarRef add_symmetric(std::string name, int n);
  VarRef add_matrix(std::string name, int rows, int cols);

  ConRef add_constraint(std::string label, int dim);

  void add_constant(ConRef c, int r0, int c0, const Mat &M);
  void add_identity(ConRef c, int r0, int n, double scale);
  void add_term(ConRef c, int r0, int c0, const Mat &L, VarRef v, const Mat &R,
                double scale = 1.0);
  /// Adds scale * V at (r0, c0) (plus transpose off the diagonal).
  void add_var(ConRef c, int r0, int c0, VarRef v, double scale = 1.0);

  /// Objective contribution coeff * trace(V) (V square).
  void add_objective_trace(VarRef v, double coeff = 1.0);
  void add_objective(int scalar, double coeff);

  /// Merge duplicate entries and validate symmetry. Called by solve();
  /// further add_* calls are rejected afterwards.
  void finalize();

  [[nodiscard]] bool finalized() const { return finalized_; }
  [[nodiscard]] int num_scalars() const { return num_scalars_; }
  [[nodiscard]] const std::vector<Variable> &variables() const { return vars_; }
  [[nodiscard]] const std::vector<Constraint> &constraints() const { return cons_; }
  [[nodiscard]] const Vec &objective() const { return objective_; }
  [[nodiscard]] bool has_objective() const { return objective_.cwiseAbs().sum() > 0.0; }

  [[nodiscard]] int scalar_index(VarRef v, int r, int c) const;
  /// Name like "Y[2,3]" for a scalar index.
  [[nodiscard]] std::string scalar_name(int scalar) const;

  /// Dense value of F0 + sum y_i F_i for constraint c.
  [[nodiscard]] Mat evaluate(int c, const Vec &y) const;
  /// Reassemble a matrix variable from a flat assignment.
  [[nodiscard]] Mat value(VarRef v, const Vec &y) const;
  /// Flat assignment from per-variable matrices (missing ones are zero).
  void assign(VarRef v, const Mat &M, Vec &y) const;

 private:
  struct Raw {
    int scalar;  // -1 for the constant term
    int row;
    int col;
    double value;
  };
  void push(ConRef c, int scalar, int row, int col, double value);
  void push_term(ConRef c, int var, bool transposed, Mat G, Mat H);
  void check_open(ConRef c) const;

  std::vector<Variable> vars_;
  std::vector<Constraint> cons_;
  std::vector<std::vector<Raw>> raw_;
  Vec objective_;
  int num_scalars_ = 0;
  bool finalized_ = false;
};

enum class Status { Optimal, Feasible, Infeasible, Unbounded, NumericalFailure };

const char *to_string(Status s);

struct Options {
  double tol = 1e-8;
  int max_iterations = 150;
  /// Objective values beyond this are reported as Unbounded.
  double unbounded_threshold = 1e12;
  /// Pure feasibility problems stop once the scaled margin exceeds this.
  double feasibility_margin = 1e-7;
};

struct Solution {
  Status status = Status::NumericalFailure;
  Vec assignment;
  double objective_value = 0.0;
  /// Smallest eigenvalue over all constraints at the assignment.
  double min_eigenvalue_margin = 0.0;
  int iterations = 0;
  std::string diagnostic;

  [[nodiscard]] bool ok() const {
    return status == Status::Optimal || status == Status::Feasible;
  }
};

/// Primal-dual interior-point solve. A phase that maximizes the common
/// margin t in F(y) >= t I decides feasibility; problems with an objective
/// then continue from the strictly feasible point. Constraints are
/// normalized by their largest coefficient internally. Deterministic.
Solution solve(Problem &problem, const Options &options = {});

struct VerifyReport {
  std::vector<double> min_eigenvalues;  // one per constraint, unscaled
  std::vector<double> scales;           // largest |coefficient| per constraint
  double worst = 0.0;                   // min over constraints

  /// All constraints satisfy min eig >= -tol * scale.
  [[nodiscard]] bool passes(double tol = 1e-7) const;
};

/// Independent re-check of an assignment: symmetric eigendecomposition of
/// every constraint block.
VerifyReport verify(const Problem &problem, const Vec &assignment);

/// Text dump, one line per nonzero:
///   <constraint> <row> <col> <variable|const> <coefficient>
/// with row <= col, 0-based indices, preceded by '#' comment lines listing
/// variables and constraint sizes.
void dump(const Problem &problem, std::ostream &out);

}  // namespace twochan::sdp
