#pragma once

#include "twochan/model.hpp"
#include "twochan/sdp.hpp"

#include <string>
#include <vector>

namespace twochan {

/// Arrival probabilities of the two channels.
struct RatePair {
  double lambda1 = 0.0;
  double lambda2 = 0.0;

  [[nodiscard]] bool valid() const {
    return lambda1 >= 0.0 && lambda1 <= 1.0 && lambda2 >= 0.0 && lambda2 <= 1.0;
  }
  friend bool operator==(const RatePair &, const RatePair &) = default;
};

/// Throws std::invalid_argument unless both rates are in [0, 1].
void validate_rates(const RatePair &rates);

struct GainTriple {
  Mat K;   // n_x x n_y
  Mat K1;  // n_x x n_y1
  Mat K2;  // n_x x n_y2
};

/// Expected one-step covariance map over the four arrival patterns.
Mat g_operator(const Mat &A, const SystemModel &model, const RatePair &rates, const Mat &X);

/// Covariance map for fixed (possibly suboptimal) gains.
Mat phi_operator(const Mat &A, const SystemModel &model, const RatePair &rates,
                 const GainTriple &gains, const Mat &X);

/// Gains minimizing phi: K = -A X C'(C X C' + R)^{-1} and the per-channel
/// analogues with (C1, R11) and (C2, R22).
GainTriple optimal_gains(const Mat &A, const SystemModel &model, const Mat &X);

/// Linear part of phi: the four closed-loop maps applied to Y, weighted.
Mat L_operator(const Mat &A, const SystemModel &model, const RatePair &rates,
               const GainTriple &gains, const Mat &Y);

/// Constant part of phi, so that phi(X) = L(X) + U.
Mat U_term(const SystemModel &model, const RatePair &rates, const GainTriple &gains);

/// Whether the Psi LMI carries the no-arrival block sqrt((1-l1)(1-l2)) Y A.
/// `WithoutOpenLoop` leaves it out; then Psi is trivially feasible at (0, 0).
enum class PsiForm { WithOpenLoop, WithoutOpenLoop };

/// Branch weights sqrt(l1 l2), sqrt(l1 (1-l2)), sqrt(l2 (1-l1)),
/// sqrt((1-l1)(1-l2)).
struct BranchWeights {
  double both = 0.0;
  double ch1 = 0.0;
  double ch2 = 0.0;
  double none = 0.0;
};
BranchWeights branch_weights(const RatePair &rates);

/// Strictness margin 1e-8 (1 + max_j ||A_j||_2).
double strict_margin(const std::vector<Mat> &vertices);

/// Psi as an SDP: shared symmetric Y, one (Z, Z1, Z2) per vertex,
/// constraints Psi_j >= eps I and I - Y >= 0. Branches whose weight is
/// zero are left out, as is any Z for a channel without outputs.
struct PsiProgram {
  sdp::Problem problem;
  sdp::VarRef Y;
  std::vector<sdp::VarRef> Z, Z1, Z2;  // id < 0 when absent
  double eps = 0.0;
};

PsiProgram assemble_psi(const std::vector<Mat> &vertices, const SystemModel &model,
                        const RatePair &rates, PsiForm form = PsiForm::WithOpenLoop);

/// Dense Psi for given decision values (independent of the SDP assembly;
/// used to re-verify certificates). Same branch-dropping rule.
Mat evaluate_psi(const Mat &A, const SystemModel &model, const RatePair &rates, const Mat &Y,
                 const Mat &Z, const Mat &Z1, const Mat &Z2,
                 PsiForm form = PsiForm::WithOpenLoop);

struct FeasibilityCertificate {
  bool feasible = false;
  sdp::Status status = sdp::Status::NumericalFailure;
  Mat Y;
  std::vector<Mat> Z, Z1, Z2;  // one per vertex
  /// Smallest eigenvalue over all Psi_j minus eps, and of Y - eps I and
  /// I - Y; positive for a valid certificate.
  double margin = 0.0;
  double eps = 0.0;
  int iterations = 0;
  std::string diagnostic;

  /// Closed-loop gains Y^{-1} Z per vertex.
  [[nodiscard]] std::vector<GainTriple> gains() const;
};

struct StabilityOptions {
  PsiForm form = PsiForm::WithOpenLoop;
  /// Eliminate Z analytically and solve for Y alone (same feasible set);
  /// Z is then recovered in closed form and Psi re-verified.
  bool eliminate_gains = true;
  sdp::Options solver;
};

/// Feasibility of Psi over all vertices with 0 < Y <= I. Solver trouble is
/// reported through `status` = NumericalFailure, distinct from Infeasible.
FeasibilityCertificate check_boundedness(const std::vector<Mat> &vertices,
                                         const SystemModel &model, const RatePair &rates,
                                         const StabilityOptions &options = {});

/// Re-check a certificate against the dense Psi of every vertex.
double certificate_margin(const FeasibilityCertificate &cert, const std::vector<Mat> &vertices,
                          const SystemModel &model, const RatePair &rates,
                          PsiForm form = PsiForm::WithOpenLoop);

struct CriticalLambda {
  /// Smallest feasible free rate within tol; 1 + tol when even 1 fails.
  double value = 0.0;
  bool attainable = false;
  int solves = 0;
};

/// Bisection on the free rate of `channel` (1 or 2) with the other one
/// fixed. Solver failures propagate as std::runtime_error.
CriticalLambda critical_lambda(const std::vector<Mat> &vertices, const SystemModel &model,
                               int channel, double fixed_value, double tol = 1e-4,
                               const StabilityOptions &options = {});

/// How the bound is taken over several vertices.
///  WorstVertex: the single-matrix program per vertex, largest trace wins.
///  Joint: one V shared by all single-matrix programs.
///  Linearized: one V shared by the programs whose (1,1) block is
///    A_j + A_j' + Q - V with the extra [I; V] row and column.
enum class TraceMode { WorstVertex, Joint, Linearized };

struct TraceBoundResult {
  sdp::Status status = sdp::Status::NumericalFailure;
  Mat V;
  double tau = 0.0;
  int worst_vertex = -1;
  std::vector<double> per_vertex;  // WorstVertex mode only
  int iterations = 0;
  std::string diagnostic;

  [[nodiscard]] bool ok() const { return status == sdp::Status::Optimal; }
};

/// max trace(V) s.t. V >= eps I and Gamma(V) >= 0, Gamma(V) being the
/// Schur form of g(V) - V.
TraceBoundResult trace_bound(const std::vector<Mat> &vertices, const SystemModel &model,
                             const RatePair &rates, TraceMode mode = TraceMode::WorstVertex,
                             const sdp::Options &solver = {});

/// Dense Gamma(V) for one vertex (the single-matrix form).
Mat evaluate_gamma(const Mat &A, const SystemModel &model, const RatePair &rates,
                   const Mat &V);

/// Orthonormal basis of the null space of C (n x 0 when C has full column
/// rank, identity when C has no rows). Exact for row-selection matrices.
Mat null_basis(const Mat &C);

}  // namespace twochan
