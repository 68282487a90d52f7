#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace twochan {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Closed interval used for envelopes and parameter bounds.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  [[nodiscard]] bool valid() const { return lo <= hi; }
  [[nodiscard]] bool contains(double v) const { return v >= lo && v <= hi; }
};

/// One interval per state component.
using Envelope = std::vector<Interval>;

/// Multi-affine description of the Jacobian: A(x) = eval(p) where every
/// entry of eval is affine in each parameter separately, and bounds(env)
/// returns an interval for each parameter valid over the envelope. A model
/// with a constant Jacobian has zero parameters.
struct JacobianParameterization {
  std::vector<std::string> names;
  std::function<std::vector<Interval>(const Envelope &)> bounds;
  std::function<Mat(const std::vector<double> &)> eval;
};

/// Which x/y rows the 5-DOF kinematics use. `DuplicatedRow` uses the
/// duplicated x-row for both x and y; `Corrected` uses proper yaw rotation.
enum class KinematicsVariant { Corrected, DuplicatedRow };

/// Discrete-time system x+ = f(x) + B u + w, with the output split into
/// two channels y1 = C1 x + v1 and y2 = C2 x + v2.
class SystemModel {
 public:
  using Dynamics = std::function<Vec(const Vec &)>;
  using JacobianFn = std::function<Mat(const Vec &)>;

  SystemModel(std::string name, Dynamics f, JacobianFn jacobian, Mat B, Mat C1,
              Mat C2, Mat Q, Mat R, double sample_period,
              JacobianParameterization parameterization = {});

  /// Linear model f(x) = A x; the parameterization is the constant A.
  static SystemModel linear(std::string name, const Mat &A, Mat B, Mat C1, Mat C2,
                            Mat Q, Mat R, double sample_period);

  [[nodiscard]] const std::string &name() const { return name_; }
  [[nodiscard]] Eigen::Index state_dim() const { return Q_.rows(); }
  [[nodiscard]] Eigen::Index input_dim() const { return B_.cols(); }
  [[nodiscard]] Eigen::Index ch1_dim() const { return C1_.rows(); }
  [[nodiscard]] Eigen::Index ch2_dim() const { return C2_.rows(); }
  [[nodiscard]] Eigen::Index meas_dim() const { return C_.rows(); }

  [[nodiscard]] Vec f(const Vec &x) const { return f_(x); }
  [[nodiscard]] Mat jacobian(const Vec &x) const { return jac_(x); }

  [[nodiscard]] const Mat &B() const { return B_; }
  [[nodiscard]] const Mat &C1() const { return C1_; }
  [[nodiscard]] const Mat &C2() const { return C2_; }
  /// Stacked [C1; C2].
  [[nodiscard]] const Mat &C() const { return C_; }
  [[nodiscard]] const Mat &Q() const { return Q_; }
  [[nodiscard]] const Mat &R() const { return R_; }
  [[nodiscard]] Mat R11() const { return R_.topLeftCorner(ch1_dim(), ch1_dim()); }
  [[nodiscard]] Mat R22() const { return R_.bottomRightCorner(ch2_dim(), ch2_dim()); }
  [[nodiscard]] Mat R12() const { return R_.topRightCorner(ch1_dim(), ch2_dim()); }
  [[nodiscard]] double sample_period() const { return Ts_; }

  [[nodiscard]] const JacobianParameterization &parameterization() const {
    return param_;
  }
  [[nodiscard]] bool constant_jacobian() const { return param_.names.empty(); }

  /// Same model with Q and R replaced (dimensions must match).
  [[nodiscard]] SystemModel with_noise(Mat Q, Mat R) const;

 private:
  std::string name_;
  Dynamics f_;
  JacobianFn jac_;
  Mat B_, C1_, C2_, C_, Q_, R_;
  double Ts_;
  JacobianParameterization param_;
};

/// Constant-velocity 1-D motion: position/velocity, C1 reads position,
/// C2 reads velocity, Q = 1e-4 I, R = 1e-2 I, Ts = 0.05 s.
SystemModel linear_benchmark_model();

/// 13-state constant-acceleration kinematics
/// [x y z phi psi vx vy vz vphi vpsi ax ay az]. Channel 1 reads
/// phi, psi and the five velocities; channel 2 reads x, y, z.
SystemModel kinematic5dof_model(KinematicsVariant variant = KinematicsVariant::Corrected);

/// Default envelope for the 5-DOF model: angles in [-pi, pi], velocities
/// in [-2, 2], everything else unbounded (it does not enter the Jacobian).
Envelope kinematic5dof_default_envelope();

/// Central-difference Jacobian of model.f at x. Throws on h <= 0.
Mat jacobian_finite_diff(const SystemModel &model, const Vec &x, double h);

struct JacobianPolytope {
  std::vector<Mat> vertices;
  Envelope envelope;
  std::vector<Interval> parameter_bounds;

  [[nodiscard]] std::size_t size() const { return vertices.size(); }
};

/// Vertices of the Jacobian set over the envelope: every corner of the
/// parameter box, duplicates removed. Throws std::invalid_argument for an
/// inverted envelope and std::length_error when the corner count exceeds
/// max_vertices.
JacobianPolytope build_polytope(const SystemModel &model, const Envelope &envelope,
                                std::size_t max_vertices);

/// Range of sin / cos over [lo, hi].
Interval sin_range(const Interval &angle);
Interval cos_range(const Interval &angle);

/// Throws std::invalid_argument unless Q and R are symmetric positive
/// definite and all dimensions agree.
void validate_model(const SystemModel &model);

}  // namespace twochan
