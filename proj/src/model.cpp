#include "twochan/model.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <utility>

namespace twochan {

SystemModel::SystemModel(std::string name, Dynamics f, JacobianFn jacobian, Mat B,
                         Mat C1, Mat C2, Mat Q, Mat R, double sample_period,
                         JacobianParameterization parameterization)
    : name_(std::move(name)),
      f_(std::move(f)),
      jac_(std::move(jacobian)),
      B_(std::move(B)),
      C1_(std::move(C1)),
      C2_(std::move(C2)),
      Q_(std::move(Q)),
      R_(std::move(R)),
      Ts_(sample_period),
      param_(std::move(parameterization)) {
  const auto n = Q_.rows();
  if (C1_.cols() != n || C2_.cols() != n) {
    throw std::invalid_argument("C1/C2 column count must equal the state dimension");
  }
  C_.resize(C1_.rows() + C2_.rows(), n);
  C_ << C1_, C2_;
  validate_model(*this);
}

SystemModel SystemModel::linear(std::string name, const Mat &A, Mat B, Mat C1, Mat C2,
                                Mat Q, Mat R, double sample_period) {
  JacobianParameterization param;
  param.bounds = [](const Envelope &) { return std::vector<Interval>{}; };
  param.eval = [A](const std::vector<double> &) { return A; };
  return SystemModel(
      std::move(name), [A](const Vec &x) -> Vec { return A * x; },
      [A](const Vec &) -> Mat { return A; }, std::move(B), std::move(C1), std::move(C2),
      std::move(Q), std::move(R), sample_period, std::move(param));
}

SystemModel SystemModel::with_noise(Mat Q, Mat R) const {
  SystemModel copy = *this;
  copy.Q_ = std::move(Q);
  copy.R_ = std::move(R);
  validate_model(copy);
  return copy;
}

namespace {

bool is_spd(const Mat &M) {
  if (M.rows() != M.cols()) return false;
  if (M.size() == 0) return true;
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + M.cwiseAbs().maxCoeff()))
    return false;
  Eigen::LLT<Mat> llt(M);
  return llt.info() == Eigen::Success;
}

}  // namespace

void validate_model(const SystemModel &model) {
  const auto n = model.state_dim();
  if (n <= 0) throw std::invalid_argument("state dimension must be positive");
  if (model.B().rows() != n) throw std::invalid_argument("B must have n_x rows");
  if (model.R().rows() != model.meas_dim())
    throw std::invalid_argument("R must be n_y x n_y with n_y = rows(C1) + rows(C2)");
  if (!is_spd(model.Q())) throw std::invalid_argument("Q must be symmetric positive definite");
  if (!is_spd(model.R())) throw std::invalid_argument("R must be symmetric positive definite");
  if (!(model.sample_period() > 0.0)) throw std::invalid_argument("sample period must be > 0");
}

SystemModel linear_benchmark_model() {
  Mat A(2, 2);
  A << 1.0, 0.05, 0.0, 0.995;
  Mat C1(1, 2), C2(1, 2);
  C1 << 1.0, 0.0;
  C2 << 0.0, 1.0;
  return SystemModel::linear("linear", A, Mat::Zero(2, 1), C1, C2,
                             1e-4 * Mat::Identity(2, 2), 1e-2 * Mat::Identity(2, 2), 0.05);
}

namespace {

constexpr int kPhi = 3;
constexpr int kPsi = 4;
constexpr int kVx = 5;
constexpr int kVy = 6;
constexpr int kVz = 7;
constexpr int kVphi = 8;
constexpr int kVpsi = 9;
constexpr int kAx = 10;

// Jacobian of the 5-DOF model written in terms of the trig values and
// velocities. Multi-affine in (sf, cf, sp, cp, vx, vy, vz, vpsi).
Mat kinematic_jacobian(double Ts, KinematicsVariant variant, double sf, double cf,
                       double sp, double cp, double vx, double vy, double vz,
                       double vpsi) {
  Mat J = Mat::Zero(13, 13);
  // x-row: vx cps - vy sps cph + vz sps sph
  J(0, kPhi) = vy * sp * sf + vz * sp * cf;
  J(0, kPsi) = -vx * sp - vy * cp * cf + vz * cp * sf;
  J(0, kVx) = cp;
  J(0, kVy) = -sp * cf;
  J(0, kVz) = sp * sf;
  if (variant == KinematicsVariant::Corrected) {
    // y-row: vx sps + vy cps cph - vz cps sph
    J(1, kPhi) = -vy * cp * sf - vz * cp * cf;
    J(1, kPsi) = vx * cp - vy * sp * cf + vz * sp * sf;
    J(1, kVx) = sp;
    J(1, kVy) = cp * cf;
    J(1, kVz) = -cp * sf;
  } else {
    J.row(1) = J.row(0);
  }
  // z-row: vy sph + vz cph
  J(2, kPhi) = vy * cf - vz * sf;
  J(2, kVy) = sf;
  J(2, kVz) = cf;
  J(3, kVphi) = 1.0;
  // psi-row: vpsi cph
  J(4, kPhi) = -vpsi * sf;
  J(4, kVpsi) = cf;
  for (int i = 0; i < 3; ++i) J(kVx + i, kAx + i) = 1.0;
  return Mat::Identity(13, 13) + Ts * J;
}

}  // namespace

Interval sin_range(const Interval &a) {
  // sin(x) = cos(x - pi/2)
  return cos_range({a.lo - std::numbers::pi / 2.0, a.hi - std::numbers::pi / 2.0});
}

Interval cos_range(const Interval &a) {
  if (!a.valid()) throw std::invalid_argument("inverted angle interval");
  if (a.hi - a.lo >= 2.0 * std::numbers::pi) return {-1.0, 1.0};
  double lo = std::min(std::cos(a.lo), std::cos(a.hi));
  double hi = std::max(std::cos(a.lo), std::cos(a.hi));
  // extrema of cos sit at multiples of pi
  const double first = std::ceil(a.lo / std::numbers::pi);
  for (double m = first; m * std::numbers::pi <= a.hi; m += 1.0) {
    const bool even = std::fmod(std::abs(m), 2.0) == 0.0;
    if (even) hi = 1.0; else lo = -1.0;
  }
  return {lo, hi};
}

SystemModel kinematic5dof_model(KinematicsVariant variant) {
  static constexpr double Ts = 0.05;
  auto f = [variant](const Vec &x) -> Vec {
    const double sf = std::sin(x(kPhi)), cf = std::cos(x(kPhi));
    const double sp = std::sin(x(kPsi)), cp = std::cos(x(kPsi));
    const double vx = x(kVx), vy = x(kVy), vz = x(kVz);
    Vec rate = Vec::Zero(13);
    rate(0) = vx * cp - vy * sp * cf + vz * sp * sf;
    rate(1) = variant == KinematicsVariant::Corrected ? vx * sp + vy * cp * cf - vz * cp * sf
                                                      : rate(0);
    rate(2) = vy * sf + vz * cf;
    rate(3) = x(kVphi);
    rate(4) = x(kVpsi) * cf;
    rate(5) = x(kAx);
    rate(6) = x(kAx + 1);
    rate(7) = x(kAx + 2);
    return x + Ts * rate;
  };
  auto jac = [variant](const Vec &x) -> Mat {
    return kinematic_jacobian(Ts, variant, std::sin(x(kPhi)), std::cos(x(kPhi)),
                              std::sin(x(kPsi)), std::cos(x(kPsi)), x(kVx), x(kVy),
                              x(kVz), x(kVpsi));
  };

  JacobianParameterization param;
  param.names = {"sin_phi", "cos_phi", "sin_psi", "cos_psi", "vx", "vy", "vz", "vpsi"};
  param.bounds = [](const Envelope &env) {
    return std::vector<Interval>{sin_range(env.at(kPhi)), cos_range(env.at(kPhi)),
                                 sin_range(env.at(kPsi)), cos_range(env.at(kPsi)),
                                 env.at(kVx),           env.at(kVy),
                                 env.at(kVz),           env.at(kVpsi)};
  };
  param.eval = [variant](const std::vector<double> &p) {
    return kinematic_jacobian(Ts, variant, p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]);
  };

  Mat C1 = Mat::Zero(7, 13);
  C1.block(0, kPhi, 7, 7).setIdentity();
  Mat C2 = Mat::Zero(3, 13);
  C2.block(0, 0, 3, 3).setIdentity();
  return SystemModel(variant == KinematicsVariant::Corrected ? "kinematic5dof"
                                                             : "kinematic5dof_duplicated_row",
                     f, jac, Mat::Zero(13, 1), C1, C2, 1e-4 * Mat::Identity(13, 13),
                     1e-2 * Mat::Identity(10, 10), Ts, std::move(param));
}

Envelope kinematic5dof_default_envelope() {
  constexpr double inf = std::numeric_limits<double>::infinity();
  Envelope env(13, Interval{-inf, inf});
  env[kPhi] = {-std::numbers::pi, std::numbers::pi};
  env[kPsi] = {-std::numbers::pi, std::numbers::pi};
  for (int i = kVx; i <= kVpsi; ++i) env[i] = {-2.0, 2.0};
  return env;
}

Mat jacobian_finite_diff(const SystemModel &model, const Vec &x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite-difference step must be > 0");
  const auto n = model.state_dim();
  Mat J(n, n);
  Vec xp = x, xm = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    xp(i) = x(i) + h;
    xm(i) = x(i) - h;
    J.col(i) = (model.f(xp) - model.f(xm)) / (2.0 * h);
    xp(i) = xm(i) = x(i);
  }
  return J;
}

JacobianPolytope build_polytope(const SystemModel &model, const Envelope &envelope,
                                std::size_t max_vertices) {
  if (envelope.empty()) throw std::invalid_argument("envelope is empty");
  for (const auto &iv : envelope) {
    if (!iv.valid()) throw std::invalid_argument("envelope has an inverted interval");
  }
  JacobianPolytope poly;
  poly.envelope = envelope;
  const auto &param = model.parameterization();
  if (model.constant_jacobian()) {
    poly.vertices.push_back(param.eval ? param.eval({}) : model.jacobian(Vec::Zero(model.state_dim())));
    return poly;
  }
  if (static_cast<Eigen::Index>(envelope.size()) != model.state_dim())
    throw std::invalid_argument("envelope needs one interval per state");

  poly.parameter_bounds = param.bounds(envelope);
  const std::size_t m = poly.parameter_bounds.size();
  for (const auto &b : poly.parameter_bounds) {
    if (!std::isfinite(b.lo) || !std::isfinite(b.hi))
      throw std::invalid_argument("envelope leaves a Jacobian parameter unbounded");
  }
  // degenerate parameters contribute a single corner
  std::vector<std::size_t> free_params;
  for (std::size_t i = 0; i < m; ++i) {
    if (poly.parameter_bounds[i].lo != poly.parameter_bounds[i].hi) free_params.push_back(i);
  }
  if (free_params.size() >= 63 || (std::size_t{1} << free_params.size()) > max_vertices) {
    throw std::length_error("polytope needs 2^" + std::to_string(free_params.size()) +
                            " vertices, more than max_vertices = " +
                            std::to_string(max_vertices));
  }
  const std::size_t corners = std::size_t{1} << free_params.size();
  std::vector<double> p(m);
  for (std::size_t i = 0; i < m; ++i) p[i] = poly.parameter_bounds[i].lo;
  for (std::size_t c = 0; c < corners; ++c) {
    for (std::size_t b = 0; b < free_params.size(); ++b) {
      const auto &iv = poly.parameter_bounds[free_params[b]];
      p[free_params[b]] = (c >> b) & 1U ? iv.hi : iv.lo;
    }
    Mat V = param.eval(p);
    bool duplicate = false;
    for (const auto &W : poly.vertices) {
      if (W == V) { duplicate = true; break; }
    }
    if (!duplicate) poly.vertices.push_back(std::move(V));
  }
  return poly;
}

}  // namespace twochan
