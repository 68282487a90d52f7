#include "twochan/filter.hpp"

#include <cmath>
#include <string>

namespace twochan {

namespace {

// Cholesky of a symmetric innovation covariance with a condition check.
Eigen::LLT<Mat> factor_innovation(const Mat &S, const char *what) {
  Eigen::LLT<Mat> llt(symmetrize(S));
  if (llt.info() != Eigen::Success) {
    throw NumericalError(std::string("innovation covariance for ") + what +
                         " is not positive definite");
  }
  const Vec d = llt.matrixLLT().diagonal().cwiseAbs2();
  if (d.maxCoeff() > 1e14 * d.minCoeff()) {
    throw NumericalError(std::string("innovation covariance for ") + what +
                         " is singular (condition number > 1e14)");
  }
  return llt;
}

}  // namespace

void check_psd(const Mat &P, const char *what) {
  if (P.size() == 0) return;
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(P), Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < -1e-10 * scale) {
    throw NumericalError(std::string(what) + " left the PSD cone (min eigenvalue " +
                         std::to_string(es.eigenvalues().minCoeff()) + ")");
  }
}

Mat kalman_gain(const Mat &P, const Mat &C, const Mat &R, const char *what) {
  const Mat PCt = P * C.transpose();
  auto llt = factor_innovation(C * PCt + R, what);
  return llt.solve(PCt.transpose()).transpose();
}

Mat riccati_correction(const Mat &A, const Mat &P, const Mat &C, const Mat &R,
                       const char *what) {
  if (C.rows() == 0) return Mat::Zero(A.rows(), A.rows());
  const Mat APCt = A * P * C.transpose();
  auto llt = factor_innovation(C * P * C.transpose() + R, what);
  // (L^{-1} C P A')' (L^{-1} C P A')
  const Mat half = llt.matrixL().solve(APCt.transpose());
  return half.transpose() * half;
}

FilterState predict(const SystemModel &model, const FilterState &s, const Vec &u) {
  const auto n = model.state_dim();
  if (s.x_hat.size() != n || s.P.rows() != n || s.P.cols() != n)
    throw std::invalid_argument("filter state dimension does not match the model");
  if (u.size() != model.input_dim())
    throw std::invalid_argument("input dimension does not match the model");
  const Mat A = model.jacobian(s.x_hat);
  FilterState out;
  out.x_hat = model.f(s.x_hat) + model.B() * u;
  out.P = symmetrize(A * s.P * A.transpose() + model.Q());
  out.k = s.k + 1;
  return out;
}

FilterState predict(const SystemModel &model, const FilterState &s) {
  return predict(model, s, Vec::Zero(model.input_dim()));
}

FilterState update_2c(const SystemModel &model, const FilterState &s, ArrivalPair arrivals,
                      const std::optional<Vec> &y1, const std::optional<Vec> &y2) {
  if (arrivals.gamma1 != y1.has_value() || arrivals.gamma2 != y2.has_value())
    throw std::invalid_argument("measurement presence must match the arrival flags");
  if (y1 && y1->size() != model.ch1_dim())
    throw std::invalid_argument("channel-1 measurement has the wrong dimension");
  if (y2 && y2->size() != model.ch2_dim())
    throw std::invalid_argument("channel-2 measurement has the wrong dimension");
  if (!arrivals.any()) return s;

  Mat C;
  Mat R;
  Vec y;
  const char *what = nullptr;
  if (arrivals.gamma1 && arrivals.gamma2) {
    C = model.C();
    R = model.R();
    y.resize(model.meas_dim());
    y << *y1, *y2;
    what = "both channels (C, R)";
  } else if (arrivals.gamma1) {
    C = model.C1();
    R = model.R11();
    y = *y1;
    what = "channel 1 (C1, R11)";
  } else {
    C = model.C2();
    R = model.R22();
    y = *y2;
    what = "channel 2 (C2, R22)";
  }
  FilterState out = s;
  if (C.rows() == 0) return out;
  const Mat K = kalman_gain(s.P, C, R, what);
  out.x_hat = s.x_hat + K * (y - C * s.x_hat);
  out.P = symmetrize(s.P - K * C * s.P);
  check_psd(out.P, "updated covariance");
  return out;
}

Mat covariance_recursion(const SystemModel &model, const Mat &A, const Mat &P,
                         ArrivalPair arrivals) {
  Mat next = A * P * A.transpose() + model.Q();
  if (arrivals.gamma1 && arrivals.gamma2) {
    next -= riccati_correction(A, P, model.C(), model.R(), "both channels (C, R)");
  } else if (arrivals.gamma1) {
    next -= riccati_correction(A, P, model.C1(), model.R11(), "channel 1 (C1, R11)");
  } else if (arrivals.gamma2) {
    next -= riccati_correction(A, P, model.C2(), model.R22(), "channel 2 (C2, R22)");
  }
  return symmetrize(next);
}

}  // namespace twochan
