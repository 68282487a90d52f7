#pragma once

#include "twochan/model.hpp"

#include <Eigen/Dense>

#include <random>

namespace testsupport {

using twochan::Mat;
using twochan::SystemModel;

inline Mat random_matrix(int r, int c, std::mt19937_64 &rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Mat M(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) M(i, j) = g(rng);
  return M;
}

inline Mat random_psd(int n, std::mt19937_64 &rng, double floor = 0.0) {
  const Mat B = random_matrix(n, n, rng);
  return B * B.transpose() + floor * Mat::Identity(n, n);
}

inline double min_eig(const Mat &M) {
  return Eigen::SelfAdjointEigenSolver<Mat>(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly)
      .eigenvalues()
      .minCoeff();
}

inline double spectral_radius(const Mat &A) {
  return Eigen::EigenSolver<Mat>(A, false).eigenvalues().cwiseAbs().maxCoeff();
}

/// Random linear system with n states, a 1-row channel 1 and a 2-row
/// channel 2 (correlated R), A scaled to the given spectral radius.
inline SystemModel random_system(int n, std::mt19937_64 &rng, double radius) {
  Mat A = random_matrix(n, n, rng);
  A *= radius / spectral_radius(A);
  const Mat C1 = random_matrix(1, n, rng);
  const Mat C2 = random_matrix(2, n, rng);
  const Mat Q = random_psd(n, rng, 0.1) * 0.1;
  const Mat R = random_psd(3, rng, 0.1) * 0.1;
  return SystemModel::linear("random", A, Mat::Zero(n, 1), C1, C2, Q, R, 1.0);
}

/// x+ = a x, both channels read x.
inline SystemModel scalar_system(double a, double q = 1.0, double r = 1.0) {
  Mat A(1, 1), C(1, 1), Q(1, 1), R = r * Mat::Identity(2, 2);
  A << a;
  C << 1.0;
  Q << q;
  return SystemModel::linear("scalar", A, Mat::Zero(1, 1), C, C, Q, R, 1.0);
}

}  // namespace testsupport
