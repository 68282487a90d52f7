#pragma once

#include "twochan/model.hpp"

#include <optional>
#include <stdexcept>
#include <string>

namespace twochan {

/// Raised when an innovation covariance cannot be factored or a covariance
/// leaves the PSD cone beyond tolerance.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FilterState {
  Vec x_hat;
  Mat P;
  long k = 0;
};

/// Which channels delivered a measurement at this step.
struct ArrivalPair {
  bool gamma1 = false;
  bool gamma2 = false;

  [[nodiscard]] bool any() const { return gamma1 || gamma2; }
  friend bool operator==(const ArrivalPair &, const ArrivalPair &) = default;
};

/// Time update: x+ = f(x) + B u, P+ = A P A' + Q with A the Jacobian at x.
FilterState predict(const SystemModel &model, const FilterState &s, const Vec &u);
FilterState predict(const SystemModel &model, const FilterState &s);

/// Measurement update with whichever channels arrived. Both channels use
/// the stacked (C, R); a single channel uses (C_i, R_ii). y_i must be
/// present exactly when gamma_i is set.
FilterState update_2c(const SystemModel &model, const FilterState &s, ArrivalPair arrivals,
                      const std::optional<Vec> &y1, const std::optional<Vec> &y2);

/// One step of the prediction-covariance recursion
/// P+ = A P A' + Q - (correction of the branch selected by arrivals).
Mat covariance_recursion(const SystemModel &model, const Mat &A, const Mat &P,
                         ArrivalPair arrivals);

/// Covariance reduction A P C'(C P C' + R)^{-1} C P A' computed through a
/// Cholesky factor of the innovation covariance. `what` names the block in
/// error messages. Returns a zero matrix when C has no rows.
Mat riccati_correction(const Mat &A, const Mat &P, const Mat &C, const Mat &R,
                       const char *what);

/// Kalman gain P C' (C P C' + R)^{-1}.
Mat kalman_gain(const Mat &P, const Mat &C, const Mat &R, const char *what);

/// (P + P') / 2
inline Mat symmetrize(const Mat &P) { return 0.5 * (P + P.transpose()); }

/// Throws NumericalError if the smallest eigenvalue of P is below
/// -1e-10 * ||P||.
void check_psd(const Mat &P, const char *what);

}  // namespace twochan
