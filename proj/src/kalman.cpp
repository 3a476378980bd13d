#include "mlbpf/kalman.hpp"

#include <Eigen/Dense>

#include "mlbpf/errors.hpp"

namespace mlbpf::oracle {

KalmanState kalman_update(const KalmanState& s, const Eigen::VectorXd& y,
                          const bigdata::ObservationCovariance& cov) {
  if (y.size() != cov.p) throw ConfigError("observation length does not match covariance");
  if (s.variance == 0.0) return s;  // fully confident prior; data cannot move it

  // Information-form update through one triangular solve: with u = L^-1 * 1
  // and v = L^-1 * y, the observation contributes precision |u|^2 and
  // precision-weighted mean u.v.
  Eigen::MatrixXd rhs(cov.p, 2);
  rhs.col(0).setOnes();
  rhs.col(1) = y;
  cov.chol_lower.triangularView<Eigen::Lower>().solveInPlace(rhs);
  const double obs_precision = rhs.col(0).squaredNorm();
  const double obs_information = rhs.col(0).dot(rhs.col(1));

  KalmanState out;
  const double posterior_precision = 1.0 / s.variance + obs_precision;
  out.variance = 1.0 / posterior_precision;
  out.mean = out.variance * (s.mean / s.variance + obs_information);
  return out;
}

std::vector<KalmanState> kalman_filter(const std::vector<Eigen::VectorXd>& observations,
                                       double sigma, const bigdata::ObservationCovariance& cov,
                                       double init_mean) {
  std::vector<KalmanState> out;
  out.reserve(observations.size());
  KalmanState s{init_mean, 0.0};
  for (const Eigen::VectorXd& y : observations) {
    s = kalman_predict(s, sigma);
    s = kalman_update(s, y, cov);
    out.push_back(s);
  }
  return out;
}

}  // namespace mlbpf::oracle
