#pragma once

#include <Eigen/Core>
#include <vector>

#include "mlbpf/bigdata.hpp"

namespace mlbpf::oracle {

// Exact filter moments for the scalar random-walk signal observed through an
// all-ones observation map with dense Gaussian noise.
struct KalmanState {
  double mean = 0.0;
  double variance = 0.0;
};

inline KalmanState kalman_predict(KalmanState s, double sigma) {
  s.variance += sigma * sigma;
  return s;
}

KalmanState kalman_update(const KalmanState& s, const Eigen::VectorXd& y,
                          const bigdata::ObservationCovariance& cov);

// Predict/update fold over the observations; entry n holds the posterior
// after observation n.
std::vector<KalmanState> kalman_filter(const std::vector<Eigen::VectorXd>& observations,
                                       double sigma, const bigdata::ObservationCovariance& cov,
                                       double init_mean = 0.0);

}  // namespace mlbpf::oracle
