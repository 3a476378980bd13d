#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mlbpf/ar1.hpp"
#include "mlbpf/model.hpp"

namespace mlbpf::bigdata {

// Dense observation covariance with its diagonal approximation and Cholesky
// factor. Immutable after construction; shared read-only across workers.
struct ObservationCovariance {
  int p = 0;
  Eigen::MatrixXd full;
  Eigen::VectorXd diag;
  Eigen::MatrixXd chol_lower;
  double logdet_full = 0.0;
  double logdet_diag = 0.0;
  int seeds_tried = 1;  // >1 when factorization had to retry with a new seed
};

// Random covariance: entries of a uniform[0,1) matrix A give B = A A^T, then
// entries decay exponentially away from the diagonal. Retries with the next
// seed (up to 10 times, logged to stderr) if factorization fails.
ObservationCovariance generate_covariance(int p, std::uint64_t seed);

// Binary persistence: 8-byte little-endian dimension header, then p*p
// row-major 64-bit floats.
void save_covariance(const ObservationCovariance& cov, const std::string& path);
ObservationCovariance load_covariance(const std::string& path);

// Quadratic-form Gaussian log-likelihoods of y given a scalar state broadcast
// to every coordinate; normalizing constants are left to the caller.
double loglik_full(double x, const Eigen::VectorXd& y, const ObservationCovariance& cov);
double loglik_diag(double x, const Eigen::VectorXd& y, const ObservationCovariance& cov);

struct ScalingCorrection {
  double c = 1.0;
  bool degenerate = false;  // no mass in the low-level values; c fell back to 1
};

// Least-squares multiplicative calibration of the low-level likelihood values
// against the exact ones: c = sum(g0*g1) / sum(g0^2).
ScalingCorrection fit_scaling(std::span<const double> g0_values,
                              std::span<const double> g1_values);

// Same fit on log values; returns log(c). Robust to arbitrary common shifts.
double fit_scaling_log(std::span<const double> log_g0, std::span<const double> log_g1,
                       bool* degenerate = nullptr);

struct BigdataModelOptions {
  // Refit the multiplicative level-0 correction from the current top-level
  // particles at every step.
  bool scaling_correction = true;
};

// Two-level model: exact dense-covariance likelihood on top, diagonal
// approximation below, with the scaling correction refit per step.
HmmModel<double> build_bigdata_model(std::shared_ptr<const ObservationCovariance> cov,
                                     std::shared_ptr<const std::vector<Eigen::VectorXd>> obs,
                                     const models::Ar1Signal& signal,
                                     const BigdataModelOptions& options = {});

// Single-level exact filter model.
HmmModel<double> build_bpf_model(std::shared_ptr<const ObservationCovariance> cov,
                                 std::shared_ptr<const std::vector<Eigen::VectorXd>> obs,
                                 const models::Ar1Signal& signal);

// Single-level model that only ever sees the diagonal approximation.
HmmModel<double> build_diag_model(std::shared_ptr<const ObservationCovariance> cov,
                                  std::shared_ptr<const std::vector<Eigen::VectorXd>> obs,
                                  const models::Ar1Signal& signal);

// Observation sampler for synthetic data: y = x * 1 + V with V ~ N(0, full).
models::SyntheticTrajectory simulate_trajectory(const ObservationCovariance& cov,
                                                const models::Ar1Signal& signal, int n_steps,
                                                std::uint64_t seed);

}  // namespace mlbpf::bigdata
