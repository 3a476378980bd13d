#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mlbpf/ar1.hpp"
#include "mlbpf/model.hpp"

namespace mlbpf::beam {

enum class LoadProfile { gaussian, hat };

// Clamped-clamped beam with a moving load of known shape and noisy deflection
// sensors.
struct BeamSpec {
  double length = 4.0;
  double stiffness = 1.0;  // EI
  LoadProfile load_profile = LoadProfile::gaussian;
  double load_width = 0.2;
  double load_total = 1.0;
  std::vector<double> sensors{1.0, 1.75};
  Eigen::MatrixXd noise_cov;  // sensor noise covariance, SPD

  static BeamSpec with_iso_noise(double variance);
};

// Load density at a beam coordinate for a load centred at load_position.
double load_density(const BeamSpec& spec, double load_position, double coordinate);

// Static deflection on a uniform mesh of mesh_size intervals. deflections has
// mesh_size + 1 nodes including the clamped ends; sensor_values interpolate
// linearly between adjacent nodes.
struct MeshSolution {
  int mesh_size = 0;
  Eigen::VectorXd deflections;
  Eigen::VectorXd sensor_values;
};

// LDL^T factors of the clamped fourth-difference operator; depends only on
// the interior size, so it is computed once per mesh and shared.
struct PentaFactor {
  Eigen::VectorXd pivots;
  Eigen::VectorXd sub1;
  Eigen::VectorXd sub2;
};

PentaFactor factor_clamped_operator(int interior_nodes);

MeshSolution solve_beam(const BeamSpec& spec, double load_position, int mesh_size);

// Same solve with an arbitrary load density (superposition and linearity
// checks drive this entry point).
MeshSolution solve_beam_with_load(const BeamSpec& spec,
                                  const std::function<double(double)>& load, int mesh_size);

// Gaussian log-likelihood (quadratic form only) of sensor readings y for the
// beam solved at the given mesh size.
double sensor_loglik(const BeamSpec& spec, double load_position, int mesh_size,
                     const Eigen::VectorXd& y);

// Per-sensor affine fit of (fine - coarse) sensor values against the load
// position, used to sharpen the coarse-mesh observation map.
struct RegressionCorrection {
  Eigen::VectorXd intercepts;
  Eigen::VectorXd slopes;
  bool degenerate = false;  // fewer than two distinct positions; slopes zeroed
};

// coarse and fine are (particles x sensors) matrices of sensor values.
RegressionCorrection fit_regression(std::span<const double> positions,
                                    const Eigen::MatrixXd& coarse, const Eigen::MatrixXd& fine);

struct BeamModelOptions {
  // Refit the affine coarse-level correction from the current top-level
  // particles at every step.
  bool regression_correction = true;
};

// Two-level model: fine-mesh likelihood on top, regression-corrected coarse
// mesh below.
HmmModel<double> build_beam_model(const BeamSpec& spec, int theta0, int theta1,
                                  const models::Ar1Signal& signal,
                                  std::shared_ptr<const std::vector<Eigen::VectorXd>> obs,
                                  const BeamModelOptions& options = {});

// Single-level model at one mesh size.
HmmModel<double> build_beam_bpf_model(const BeamSpec& spec, int theta,
                                      const models::Ar1Signal& signal,
                                      std::shared_ptr<const std::vector<Eigen::VectorXd>> obs);

// Synthetic sensor data from the fine-mesh observation map.
models::SyntheticTrajectory simulate_trajectory(const BeamSpec& spec, int theta,
                                                const models::Ar1Signal& signal, int n_steps,
                                                std::uint64_t seed);

}  // namespace mlbpf::beam
