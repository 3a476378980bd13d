#include "mlbpf/beam.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "mlbpf/ensemble.hpp"
#include "mlbpf/errors.hpp"

namespace mlbpf::beam {

namespace {

constexpr double kSqrt2Pi = 2.5066282746310005024157652848110;

void check_spec(const BeamSpec& spec) {
  if (spec.length <= 0.0) throw ConfigError("beam length must be positive");
  if (spec.stiffness <= 0.0) throw ConfigError("beam stiffness must be positive");
  if (spec.load_width <= 0.0) throw ConfigError("load width must be positive");
  for (double s : spec.sensors) {
    if (s < 0.0 || s > spec.length) throw ConfigError("sensor outside the beam");
  }
  if (spec.noise_cov.rows() != static_cast<Eigen::Index>(spec.sensors.size()) ||
      spec.noise_cov.cols() != spec.noise_cov.rows()) {
    throw ConfigError("noise covariance does not match the sensor count");
  }
}

Eigen::VectorXd interpolate_sensors(const BeamSpec& spec, const Eigen::VectorXd& deflections,
                                    int mesh_size) {
  const double h = spec.length / mesh_size;
  Eigen::VectorXd values(spec.sensors.size());
  for (std::size_t j = 0; j < spec.sensors.size(); ++j) {
    double t = spec.sensors[j] / h;
    int i0 = static_cast<int>(t);
    if (i0 >= mesh_size) i0 = mesh_size - 1;
    const double frac = t - i0;
    values[j] = (1.0 - frac) * deflections[i0] + frac * deflections[i0 + 1];
  }
  return values;
}

}  // namespace

BeamSpec BeamSpec::with_iso_noise(double variance) {
  BeamSpec spec;
  spec.noise_cov = variance * Eigen::MatrixXd::Identity(spec.sensors.size(), spec.sensors.size());
  return spec;
}

double load_density(const BeamSpec& spec, double load_position, double coordinate) {
  const double w = spec.load_width;
  const double d = coordinate - load_position;
  switch (spec.load_profile) {
    case LoadProfile::gaussian: {
      if (std::abs(d) > 8.0 * w) return 0.0;
      return spec.load_total / (w * kSqrt2Pi) * std::exp(-0.5 * d * d / (w * w));
    }
    case LoadProfile::hat: {
      const double t = 1.0 - std::abs(d) / w;
      return t > 0.0 ? spec.load_total * t / w : 0.0;
    }
  }
  return 0.0;
}

// Fourth-difference operator on the interior nodes with both ends clamped.
// Eliminating the mirror ghost nodes raises the first and last diagonal
// entries to 7; the matrix is SPD and pentadiagonal, so an LDL^T factorization
// with bandwidth 2 runs in linear time.
PentaFactor factor_clamped_operator(int interior_nodes) {
  const int n = interior_nodes;
  if (n < 4) throw ConfigError("mesh size must be at least 5 intervals");
  PentaFactor f;
  f.pivots.resize(n);
  f.sub1.resize(n - 1);
  f.sub2.resize(n - 2);
  for (int i = 0; i < n; ++i) {
    const double diag = (i == 0 || i == n - 1) ? 7.0 : 6.0;
    const double li1 = i >= 1 ? f.sub1[i - 1] : 0.0;
    const double li2 = i >= 2 ? f.sub2[i - 2] : 0.0;
    double pivot = diag;
    if (i >= 1) pivot -= li1 * li1 * f.pivots[i - 1];
    if (i >= 2) pivot -= li2 * li2 * f.pivots[i - 2];
    if (!(pivot > 0.0)) throw std::logic_error("clamped beam operator lost positivity");
    f.pivots[i] = pivot;
    if (i + 1 < n) {
      double off = -4.0;
      if (i >= 1) off -= f.sub2[i - 1] * f.sub1[i - 1] * f.pivots[i - 1];
      f.sub1[i] = off / pivot;
    }
    if (i + 2 < n) f.sub2[i] = 1.0 / pivot;
  }
  return f;
}

namespace {

void solve_penta(const PentaFactor& f, Eigen::VectorXd& b) {
  const int n = static_cast<int>(b.size());
  for (int i = 1; i < n; ++i) {
    b[i] -= f.sub1[i - 1] * b[i - 1];
    if (i >= 2) b[i] -= f.sub2[i - 2] * b[i - 2];
  }
  for (int i = 0; i < n; ++i) b[i] /= f.pivots[i];
  for (int i = n - 2; i >= 0; --i) {
    b[i] -= f.sub1[i] * b[i + 1];
    if (i + 2 < n) b[i] -= f.sub2[i] * b[i + 2];
  }
}

MeshSolution solve_with_factor(const BeamSpec& spec, const PentaFactor& factor,
                               const std::function<double(double)>& load, int mesh_size) {
  const int n = mesh_size - 1;
  const double h = spec.length / mesh_size;
  const double scale = h * h * h * h / spec.stiffness;
  Eigen::VectorXd rhs(n);
  for (int i = 0; i < n; ++i) rhs[i] = scale * load((i + 1) * h);
  solve_penta(factor, rhs);

  MeshSolution sol;
  sol.mesh_size = mesh_size;
  sol.deflections.setZero(mesh_size + 1);
  sol.deflections.segment(1, n) = rhs;
  sol.sensor_values = interpolate_sensors(spec, sol.deflections, mesh_size);
  return sol;
}

}  // namespace

MeshSolution solve_beam(const BeamSpec& spec, double load_position, int mesh_size) {
  check_spec(spec);
  if (mesh_size < 5) throw ConfigError("mesh size must be at least 5 intervals");
  PentaFactor factor = factor_clamped_operator(mesh_size - 1);
  return solve_with_factor(
      spec, factor, [&](double pos) { return load_density(spec, load_position, pos); },
      mesh_size);
}

MeshSolution solve_beam_with_load(const BeamSpec& spec,
                                  const std::function<double(double)>& load, int mesh_size) {
  check_spec(spec);
  if (mesh_size < 5) throw ConfigError("mesh size must be at least 5 intervals");
  PentaFactor factor = factor_clamped_operator(mesh_size - 1);
  return solve_with_factor(spec, factor, load, mesh_size);
}

double sensor_loglik(const BeamSpec& spec, double load_position, int mesh_size,
                     const Eigen::VectorXd& y) {
  if (y.size() != static_cast<Eigen::Index>(spec.sensors.size())) {
    throw ConfigError("sensor reading length mismatch");
  }
  const MeshSolution sol = solve_beam(spec, load_position, mesh_size);
  Eigen::LLT<Eigen::MatrixXd> llt(spec.noise_cov);
  if (llt.info() != Eigen::Success) throw ConfigError("sensor noise covariance is not PD");
  Eigen::VectorXd r = y - sol.sensor_values;
  llt.matrixL().solveInPlace(r);
  return -0.5 * r.squaredNorm();
}

RegressionCorrection fit_regression(std::span<const double> positions,
                                    const Eigen::MatrixXd& coarse, const Eigen::MatrixXd& fine) {
  const Eigen::Index n = coarse.rows();
  const Eigen::Index m = coarse.cols();
  if (fine.rows() != n || fine.cols() != m) throw ConfigError("sensor matrix shape mismatch");
  if (static_cast<Eigen::Index>(positions.size()) != n) {
    throw ConfigError("position count does not match sensor matrices");
  }
  if (n == 0) throw ConfigError("regression needs at least one sample");

  double x_mean = 0.0;
  for (double x : positions) x_mean += x;
  x_mean /= static_cast<double>(n);
  double sxx = 0.0;
  for (double x : positions) sxx += (x - x_mean) * (x - x_mean);

  RegressionCorrection corr;
  corr.intercepts.setZero(m);
  corr.slopes.setZero(m);
  corr.degenerate = sxx == 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    double d_mean = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) d_mean += fine(i, j) - coarse(i, j);
    d_mean /= static_cast<double>(n);
    if (corr.degenerate) {
      corr.intercepts[j] = d_mean;  // no spread in x: flat fallback
      continue;
    }
    double sxy = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      sxy += (positions[i] - x_mean) * (fine(i, j) - coarse(i, j) - d_mean);
    }
    corr.slopes[j] = sxy / sxx;
    corr.intercepts[j] = d_mean - corr.slopes[j] * x_mean;
  }
  return corr;
}

namespace {

struct BeamCalibration {
  int step = -1;
  RegressionCorrection corr;
  // load position bits -> (fine sensor values, coarse sensor values)
  std::unordered_map<std::uint64_t, std::pair<Eigen::VectorXd, Eigen::VectorXd>> cache;
};

struct BeamContext {
  BeamSpec spec;
  int theta0 = 0;
  int theta1 = 0;
  PentaFactor factor0;
  PentaFactor factor1;
  Eigen::MatrixXd noise_chol;  // lower factor of the sensor noise
  std::shared_ptr<const std::vector<Eigen::VectorXd>> obs;
  BeamCalibration cal;

  Eigen::VectorXd sensors(double x, int theta, const PentaFactor& factor) const {
    return solve_with_factor(
               spec, factor, [&](double pos) { return load_density(spec, x, pos); }, theta)
        .sensor_values;
  }

  double loglik(const Eigen::VectorXd& h, int step) const {
    Eigen::VectorXd r = (*obs)[step] - h;
    noise_chol.triangularView<Eigen::Lower>().solveInPlace(r);
    return -0.5 * r.squaredNorm();
  }
};

std::shared_ptr<BeamContext> make_context(const BeamSpec& spec, int theta0, int theta1,
                                          std::shared_ptr<const std::vector<Eigen::VectorXd>> obs) {
  check_spec(spec);
  if (theta1 < 5 || (theta0 > 0 && theta0 < 5)) throw ConfigError("mesh sizes must be >= 5");
  auto ctx = std::make_shared<BeamContext>();
  ctx->spec = spec;
  ctx->theta0 = theta0;
  ctx->theta1 = theta1;
  if (theta0 > 0) ctx->factor0 = factor_clamped_operator(theta0 - 1);
  ctx->factor1 = factor_clamped_operator(theta1 - 1);
  Eigen::LLT<Eigen::MatrixXd> llt(spec.noise_cov);
  if (llt.info() != Eigen::Success) throw ConfigError("sensor noise covariance is not PD");
  ctx->noise_chol = llt.matrixL();
  ctx->obs = std::move(obs);
  ctx->cal.corr.intercepts.setZero(spec.sensors.size());
  ctx->cal.corr.slopes.setZero(spec.sensors.size());
  return ctx;
}

}  // namespace

HmmModel<double> build_beam_model(const BeamSpec& spec, int theta0, int theta1,
                                  const models::Ar1Signal& signal,
                                  std::shared_ptr<const std::vector<Eigen::VectorXd>> obs,
                                  const BeamModelOptions& options) {
  if (theta0 >= theta1) throw ConfigError("coarse mesh must be strictly coarser than fine");
  auto ctx = make_context(spec, theta0, theta1, std::move(obs));

  HmmModel<double> model;
  model.scale = LikelihoodScale::log_scale;
  model.num_observations = static_cast<int>(ctx->obs->size());
  model.sample_prior = [signal](RngStream& rng) { return models::ar1_prior(signal, rng); };
  model.sample_transition = [signal](double x, RngStream& rng) {
    return models::ar1_step(x, signal.sigma, rng);
  };

  model.level_likelihoods.push_back([ctx](double x, int step) {
    Eigen::VectorXd h;
    auto it = ctx->cal.step == step ? ctx->cal.cache.find(state_hash_key(x))
                                    : ctx->cal.cache.end();
    if (it != ctx->cal.cache.end()) {
      h = it->second.second;
    } else {
      h = ctx->sensors(x, ctx->theta0, ctx->factor0);
    }
    h += ctx->cal.corr.intercepts + ctx->cal.corr.slopes * x;
    return ctx->loglik(h, step);
  });
  model.level_likelihoods.push_back([ctx](double x, int step) {
    if (ctx->cal.step == step) {
      auto it = ctx->cal.cache.find(state_hash_key(x));
      if (it != ctx->cal.cache.end()) return ctx->loglik(it->second.first, step);
    }
    return ctx->loglik(ctx->sensors(x, ctx->theta1, ctx->factor1), step);
  });

  if (options.regression_correction) {
    model.calibrate = [ctx](std::span<const double> top_states, int step) {
      const Eigen::Index n = static_cast<Eigen::Index>(top_states.size());
      const Eigen::Index m = static_cast<Eigen::Index>(ctx->spec.sensors.size());
      Eigen::MatrixXd coarse(n, m), fine(n, m);
      ctx->cal.cache.clear();
      ctx->cal.cache.reserve(top_states.size() * 2);
      for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd hf = ctx->sensors(top_states[i], ctx->theta1, ctx->factor1);
        Eigen::VectorXd hc = ctx->sensors(top_states[i], ctx->theta0, ctx->factor0);
        fine.row(i) = hf.transpose();
        coarse.row(i) = hc.transpose();
        ctx->cal.cache.emplace(state_hash_key(top_states[i]),
                               std::make_pair(std::move(hf), std::move(hc)));
      }
      ctx->cal.step = step;
      ctx->cal.corr = fit_regression(std::span<const double>(top_states.data(), top_states.size()),
                                     coarse, fine);
    };
  } else {
    ctx->cal.corr.intercepts.setZero(spec.sensors.size());
    ctx->cal.corr.slopes.setZero(spec.sensors.size());
  }
  return model;
}

HmmModel<double> build_beam_bpf_model(const BeamSpec& spec, int theta,
                                      const models::Ar1Signal& signal,
                                      std::shared_ptr<const std::vector<Eigen::VectorXd>> obs) {
  auto ctx = make_context(spec, 0, theta, std::move(obs));
  HmmModel<double> model;
  model.scale = LikelihoodScale::log_scale;
  model.num_observations = static_cast<int>(ctx->obs->size());
  model.sample_prior = [signal](RngStream& rng) { return models::ar1_prior(signal, rng); };
  model.sample_transition = [signal](double x, RngStream& rng) {
    return models::ar1_step(x, signal.sigma, rng);
  };
  model.level_likelihoods.push_back([ctx](double x, int step) {
    return ctx->loglik(ctx->sensors(x, ctx->theta1, ctx->factor1), step);
  });
  return model;
}

models::SyntheticTrajectory simulate_trajectory(const BeamSpec& spec, int theta,
                                                const models::Ar1Signal& signal, int n_steps,
                                                std::uint64_t seed) {
  check_spec(spec);
  PentaFactor factor = factor_clamped_operator(theta - 1);
  Eigen::LLT<Eigen::MatrixXd> llt(spec.noise_cov);
  if (llt.info() != Eigen::Success) throw ConfigError("sensor noise covariance is not PD");
  Eigen::MatrixXd noise_chol = llt.matrixL();
  return models::simulate(
      signal, n_steps,
      [&](double x, int, RngStream& rng) {
        MeshSolution sol = solve_with_factor(
            spec, factor, [&](double pos) { return load_density(spec, x, pos); }, theta);
        Eigen::VectorXd z(spec.sensors.size());
        for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = rng.normal();
        return (sol.sensor_values + noise_chol * z).eval();
      },
      seed);
}

}  // namespace mlbpf::beam
