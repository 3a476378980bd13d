#include "mlbpf/bigdata.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <unordered_map>

#include "mlbpf/ensemble.hpp"
#include "mlbpf/errors.hpp"

namespace mlbpf::bigdata {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

Eigen::MatrixXd random_covariance_matrix(int p, std::uint64_t seed) {
  RngStream rng = substream(seed, 0, Phase::matrix, 0);
  Eigen::MatrixXd a(p, p);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) a(i, j) = rng.uniform();
  }
  Eigen::MatrixXd b = a * a.transpose();
  Eigen::MatrixXd sigma(p, p);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) sigma(i, j) = b(i, j) * std::exp(-2.0 * std::abs(i - j));
  }
  return sigma;
}

}  // namespace

ObservationCovariance generate_covariance(int p, std::uint64_t seed) {
  if (p < 1) throw ConfigError("observation dimension must be >= 1");
  for (int attempt = 0; attempt < 10; ++attempt) {
    Eigen::MatrixXd sigma = random_covariance_matrix(p, seed + attempt);
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success) {
      std::fprintf(stderr, "covariance factorization failed for seed %llu, retrying\n",
                   static_cast<unsigned long long>(seed + attempt));
      continue;
    }
    ObservationCovariance cov;
    cov.p = p;
    cov.full = std::move(sigma);
    cov.diag = cov.full.diagonal();
    cov.chol_lower = llt.matrixL();
    cov.logdet_full = 2.0 * cov.chol_lower.diagonal().array().log().sum();
    cov.logdet_diag = cov.diag.array().log().sum();
    cov.seeds_tried = attempt + 1;
    return cov;
  }
  throw ConfigError("covariance factorization failed for 10 consecutive seeds");
}

void save_covariance(const ObservationCovariance& cov, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  const std::uint64_t dim = static_cast<std::uint64_t>(cov.p);
  out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
  for (int i = 0; i < cov.p; ++i) {
    for (int j = 0; j < cov.p; ++j) {
      const double v = cov.full(i, j);
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
  if (!out) throw ConfigError("write failed for " + path);
}

ObservationCovariance load_covariance(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::uint64_t dim = 0;
  in.read(reinterpret_cast<char*>(&dim), sizeof(dim));
  if (!in || dim == 0) throw ConfigError("bad covariance header in " + path);
  const int p = static_cast<int>(dim);
  Eigen::MatrixXd sigma(p, p);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) {
      double v = 0.0;
      in.read(reinterpret_cast<char*>(&v), sizeof(v));
      sigma(i, j) = v;
    }
  }
  if (!in) throw ConfigError("truncated covariance file " + path);
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw ConfigError("covariance in " + path + " is not PD");
  ObservationCovariance cov;
  cov.p = p;
  cov.full = std::move(sigma);
  cov.diag = cov.full.diagonal();
  cov.chol_lower = llt.matrixL();
  cov.logdet_full = 2.0 * cov.chol_lower.diagonal().array().log().sum();
  cov.logdet_diag = cov.diag.array().log().sum();
  return cov;
}

double loglik_full(double x, const Eigen::VectorXd& y, const ObservationCovariance& cov) {
  if (y.size() != cov.p) throw ConfigError("observation length does not match covariance");
  if (!std::isfinite(x)) throw EvaluationError("non-finite state", 1, -1);
  Eigen::VectorXd r = y.array() - x;
  cov.chol_lower.triangularView<Eigen::Lower>().solveInPlace(r);
  return -0.5 * r.squaredNorm();
}

double loglik_diag(double x, const Eigen::VectorXd& y, const ObservationCovariance& cov) {
  if (y.size() != cov.p) throw ConfigError("observation length does not match covariance");
  if (!std::isfinite(x)) throw EvaluationError("non-finite state", 0, -1);
  const double* yv = y.data();
  const double* dv = cov.diag.data();
  double acc = 0.0;
  for (int k = 0; k < cov.p; ++k) {
    if (dv[k] == 0.0) throw ConfigError("zero diagonal entry in covariance");
    const double r = yv[k] - x;
    acc += r * r / dv[k];
  }
  return -0.5 * acc;
}

ScalingCorrection fit_scaling(std::span<const double> g0_values,
                              std::span<const double> g1_values) {
  double num = 0.0, denom = 0.0;
  for (std::size_t i = 0; i < g0_values.size(); ++i) {
    num += g0_values[i] * g1_values[i];
    denom += g0_values[i] * g0_values[i];
  }
  ScalingCorrection fit;
  if (denom <= 0.0) {
    fit.c = 1.0;
    fit.degenerate = true;
  } else {
    fit.c = num / denom;
  }
  return fit;
}

double fit_scaling_log(std::span<const double> log_g0, std::span<const double> log_g1,
                       bool* degenerate) {
  // log( sum exp(l0+l1) ) - log( sum exp(2*l0) ), each sum shifted by its max.
  const double neg_inf = -std::numeric_limits<double>::infinity();
  double max_num = neg_inf, max_den = neg_inf;
  for (std::size_t i = 0; i < log_g0.size(); ++i) {
    max_num = std::max(max_num, log_g0[i] + log_g1[i]);
    max_den = std::max(max_den, 2.0 * log_g0[i]);
  }
  if (degenerate) *degenerate = false;
  if (max_den == neg_inf || max_num == neg_inf) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < log_g0.size(); ++i) {
    num += std::exp(log_g0[i] + log_g1[i] - max_num);
    den += std::exp(2.0 * log_g0[i] - max_den);
  }
  return std::log(num) + max_num - std::log(den) - max_den;
}

namespace {

struct ScalingState {
  double log_c = 0.0;
  int cached_step = -1;
  std::unordered_map<std::uint64_t, double> top_cache;  // state bits -> exact log-likelihood
};

double log_g_full(double x, const Eigen::VectorXd& y, const ObservationCovariance& cov) {
  return loglik_full(x, y, cov) - 0.5 * cov.logdet_full - 0.5 * cov.p * kLog2Pi;
}

double log_g_diag(double x, const Eigen::VectorXd& y, const ObservationCovariance& cov) {
  return loglik_diag(x, y, cov) - 0.5 * cov.logdet_diag - 0.5 * cov.p * kLog2Pi;
}

}  // namespace

HmmModel<double> build_bigdata_model(std::shared_ptr<const ObservationCovariance> cov,
                                     std::shared_ptr<const std::vector<Eigen::VectorXd>> obs,
                                     const models::Ar1Signal& signal,
                                     const BigdataModelOptions& options) {
  auto state = std::make_shared<ScalingState>();

  HmmModel<double> model;
  model.scale = LikelihoodScale::log_scale;
  model.num_observations = static_cast<int>(obs->size());
  model.sample_prior = [signal](RngStream& rng) { return models::ar1_prior(signal, rng); };
  model.sample_transition = [signal](double x, RngStream& rng) {
    return models::ar1_step(x, signal.sigma, rng);
  };

  model.level_likelihoods.push_back([cov, obs, state](double x, int step) {
    return state->log_c + log_g_diag(x, (*obs)[step], *cov);
  });
  model.level_likelihoods.push_back([cov, obs, state](double x, int step) {
    if (state->cached_step == step) {
      auto it = state->top_cache.find(state_hash_key(x));
      if (it != state->top_cache.end()) return it->second;
    }
    return log_g_full(x, (*obs)[step], *cov);
  });

  if (options.scaling_correction) {
    model.calibrate = [cov, obs, state](std::span<const double> top_states, int step) {
      const Eigen::VectorXd& y = (*obs)[step];
      std::vector<double> l0(top_states.size()), l1(top_states.size());
      state->top_cache.clear();
      state->top_cache.reserve(top_states.size() * 2);
      for (std::size_t i = 0; i < top_states.size(); ++i) {
        l0[i] = log_g_diag(top_states[i], y, *cov);
        l1[i] = log_g_full(top_states[i], y, *cov);
        state->top_cache.emplace(state_hash_key(top_states[i]), l1[i]);
      }
      state->cached_step = step;
      state->log_c = fit_scaling_log(l0, l1);
    };
  }
  return model;
}

HmmModel<double> build_bpf_model(std::shared_ptr<const ObservationCovariance> cov,
                                 std::shared_ptr<const std::vector<Eigen::VectorXd>> obs,
                                 const models::Ar1Signal& signal) {
  HmmModel<double> model;
  model.scale = LikelihoodScale::log_scale;
  model.num_observations = static_cast<int>(obs->size());
  model.sample_prior = [signal](RngStream& rng) { return models::ar1_prior(signal, rng); };
  model.sample_transition = [signal](double x, RngStream& rng) {
    return models::ar1_step(x, signal.sigma, rng);
  };
  model.level_likelihoods.push_back([cov, obs](double x, int step) {
    return log_g_full(x, (*obs)[step], *cov);
  });
  return model;
}

HmmModel<double> build_diag_model(std::shared_ptr<const ObservationCovariance> cov,
                                  std::shared_ptr<const std::vector<Eigen::VectorXd>> obs,
                                  const models::Ar1Signal& signal) {
  HmmModel<double> model;
  model.scale = LikelihoodScale::log_scale;
  model.num_observations = static_cast<int>(obs->size());
  model.sample_prior = [signal](RngStream& rng) { return models::ar1_prior(signal, rng); };
  model.sample_transition = [signal](double x, RngStream& rng) {
    return models::ar1_step(x, signal.sigma, rng);
  };
  model.level_likelihoods.push_back([cov, obs](double x, int step) {
    return log_g_diag(x, (*obs)[step], *cov);
  });
  return model;
}

models::SyntheticTrajectory simulate_trajectory(const ObservationCovariance& cov,
                                                const models::Ar1Signal& signal, int n_steps,
                                                std::uint64_t seed) {
  return models::simulate(
      signal, n_steps,
      [&cov](double x, int, RngStream& rng) {
        Eigen::VectorXd z(cov.p);
        for (int k = 0; k < cov.p; ++k) z[k] = rng.normal();
        Eigen::VectorXd y = cov.chol_lower.triangularView<Eigen::Lower>() * z;
        y.array() += x;
        return y;
      },
      seed);
}

}  // namespace mlbpf::bigdata
