#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dklgp/geometry.hpp"
#include "dklgp/kernels.hpp"
#include "dklgp/linalg.hpp"

namespace dkl {

enum class LikelihoodFamily { Gaussian, StudentT2, BernoulliLogit };

std::string to_string(LikelihoodFamily family);
LikelihoodFamily likelihood_family_from_string(const std::string &name);

struct LikelihoodSpec {
  LikelihoodFamily family = LikelihoodFamily::Gaussian;
  double noise_scale = 0.1; ///< sigma_eps (a scale, not a variance)
  /// Optional per-observation Gaussian noise scales tau_i (original order).
  std::vector<double> obs_scales;

  bool has_noise() const { return family != LikelihoodFamily::BernoulliLogit; }
  double scale_for(std::size_t original_row) const {
    return obs_scales.empty() ? noise_scale : obs_scales[original_row];
  }
  void validate() const;
};

struct Dataset {
  PointMatrix inputs; ///< original order
  Eigen::VectorXd y;
  LikelihoodSpec likelihood;

  std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(inputs.cols()); }
  void validate() const;
};

/// log p(y | f) with noise scale `scale` (ignored for Bernoulli).
double log_likelihood(LikelihoodFamily family, double y, double f, double scale);
inline double log_likelihood(const LikelihoodSpec &spec, double y, double f) {
  return log_likelihood(spec.family, y, f, spec.noise_scale);
}

/// d/df log p(y | f).
double log_likelihood_df(LikelihoodFamily family, double y, double f, double scale);

/// d/d log(scale^2) log p(y | f); zero for Bernoulli.
double log_likelihood_dlogvar(LikelihoodFamily family, double y, double f,
                              double scale);

/// E_q log N(y; f, tau^2) for f ~ N(nu, w_norm^2).
double gaussian_expected_loglik(double nu, double w_norm, double y, double tau);

/// (1/L) sum_l log p(y | nu + w^T z_l), rows of z are the draws.
double mc_expected_loglik(LikelihoodFamily family, double scale, double nu,
                          std::span<const double> w, double y,
                          const Eigen::MatrixXd &z);

/// Gradient of a prior column's dependence on the kernel hyperparameters.
struct KernelGradient {
  Eigen::VectorXd dlog_lengthscales;
  double dlog_variance = 0.0;
};

/// One column of the KL-optimal inverse Cholesky factor, with the local
/// factorization kept for adjoint computations.
struct PriorColumn {
  std::span<const std::size_t> support; ///< S^p_i (ordered indices)
  Eigen::VectorXd values;               ///< L_{S^p_i, i}
  Eigen::MatrixXd chol;                 ///< Cholesky factor of K_{S,S}
  Eigen::VectorXd b;                    ///< K_{S,S}^{-1} e_1

  /// Maps dObjective/dvalues to kernel hyperparameter gradients (log scale).
  KernelGradient backprop(const Eigen::VectorXd &grad_values,
                          const KernelSpec &kernel, const PointMatrix &points) const;
};

/// KL-optimal sparse inverse Cholesky factor of the prior, column by column.
class PriorFactor {
public:
  PriorFactor(const OrderedDesign &design, KernelSpec kernel, MeanSpec mean,
              const SparsityPattern &pattern);

  const OrderedDesign &design() const { return *design_; }
  const KernelSpec &kernel() const { return kernel_; }
  const MeanSpec &mean() const { return mean_; }
  const SparsityPattern &pattern() const { return *pattern_; }
  std::size_t size() const { return design_->size(); }

  /// L_{S^p_i, i} = b_i / sqrt(b_{i,1}), b_i = K_{S,S}^{-1} e_1. A jitter of
  /// 1e-8 * variance is added (with a warning) only if factorization fails.
  PriorColumn column_with_factor(std::size_t i) const;
  Eigen::VectorXd column(std::size_t i) const;

  /// Materializes every column; subsequent column() calls hit the cache.
  void enable_cache();
  bool cached() const { return cache_.has_value(); }

private:
  const OrderedDesign *design_;
  KernelSpec kernel_;
  MeanSpec mean_;
  const SparsityPattern *pattern_;
  std::optional<std::vector<Eigen::VectorXd>> cache_;
};

/// Free-function form of PriorFactor::column.
Eigen::VectorXd prior_column(const PriorFactor &factor, std::size_t i);

/// All columns assembled on the prior pattern.
SparseLowerColumns prior_factor_sparse(const PriorFactor &factor);

/// Dense n x n matrix of the prior factor (tests and oracles only).
Eigen::MatrixXd prior_factor_dense(const PriorFactor &factor);

/// Forward KL(N(0, K) || N(0, (L L^T)^{-1})) for the dense K in design order.
double prior_kl(const PriorFactor &factor, const Eigen::MatrixXd &exact_k);

} // namespace dkl
