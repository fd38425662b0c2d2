#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "dklgp/geometry.hpp"
#include "dklgp/kernels.hpp"
#include "dklgp/linalg.hpp"
#include "dklgp/model.hpp"
#include "dklgp/vi.hpp"

namespace dkl {

/// Columns V*_{S*_i, i} = c_i / sqrt(c_{i,1}) with c_i = K(S*_i, S*_i)^{-1} e_1,
/// over the rows of `joint_points` (test first, then training).
std::vector<Eigen::VectorXd> prediction_factor(const KernelSpec &spec,
                                               const PointMatrix &joint_points,
                                               const SparsityPattern &conditioning);

/// nu* = mu* - (V**)^{-T} (V^{o*})^T (nu - mu). `columns` follow `conditioning`
/// and training rows in it are offset by the number of test points.
Eigen::VectorXd prediction_mean(const Eigen::VectorXd &nu, double mu, double mu_star,
                                const SparsityPattern &conditioning,
                                const std::vector<Eigen::VectorXd> &columns);

enum class VarianceMode { Exact, Reduced };

struct Normal {
  double mean = 0.0;
  double variance = 0.0;
};

/// Joint posterior over (test, training) latent values.
class PredictionModel {
public:
  /// `state` and `design` describe the trained posterior; `rho` sets S*.
  PredictionModel(const VariationalState &state, const OrderedDesign &design,
                  const PointMatrix &test_points, double rho);

  std::size_t test_size() const { return ordering_.size(); }
  std::size_t train_size() const { return train_size_; }
  std::size_t joint_size() const { return joint_factor_.size(); }

  const PredictionOrdering &ordering() const { return ordering_; }
  const PredictionPatterns &patterns() const { return patterns_; }
  /// Joint mean (nu*, nu).
  const Eigen::VectorXd &joint_mean() const { return joint_mean_; }
  /// Joint factor (V*, (0; V)) with exponentiated diagonal.
  const SparseLowerColumns &joint_factor() const { return joint_factor_; }

  /// N(a^T nu, ||V^{-1} a||^2). Reduced mode takes a = e_i for a test index.
  Normal marginal_summary(const Eigen::VectorXd &a, VarianceMode mode) const;
  /// Marginal of the i-th ordered test point.
  Normal test_marginal(std::size_t i, VarianceMode mode) const;

private:
  PredictionOrdering ordering_;
  PredictionPatterns patterns_;
  std::size_t train_size_ = 0;
  Eigen::VectorXd joint_mean_;
  SparseLowerColumns joint_factor_;
};

/// Gauss-Hermite rule for a standard normal weight (nodes x_k, weights sum 1).
struct GaussHermite {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};
GaussHermite gauss_hermite(std::size_t points);

/// log p(y*) for a response given a latent N(mean, variance): exact for the
/// gaussian likelihood, 61-node quadrature otherwise.
double response_log_density(const LikelihoodSpec &lik, double scale, double y,
                            const Normal &latent);

/// Predictive response mean (P(y = 1) for Bernoulli).
double response_mean(const LikelihoodSpec &lik, const Normal &latent);

struct PredictionOptions {
  double rho = 2.0;
  std::optional<VarianceMode> mode; ///< default: exact up to 2000 test points
};

/// Latent marginals at `test_points`, in their original row order.
std::vector<Normal> predict_latent(const VariationalState &state,
                                   const OrderedDesign &design,
                                   const PointMatrix &test_points,
                                   const PredictionOptions &options);

} // namespace dkl
