#include "dklgp/model.hpp"

#include <cmath>
#include <numbers>

#include "dklgp/error.hpp"
#include "dklgp/log.hpp"

namespace dkl {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);
// log Gamma(3/2) - log Gamma(1)
const double kStudentConst = std::lgamma(1.5);

double softplus(double f) {
  return f > 0.0 ? f + std::log1p(std::exp(-f)) : std::log1p(std::exp(f));
}

double sigmoid(double f) {
  if (f >= 0.0)
    return 1.0 / (1.0 + std::exp(-f));
  const double e = std::exp(f);
  return e / (1.0 + e);
}

} // namespace

std::string to_string(LikelihoodFamily family) {
  switch (family) {
  case LikelihoodFamily::Gaussian:
    return "gaussian";
  case LikelihoodFamily::StudentT2:
    return "student-t-2";
  case LikelihoodFamily::BernoulliLogit:
    return "bernoulli-logit";
  }
  return "unknown";
}

LikelihoodFamily likelihood_family_from_string(const std::string &name) {
  if (name == "gaussian")
    return LikelihoodFamily::Gaussian;
  if (name == "student-t-2" || name == "student-t" || name == "t2")
    return LikelihoodFamily::StudentT2;
  if (name == "bernoulli-logit" || name == "bernoulli" || name == "logit")
    return LikelihoodFamily::BernoulliLogit;
  throw ConfigError("unknown likelihood '" + name +
                    "' (expected gaussian, student-t-2 or bernoulli-logit)");
}

void LikelihoodSpec::validate() const {
  if (has_noise() && !(noise_scale > 0.0 && std::isfinite(noise_scale)))
    throw ConfigError("noise scale must be positive");
  if (!obs_scales.empty() && family != LikelihoodFamily::Gaussian)
    throw ConfigError("per-observation scales are only supported for gaussian");
  for (double t : obs_scales)
    if (!(t > 0.0))
      throw ConfigError("per-observation scales must be positive");
}

void Dataset::validate() const {
  if (size() < 1)
    throw ConfigError("dataset is empty");
  if (static_cast<std::size_t>(y.size()) != size())
    throw ShapeMismatch("inputs and responses differ in length");
  if (!inputs.allFinite() || !y.allFinite())
    throw ConfigError("dataset contains non-finite values");
  likelihood.validate();
  if (!likelihood.obs_scales.empty() && likelihood.obs_scales.size() != size())
    throw ShapeMismatch("per-observation scales do not match the data size");
  if (likelihood.family == LikelihoodFamily::BernoulliLogit)
    for (Eigen::Index i = 0; i < y.size(); ++i)
      if (y(i) != 0.0 && y(i) != 1.0)
        throw ConfigError("bernoulli responses must be 0 or 1");
}

double log_likelihood(LikelihoodFamily family, double y, double f, double scale) {
  switch (family) {
  case LikelihoodFamily::Gaussian: {
    const double r = y - f;
    return -0.5 * (kLog2Pi + std::log(scale * scale)) - r * r / (2.0 * scale * scale);
  }
  case LikelihoodFamily::StudentT2: {
    const double r = y - f;
    return kStudentConst - 0.5 * (kLog2Pi + std::log(scale * scale)) -
           1.5 * std::log1p(r * r / (2.0 * scale * scale));
  }
  case LikelihoodFamily::BernoulliLogit:
    return y * f - softplus(f);
  }
  return 0.0;
}

double log_likelihood_df(LikelihoodFamily family, double y, double f, double scale) {
  switch (family) {
  case LikelihoodFamily::Gaussian:
    return (y - f) / (scale * scale);
  case LikelihoodFamily::StudentT2: {
    const double r = y - f;
    return 1.5 * r / (scale * scale + 0.5 * r * r);
  }
  case LikelihoodFamily::BernoulliLogit:
    return y - sigmoid(f);
  }
  return 0.0;
}

double log_likelihood_dlogvar(LikelihoodFamily family, double y, double f,
                              double scale) {
  switch (family) {
  case LikelihoodFamily::Gaussian: {
    const double r = y - f;
    return -0.5 + r * r / (2.0 * scale * scale);
  }
  case LikelihoodFamily::StudentT2: {
    const double u = (y - f) * (y - f) / (2.0 * scale * scale);
    return -0.5 + 1.5 * u / (1.0 + u);
  }
  case LikelihoodFamily::BernoulliLogit:
    return 0.0;
  }
  return 0.0;
}

double gaussian_expected_loglik(double nu, double w_norm, double y, double tau) {
  const double r = y - nu;
  const double t2 = tau * tau;
  return -0.5 * ((r * r + w_norm * w_norm) / t2 + std::log(t2) + kLog2Pi);
}

double mc_expected_loglik(LikelihoodFamily family, double scale, double nu,
                          std::span<const double> w, double y,
                          const Eigen::MatrixXd &z) {
  if (static_cast<std::size_t>(z.cols()) != w.size() || z.rows() < 1)
    throw ShapeMismatch("mc_expected_loglik: draws must be L x |w| with L >= 1");
  double acc = 0.0;
  for (Eigen::Index l = 0; l < z.rows(); ++l) {
    double f = nu;
    for (std::size_t k = 0; k < w.size(); ++k)
      f += w[k] * z(l, static_cast<Eigen::Index>(k));
    acc += log_likelihood(family, y, f, scale);
  }
  return acc / static_cast<double>(z.rows());
}

KernelGradient PriorColumn::backprop(const Eigen::VectorXd &grad_values,
                                     const KernelSpec &kernel,
                                     const PointMatrix &points) const {
  const double b0 = b(0);
  const double inv_sqrt = 1.0 / std::sqrt(b0);
  Eigen::VectorXd gb = grad_values * inv_sqrt;
  gb(0) -= 0.5 * grad_values.dot(b) * inv_sqrt / b0;
  const Eigen::VectorXd u = cholesky_solve(chol, gb);

  KernelGradient out;
  out.dlog_variance = -u(0);
  const Eigen::Index d = points.cols();
  out.dlog_lengthscales = Eigen::VectorXd::Zero(d);
  const auto m = static_cast<Eigen::Index>(support.size());
  for (Eigen::Index a = 0; a < m; ++a) {
    const auto ia = static_cast<Eigen::Index>(support[a]);
    for (Eigen::Index c = a + 1; c < m; ++c) {
      const auto ic = static_cast<Eigen::Index>(support[c]);
      const double weight = -(u(a) * b(c) + u(c) * b(a));
      double q2 = 0.0;
      for (Eigen::Index k = 0; k < d; ++k) {
        const double t = (points(ia, k) - points(ic, k)) / kernel.lengthscales(k);
        q2 += t * t;
      }
      const double slope = kernel.variance * radial_slope(kernel, std::sqrt(q2));
      for (Eigen::Index k = 0; k < d; ++k) {
        const double t = (points(ia, k) - points(ic, k)) / kernel.lengthscales(k);
        out.dlog_lengthscales(k) += weight * slope * t * t;
      }
    }
  }
  return out;
}

PriorFactor::PriorFactor(const OrderedDesign &design, KernelSpec kernel,
                         MeanSpec mean, const SparsityPattern &pattern)
    : design_(&design), kernel_(std::move(kernel)), mean_(mean),
      pattern_(&pattern) {
  kernel_.validate();
  if (pattern.dim() != design.size() || pattern.columns() != design.size())
    throw ShapeMismatch("prior pattern does not match the design size");
  if (kernel_.dim() != design.dim())
    throw ShapeMismatch("kernel length-scales do not match the input dimension");
}

PriorColumn PriorFactor::column_with_factor(std::size_t i) const {
  PriorColumn col;
  col.support = pattern_->col(i);
  Eigen::MatrixXd k = covariance_submatrix(kernel_, design_->points, col.support);
  try {
    col.chol = cholesky(k);
  } catch (const NotPositiveDefinite &) {
    log_warning("prior column " + std::to_string(i) +
                ": kernel submatrix not positive definite, adding jitter");
    k.diagonal().array() += 1e-8 * kernel_.variance;
    try {
      col.chol = cholesky(k);
    } catch (const NotPositiveDefinite &e) {
      throw NotPositiveDefinite("prior column " + std::to_string(i) + ": " + e.what(),
                                i);
    }
  }
  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(k.rows());
  e1(0) = 1.0;
  col.b = cholesky_solve(col.chol, e1);
  col.values = col.b / std::sqrt(col.b(0));
  return col;
}

Eigen::VectorXd PriorFactor::column(std::size_t i) const {
  if (cache_)
    return (*cache_)[i];
  return column_with_factor(i).values;
}

void PriorFactor::enable_cache() {
  std::vector<Eigen::VectorXd> cols;
  cols.reserve(size());
  for (std::size_t i = 0; i < size(); ++i)
    cols.push_back(column_with_factor(i).values);
  cache_ = std::move(cols);
}

Eigen::VectorXd prior_column(const PriorFactor &factor, std::size_t i) {
  if (i >= factor.size())
    throw ShapeMismatch("prior_column: index out of range");
  return factor.column(i);
}

SparseLowerColumns prior_factor_sparse(const PriorFactor &factor) {
  SparseLowerColumns l(factor.pattern().to_vectors());
  for (std::size_t i = 0; i < factor.size(); ++i) {
    const Eigen::VectorXd c = factor.column(i);
    auto vals = l.values(i);
    for (std::size_t e = 0; e < vals.size(); ++e)
      vals[e] = c(static_cast<Eigen::Index>(e));
  }
  return l;
}

Eigen::MatrixXd prior_factor_dense(const PriorFactor &factor) {
  return prior_factor_sparse(factor).to_dense();
}

double prior_kl(const PriorFactor &factor, const Eigen::MatrixXd &exact_k) {
  const Eigen::MatrixXd l = prior_factor_dense(factor);
  const auto n = l.rows();
  if (exact_k.rows() != n || exact_k.cols() != n)
    throw ShapeMismatch("prior_kl: covariance size mismatch");
  const Eigen::MatrixXd c = cholesky(exact_k);
  // tr(L L^T K) = ||C^T L||_F^2 ; log det(L L^T K) = 2 sum log L_ii + 2 sum log C_ii
  const double trace = (c.transpose() * l).squaredNorm();
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    logdet += 2.0 * (std::log(l(i, i)) + std::log(c(i, i)));
  return 0.5 * (trace - logdet - static_cast<double>(n));
}

} // namespace dkl
