#include "dklgp/kernels.hpp"

#include <cmath>

#include "dklgp/error.hpp"

namespace dkl {

namespace {
const double kSqrt3 = std::sqrt(3.0);
}

std::string to_string(KernelFamily family) {
  switch (family) {
  case KernelFamily::Matern15:
    return "matern-1.5";
  case KernelFamily::SquaredExponential:
    return "squared-exponential";
  case KernelFamily::RationalQuadratic:
    return "rational-quadratic";
  }
  return "unknown";
}

KernelFamily kernel_family_from_string(const std::string &name) {
  if (name == "matern-1.5" || name == "matern15")
    return KernelFamily::Matern15;
  if (name == "squared-exponential" || name == "se" || name == "rbf")
    return KernelFamily::SquaredExponential;
  if (name == "rational-quadratic" || name == "rq")
    return KernelFamily::RationalQuadratic;
  throw ConfigError("unknown kernel family '" + name +
                    "' (expected matern-1.5, squared-exponential or "
                    "rational-quadratic)");
}

void KernelSpec::validate() const {
  if (!(variance > 0.0) || !std::isfinite(variance))
    throw ConfigError("kernel variance must be positive");
  if (lengthscales.size() == 0)
    throw ConfigError("kernel needs at least one length-scale");
  for (Eigen::Index k = 0; k < lengthscales.size(); ++k)
    if (!(lengthscales(k) > 0.0) || !std::isfinite(lengthscales(k)))
      throw ConfigError("kernel length-scales must be positive");
  if (family == KernelFamily::RationalQuadratic && !(rq_alpha > 0.0))
    throw ConfigError("rational-quadratic shape must be positive");
}

double scaled_distance(std::span<const double> x, std::span<const double> xp,
                       std::span<const double> lambda) {
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double t = (x[k] - xp[k]) / lambda[k];
    s += t * t;
  }
  return std::sqrt(s);
}

double scaled_distance(const Eigen::Ref<const Eigen::VectorXd> &x,
                       const Eigen::Ref<const Eigen::VectorXd> &xp,
                       const Eigen::Ref<const Eigen::VectorXd> &lambda) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double t = (x(k) - xp(k)) / lambda(k);
    s += t * t;
  }
  return std::sqrt(s);
}

double kernel_value(const KernelSpec &spec, double q) {
  switch (spec.family) {
  case KernelFamily::Matern15:
    return spec.variance * (1.0 + kSqrt3 * q) * std::exp(-kSqrt3 * q);
  case KernelFamily::SquaredExponential:
    return spec.variance * std::exp(-0.5 * q * q);
  case KernelFamily::RationalQuadratic:
    return spec.variance *
           std::pow(1.0 + q * q / (2.0 * spec.rq_alpha), -spec.rq_alpha);
  }
  return 0.0;
}

double radial_slope(const KernelSpec &spec, double q) {
  switch (spec.family) {
  case KernelFamily::Matern15:
    return 3.0 * std::exp(-kSqrt3 * q);
  case KernelFamily::SquaredExponential:
    return std::exp(-0.5 * q * q);
  case KernelFamily::RationalQuadratic:
    return std::pow(1.0 + q * q / (2.0 * spec.rq_alpha), -spec.rq_alpha - 1.0);
  }
  return 0.0;
}

Eigen::MatrixXd covariance_submatrix(const KernelSpec &spec,
                                     const PointMatrix &points,
                                     std::span<const std::size_t> idx) {
  const auto m = static_cast<Eigen::Index>(idx.size());
  const Eigen::Index d = points.cols();
  Eigen::MatrixXd k(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    k(a, a) = spec.variance;
    const auto ia = static_cast<Eigen::Index>(idx[a]);
    for (Eigen::Index b = a + 1; b < m; ++b) {
      const auto ib = static_cast<Eigen::Index>(idx[b]);
      double s = 0.0;
      for (Eigen::Index c = 0; c < d; ++c) {
        const double t = (points(ia, c) - points(ib, c)) / spec.lengthscales(c);
        s += t * t;
      }
      const double v = kernel_value(spec, std::sqrt(s));
      k(a, b) = v;
      k(b, a) = v;
    }
  }
  return k;
}

Eigen::MatrixXd cross_covariance(const KernelSpec &spec, const PointMatrix &a,
                                 const PointMatrix &b) {
  Eigen::MatrixXd k(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      k(i, j) = kernel_value(
          spec, scaled_distance(a.row(i).transpose(), b.row(j).transpose(),
                                spec.lengthscales));
  return k;
}

} // namespace dkl
