#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dkl {

/// Points are stored one per row.
using PointMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class KernelFamily { Matern15, SquaredExponential, RationalQuadratic };

std::string to_string(KernelFamily family);
KernelFamily kernel_family_from_string(const std::string &name);

/// Isotropic base kernel applied to ARD-scaled distances.
struct KernelSpec {
  KernelFamily family = KernelFamily::Matern15;
  double variance = 1.0;
  Eigen::VectorXd lengthscales;
  double rq_alpha = 1.0;

  std::size_t dim() const { return static_cast<std::size_t>(lengthscales.size()); }
  /// Throws ConfigError unless every scale parameter is strictly positive.
  void validate() const;
};

struct MeanSpec {
  double constant = 0.0;
};

/// Euclidean distance between x / lambda and x' / lambda (elementwise).
double scaled_distance(std::span<const double> x, std::span<const double> xp,
                       std::span<const double> lambda);

double scaled_distance(const Eigen::Ref<const Eigen::VectorXd> &x,
                       const Eigen::Ref<const Eigen::VectorXd> &xp,
                       const Eigen::Ref<const Eigen::VectorXd> &lambda);

/// Kernel value at scaled distance q:
///   matern-1.5          s2 (1 + sqrt3 q) exp(-sqrt3 q)
///   squared-exponential s2 exp(-q^2 / 2)
///   rational-quadratic  s2 (1 + q^2 / (2 alpha))^(-alpha)
double kernel_value(const KernelSpec &spec, double q);

/// -(1/q) dk/dq of the unit-variance kernel, finite at q = 0. The derivative
/// of a kernel entry with respect to log(lambda_k) equals
/// variance * radial_slope(q) * (delta_k / lambda_k)^2.
double radial_slope(const KernelSpec &spec, double q);

/// Kernel matrix over the rows of `points` selected by `idx`.
Eigen::MatrixXd covariance_submatrix(const KernelSpec &spec,
                                     const PointMatrix &points,
                                     std::span<const std::size_t> idx);

/// Cross-covariance between two point sets (rows).
Eigen::MatrixXd cross_covariance(const KernelSpec &spec, const PointMatrix &a,
                                 const PointMatrix &b);

} // namespace dkl
