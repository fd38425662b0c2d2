#pragma once

#include <functional>

#include <Eigen/Dense>

#include "dklgp/geometry.hpp"
#include "dklgp/kernels.hpp"
#include "dklgp/linalg.hpp"

// Dense reference computations for verification. Nothing here calls the
// solvers or kernel routines of the main library.

namespace dkl::oracle {

/// Kernel matrix between two point sets, evaluated from the closed forms.
Eigen::MatrixXd dense_kernel(const KernelSpec &spec, const PointMatrix &a,
                             const PointMatrix &b);
Eigen::MatrixXd dense_kernel(const KernelSpec &spec, const PointMatrix &a);

/// Gaussian-likelihood GP with per-observation noise variances.
struct DenseGP {
  Eigen::VectorXd mu;
  Eigen::MatrixXd k;
  Eigen::VectorXd noise_var;
  Eigen::VectorXd y;
};

struct Moments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// f | y.
Moments dense_posterior(const DenseGP &g);
/// log N(y; mu, K + diag(noise_var)).
double dense_log_marginal(const DenseGP &g);
/// Predictive f* | y given cross-covariance K(*, o) and K(*, *).
Moments dense_predictive(const DenseGP &g, const Eigen::MatrixXd &k_star_o,
                         const Eigen::MatrixXd &k_star_star, double mu_star);

/// KL(N(m1, s1) || N(m2, s2)).
double kl_gaussians(const Eigen::VectorXd &m1, const Eigen::MatrixXd &s1,
                    const Eigen::VectorXd &m2, const Eigen::MatrixXd &s2);

/// Lower-triangular L with L L^T = K^{-1}.
Eigen::MatrixXd inverse_cholesky(const Eigen::MatrixXd &k);

/// Mean and covariance (V V^T)^{-1} of a sparse-inverse-Cholesky Gaussian.
Moments sic_moments(const Eigen::VectorXd &nu, const Eigen::MatrixXd &v);

/// Central differences with step h on every coordinate.
Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd &)> &f,
                            const Eigen::VectorXd &x, double h);

/// Central differences at h and h/2 combined by Richardson extrapolation.
Eigen::VectorXd fd_gradient_extrapolated(
    const std::function<double(const Eigen::VectorXd &)> &f, const Eigen::VectorXd &x,
    double h);

/// Ancestor sets by transitive closure of the S^q edge relation.
SparsityPattern brute_ancestors(const SparsityPattern &sp, const SparsityPattern &sq);

} // namespace dkl::oracle
