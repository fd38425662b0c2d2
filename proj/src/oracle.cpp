#include "dklgp/oracle.hpp"

#include <cmath>
#include <vector>

#include "dklgp/error.hpp"

namespace dkl::oracle {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double base_kernel(const KernelSpec &spec, double q) {
  switch (spec.family) {
  case KernelFamily::Matern15:
    return spec.variance * (1.0 + std::sqrt(3.0) * q) * std::exp(-std::sqrt(3.0) * q);
  case KernelFamily::SquaredExponential:
    return spec.variance * std::exp(-0.5 * q * q);
  case KernelFamily::RationalQuadratic:
    return spec.variance * std::pow(1.0 + q * q / (2.0 * spec.rq_alpha), -spec.rq_alpha);
  }
  return 0.0;
}

Eigen::LLT<Eigen::MatrixXd> factor(const Eigen::MatrixXd &a, const char *what) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefinite(std::string(what) + ": matrix is not positive definite", 0);
  return llt;
}

double log_det(const Eigen::LLT<Eigen::MatrixXd> &llt) {
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

} // namespace

Eigen::MatrixXd dense_kernel(const KernelSpec &spec, const PointMatrix &a,
                             const PointMatrix &b) {
  Eigen::MatrixXd k(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      const Eigen::VectorXd t =
          (a.row(i) - b.row(j)).transpose().cwiseQuotient(spec.lengthscales);
      k(i, j) = base_kernel(spec, t.norm());
    }
  return k;
}

Eigen::MatrixXd dense_kernel(const KernelSpec &spec, const PointMatrix &a) {
  return dense_kernel(spec, a, a);
}

Moments dense_posterior(const DenseGP &g) {
  const Eigen::MatrixXd c = g.k + Eigen::MatrixXd(g.noise_var.asDiagonal());
  const auto llt = factor(c, "dense_posterior");
  Moments out;
  out.mean = g.mu + g.k * llt.solve(g.y - g.mu);
  out.cov = g.k - g.k * llt.solve(g.k);
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

double dense_log_marginal(const DenseGP &g) {
  const Eigen::MatrixXd c = g.k + Eigen::MatrixXd(g.noise_var.asDiagonal());
  const auto llt = factor(c, "dense_log_marginal");
  const Eigen::VectorXd r = g.y - g.mu;
  return -0.5 * (r.dot(llt.solve(r)) + log_det(llt) +
                 static_cast<double>(r.size()) * kLog2Pi);
}

Moments dense_predictive(const DenseGP &g, const Eigen::MatrixXd &k_star_o,
                         const Eigen::MatrixXd &k_star_star, double mu_star) {
  const Eigen::MatrixXd c = g.k + Eigen::MatrixXd(g.noise_var.asDiagonal());
  const auto llt = factor(c, "dense_predictive");
  Moments out;
  out.mean = (k_star_o * llt.solve(g.y - g.mu)).array() + mu_star;
  out.cov = k_star_star - k_star_o * llt.solve(k_star_o.transpose());
  return out;
}

double kl_gaussians(const Eigen::VectorXd &m1, const Eigen::MatrixXd &s1,
                    const Eigen::VectorXd &m2, const Eigen::MatrixXd &s2) {
  const auto l1 = factor(s1, "kl_gaussians");
  const auto l2 = factor(s2, "kl_gaussians");
  const Eigen::VectorXd d = m2 - m1;
  const double trace = l2.solve(s1).trace();
  return 0.5 * (trace + d.dot(l2.solve(d)) - static_cast<double>(m1.size()) +
                log_det(l2) - log_det(l1));
}

Eigen::MatrixXd inverse_cholesky(const Eigen::MatrixXd &k) {
  const Eigen::Index n = k.rows();
  const Eigen::MatrixXd rev = k.reverse();
  const auto llt = factor(rev, "inverse_cholesky");
  const Eigen::MatrixXd u = llt.matrixL().toDenseMatrix().reverse(); // upper, K = U U^T
  return u.triangularView<Eigen::Upper>()
      .solve(Eigen::MatrixXd::Identity(n, n))
      .transpose();
}

Moments sic_moments(const Eigen::VectorXd &nu, const Eigen::MatrixXd &v) {
  Moments out;
  out.mean = nu;
  const Eigen::MatrixXd vinv = v.triangularView<Eigen::Lower>().solve(
      Eigen::MatrixXd::Identity(v.rows(), v.cols()));
  out.cov = vinv.transpose() * vinv;
  return out;
}

Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd &)> &f,
                            const Eigen::VectorXd &x, double h) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    probe(k) = x(k) + h;
    const double up = f(probe);
    probe(k) = x(k) - h;
    const double down = f(probe);
    probe(k) = x(k);
    g(k) = (up - down) / (2.0 * h);
  }
  return g;
}

Eigen::VectorXd fd_gradient_extrapolated(
    const std::function<double(const Eigen::VectorXd &)> &f, const Eigen::VectorXd &x,
    double h) {
  return (4.0 * fd_gradient(f, x, 0.5 * h) - fd_gradient(f, x, h)) / 3.0;
}

SparsityPattern brute_ancestors(const SparsityPattern &sp, const SparsityPattern &sq) {
  const std::size_t n = sp.columns();
  // reach[a * n + b]: a path from a into b exists along S^q edges.
  std::vector<char> reach(n * n, 0);
  for (std::size_t b = 0; b < n; ++b) {
    reach[b * n + b] = 1;
    for (const std::size_t a : sq.off_diagonal(b))
      reach[a * n + b] = 1;
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t a = 0; a < n; ++a)
      if (reach[a * n + k])
        for (std::size_t b = 0; b < n; ++b)
          if (reach[k * n + b])
            reach[a * n + b] = 1;

  SparsityPattern out(n, PatternKind::FullAncestor);
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < n; ++i) {
    members.clear();
    for (std::size_t a = i; a < n; ++a) {
      bool hit = false;
      for (const std::size_t s : sp.col(i))
        if (reach[a * n + s]) {
          hit = true;
          break;
        }
      if (hit)
        members.push_back(a);
    }
    out.push_column(members);
  }
  return out;
}

} // namespace dkl::oracle
