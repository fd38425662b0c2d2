#include "dklgp/predict.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dklgp/error.hpp"
#include "dklgp/log.hpp"

namespace dkl {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

PointMatrix stack_rows(const PointMatrix &top, const PointMatrix &bottom) {
  const Eigen::Index d = std::max(top.cols(), bottom.cols());
  PointMatrix out(top.rows() + bottom.rows(), d);
  if (top.rows() > 0)
    out.topRows(top.rows()) = top;
  if (bottom.rows() > 0)
    out.bottomRows(bottom.rows()) = bottom;
  return out;
}

double log_sum_exp(const Eigen::VectorXd &v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m))
    return m;
  return m + std::log((v.array() - m).exp().sum());
}

} // namespace

std::vector<Eigen::VectorXd> prediction_factor(const KernelSpec &spec,
                                               const PointMatrix &joint_points,
                                               const SparsityPattern &conditioning) {
  spec.validate();
  std::vector<Eigen::VectorXd> cols;
  cols.reserve(conditioning.columns());
  for (std::size_t i = 0; i < conditioning.columns(); ++i) {
    const auto support = conditioning.col(i);
    const Eigen::MatrixXd k = covariance_submatrix(spec, joint_points, support);
    Eigen::MatrixXd chol;
    try {
      chol = cholesky(k);
    } catch (const NotPositiveDefinite &e) {
      throw NotPositiveDefinite("prediction column " + std::to_string(i) + ": " +
                                    e.what(),
                                i);
    }
    Eigen::VectorXd e1 = Eigen::VectorXd::Zero(k.rows());
    e1(0) = 1.0;
    const Eigen::VectorXd c = cholesky_solve(chol, e1);
    cols.push_back(c / std::sqrt(c(0)));
  }
  return cols;
}

Eigen::VectorXd prediction_mean(const Eigen::VectorXd &nu, double mu, double mu_star,
                                const SparsityPattern &conditioning,
                                const std::vector<Eigen::VectorXd> &columns) {
  const std::size_t ns = conditioning.columns();
  if (columns.size() != ns || conditioning.dim() != ns + static_cast<std::size_t>(nu.size()))
    throw ShapeMismatch("prediction_mean: blocks are inconsistent");
  Eigen::VectorXd x(static_cast<Eigen::Index>(ns));
  for (std::size_t r = ns; r-- > 0;) {
    const auto rows = conditioning.col(r);
    const Eigen::VectorXd &c = columns[r];
    double acc = 0.0;
    for (std::size_t e = 1; e < rows.size(); ++e) {
      const std::size_t j = rows[e];
      const double other = j < ns ? x(static_cast<Eigen::Index>(j))
                                  : nu(static_cast<Eigen::Index>(j - ns)) - mu;
      acc += c(static_cast<Eigen::Index>(e)) * other;
    }
    if (c(0) == 0.0)
      throw SingularDiagonal("prediction factor has a zero diagonal", r);
    x(static_cast<Eigen::Index>(r)) = -acc / c(0);
  }
  return (x.array() + mu_star).matrix();
}

PredictionModel::PredictionModel(const VariationalState &state,
                                 const OrderedDesign &design,
                                 const PointMatrix &test_points, double rho)
    : ordering_(prediction_ordering(design, test_points)),
      patterns_(prediction_patterns(ordering_, design, rho)),
      train_size_(design.size()) {
  const std::size_t ns = ordering_.size();
  const std::size_t n = design.size();
  if (static_cast<std::size_t>(state.nu.size()) != n || state.v.size() != n)
    throw ShapeMismatch("variational state does not match the design");

  const PointMatrix joint = stack_rows(ordering_.points, design.points);
  const auto cols = prediction_factor(state.kernel, joint, patterns_.conditioning);

  joint_mean_.resize(static_cast<Eigen::Index>(ns + n));
  joint_mean_.head(static_cast<Eigen::Index>(ns)) = prediction_mean(
      state.nu, state.mean.constant, state.mean.constant, patterns_.conditioning, cols);
  joint_mean_.tail(static_cast<Eigen::Index>(n)) = state.nu;

  const SparseLowerColumns v = state.factor();
  std::vector<std::size_t> col_ptr{0};
  std::vector<std::size_t> rows;
  std::vector<double> values;
  rows.reserve(patterns_.conditioning.nnz() + v.nnz());
  values.reserve(rows.capacity());
  for (std::size_t i = 0; i < ns; ++i) {
    const auto r = patterns_.conditioning.col(i);
    rows.insert(rows.end(), r.begin(), r.end());
    values.insert(values.end(), cols[i].data(), cols[i].data() + cols[i].size());
    col_ptr.push_back(rows.size());
  }
  for (std::size_t k = 0; k < n; ++k) {
    for (const std::size_t r : v.rows(k))
      rows.push_back(r + ns);
    const auto vals = v.values(k);
    values.insert(values.end(), vals.begin(), vals.end());
    col_ptr.push_back(rows.size());
  }
  joint_factor_ = SparseLowerColumns(ns + n, std::move(col_ptr), std::move(rows),
                                     std::move(values));
}

Normal PredictionModel::marginal_summary(const Eigen::VectorXd &a,
                                         VarianceMode mode) const {
  const std::size_t total = joint_size();
  if (static_cast<std::size_t>(a.size()) != total)
    throw ShapeMismatch("summary vector has the wrong length");
  Normal out;
  out.mean = a.dot(joint_mean_);

  std::size_t first = total;
  for (std::size_t k = 0; k < total; ++k)
    if (a(static_cast<Eigen::Index>(k)) != 0.0) {
      first = k;
      break;
    }
  if (first == total)
    return out;

  std::vector<std::size_t> active;
  if (mode == VarianceMode::Reduced) {
    if (first >= test_size() || std::count_if(a.begin(), a.end(),
                                              [](double x) { return x != 0.0; }) != 1)
      throw ConfigError("reduced variances are defined for single test indices only");
    const auto red = patterns_.reduced.col(first);
    const auto cond = patterns_.conditioning.col(first);
    std::set_union(red.begin(), red.end(), cond.begin(), cond.end(),
                   std::back_inserter(active));
  } else {
    active.resize(total - first);
    std::iota(active.begin(), active.end(), first);
  }
  std::vector<double> rhs(active.size());
  for (std::size_t p = 0; p < active.size(); ++p)
    rhs[p] = a(static_cast<Eigen::Index>(active[p]));
  const std::vector<double> x = restricted_forward_solve(joint_factor_, active, rhs);
  double s = 0.0;
  for (const double v : x)
    s += v * v;
  out.variance = s;
  return out;
}

Normal PredictionModel::test_marginal(std::size_t i, VarianceMode mode) const {
  if (i >= test_size())
    throw ShapeMismatch("test index out of range");
  Eigen::VectorXd a = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(joint_size()));
  a(static_cast<Eigen::Index>(i)) = 1.0;
  return marginal_summary(a, mode);
}

GaussHermite gauss_hermite(std::size_t points) {
  if (points == 0)
    throw ConfigError("quadrature needs at least one node");
  const auto m = static_cast<Eigen::Index>(points);
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index k = 1; k < m; ++k) {
    jacobi(k, k - 1) = std::sqrt(static_cast<double>(k));
    jacobi(k - 1, k) = jacobi(k, k - 1);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  GaussHermite out;
  out.nodes = eig.eigenvalues();
  out.weights = eig.eigenvectors().row(0).transpose().array().square().matrix();
  out.weights /= out.weights.sum();
  return out;
}

double response_log_density(const LikelihoodSpec &lik, double scale, double y,
                            const Normal &latent) {
  if (lik.family == LikelihoodFamily::Gaussian) {
    const double v = latent.variance + scale * scale;
    const double r = y - latent.mean;
    return -0.5 * (r * r / v + std::log(v) + kLog2Pi);
  }
  static const GaussHermite rule = gauss_hermite(61);
  const double sd = std::sqrt(std::max(latent.variance, 0.0));
  Eigen::VectorXd terms(rule.nodes.size());
  for (Eigen::Index k = 0; k < rule.nodes.size(); ++k)
    terms(k) = std::log(rule.weights(k)) +
               log_likelihood(lik.family, y, latent.mean + sd * rule.nodes(k), scale);
  return log_sum_exp(terms);
}

double response_mean(const LikelihoodSpec &lik, const Normal &latent) {
  if (lik.family != LikelihoodFamily::BernoulliLogit)
    return latent.mean;
  static const GaussHermite rule = gauss_hermite(61);
  const double sd = std::sqrt(std::max(latent.variance, 0.0));
  double p = 0.0;
  for (Eigen::Index k = 0; k < rule.nodes.size(); ++k)
    p += rule.weights(k) /
         (1.0 + std::exp(-(latent.mean + sd * rule.nodes(k))));
  return p;
}

std::vector<Normal> predict_latent(const VariationalState &state,
                                   const OrderedDesign &design,
                                   const PointMatrix &test_points,
                                   const PredictionOptions &options) {
  const PredictionModel model(state, design, test_points, options.rho);
  const VarianceMode mode = options.mode.value_or(
      model.test_size() > 2000 ? VarianceMode::Reduced : VarianceMode::Exact);
  std::vector<Normal> out(model.test_size());
  for (std::size_t i = 0; i < model.test_size(); ++i)
    out[model.ordering().perm[i]] = model.test_marginal(i, mode);
  return out;
}

} // namespace dkl
