#include "dklgp/linalg.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace dkl {

Eigen::MatrixXd cholesky(const Eigen::MatrixXd &a) {
  const Eigen::Index n = a.rows();
  if (n < 1 || a.cols() != n)
    throw ShapeMismatch("cholesky: matrix must be square with dimension >= 1");
  const double scale = a.cwiseAbs().maxCoeff();
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = j + 1; i < n; ++i)
      if (std::abs(a(i, j) - a(j, i)) > 1e-12 * scale)
        throw Error("cholesky: matrix is not symmetric");

  Eigen::MatrixXd c = a.triangularView<Eigen::Lower>();
  for (Eigen::Index k = 0; k < n; ++k) {
    const double pivot = c(k, k);
    if (!(pivot > 0.0))
      throw NotPositiveDefinite("cholesky: non-positive pivot at index " +
                                    std::to_string(k),
                                static_cast<std::size_t>(k));
    const double root = std::sqrt(pivot);
    c(k, k) = root;
    for (Eigen::Index i = k + 1; i < n; ++i)
      c(i, k) /= root;
    // rank-one update of the trailing lower triangle
    for (Eigen::Index j = k + 1; j < n; ++j) {
      const double cjk = c(j, k);
      for (Eigen::Index i = j; i < n; ++i)
        c(i, j) -= c(i, k) * cjk;
    }
  }
  return c;
}

Eigen::VectorXd cholesky_solve(const Eigen::MatrixXd &chol,
                               const Eigen::VectorXd &b) {
  const Eigen::Index n = chol.rows();
  if (b.size() != n)
    throw ShapeMismatch("cholesky_solve: dimension mismatch");
  Eigen::VectorXd x = b;
  for (Eigen::Index i = 0; i < n; ++i) {
    double s = x(i);
    for (Eigen::Index k = 0; k < i; ++k)
      s -= chol(i, k) * x(k);
    x(i) = s / chol(i, i);
  }
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    double s = x(i);
    for (Eigen::Index k = i + 1; k < n; ++k)
      s -= chol(k, i) * x(k);
    x(i) = s / chol(i, i);
  }
  return x;
}

Eigen::VectorXd solve_spd(const Eigen::MatrixXd &a, const Eigen::VectorXd &b) {
  if (b.size() != a.rows())
    throw ShapeMismatch("solve_spd: dimension mismatch");
  return cholesky_solve(cholesky(a), b);
}

SparseLowerColumns::SparseLowerColumns(
    const std::vector<std::vector<std::size_t>> &cols)
    : n_(cols.size()) {
  col_ptr_.assign(1, 0);
  col_ptr_.reserve(n_ + 1);
  for (const auto &c : cols) {
    rows_.insert(rows_.end(), c.begin(), c.end());
    col_ptr_.push_back(rows_.size());
  }
  values_.assign(rows_.size(), 0.0);
  check_structure();
}

SparseLowerColumns::SparseLowerColumns(std::size_t n,
                                       std::vector<std::size_t> col_ptr,
                                       std::vector<std::size_t> rows,
                                       std::vector<double> values)
    : n_(n), col_ptr_(std::move(col_ptr)), rows_(std::move(rows)),
      values_(std::move(values)) {
  check_structure();
}

void SparseLowerColumns::check_structure() const {
  if (col_ptr_.size() != n_ + 1 || col_ptr_.front() != 0 ||
      col_ptr_.back() != rows_.size() || values_.size() != rows_.size())
    throw ShapeMismatch("SparseLowerColumns: inconsistent array sizes");
  for (std::size_t i = 0; i < n_; ++i) {
    if (col_ptr_[i + 1] <= col_ptr_[i] || rows_[col_ptr_[i]] != i)
      throw ShapeMismatch("SparseLowerColumns: column " + std::to_string(i) +
                          " must start with its diagonal");
    for (std::size_t e = col_ptr_[i] + 1; e < col_ptr_[i + 1]; ++e)
      if (rows_[e] <= rows_[e - 1] || rows_[e] >= n_)
        throw ShapeMismatch("SparseLowerColumns: rows of column " +
                            std::to_string(i) + " not strictly increasing");
  }
}

Eigen::MatrixXd SparseLowerColumns::to_dense() const {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_),
                                            static_cast<Eigen::Index>(n_));
  for (std::size_t k = 0; k < n_; ++k)
    for (std::size_t e = col_ptr_[k]; e < col_ptr_[k + 1]; ++e)
      m(static_cast<Eigen::Index>(rows_[e]), static_cast<Eigen::Index>(k)) =
          values_[e];
  return m;
}

void ActiveSetIndex::bind(std::span<const std::size_t> active) {
  for (std::size_t p = 0; p < active.size(); ++p)
    pos_[active[p]] = static_cast<long>(p);
}

void ActiveSetIndex::unbind(std::span<const std::size_t> active) {
  for (const auto j : active)
    pos_[j] = -1;
}

std::vector<double> restricted_forward_solve(const SparseLowerColumns &v,
                                             std::span<const std::size_t> active,
                                             std::span<const double> rhs,
                                             const ActiveSetIndex &index) {
  if (rhs.size() != active.size())
    throw ShapeMismatch("restricted_forward_solve: rhs must be dense over A");
  std::vector<double> x(rhs.begin(), rhs.end());
  for (std::size_t p = 0; p < active.size(); ++p) {
    const std::size_t k = active[p];
    const auto rows = v.rows(k);
    const auto vals = v.values(k);
    if (vals[0] == 0.0)
      throw SingularDiagonal("restricted_forward_solve: zero diagonal at " +
                                 std::to_string(k),
                             k);
    x[p] /= vals[0];
    const double xk = x[p];
    if (xk == 0.0)
      continue;
    for (std::size_t e = 1; e < rows.size(); ++e) {
      const long q = index.position(rows[e]);
      if (q >= 0)
        x[static_cast<std::size_t>(q)] -= vals[e] * xk;
    }
  }
  return x;
}

std::vector<double> restricted_forward_solve(const SparseLowerColumns &v,
                                             std::span<const std::size_t> active,
                                             std::span<const double> rhs) {
  ActiveSetIndex index(v.size());
  index.bind(active);
  return restricted_forward_solve(v, active, rhs, index);
}

std::vector<double> restricted_transpose_solve(const SparseLowerColumns &v,
                                               std::span<const std::size_t> active,
                                               std::span<const double> xbar,
                                               const ActiveSetIndex &index) {
  if (xbar.size() != active.size())
    throw ShapeMismatch("restricted_transpose_solve: size mismatch");
  std::vector<double> r(xbar.begin(), xbar.end());
  for (std::size_t p = active.size(); p-- > 0;) {
    const std::size_t k = active[p];
    const auto rows = v.rows(k);
    const auto vals = v.values(k);
    if (vals[0] == 0.0)
      throw SingularDiagonal("restricted_transpose_solve: zero diagonal at " +
                                 std::to_string(k),
                             k);
    double s = r[p];
    for (std::size_t e = 1; e < rows.size(); ++e) {
      const long q = index.position(rows[e]);
      if (q >= 0)
        s -= vals[e] * r[static_cast<std::size_t>(q)];
    }
    r[p] = s / vals[0];
  }
  return r;
}

} // namespace dkl
