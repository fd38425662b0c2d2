#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dklgp/error.hpp"

namespace dkl {

/// Lower-triangular Cholesky factor C with a = C * C^T.
///
/// Unblocked right-looking elimination; the matrices handled here are small
/// (conditioning sets), and a fixed arithmetic order keeps results
/// reproducible. Throws NotPositiveDefinite when a pivot is not positive.
Eigen::MatrixXd cholesky(const Eigen::MatrixXd &a);

/// Solves a * x = b for symmetric positive-definite a.
Eigen::VectorXd solve_spd(const Eigen::MatrixXd &a, const Eigen::VectorXd &b);

/// Solves (C * C^T) x = b given the lower factor C.
Eigen::VectorXd cholesky_solve(const Eigen::MatrixXd &chol,
                               const Eigen::VectorXd &b);

/// Sparse lower-triangular matrix in compressed-column layout.
///
/// Row indices within a column are strictly increasing and the first entry of
/// column i is the diagonal (i, i).
class SparseLowerColumns {
public:
  SparseLowerColumns() = default;

  /// Builds an all-zero matrix with the given column structure. Each column
  /// must start with its own index and be strictly increasing.
  explicit SparseLowerColumns(const std::vector<std::vector<std::size_t>> &cols);

  SparseLowerColumns(std::size_t n, std::vector<std::size_t> col_ptr,
                     std::vector<std::size_t> rows, std::vector<double> values);

  std::size_t size() const { return n_; }
  std::size_t nnz() const { return rows_.size(); }

  std::span<const std::size_t> rows(std::size_t col) const {
    return {rows_.data() + col_ptr_[col], col_ptr_[col + 1] - col_ptr_[col]};
  }
  std::span<const double> values(std::size_t col) const {
    return {values_.data() + col_ptr_[col], col_ptr_[col + 1] - col_ptr_[col]};
  }
  std::span<double> values(std::size_t col) {
    return {values_.data() + col_ptr_[col], col_ptr_[col + 1] - col_ptr_[col]};
  }

  double diag(std::size_t col) const { return values_[col_ptr_[col]]; }
  std::size_t col_begin(std::size_t col) const { return col_ptr_[col]; }
  std::size_t col_end(std::size_t col) const { return col_ptr_[col + 1]; }

  const std::vector<std::size_t> &col_ptr() const { return col_ptr_; }
  const std::vector<std::size_t> &row_indices() const { return rows_; }
  const std::vector<double> &all_values() const { return values_; }
  std::vector<double> &all_values() { return values_; }

  /// Dense copy; intended for tests and small oracles.
  Eigen::MatrixXd to_dense() const;

  bool operator==(const SparseLowerColumns &) const = default;

private:
  void check_structure() const;

  std::size_t n_ = 0;
  std::vector<std::size_t> col_ptr_{0};
  std::vector<std::size_t> rows_;
  std::vector<double> values_;
};

/// Scratch map from global index to position within an active set.
///
/// Binding is O(|A|) and unbinding restores the all-empty state, so one
/// workspace can serve many restricted solves over the same dimension.
class ActiveSetIndex {
public:
  explicit ActiveSetIndex(std::size_t n = 0) : pos_(n, -1) {}

  void resize(std::size_t n) { pos_.assign(n, -1); }
  std::size_t size() const { return pos_.size(); }

  void bind(std::span<const std::size_t> active);
  void unbind(std::span<const std::size_t> active);
  long position(std::size_t global) const { return pos_[global]; }

private:
  std::vector<long> pos_;
};

/// Forward substitution x = (V_{A,A})^{-1} rhs, touching only entries of V
/// whose row and column both lie in A.
///
/// `active` must be sorted ascending and `rhs` is given densely over A. The
/// index must already be bound to `active`. Throws SingularDiagonal when a
/// diagonal in A is zero.
std::vector<double> restricted_forward_solve(const SparseLowerColumns &v,
                                             std::span<const std::size_t> active,
                                             std::span<const double> rhs,
                                             const ActiveSetIndex &index);

/// Convenience overload that binds a private index.
std::vector<double> restricted_forward_solve(const SparseLowerColumns &v,
                                             std::span<const std::size_t> active,
                                             std::span<const double> rhs);

/// Back substitution r = (V_{A,A})^{-T} xbar. Used for adjoints of the
/// restricted forward solve.
std::vector<double> restricted_transpose_solve(const SparseLowerColumns &v,
                                               std::span<const std::size_t> active,
                                               std::span<const double> xbar,
                                               const ActiveSetIndex &index);

/// Adjoint of the restricted solve with respect to the entries of V.
///
/// For x = V_A^{-1} r and rbar = V_A^{-T} xbar, the gradient with respect to
/// entry (j, k) of V is -rbar_j * x_k. Calls `sink(entry, value)` for every
/// stored entry inside A x A, where `entry` indexes `v.all_values()`.
template <typename Sink>
void restricted_solve_entry_adjoint(const SparseLowerColumns &v,
                                    std::span<const std::size_t> active,
                                    std::span<const double> rbar,
                                    std::span<const double> x,
                                    const ActiveSetIndex &index, Sink &&sink) {
  for (std::size_t p = 0; p < active.size(); ++p) {
    const std::size_t k = active[p];
    const double xk = x[p];
    if (xk == 0.0)
      continue;
    const auto rows = v.rows(k);
    const std::size_t base = v.col_begin(k);
    for (std::size_t e = 0; e < rows.size(); ++e) {
      const long q = index.position(rows[e]);
      if (q >= 0)
        sink(base + e, -rbar[static_cast<std::size_t>(q)] * xk);
    }
  }
}

} // namespace dkl
