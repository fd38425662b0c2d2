#pragma once

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dklgp/kernels.hpp"

namespace dkl {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Euclidean distance after dividing each coordinate by a length-scale.
/// An empty length-scale vector means plain Euclidean distance.
struct DistanceMetric {
  Eigen::VectorXd lengthscales;

  /// Coordinates in the space where the metric is Euclidean.
  PointMatrix transform(const PointMatrix &points) const;
};

/// Plain Euclidean distance between two rows of already-transformed points.
double euclidean(const double *a, const double *b, std::size_t d);

/// Inputs in reverse-maximin order together with their scale lengths.
struct OrderedDesign {
  PointMatrix points;            ///< original coordinates, ordered
  PointMatrix scaled;            ///< metric-transformed coordinates, ordered
  std::vector<std::size_t> perm; ///< ordered index -> original row
  std::vector<double> scales;    ///< l_i = min_{j > i} dist(x_i, x_j)
  DistanceMetric metric;

  std::size_t size() const { return perm.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(points.cols()); }
  double distance(std::size_t i, std::size_t j) const;
};

enum class PatternKind {
  Prior,
  Posterior,
  ReducedAncestor,
  FullAncestor,
  Prediction,
  PredictionReducedAncestor
};

/// Column-wise lower-triangular index sets. Column i starts with i and is
/// strictly increasing. `dim` may exceed the number of columns (prediction
/// patterns have n* columns over n* + n joint indices).
class SparsityPattern {
public:
  SparsityPattern() = default;
  SparsityPattern(std::size_t dim, PatternKind kind) : dim_(dim), kind_(kind) {}
  SparsityPattern(std::size_t dim, PatternKind kind,
                  const std::vector<std::vector<std::size_t>> &cols);

  /// Appends the next column; validates the triangular invariants.
  void push_column(std::span<const std::size_t> members);

  std::size_t dim() const { return dim_; }
  std::size_t columns() const { return col_ptr_.size() - 1; }
  PatternKind kind() const { return kind_; }
  void set_kind(PatternKind kind) { kind_ = kind; }

  std::span<const std::size_t> col(std::size_t i) const {
    return {rows_.data() + col_ptr_[i], col_ptr_[i + 1] - col_ptr_[i]};
  }
  /// Members other than the diagonal.
  std::span<const std::size_t> off_diagonal(std::size_t i) const {
    return col(i).subspan(1);
  }
  std::size_t nnz() const { return rows_.size(); }
  double mean_size() const;

  std::vector<std::vector<std::size_t>> to_vectors() const;

  bool operator==(const SparsityPattern &o) const {
    return dim_ == o.dim_ && col_ptr_ == o.col_ptr_ && rows_ == o.rows_;
  }

private:
  std::size_t dim_ = 0;
  PatternKind kind_ = PatternKind::Prior;
  std::vector<std::size_t> col_ptr_{0};
  std::vector<std::size_t> rows_;
};

/// Text form: one line per column, space-separated 1-based indices.
void write_pattern(std::ostream &out, const SparsityPattern &pattern);
SparsityPattern read_pattern(std::istream &in, std::size_t dim, PatternKind kind);

struct PatternVariant {
  enum class Tag { NearestNeighbor, Diagonal, Global };
  Tag tag = Tag::NearestNeighbor;
  double rho = 2.0;   ///< nearest-neighbor radius factor, >= 1
  std::size_t m = 1;  ///< global conditioning-set size, >= 1

  void validate() const;
};

std::string to_string(PatternVariant::Tag tag);
PatternVariant::Tag pattern_tag_from_string(const std::string &name);

/// Default last point: nearest to the coordinate-wise midrange under `metric`.
std::size_t midrange_anchor(const PointMatrix &points,
                            const DistanceMetric &metric);

/// Greedy reverse-maximin ordering. Ties (within a relative 1e-12) go to the
/// smallest original row. Throws DuplicatePoints if two inputs coincide.
OrderedDesign reverse_maximin_order(const PointMatrix &points,
                                    const DistanceMetric &metric = {},
                                    std::optional<std::size_t> anchor = {});

/// S_i = { j >= i : dist(x_i, x_j) <= rho * l_i }.
SparsityPattern neighbor_pattern(const OrderedDesign &design, double rho);

/// S_i = { i }.
SparsityPattern diagonal_pattern(std::size_t n);

/// S_i = { i } U { j > n - m } (the m coarsest points).
SparsityPattern global_pattern(std::size_t n, std::size_t m);

/// Reduced ancestors { j >= i : dist(x_i, x_j) <= rho * l_j }.
SparsityPattern reduced_ancestors(const OrderedDesign &design, double rho);

/// Ancestor set of one column: S^p_i plus everything reachable from it
/// through the off-diagonal entries of S^q.
std::vector<std::size_t> ancestor_set(const SparsityPattern &sp,
                                      const SparsityPattern &sq, std::size_t i);

SparsityPattern full_ancestors(const SparsityPattern &sp,
                               const SparsityPattern &sq);

/// Prior and posterior patterns for a variant.
SparsityPattern variant_pattern(const OrderedDesign &design,
                                const PatternVariant &variant,
                                PatternKind kind);

/// Test points in reverse-maximin order conditional on the training design
/// being ordered after them.
struct PredictionOrdering {
  PointMatrix points;
  PointMatrix scaled;
  std::vector<std::size_t> perm; ///< ordered test index -> original test row
  std::vector<double> scales;    ///< l*_i, two-way minimum

  std::size_t size() const { return perm.size(); }
};

PredictionOrdering prediction_ordering(const OrderedDesign &design,
                                       const PointMatrix &test_points);

struct PredictionPatterns {
  SparsityPattern conditioning; ///< S*, joint indices (test first)
  SparsityPattern reduced;      ///< reduced ancestors over joint indices
};

PredictionPatterns prediction_patterns(const PredictionOrdering &test,
                                       const OrderedDesign &design, double rho);

} // namespace dkl
