#include "dklgp/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "dklgp/error.hpp"

namespace dkl {

namespace {

constexpr double kTieTolerance = 1e-12;

bool beats(double candidate, double incumbent) {
  if (incumbent == kInfinity)
    return false;
  if (candidate == kInfinity)
    return true;
  return candidate > incumbent * (1.0 + kTieTolerance);
}

// Greedy maximin selection over `scaled` rows given initial min-distances.
// Returns rows in selection order and the min-distance at selection time.
void greedy_select(const PointMatrix &scaled, std::vector<double> &min_dist,
                   std::vector<std::size_t> &selected,
                   std::vector<double> &at_selection) {
  const std::size_t n = static_cast<std::size_t>(scaled.rows());
  const std::size_t d = static_cast<std::size_t>(scaled.cols());
  std::vector<char> taken(n, 0);
  for (auto s : selected)
    taken[s] = 1;
  while (selected.size() < n) {
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i])
        continue;
      if (best == n || beats(min_dist[i], best_d)) {
        best = i;
        best_d = min_dist[i];
      }
    }
    if (best_d == 0.0) {
      // locate the coincident partner for the message
      std::size_t partner = best;
      for (std::size_t j = 0; j < n; ++j)
        if (taken[j] && euclidean(scaled.row(best).data(), scaled.row(j).data(), d) == 0.0)
          partner = j;
      throw DuplicatePoints("duplicate inputs at rows " + std::to_string(partner) +
                                " and " + std::to_string(best),
                            partner, best);
    }
    taken[best] = 1;
    selected.push_back(best);
    at_selection.push_back(best_d);
    const double *xb = scaled.row(best).data();
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i])
        continue;
      const double dist = euclidean(scaled.row(i).data(), xb, d);
      if (dist < min_dist[i])
        min_dist[i] = dist;
    }
  }
}

PointMatrix gather_rows(const PointMatrix &src, const std::vector<std::size_t> &rows) {
  PointMatrix out(static_cast<Eigen::Index>(rows.size()), src.cols());
  for (std::size_t r = 0; r < rows.size(); ++r)
    out.row(static_cast<Eigen::Index>(r)) = src.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

} // namespace

PointMatrix DistanceMetric::transform(const PointMatrix &points) const {
  if (lengthscales.size() == 0)
    return points;
  if (lengthscales.size() != points.cols())
    throw ShapeMismatch("metric length-scales do not match input dimension");
  PointMatrix out = points;
  for (Eigen::Index c = 0; c < points.cols(); ++c)
    out.col(c) /= lengthscales(c);
  return out;
}

double euclidean(const double *a, const double *b, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double t = a[k] - b[k];
    s += t * t;
  }
  return std::sqrt(s);
}

double OrderedDesign::distance(std::size_t i, std::size_t j) const {
  return euclidean(scaled.row(static_cast<Eigen::Index>(i)).data(),
                   scaled.row(static_cast<Eigen::Index>(j)).data(), dim());
}

SparsityPattern::SparsityPattern(std::size_t dim, PatternKind kind,
                                 const std::vector<std::vector<std::size_t>> &cols)
    : dim_(dim), kind_(kind) {
  for (const auto &c : cols)
    push_column(c);
}

void SparsityPattern::push_column(std::span<const std::size_t> members) {
  const std::size_t i = columns();
  if (members.empty() || members[0] != i)
    throw ShapeMismatch("pattern column " + std::to_string(i) +
                        " must start with its own index");
  for (std::size_t e = 1; e < members.size(); ++e)
    if (members[e] <= members[e - 1])
      throw ShapeMismatch("pattern column " + std::to_string(i) +
                          " is not strictly increasing");
  if (members.back() >= dim_)
    throw ShapeMismatch("pattern column " + std::to_string(i) + " out of range");
  rows_.insert(rows_.end(), members.begin(), members.end());
  col_ptr_.push_back(rows_.size());
}

double SparsityPattern::mean_size() const {
  return columns() == 0 ? 0.0
                        : static_cast<double>(nnz()) / static_cast<double>(columns());
}

std::vector<std::vector<std::size_t>> SparsityPattern::to_vectors() const {
  std::vector<std::vector<std::size_t>> out;
  out.reserve(columns());
  for (std::size_t i = 0; i < columns(); ++i)
    out.emplace_back(col(i).begin(), col(i).end());
  return out;
}

void write_pattern(std::ostream &out, const SparsityPattern &pattern) {
  for (std::size_t i = 0; i < pattern.columns(); ++i) {
    const auto c = pattern.col(i);
    for (std::size_t e = 0; e < c.size(); ++e)
      out << (e ? " " : "") << c[e] + 1;
    out << '\n';
  }
}

SparsityPattern read_pattern(std::istream &in, std::size_t dim, PatternKind kind) {
  SparsityPattern p(dim, kind);
  std::string line;
  std::vector<std::size_t> members;
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    std::istringstream ls(line);
    members.clear();
    long v;
    while (ls >> v) {
      if (v < 1)
        throw ShapeMismatch("pattern indices are 1-based");
      members.push_back(static_cast<std::size_t>(v - 1));
    }
    p.push_column(members);
  }
  return p;
}

void PatternVariant::validate() const {
  if (tag == Tag::NearestNeighbor && !(rho >= 1.0))
    throw ConfigError("rho must be >= 1");
  if (tag == Tag::Global && m < 1)
    throw ConfigError("global pattern size m must be >= 1");
}

std::string to_string(PatternVariant::Tag tag) {
  switch (tag) {
  case PatternVariant::Tag::NearestNeighbor:
    return "nearest-neighbor";
  case PatternVariant::Tag::Diagonal:
    return "diagonal";
  case PatternVariant::Tag::Global:
    return "global";
  }
  return "unknown";
}

PatternVariant::Tag pattern_tag_from_string(const std::string &name) {
  if (name == "nearest-neighbor" || name == "nn" || name == "dklgp")
    return PatternVariant::Tag::NearestNeighbor;
  if (name == "diagonal" || name == "dkl-d")
    return PatternVariant::Tag::Diagonal;
  if (name == "global" || name == "dkl-g")
    return PatternVariant::Tag::Global;
  throw ConfigError("unknown pattern variant '" + name +
                    "' (expected nearest-neighbor, diagonal or global)");
}

std::size_t midrange_anchor(const PointMatrix &points, const DistanceMetric &metric) {
  if (points.rows() == 0)
    throw ShapeMismatch("midrange_anchor: no points");
  const PointMatrix scaled = metric.transform(points);
  const Eigen::RowVectorXd mid =
      0.5 * (scaled.colwise().minCoeff() + scaled.colwise().maxCoeff());
  const std::size_t d = static_cast<std::size_t>(scaled.cols());
  std::size_t best = 0;
  double best_d = kInfinity;
  for (Eigen::Index i = 0; i < scaled.rows(); ++i) {
    const double dist = euclidean(scaled.row(i).data(), mid.data(), d);
    if (dist < best_d) {
      best_d = dist;
      best = static_cast<std::size_t>(i);
    }
  }
  return best;
}

OrderedDesign reverse_maximin_order(const PointMatrix &points,
                                    const DistanceMetric &metric,
                                    std::optional<std::size_t> anchor) {
  const std::size_t n = static_cast<std::size_t>(points.rows());
  if (n == 0)
    throw ShapeMismatch("reverse_maximin_order: need at least one point");
  const PointMatrix scaled = metric.transform(points);
  const std::size_t last = anchor ? *anchor : midrange_anchor(points, metric);
  if (last >= n)
    throw ConfigError("anchor index out of range");

  std::vector<double> min_dist(n, kInfinity);
  std::vector<std::size_t> selected{last};
  std::vector<double> at_selection{kInfinity};
  const std::size_t d = static_cast<std::size_t>(scaled.cols());
  for (std::size_t i = 0; i < n; ++i)
    if (i != last)
      min_dist[i] = euclidean(scaled.row(static_cast<Eigen::Index>(i)).data(),
                              scaled.row(static_cast<Eigen::Index>(last)).data(), d);
  greedy_select(scaled, min_dist, selected, at_selection);

  OrderedDesign design;
  design.metric = metric;
  design.perm.assign(selected.rbegin(), selected.rend());
  design.scales.assign(at_selection.rbegin(), at_selection.rend());
  design.points = gather_rows(points, design.perm);
  design.scaled = gather_rows(scaled, design.perm);
  return design;
}

SparsityPattern neighbor_pattern(const OrderedDesign &design, double rho) {
  const std::size_t n = design.size();
  const std::size_t d = design.dim();
  SparsityPattern p(n, PatternKind::Prior);
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < n; ++i) {
    members.assign(1, i);
    const double radius = rho * design.scales[i];
    const double *xi = design.scaled.row(static_cast<Eigen::Index>(i)).data();
    for (std::size_t j = i + 1; j < n; ++j)
      if (euclidean(xi, design.scaled.row(static_cast<Eigen::Index>(j)).data(), d) <=
          radius)
        members.push_back(j);
    p.push_column(members);
  }
  return p;
}

SparsityPattern diagonal_pattern(std::size_t n) {
  SparsityPattern p(n, PatternKind::Prior);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t m[1] = {i};
    p.push_column(m);
  }
  return p;
}

SparsityPattern global_pattern(std::size_t n, std::size_t m) {
  SparsityPattern p(n, PatternKind::Prior);
  const std::size_t first_global = n > m ? n - m : 0;
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < n; ++i) {
    members.assign(1, i);
    for (std::size_t j = std::max(first_global, i + 1); j < n; ++j)
      members.push_back(j);
    p.push_column(members);
  }
  return p;
}

SparsityPattern reduced_ancestors(const OrderedDesign &design, double rho) {
  const std::size_t n = design.size();
  const std::size_t d = design.dim();
  SparsityPattern p(n, PatternKind::ReducedAncestor);
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < n; ++i) {
    members.assign(1, i);
    const double *xi = design.scaled.row(static_cast<Eigen::Index>(i)).data();
    for (std::size_t j = i + 1; j < n; ++j)
      if (euclidean(xi, design.scaled.row(static_cast<Eigen::Index>(j)).data(), d) <=
          rho * design.scales[j])
        members.push_back(j);
    p.push_column(members);
  }
  return p;
}

std::vector<std::size_t> ancestor_set(const SparsityPattern &sp,
                                      const SparsityPattern &sq, std::size_t i) {
  if (sp.dim() != sq.dim() || sq.columns() != sq.dim())
    throw ShapeMismatch("ancestor_set: patterns must share a square dimension");
  std::vector<char> seen(sq.dim(), 0);
  std::vector<std::size_t> out(sp.col(i).begin(), sp.col(i).end());
  for (auto j : out)
    seen[j] = 1;
  for (std::size_t head = 0; head < out.size(); ++head) {
    const std::size_t k = out[head];
    for (auto j : sq.off_diagonal(k))
      if (!seen[j]) {
        seen[j] = 1;
        out.push_back(j);
      }
  }
  std::sort(out.begin(), out.end());
  return out;
}

SparsityPattern full_ancestors(const SparsityPattern &sp, const SparsityPattern &sq) {
  if (sp.dim() != sq.dim() || sq.columns() != sq.dim())
    throw ShapeMismatch("full_ancestors: patterns must share a square dimension");
  const std::size_t n = sp.columns();
  SparsityPattern out(sp.dim(), PatternKind::FullAncestor);
  // stamp-based visited marks avoid clearing an n-vector per column
  std::vector<std::size_t> stamp(sq.dim(), static_cast<std::size_t>(-1));
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < n; ++i) {
    members.assign(sp.col(i).begin(), sp.col(i).end());
    for (auto j : members)
      stamp[j] = i;
    for (std::size_t head = 0; head < members.size(); ++head) {
      const std::size_t k = members[head];
      for (auto j : sq.off_diagonal(k))
        if (stamp[j] != i) {
          stamp[j] = i;
          members.push_back(j);
        }
    }
    std::sort(members.begin(), members.end());
    out.push_column(members);
  }
  return out;
}

SparsityPattern variant_pattern(const OrderedDesign &design,
                                const PatternVariant &variant, PatternKind kind) {
  variant.validate();
  SparsityPattern p;
  switch (variant.tag) {
  case PatternVariant::Tag::NearestNeighbor:
    p = neighbor_pattern(design, variant.rho);
    break;
  case PatternVariant::Tag::Diagonal:
    p = kind == PatternKind::Posterior ? diagonal_pattern(design.size())
                                       : neighbor_pattern(design, variant.rho);
    break;
  case PatternVariant::Tag::Global:
    p = global_pattern(design.size(), variant.m);
    break;
  }
  p.set_kind(kind);
  return p;
}

PredictionOrdering prediction_ordering(const OrderedDesign &design,
                                       const PointMatrix &test_points) {
  const std::size_t ns = static_cast<std::size_t>(test_points.rows());
  const std::size_t n = design.size();
  PredictionOrdering out;
  if (ns == 0) {
    out.points = test_points;
    out.scaled = test_points;
    return out;
  }
  if (n > 0 && static_cast<std::size_t>(test_points.cols()) != design.dim())
    throw ShapeMismatch("test points have the wrong dimension");
  const PointMatrix scaled = design.metric.transform(test_points);
  const std::size_t d = static_cast<std::size_t>(scaled.cols());

  std::vector<double> min_dist(ns, kInfinity);
  for (std::size_t i = 0; i < ns; ++i) {
    const double *xi = scaled.row(static_cast<Eigen::Index>(i)).data();
    for (std::size_t j = 0; j < n; ++j) {
      const double dist =
          euclidean(xi, design.scaled.row(static_cast<Eigen::Index>(j)).data(), d);
      if (dist == 0.0)
        throw DuplicatePoints("test row " + std::to_string(i) +
                                  " coincides with a training input",
                              i, design.perm[j]);
      min_dist[i] = std::min(min_dist[i], dist);
    }
  }

  std::vector<std::size_t> selected;
  std::vector<double> at_selection;
  if (n == 0) {
    const std::size_t last = midrange_anchor(test_points, design.metric);
    selected.push_back(last);
    at_selection.push_back(kInfinity);
    for (std::size_t i = 0; i < ns; ++i)
      if (i != last)
        min_dist[i] = euclidean(scaled.row(static_cast<Eigen::Index>(i)).data(),
                                scaled.row(static_cast<Eigen::Index>(last)).data(), d);
  }
  greedy_select(scaled, min_dist, selected, at_selection);

  out.perm.assign(selected.rbegin(), selected.rend());
  out.scales.assign(at_selection.rbegin(), at_selection.rend());
  out.points = gather_rows(test_points, out.perm);
  out.scaled = gather_rows(scaled, out.perm);
  return out;
}

PredictionPatterns prediction_patterns(const PredictionOrdering &test,
                                       const OrderedDesign &design, double rho) {
  const std::size_t ns = test.size();
  const std::size_t n = design.size();
  const std::size_t d = static_cast<std::size_t>(test.scaled.cols());
  PredictionPatterns out{SparsityPattern(ns + n, PatternKind::Prediction),
                         SparsityPattern(ns + n, PatternKind::PredictionReducedAncestor)};
  std::vector<std::size_t> cond, red;
  for (std::size_t i = 0; i < ns; ++i) {
    cond.assign(1, i);
    red.assign(1, i);
    const double radius = rho * test.scales[i];
    const double *xi = test.scaled.row(static_cast<Eigen::Index>(i)).data();
    for (std::size_t j = i + 1; j < ns; ++j) {
      const double dist =
          euclidean(xi, test.scaled.row(static_cast<Eigen::Index>(j)).data(), d);
      if (dist <= radius)
        cond.push_back(j);
      if (dist <= rho * test.scales[j])
        red.push_back(j);
    }
    for (std::size_t j = 0; j < n; ++j) {
      const double dist =
          euclidean(xi, design.scaled.row(static_cast<Eigen::Index>(j)).data(), d);
      if (dist <= radius)
        cond.push_back(ns + j);
      if (dist <= rho * design.scales[j])
        red.push_back(ns + j);
    }
    out.conditioning.push_column(cond);
    out.reduced.push_column(red);
  }
  return out;
}

} // namespace dkl
