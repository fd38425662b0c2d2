#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "dklgp/geometry.hpp"
#include "dklgp/linalg.hpp"
#include "dklgp/vi.hpp"

namespace dkl::testing {

inline PointMatrix uniform_points(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PointMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index k = 0; k < x.cols(); ++k)
      x(i, k) = u(gen);
  return x;
}

inline Eigen::VectorXd normal_vector(std::size_t n, std::mt19937_64 &gen,
                                     double sd = 1.0) {
  std::normal_distribution<double> z(0.0, sd);
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i)
    v(i) = z(gen);
  return v;
}

inline Eigen::MatrixXd random_spd(std::size_t n, std::mt19937_64 &gen) {
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::MatrixXd a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      a(i, j) = z(gen);
  return a * a.transpose() +
         static_cast<double>(n) * Eigen::MatrixXd::Identity(a.rows(), a.cols());
}

inline KernelSpec kernel(KernelFamily family, std::size_t d, double lambda,
                         double variance = 1.0) {
  KernelSpec k;
  k.family = family;
  k.variance = variance;
  k.lengthscales = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d), lambda);
  return k;
}

/// Loads dense lower-triangular values into a state's V (stored form).
inline void set_factor(VariationalState &state, const Eigen::MatrixXd &v) {
  for (std::size_t k = 0; k < state.v.size(); ++k) {
    const auto rows = state.v.rows(k);
    auto vals = state.v.values(k);
    const double diag = v(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    for (std::size_t e = 1; e < rows.size(); ++e)
      vals[e] = v(static_cast<Eigen::Index>(rows[e]), static_cast<Eigen::Index>(k)) / diag;
    vals[0] = std::log(diag);
  }
}

/// Randomly perturbs nu and every stored V entry.
inline void perturb(VariationalState &state, std::mt19937_64 &gen, double sd) {
  std::normal_distribution<double> z(0.0, sd);
  for (Eigen::Index i = 0; i < state.nu.size(); ++i)
    state.nu(i) += z(gen);
  for (double &v : state.v.all_values())
    v += z(gen);
}

} // namespace dkl::testing
