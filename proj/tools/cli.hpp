#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dklgp/geometry.hpp"
#include "dklgp/kernels.hpp"
#include "dklgp/model.hpp"
#include "dklgp/predict.hpp"
#include "dklgp/vi.hpp"

namespace dkl::cli {

/// Numeric CSV with a header row.
struct Table {
  std::vector<std::string> header;
  Eigen::MatrixXd data;

  std::size_t rows() const { return static_cast<std::size_t>(data.rows()); }
  std::optional<std::size_t> find(const std::string &name) const;
  Eigen::VectorXd column(const std::string &name) const;
  /// Columns named x1, x2, ... in numeric order.
  PointMatrix inputs() const;
};

Table read_csv(const std::string &path);
void write_csv(const std::string &path, const Table &table);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double x);

struct SimulateConfig {
  std::size_t n = 500;
  std::size_t d = 2;
  KernelSpec kernel;
  LikelihoodSpec likelihood;
  MeanSpec mean;
  std::uint64_t seed = 0;
};

struct SimulatedData {
  PointMatrix x;
  Eigen::VectorXd f;
  Eigen::VectorXd y;
  double jitter = 0.0; ///< diagonal added before factorizing, if any
};

inline constexpr std::size_t kDenseSampleLimit = 20000;

/// Uniform inputs on [0,1]^d, f ~ N(mu, K) by dense Cholesky, y | f from the
/// likelihood. Throws SizeGuard above kDenseSampleLimit.
SimulatedData simulate(const SimulateConfig &config);

/// Random split: returns (train rows, test rows), each sorted.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
split_rows(std::size_t n, double test_fraction, std::uint64_t seed);

Table select_rows(const Table &table, const std::vector<std::size_t> &rows);

struct PreprocessOptions {
  std::string response = "y";
  double min_sd = 0.01;
  double min_separation = 0.001;
};

struct PreprocessResult {
  Table table; ///< x1..xk then y
  std::vector<std::string> kept_columns;
  std::vector<std::string> dropped_columns;
  std::vector<double> minima;
  std::vector<double> maxima;
  std::size_t dropped_rows = 0;
};

/// Min-max scales every non-response column to [0,1], drops columns whose
/// scaled SD is below `min_sd`, then drops rows within `min_separation` of an
/// earlier kept row.
PreprocessResult preprocess(const Table &raw, const PreprocessOptions &options);

struct Metrics {
  std::optional<double> rmse_latent;
  std::optional<double> nll_latent;
  std::optional<double> rmse_response;
  std::optional<double> nll_response;
};

/// Latent metrics need `f`, response metrics need `y`.
Metrics evaluate(const std::vector<Normal> &predictions,
                 const std::optional<Eigen::VectorXd> &f,
                 const std::optional<Eigen::VectorXd> &y,
                 const LikelihoodSpec &likelihood);

nlohmann::json to_json(const Metrics &metrics);

struct StoredModel {
  VariationalState state;
  OrderedDesign design;
  PatternVariant variant;
};

nlohmann::json model_to_json(const VariationalState &state, const OrderedDesign &design,
                             const PatternVariant &variant);
StoredModel model_from_json(const nlohmann::json &j);

nlohmann::json trace_to_json(const TrainTrace &trace);

nlohmann::json read_json(const std::string &path);
void write_json(const std::string &path, const nlohmann::json &j);

} // namespace dkl::cli
