#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dklgp/geometry.hpp"
#include "dklgp/kernels.hpp"
#include "dklgp/linalg.hpp"
#include "dklgp/model.hpp"
#include "dklgp/rng.hpp"

namespace dkl {

/// Which index set restricts the solves V^{-1} L_{:,i} and V^{-1} e_i.
enum class AncestorMode {
  Full,       ///< ancestor sets A_i (exact)
  Reduced,    ///< reduced ancestors joined with S^p_i
  ExactDense  ///< every index >= i, no restriction
};

/// Variational parameters and model hyperparameters, all in design order.
/// The diagonal slot of column k of `v` stores log V_kk; every other slot
/// stores V_jk / V_kk.
struct VariationalState {
  Eigen::VectorXd nu;
  SparseLowerColumns v;
  KernelSpec kernel;
  LikelihoodSpec likelihood; ///< obs_scales, if any, in design order
  MeanSpec mean;

  /// V itself, decoded from the stored form.
  SparseLowerColumns factor() const;
};

/// Offsets of each parameter block inside the flat parameter vector:
/// [nu | stored V entries | log lengthscales | log variance | log noise variance].
struct ParamLayout {
  std::size_t n = 0;
  std::size_t nnz = 0;
  std::size_t dim = 0;

  std::size_t nu() const { return 0; }
  std::size_t v() const { return n; }
  std::size_t log_lengthscales() const { return n + nnz; }
  std::size_t log_variance() const { return n + nnz + dim; }
  std::size_t log_noise() const { return n + nnz + dim + 1; }
  std::size_t size() const { return n + nnz + dim + 2; }
};

ParamLayout layout_of(const VariationalState &state);
Eigen::VectorXd pack(const VariationalState &state);
void unpack(const Eigen::VectorXd &params, VariationalState &state);

/// Fixed quantities of an ELBO: ordered design, responses, patterns and the
/// ancestor sets used to restrict the solves.
class ElboContext {
public:
  ElboContext(OrderedDesign design, Eigen::VectorXd y_ordered,
              PatternVariant variant);

  const OrderedDesign &design() const { return design_; }
  const PatternVariant &variant() const { return variant_; }
  const SparsityPattern &prior_pattern() const { return prior_; }
  const SparsityPattern &posterior_pattern() const { return posterior_; }
  std::size_t size() const { return design_.size(); }
  double y(std::size_t i) const { return y_(static_cast<Eigen::Index>(i)); }
  const Eigen::VectorXd &responses() const { return y_; }

  /// Computes the sets for `mode` if they are not available yet.
  void prepare(AncestorMode mode);
  /// Active set for column i; `prepare(mode)` must have been called for
  /// Full and Reduced.
  std::span<const std::size_t> active_set(std::size_t i, AncestorMode mode,
                                          std::vector<std::size_t> &scratch) const;
  /// Ancestor mode giving exact terms at the lowest cost for this variant.
  AncestorMode training_mode() const;

private:
  OrderedDesign design_;
  Eigen::VectorXd y_;
  PatternVariant variant_;
  SparsityPattern prior_;
  SparsityPattern posterior_;
  std::optional<SparsityPattern> reduced_;
  std::optional<SparsityPattern> full_;
};

/// Standard-normal draws for one ELBO term (rows = samples).
using TermNoise = Eigen::MatrixXd;

/// Gradient contribution of one term: sparse over nu and V, dense over the
/// hyperparameters.
struct TermGradient {
  std::vector<std::pair<std::size_t, double>> entries; ///< flat-vector index
  Eigen::VectorXd dlog_lengthscales;
  double dlog_variance = 0.0;
  double dlog_noise = 0.0;
};

/// Which parameter blocks receive gradients.
struct GradientMask {
  bool nu = true;
  bool v = true;
  bool lengthscales = true;
  bool variance = true;
  bool noise = true;
};

/// One summand of the ELBO (additive constant n/2 excluded). When `noise` is
/// null the gaussian expectation is used in closed form; other likelihoods
/// require draws.
double elbo_term(std::size_t i, const VariationalState &state,
                 const ElboContext &ctx, AncestorMode mode,
                 const TermNoise *noise = nullptr,
                 TermGradient *gradient = nullptr,
                 const GradientMask &mask = {});

/// Sum of all terms.
double elbo(const VariationalState &state, const ElboContext &ctx,
            AncestorMode mode);

/// Sum of all terms with `samples` draws per term for non-gaussian
/// likelihoods (stream keyed by `seed`).
double elbo_mc(const VariationalState &state, const ElboContext &ctx,
               AncestorMode mode, std::size_t samples, std::uint64_t seed);

/// Per-element draws for a minibatch, keyed so that any schedule reproduces
/// the same numbers.
std::vector<TermNoise> draw_batch_noise(const ElboContext &ctx,
                                        std::span<const std::size_t> batch,
                                        AncestorMode mode, std::size_t samples,
                                        std::uint64_t seed, std::uint64_t epoch,
                                        std::uint64_t step);

struct BatchObjective {
  double value = 0.0;
  Eigen::VectorXd gradient; ///< d value / d pack(state)
};

/// (n / |B|) sum_{i in B} elbo_term(i) and its gradient. `noise` may be
/// empty for a gaussian likelihood (closed form). A non-null `prior` must
/// match the state's kernel and mean; it is reused instead of rebuilt.
BatchObjective elbo_minibatch_grad(const VariationalState &state,
                                   const ElboContext &ctx,
                                   std::span<const std::size_t> batch,
                                   AncestorMode mode,
                                   const std::vector<TermNoise> &noise,
                                   const GradientMask &mask = {},
                                   unsigned threads = 1,
                                   const PriorFactor *prior = nullptr);

/// nu = mu, V = prior factor restricted to S^q. With `moment_correction`
/// (gaussian only) nu is set to the posterior mean under the approximate
/// prior.
VariationalState initialize(const ElboContext &ctx, const KernelSpec &kernel,
                            const LikelihoodSpec &likelihood, const MeanSpec &mean,
                            bool moment_correction = false);

struct TrainConfig {
  PatternVariant variant;
  std::size_t epochs = 35;
  std::size_t batch_size = 128;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::vector<std::size_t> milestones; ///< main-phase epochs; empty = default
  double gamma = 0.1;
  std::size_t mc_samples = 1;
  std::size_t eval_samples = 1000;
  std::uint64_t seed = 0;
  std::size_t warmup_epochs = 3;
  bool reorder = true;
  bool train_lengthscales = true;
  bool train_variance = true;
  bool train_noise = true;
  bool moment_init = true; ///< gaussian likelihood only
  unsigned threads = 1;

  void validate(std::size_t n) const;
  std::vector<std::size_t> effective_milestones() const;
};

struct TraceEntry {
  std::string phase; ///< "warmup" or "main"
  std::size_t epoch = 0;
  double elbo_estimate = 0.0; ///< mean minibatch estimate over the epoch
  Eigen::VectorXd lengthscales;
  double variance = 0.0;
  double noise_scale = 0.0;
  double learning_rate = 0.0;
  double seconds = 0.0;
};

struct TrainTrace {
  std::vector<TraceEntry> epochs;
  double initial_elbo = 0.0; ///< full-batch, after the final reordering
  double final_elbo = 0.0;
  double order_seconds = 0.0;
  double train_seconds = 0.0;
};

struct TrainResult {
  VariationalState state;
  OrderedDesign design;
  PatternVariant variant;
  TrainTrace trace;
};

/// Two-step training: order with the initial length-scales, optionally warm
/// up and reorder with the estimated ones, then run the main epochs.
TrainResult train(const Dataset &data, const KernelSpec &kernel0,
                  const MeanSpec &mean, const TrainConfig &config);

/// Trains with a fixed ordering and context (no reordering).
TrainTrace train_fixed(VariationalState &state, const ElboContext &ctx,
                       const TrainConfig &config, std::size_t epochs,
                       const std::string &phase);

} // namespace dkl
