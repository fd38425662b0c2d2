#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <optional>

#include "dklgp/error.hpp"
#include "dklgp/log.hpp"
#include "dklgp/vi.hpp"

namespace dkl {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Adam {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::size_t t = 0;

  explicit Adam(std::size_t size)
      : m(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size))),
        v(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size))) {}

  /// Ascent step on `params` along `grad`.
  void step(Eigen::VectorXd &params, const Eigen::VectorXd &grad, double lr,
            const TrainConfig &c) {
    ++t;
    m = c.beta1 * m + (1.0 - c.beta1) * grad;
    v = c.beta2 * v + (1.0 - c.beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    params.array() +=
        lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.adam_eps);
  }
};

GradientMask mask_for(const TrainConfig &c) {
  GradientMask mask;
  mask.lengthscales = c.train_lengthscales;
  mask.variance = c.train_variance;
  mask.noise = c.train_noise;
  return mask;
}

Eigen::VectorXd ordered_responses(const Dataset &data, const OrderedDesign &design) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(design.size()));
  for (std::size_t k = 0; k < design.size(); ++k)
    y(static_cast<Eigen::Index>(k)) = data.y(static_cast<Eigen::Index>(design.perm[k]));
  return y;
}

LikelihoodSpec ordered_likelihood(const LikelihoodSpec &lik, const OrderedDesign &design) {
  LikelihoodSpec out = lik;
  if (!lik.obs_scales.empty())
    for (std::size_t k = 0; k < design.size(); ++k)
      out.obs_scales[k] = lik.obs_scales[design.perm[k]];
  return out;
}

double full_objective(const VariationalState &state, const ElboContext &ctx,
                      const TrainConfig &config) {
  return elbo_mc(state, ctx, ctx.training_mode(), config.eval_samples,
                 config.seed ^ 0x5EEDull);
}

} // namespace

void TrainConfig::validate(std::size_t n) const {
  variant.validate();
  if (n == 0)
    throw ConfigError("training requires at least one observation");
  if (batch_size == 0)
    throw ConfigError("batch size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw ConfigError("learning-rate decay factor must lie in (0, 1]");
  if (mc_samples == 0 || eval_samples == 0)
    throw ConfigError("Monte Carlo sample counts must be positive");
  if (variant.tag == PatternVariant::Tag::Global && variant.m > n)
    throw ConfigError("global conditioning set is larger than the data set");
}

std::vector<std::size_t> TrainConfig::effective_milestones() const {
  if (!milestones.empty())
    return milestones;
  return {epochs / 2, (4 * epochs) / 5};
}

TrainTrace train_fixed(VariationalState &state, const ElboContext &ctx,
                       const TrainConfig &config, std::size_t epochs,
                       const std::string &phase) {
  TrainTrace trace;
  const std::size_t n = ctx.size();
  const AncestorMode mode = ctx.training_mode();
  const GradientMask mask = mask_for(config);
  const bool gaussian = state.likelihood.family == LikelihoodFamily::Gaussian;
  const std::size_t batch = std::min(config.batch_size, n);
  const std::vector<std::size_t> milestones =
      phase == "main" ? config.effective_milestones() : std::vector<std::size_t>{};
  const std::uint64_t phase_key = phase == "main" ? 1 : 0;

  // The prior factor only depends on the kernel and mean.
  std::optional<PriorFactor> prior;
  if (!mask.lengthscales && !mask.variance) {
    prior.emplace(ctx.design(), state.kernel, state.mean, ctx.prior_pattern());
    prior->enable_cache();
  }

  Eigen::VectorXd params = pack(state);
  Adam adam(static_cast<std::size_t>(params.size()));
  const auto t0 = Clock::now();
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const auto te = Clock::now();
    double lr = config.learning_rate;
    for (const std::size_t ms : milestones)
      if (epoch >= ms)
        lr *= config.gamma;

    CounterRng shuffle_rng(config.seed, {0x5A0FFull, phase_key, epoch});
    const std::vector<std::size_t> order = shuffled_indices(n, shuffle_rng);
    double estimate = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < n; start += batch, ++steps) {
      const std::span<const std::size_t> members(order.data() + start,
                                                 std::min(batch, n - start));
      std::vector<TermNoise> noise;
      if (!gaussian)
        noise = draw_batch_noise(ctx, members, mode, config.mc_samples, config.seed,
                                 (phase_key << 32) | epoch, steps);
      const BatchObjective obj =
          elbo_minibatch_grad(state, ctx, members, mode, noise, mask, config.threads,
                              prior ? &*prior : nullptr);
      if (!std::isfinite(obj.value) || !obj.gradient.allFinite())
        throw NumericalError("non-finite objective in " + phase + " epoch " +
                             std::to_string(epoch));
      estimate += obj.value;
      adam.step(params, obj.gradient, lr, config);
      unpack(params, state);
    }

    TraceEntry entry;
    entry.phase = phase;
    entry.epoch = epoch;
    entry.elbo_estimate = estimate / static_cast<double>(steps);
    entry.lengthscales = state.kernel.lengthscales;
    entry.variance = state.kernel.variance;
    entry.noise_scale = state.likelihood.noise_scale;
    entry.learning_rate = lr;
    entry.seconds = seconds_since(te);
    log_info(phase + " epoch " + std::to_string(epoch + 1) + "/" +
             std::to_string(epochs) + " elbo " + std::to_string(entry.elbo_estimate));
    trace.epochs.push_back(std::move(entry));
  }
  trace.train_seconds = seconds_since(t0);
  return trace;
}

TrainResult train(const Dataset &data, const KernelSpec &kernel0,
                  const MeanSpec &mean, const TrainConfig &config) {
  data.validate();
  kernel0.validate();
  config.validate(data.size());
  if (kernel0.dim() != data.dim())
    throw ShapeMismatch("kernel length-scales do not match the input dimension");

  auto t0 = Clock::now();
  OrderedDesign design =
      reverse_maximin_order(data.inputs, DistanceMetric{kernel0.lengthscales});
  double order_seconds = seconds_since(t0);
  auto ctx = std::make_unique<ElboContext>(design, ordered_responses(data, design),
                                           config.variant);
  ctx->prepare(ctx->training_mode());
  VariationalState state = initialize(*ctx, kernel0, ordered_likelihood(data.likelihood, design),
                                      mean, config.moment_init);

  TrainTrace trace;
  const bool warm = config.warmup_epochs > 0 && config.reorder && config.train_lengthscales;
  double train_seconds = 0.0;
  if (warm) {
    TrainTrace w = train_fixed(state, *ctx, config, config.warmup_epochs, "warmup");
    train_seconds += w.train_seconds;
    trace.epochs = std::move(w.epochs);

    t0 = Clock::now();
    OrderedDesign next = reverse_maximin_order(
        data.inputs, DistanceMetric{state.kernel.lengthscales});
    order_seconds += seconds_since(t0);
    std::vector<std::size_t> old_pos(design.size());
    for (std::size_t k = 0; k < design.size(); ++k)
      old_pos[design.perm[k]] = k;
    auto next_ctx = std::make_unique<ElboContext>(next, ordered_responses(data, next),
                                                  config.variant);
    next_ctx->prepare(next_ctx->training_mode());
    LikelihoodSpec lik = ordered_likelihood(data.likelihood, next);
    lik.noise_scale = state.likelihood.noise_scale;
    VariationalState fresh = initialize(*next_ctx, state.kernel, lik, mean, false);
    for (std::size_t k = 0; k < next.size(); ++k)
      fresh.nu(static_cast<Eigen::Index>(k)) =
          state.nu(static_cast<Eigen::Index>(old_pos[next.perm[k]]));
    state = std::move(fresh);
    design = std::move(next);
    ctx = std::move(next_ctx);
  }

  trace.initial_elbo = full_objective(state, *ctx, config);
  TrainTrace main = train_fixed(state, *ctx, config, config.epochs, "main");
  train_seconds += main.train_seconds;
  for (auto &e : main.epochs)
    trace.epochs.push_back(std::move(e));
  trace.final_elbo = full_objective(state, *ctx, config);
  trace.order_seconds = order_seconds;
  trace.train_seconds = train_seconds;
  return TrainResult{std::move(state), ctx->design(), config.variant, std::move(trace)};
}

} // namespace dkl
