#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "../support.hpp"
#include "dklgp/oracle.hpp"
#include "dklgp/vi.hpp"

using namespace dkl;
using dkl::testing::kernel;
using dkl::testing::normal_vector;
using dkl::testing::uniform_points;

namespace {

struct Instance {
  ElboContext ctx;
  KernelSpec k;
  LikelihoodSpec lik;
  MeanSpec mean;
};

Instance make_instance(std::size_t n, double rho, std::uint64_t seed,
                       LikelihoodFamily family = LikelihoodFamily::Gaussian,
                       PatternVariant::Tag tag = PatternVariant::Tag::NearestNeighbor) {
  std::mt19937_64 gen(seed);
  const PointMatrix x = uniform_points(n, 2, seed);
  OrderedDesign design = reverse_maximin_order(x);
  Eigen::VectorXd y = normal_vector(n, gen);
  if (family == LikelihoodFamily::BernoulliLogit)
    for (Eigen::Index i = 0; i < y.size(); ++i)
      y(i) = y(i) > 0.0 ? 1.0 : 0.0;
  PatternVariant variant;
  variant.tag = tag;
  variant.rho = rho;
  LikelihoodSpec lik;
  lik.family = family;
  lik.noise_scale = 0.4;
  MeanSpec mean{0.1};
  return {ElboContext(std::move(design), y, variant),
          kernel(KernelFamily::Matern15, 2, 0.3, 1.3), lik, mean};
}

oracle::DenseGP dense_of(const Instance &in, const VariationalState &s) {
  oracle::DenseGP g;
  const auto n = static_cast<Eigen::Index>(in.ctx.size());
  g.k = oracle::dense_kernel(s.kernel, in.ctx.design().points);
  g.mu = Eigen::VectorXd::Constant(n, s.mean.constant);
  g.noise_var = Eigen::VectorXd::Constant(n, s.likelihood.noise_scale * s.likelihood.noise_scale);
  g.y = in.ctx.responses();
  return g;
}

double kl_to_posterior(const Instance &in, const VariationalState &s) {
  const oracle::Moments q = oracle::sic_moments(s.nu, s.factor().to_dense());
  const oracle::Moments post = oracle::dense_posterior(dense_of(in, s));
  return oracle::kl_gaussians(q.mean, q.cov, post.mean, post.cov);
}

} // namespace

TEST_CASE("pack and unpack are inverse") {
  Instance in = make_instance(25, 2.0, 3);
  in.ctx.prepare(AncestorMode::Reduced);
  VariationalState s = initialize(in.ctx, in.k, in.lik, in.mean);
  std::mt19937_64 gen(1);
  testing::perturb(s, gen, 0.1);
  const Eigen::VectorXd p = pack(s);
  VariationalState t = s;
  t.nu.setZero();
  unpack(p, t);
  CHECK(t.nu == s.nu);
  CHECK(t.v == s.v);
  CHECK((pack(t) - p).norm() < 1e-14);
  CHECK(layout_of(s).size() == static_cast<std::size_t>(p.size()));
}

TEST_CASE("prior copy makes the divergence part vanish") {
  Instance in = make_instance(30, 2.5, 5);
  in.ctx.prepare(AncestorMode::Full);
  const VariationalState s = initialize(in.ctx, in.k, in.lik, in.mean);
  const double total = elbo(s, in.ctx, AncestorMode::Full);
  const oracle::Moments q = oracle::sic_moments(s.nu, s.factor().to_dense());
  const double t2 = in.lik.noise_scale * in.lik.noise_scale;
  double expected = 0.0;
  for (Eigen::Index i = 0; i < q.mean.size(); ++i) {
    const double r = in.ctx.responses()(i) - q.mean(i);
    expected += -0.5 * ((r * r + q.cov(i, i)) / t2 + std::log(2.0 * M_PI * t2));
  }
  CHECK(total + 15.0 == doctest::Approx(expected).epsilon(1e-11));
}

TEST_CASE("single observation recovers the marginal likelihood") {
  PointMatrix x(1, 1);
  x(0, 0) = 0.4;
  Eigen::VectorXd y(1);
  y(0) = 0.8;
  PatternVariant variant;
  ElboContext ctx(reverse_maximin_order(x), y, variant);
  ctx.prepare(AncestorMode::Full);
  LikelihoodSpec lik;
  lik.noise_scale = 0.5;
  const KernelSpec k = kernel(KernelFamily::SquaredExponential, 1, 1.0, 1.5);
  VariationalState s = initialize(ctx, k, lik, MeanSpec{0.1});
  const double var = 1.5 * 0.25 / 1.75;
  s.nu(0) = 0.1 + 1.5 * 0.7 / 1.75;
  s.v.all_values()[0] = -0.5 * std::log(var);
  // log N(0.8; 0.1, 1.75)
  CHECK(elbo(s, ctx, AncestorMode::Full) + 0.5 ==
        doctest::Approx(-1.3387464271723841).epsilon(1e-12));
}

TEST_CASE("exact posterior attains the log marginal likelihood") {
  Instance in = make_instance(40, 1e6, 11);
  in.ctx.prepare(AncestorMode::Full);
  VariationalState s = initialize(in.ctx, in.k, in.lik, in.mean);
  CHECK(in.ctx.prior_pattern().nnz() == 40 * 41 / 2);
  const oracle::DenseGP g = dense_of(in, s);
  const oracle::Moments post = oracle::dense_posterior(g);
  const Eigen::MatrixXd precision = post.cov.inverse();
  const Eigen::MatrixXd v = Eigen::LLT<Eigen::MatrixXd>(precision).matrixL();
  s.nu = post.mean;
  testing::set_factor(s, v);
  CHECK(elbo(s, in.ctx, AncestorMode::Full) + 20.0 ==
        doctest::Approx(oracle::dense_log_marginal(g)).epsilon(1e-10));
}

TEST_CASE("elbo plus reverse divergence equals the evidence") {
  Instance in = make_instance(20, 1e6, 17);
  in.ctx.prepare(AncestorMode::Full);
  const VariationalState base = initialize(in.ctx, in.k, in.lik, in.mean);
  const double evidence = oracle::dense_log_marginal(dense_of(in, base));
  std::mt19937_64 gen(2);
  for (int rep = 0; rep < 50; ++rep) {
    VariationalState s = base;
    testing::perturb(s, gen, 0.3);
    const double e = elbo(s, in.ctx, AncestorMode::Full) + 10.0;
    CHECK(e <= evidence + 1e-8);
    CHECK(e + kl_to_posterior(in, s) == doctest::Approx(evidence).epsilon(1e-10));
  }
}

TEST_CASE("full ancestor sets lose nothing") {
  for (const auto tag : {PatternVariant::Tag::NearestNeighbor, PatternVariant::Tag::Diagonal}) {
    Instance in = make_instance(60, 2.0, 23, LikelihoodFamily::Gaussian, tag);
    in.ctx.prepare(AncestorMode::Full);
    VariationalState s = initialize(in.ctx, in.k, in.lik, in.mean);
    std::mt19937_64 gen(4);
    testing::perturb(s, gen, 0.2);
    const double full = elbo(s, in.ctx, AncestorMode::Full);
    const double dense = elbo(s, in.ctx, AncestorMode::ExactDense);
    CHECK(std::abs(full - dense) <= 1e-12 * std::abs(dense));
  }
}

TEST_CASE("mean-field optimum factorizes over independent coordinates") {
  PointMatrix x(6, 1);
  for (Eigen::Index i = 0; i < 6; ++i)
    x(i, 0) = 10.0 * static_cast<double>(i);
  Eigen::VectorXd y(6);
  y << 0.3, -1.2, 0.8, 2.0, -0.4, 0.0;
  PatternVariant variant;
  variant.tag = PatternVariant::Tag::Diagonal;
  ElboContext ctx(reverse_maximin_order(x), y, variant);
  ctx.prepare(AncestorMode::Full);
  LikelihoodSpec lik;
  lik.noise_scale = 0.5;
  const KernelSpec k = kernel(KernelFamily::SquaredExponential, 1, 0.1, 2.0);
  VariationalState s = initialize(ctx, k, lik, MeanSpec{});
  double expected = 0.0;
  for (Eigen::Index i = 0; i < 6; ++i) {
    const double yi = ctx.responses()(i);
    s.nu(i) = 2.0 * yi / 2.25;
    s.v.values(static_cast<std::size_t>(i))[0] = -0.5 * std::log(2.0 * 0.25 / 2.25);
    expected += -0.5 * (yi * yi / 2.25 + std::log(2.0 * M_PI * 2.25)) - 0.5;
  }
  CHECK(elbo(s, ctx, AncestorMode::Full) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("full batch estimate equals the reduced elbo") {
  Instance in = make_instance(50, 2.0, 29);
  in.ctx.prepare(AncestorMode::Reduced);
  VariationalState s = initialize(in.ctx, in.k, in.lik, in.mean);
  std::mt19937_64 gen(5);
  testing::perturb(s, gen, 0.2);
  std::vector<std::size_t> all(50);
  std::iota(all.begin(), all.end(), 0);
  const BatchObjective obj = elbo_minibatch_grad(s, in.ctx, all, AncestorMode::Reduced, {});
  CHECK(obj.value == doctest::Approx(elbo(s, in.ctx, AncestorMode::Reduced)).epsilon(1e-13));
}

TEST_CASE("minibatch gradient does not depend on the thread count") {
  Instance in = make_instance(60, 2.0, 33, LikelihoodFamily::BernoulliLogit);
  in.ctx.prepare(AncestorMode::Reduced);
  VariationalState s = initialize(in.ctx, in.k, in.lik, in.mean);
  std::mt19937_64 gen(4);
  testing::perturb(s, gen, 0.2);
  std::vector<std::size_t> batch(37);
  std::iota(batch.begin(), batch.end(), 11);
  const auto noise = draw_batch_noise(in.ctx, batch, AncestorMode::Reduced, 2, 3, 0, 0);
  const BatchObjective one = elbo_minibatch_grad(s, in.ctx, batch, AncestorMode::Reduced, noise, {}, 1);
  const BatchObjective three = elbo_minibatch_grad(s, in.ctx, batch, AncestorMode::Reduced, noise, {}, 3);
  CHECK(one.value == three.value);
  CHECK((one.gradient.array() == three.gradient.array()).all());
}

TEST_CASE("minibatch estimate is unbiased") {
  Instance in = make_instance(50, 2.0, 31);
  in.ctx.prepare(AncestorMode::Reduced);
  VariationalState s = initialize(in.ctx, in.k, in.lik, in.mean);
  std::mt19937_64 gen(6);
  testing::perturb(s, gen, 0.2);
  const double target = elbo(s, in.ctx, AncestorMode::Reduced);
  CounterRng rng(7);
  double sum = 0.0, sum2 = 0.0;
  const int reps = 2000;
  for (int r = 0; r < reps; ++r) {
    const auto order = shuffled_indices(50, rng);
    const std::span<const std::size_t> batch(order.data(), 8);
    const double v = elbo_minibatch_grad(s, in.ctx, batch, AncestorMode::Reduced, {}).value;
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sum2 / reps - mean * mean) / reps);
  CHECK(std::abs(mean - target) <= 3.0 * se);
}

TEST_CASE("gradient agrees with finite differences") {
  for (const auto family : {LikelihoodFamily::Gaussian, LikelihoodFamily::StudentT2,
                            LikelihoodFamily::BernoulliLogit}) {
    CAPTURE(to_string(family));
    Instance in = make_instance(30, 2.0, 37, family);
    in.ctx.prepare(AncestorMode::Reduced);
    VariationalState s = initialize(in.ctx, in.k, in.lik, in.mean);
    std::mt19937_64 gen(8);
    testing::perturb(s, gen, 0.2);
    const std::vector<std::size_t> batch{0, 3, 7, 12, 20, 29};
    std::vector<TermNoise> noise;
    if (family != LikelihoodFamily::Gaussian)
      noise = draw_batch_noise(in.ctx, batch, AncestorMode::Reduced, 3, 9, 0, 0);
    const BatchObjective obj =
        elbo_minibatch_grad(s, in.ctx, batch, AncestorMode::Reduced, noise);
    const auto objective = [&](const Eigen::VectorXd &p) {
      VariationalState t = s;
      unpack(p, t);
      return elbo_minibatch_grad(t, in.ctx, batch, AncestorMode::Reduced, noise).value;
    };
    const Eigen::VectorXd fd = oracle::fd_gradient_extrapolated(objective, pack(s), 1e-3);
    std::size_t checked = 0;
    for (Eigen::Index k = 0; k < fd.size(); ++k) {
      if (std::abs(obj.gradient(k)) <= 1e-6)
        continue;
      ++checked;
      CAPTURE(k);
      CHECK(std::abs(obj.gradient(k) - fd(k)) <= 1e-4 * std::abs(obj.gradient(k)));
    }
    CHECK(checked > 20);
  }
}

TEST_CASE("training is reproducible for a fixed seed") {
  const PointMatrix x = uniform_points(60, 2, 41);
  std::mt19937_64 gen(41);
  Dataset data{x, normal_vector(60, gen), {}};
  TrainConfig config;
  config.epochs = 2;
  config.warmup_epochs = 1;
  config.batch_size = 16;
  config.seed = 99;
  const KernelSpec k0 = kernel(KernelFamily::Matern15, 2, 0.25, 0.25);
  const TrainResult a = train(data, k0, MeanSpec{}, config);
  const TrainResult b = train(data, k0, MeanSpec{}, config);
  REQUIRE(a.trace.epochs.size() == 3);
  for (std::size_t e = 0; e < a.trace.epochs.size(); ++e) {
    CHECK(a.trace.epochs[e].elbo_estimate == b.trace.epochs[e].elbo_estimate);
    CHECK(a.trace.epochs[e].lengthscales == b.trace.epochs[e].lengthscales);
  }
  CHECK(a.state.nu == b.state.nu);
  CHECK(a.state.v == b.state.v);
}
