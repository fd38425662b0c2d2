#include "dklgp/vi.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <thread>

#include "dklgp/error.hpp"

namespace dkl {

namespace {

double scale_at(const VariationalState &state, std::size_t i) {
  const auto &lik = state.likelihood;
  return lik.obs_scales.empty() ? lik.noise_scale : lik.obs_scales[i];
}

bool trains_noise(const VariationalState &state) {
  return state.likelihood.has_noise() && state.likelihood.obs_scales.empty();
}

ActiveSetIndex &workspace(std::size_t n) {
  thread_local ActiveSetIndex index;
  if (index.size() != n)
    index.resize(n);
  return index;
}

SparsityPattern union_pattern(const SparsityPattern &a, const SparsityPattern &b,
                              PatternKind kind) {
  SparsityPattern out(a.dim(), kind);
  std::vector<std::size_t> merged;
  for (std::size_t i = 0; i < a.columns(); ++i) {
    merged.clear();
    const auto ca = a.col(i);
    const auto cb = b.col(i);
    std::set_union(ca.begin(), ca.end(), cb.begin(), cb.end(),
                   std::back_inserter(merged));
    out.push_column(merged);
  }
  return out;
}

struct TermInputs {
  const VariationalState &state;
  const SparseLowerColumns &vf; // diagonal exponentiated
  const PriorFactor &prior;
  const ElboContext &ctx;
  AncestorMode mode;
};

// With `raw_v` set, d/dV of the term is accumulated there (one slot per
// stored entry) instead of being chain-ruled into `grad->entries`.
double term_impl(std::size_t i, const TermInputs &in, const TermNoise *noise,
                 TermGradient *grad, const GradientMask &mask,
                 double *raw_v = nullptr) {
  const auto &state = in.state;
  const auto &vf = in.vf;
  const std::size_t n = in.ctx.size();
  std::vector<std::size_t> scratch;
  const auto active = in.ctx.active_set(i, in.mode, scratch);
  const std::size_t m = active.size();
  ActiveSetIndex &index = workspace(n);
  index.bind(active);

  struct Unbind {
    ActiveSetIndex &index;
    std::span<const std::size_t> active;
    ~Unbind() { index.unbind(active); }
  } unbind{index, active};

  const bool need_hyper = grad && (mask.lengthscales || mask.variance);
  PriorColumn column;
  if (need_hyper) {
    column = in.prior.column_with_factor(i);
  } else {
    column.support = in.ctx.prior_pattern().col(i);
    column.values = in.prior.column(i);
  }
  const auto support = column.support;
  const Eigen::VectorXd &c = column.values;

  std::vector<double> rhs(m, 0.0);
  for (std::size_t s = 0; s < support.size(); ++s) {
    const long p = index.position(support[s]);
    if (p < 0)
      throw ShapeMismatch("active set of column " + std::to_string(i) +
                          " does not contain the prior pattern");
    rhs[static_cast<std::size_t>(p)] = c(static_cast<Eigen::Index>(s));
  }
  const std::vector<double> x1 = restricted_forward_solve(vf, active, rhs, index);
  std::fill(rhs.begin(), rhs.end(), 0.0);
  rhs[0] = 1.0;
  const std::vector<double> x2 = restricted_forward_solve(vf, active, rhs, index);

  const double mu = state.mean.constant;
  double delta_c = 0.0;
  for (std::size_t s = 0; s < support.size(); ++s)
    delta_c += (state.nu(static_cast<Eigen::Index>(support[s])) - mu) *
               c(static_cast<Eigen::Index>(s));

  double x1_norm2 = 0.0;
  double x2_norm2 = 0.0;
  for (std::size_t p = 0; p < m; ++p) {
    x1_norm2 += x1[p] * x1[p];
    x2_norm2 += x2[p] * x2[p];
  }

  const auto family = state.likelihood.family;
  const double y = in.ctx.y(i);
  const double tau = scale_at(state, i);
  const double nu_i = state.nu(static_cast<Eigen::Index>(i));
  const bool closed_form = noise == nullptr;
  if (closed_form && family != LikelihoodFamily::Gaussian)
    throw ConfigError("non-gaussian likelihoods need Monte Carlo draws");
  if (!closed_form && static_cast<std::size_t>(noise->cols()) != m)
    throw ShapeMismatch("noise draws for column " + std::to_string(i) +
                        " do not match the active set size");

  double expected = 0.0;
  double dnu_i = 0.0;
  double dlog_noise = 0.0;
  std::vector<double> x2bar(m, 0.0);
  if (closed_form) {
    expected = gaussian_expected_loglik(nu_i, std::sqrt(x2_norm2), y, tau);
    const double t2 = tau * tau;
    dnu_i = (y - nu_i) / t2;
    for (std::size_t p = 0; p < m; ++p)
      x2bar[p] = -x2[p] / t2;
    dlog_noise = 0.5 * (((y - nu_i) * (y - nu_i) + x2_norm2) / t2 - 1.0);
  } else {
    const auto draws = noise->rows();
    for (Eigen::Index l = 0; l < draws; ++l) {
      double f = nu_i;
      for (std::size_t p = 0; p < m; ++p)
        f += x2[p] * (*noise)(l, static_cast<Eigen::Index>(p));
      expected += log_likelihood(family, y, f, tau);
      if (grad) {
        const double g = log_likelihood_df(family, y, f, tau);
        dnu_i += g;
        for (std::size_t p = 0; p < m; ++p)
          x2bar[p] += g * (*noise)(l, static_cast<Eigen::Index>(p));
        dlog_noise += log_likelihood_dlogvar(family, y, f, tau);
      }
    }
    const double inv = 1.0 / static_cast<double>(draws);
    expected *= inv;
    dnu_i *= inv;
    dlog_noise *= inv;
    for (auto &v : x2bar)
      v *= inv;
  }

  const double log_c0 = std::log(c(0));
  const double log_vii = std::log(vf.diag(i));
  const double value =
      expected - 0.5 * delta_c * delta_c + log_c0 - log_vii - 0.5 * x1_norm2;
  if (!grad)
    return value;

  const std::size_t v_off = state.nu.size();
  auto &entries = grad->entries;
  grad->dlog_lengthscales = Eigen::VectorXd::Zero(state.kernel.lengthscales.size());
  grad->dlog_variance = 0.0;
  grad->dlog_noise = 0.0;

  std::vector<double> x1bar(m);
  for (std::size_t p = 0; p < m; ++p)
    x1bar[p] = -x1[p];
  const std::vector<double> r1 = restricted_transpose_solve(vf, active, x1bar, index);

  if (mask.v) {
    const std::vector<double> r2 = restricted_transpose_solve(vf, active, x2bar, index);
    if (raw_v) {
      auto sink = [&](std::size_t e, double g) { raw_v[e] += g; };
      restricted_solve_entry_adjoint(vf, active, r1, x1, index, sink);
      restricted_solve_entry_adjoint(vf, active, r2, x2, index, sink);
      raw_v[vf.col_begin(i)] -= 1.0 / vf.diag(i);
    } else {
      const auto &ptr = vf.col_ptr();
      auto sink = [&](std::size_t e, double g) {
        const auto k = static_cast<std::size_t>(
                           std::upper_bound(ptr.begin(), ptr.end(), e) - ptr.begin()) - 1;
        const std::size_t d = ptr[k];
        entries.emplace_back(v_off + d, g * vf.all_values()[e]);
        if (e != d)
          entries.emplace_back(v_off + e, g * vf.all_values()[d]);
      };
      restricted_solve_entry_adjoint(vf, active, r1, x1, index, sink);
      restricted_solve_entry_adjoint(vf, active, r2, x2, index, sink);
      entries.emplace_back(v_off + vf.col_begin(i), -1.0);
    }
  }

  if (mask.nu) {
    entries.emplace_back(i, dnu_i);
    for (std::size_t s = 0; s < support.size(); ++s)
      entries.emplace_back(support[s], -delta_c * c(static_cast<Eigen::Index>(s)));
  }

  if (need_hyper) {
    Eigen::VectorXd gc(static_cast<Eigen::Index>(support.size()));
    for (std::size_t s = 0; s < support.size(); ++s) {
      const auto p = static_cast<std::size_t>(index.position(support[s]));
      gc(static_cast<Eigen::Index>(s)) =
          -delta_c * (state.nu(static_cast<Eigen::Index>(support[s])) - mu) + r1[p];
    }
    gc(0) += 1.0 / c(0);
    const KernelGradient kg =
        column.backprop(gc, state.kernel, in.ctx.design().points);
    if (mask.lengthscales)
      grad->dlog_lengthscales = kg.dlog_lengthscales;
    if (mask.variance)
      grad->dlog_variance = kg.dlog_variance;
  }
  if (mask.noise && trains_noise(state))
    grad->dlog_noise = dlog_noise;
  return value;
}

TermNoise draw_noise(CounterRng &rng, std::size_t samples, std::size_t width) {
  TermNoise z(static_cast<Eigen::Index>(samples), static_cast<Eigen::Index>(width));
  for (Eigen::Index l = 0; l < z.rows(); ++l)
    for (Eigen::Index k = 0; k < z.cols(); ++k)
      z(l, k) = rng.normal();
  return z;
}

std::size_t worker_count(std::size_t count, unsigned threads) {
  return std::max<std::size_t>(1, std::min<std::size_t>(threads, count));
}

// Calls fn(k, worker) for every k < count.
template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn &&fn) {
  const std::size_t workers = worker_count(count, threads);
  if (workers <= 1) {
    for (std::size_t k = 0; k < count; ++k)
      fn(k, std::size_t{0});
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t k = w; k < count; k += workers)
          fn(k, w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto &t : pool)
    t.join();
  for (auto &e : errors)
    if (e)
      std::rethrow_exception(e);
}

} // namespace

SparseLowerColumns VariationalState::factor() const {
  SparseLowerColumns out = v;
  for (std::size_t k = 0; k < out.size(); ++k) {
    auto vals = out.values(k);
    const double diag = std::exp(vals[0]);
    vals[0] = diag;
    for (std::size_t e = 1; e < vals.size(); ++e)
      vals[e] *= diag;
  }
  return out;
}

ParamLayout layout_of(const VariationalState &state) {
  ParamLayout l;
  l.n = static_cast<std::size_t>(state.nu.size());
  l.nnz = state.v.nnz();
  l.dim = state.kernel.dim();
  return l;
}

Eigen::VectorXd pack(const VariationalState &state) {
  const ParamLayout l = layout_of(state);
  Eigen::VectorXd p(static_cast<Eigen::Index>(l.size()));
  p.segment(0, static_cast<Eigen::Index>(l.n)) = state.nu;
  const auto &vals = state.v.all_values();
  for (std::size_t e = 0; e < l.nnz; ++e)
    p(static_cast<Eigen::Index>(l.v() + e)) = vals[e];
  p.segment(static_cast<Eigen::Index>(l.log_lengthscales()),
            static_cast<Eigen::Index>(l.dim)) =
      state.kernel.lengthscales.array().log().matrix();
  p(static_cast<Eigen::Index>(l.log_variance())) = std::log(state.kernel.variance);
  p(static_cast<Eigen::Index>(l.log_noise())) =
      2.0 * std::log(state.likelihood.noise_scale);
  return p;
}

void unpack(const Eigen::VectorXd &params, VariationalState &state) {
  const ParamLayout l = layout_of(state);
  if (static_cast<std::size_t>(params.size()) != l.size())
    throw ShapeMismatch("parameter vector has the wrong length");
  state.nu = params.segment(0, static_cast<Eigen::Index>(l.n));
  auto &vals = state.v.all_values();
  for (std::size_t e = 0; e < l.nnz; ++e)
    vals[e] = params(static_cast<Eigen::Index>(l.v() + e));
  state.kernel.lengthscales =
      params.segment(static_cast<Eigen::Index>(l.log_lengthscales()),
                     static_cast<Eigen::Index>(l.dim))
          .array()
          .exp()
          .matrix();
  state.kernel.variance = std::exp(params(static_cast<Eigen::Index>(l.log_variance())));
  state.likelihood.noise_scale =
      std::exp(0.5 * params(static_cast<Eigen::Index>(l.log_noise())));
}

ElboContext::ElboContext(OrderedDesign design, Eigen::VectorXd y_ordered,
                         PatternVariant variant)
    : design_(std::move(design)), y_(std::move(y_ordered)), variant_(variant) {
  variant_.validate();
  if (static_cast<std::size_t>(y_.size()) != design_.size())
    throw ShapeMismatch("responses do not match the design size");
  prior_ = variant_pattern(design_, variant_, PatternKind::Prior);
  posterior_ = variant_pattern(design_, variant_, PatternKind::Posterior);
}

void ElboContext::prepare(AncestorMode mode) {
  if (mode == AncestorMode::Full && !full_) {
    full_ = full_ancestors(prior_, posterior_);
  } else if (mode == AncestorMode::Reduced && !reduced_) {
    if (variant_.tag == PatternVariant::Tag::NearestNeighbor) {
      reduced_ = union_pattern(reduced_ancestors(design_, variant_.rho), prior_,
                               PatternKind::ReducedAncestor);
    } else {
      prepare(AncestorMode::Full);
      reduced_ = *full_;
    }
  }
}

std::span<const std::size_t>
ElboContext::active_set(std::size_t i, AncestorMode mode,
                        std::vector<std::size_t> &scratch) const {
  switch (mode) {
  case AncestorMode::Full:
    if (!full_)
      throw ConfigError("full ancestor sets have not been prepared");
    return full_->col(i);
  case AncestorMode::Reduced:
    if (!reduced_)
      throw ConfigError("reduced ancestor sets have not been prepared");
    return reduced_->col(i);
  case AncestorMode::ExactDense:
    break;
  }
  scratch.resize(size() - i);
  std::iota(scratch.begin(), scratch.end(), i);
  return scratch;
}

AncestorMode ElboContext::training_mode() const {
  return variant_.tag == PatternVariant::Tag::NearestNeighbor ? AncestorMode::Reduced
                                                              : AncestorMode::Full;
}

double elbo_term(std::size_t i, const VariationalState &state,
                 const ElboContext &ctx, AncestorMode mode, const TermNoise *noise,
                 TermGradient *gradient, const GradientMask &mask) {
  if (i >= ctx.size())
    throw ShapeMismatch("elbo_term: index out of range");
  const SparseLowerColumns vf = state.factor();
  const PriorFactor prior(ctx.design(), state.kernel, state.mean, ctx.prior_pattern());
  const TermInputs in{state, vf, prior, ctx, mode};
  return term_impl(i, in, noise, gradient, mask);
}

double elbo(const VariationalState &state, const ElboContext &ctx,
            AncestorMode mode) {
  if (state.likelihood.family != LikelihoodFamily::Gaussian)
    return elbo_mc(state, ctx, mode, 1000, 0);
  const SparseLowerColumns vf = state.factor();
  const PriorFactor prior(ctx.design(), state.kernel, state.mean, ctx.prior_pattern());
  const TermInputs in{state, vf, prior, ctx, mode};
  double total = 0.0;
  for (std::size_t i = 0; i < ctx.size(); ++i)
    total += term_impl(i, in, nullptr, nullptr, {});
  return total;
}

double elbo_mc(const VariationalState &state, const ElboContext &ctx,
               AncestorMode mode, std::size_t samples, std::uint64_t seed) {
  if (state.likelihood.family == LikelihoodFamily::Gaussian)
    return elbo(state, ctx, mode);
  const SparseLowerColumns vf = state.factor();
  const PriorFactor prior(ctx.design(), state.kernel, state.mean, ctx.prior_pattern());
  const TermInputs in{state, vf, prior, ctx, mode};
  double total = 0.0;
  std::vector<std::size_t> scratch;
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    CounterRng rng(seed, {0xE7A1ull, i});
    const TermNoise z = draw_noise(rng, samples, ctx.active_set(i, mode, scratch).size());
    total += term_impl(i, in, &z, nullptr, {});
  }
  return total;
}

std::vector<TermNoise> draw_batch_noise(const ElboContext &ctx,
                                        std::span<const std::size_t> batch,
                                        AncestorMode mode, std::size_t samples,
                                        std::uint64_t seed, std::uint64_t epoch,
                                        std::uint64_t step) {
  std::vector<TermNoise> out;
  out.reserve(batch.size());
  std::vector<std::size_t> scratch;
  for (const std::size_t i : batch) {
    CounterRng rng(seed, {epoch, step, i});
    out.push_back(draw_noise(rng, samples, ctx.active_set(i, mode, scratch).size()));
  }
  return out;
}

BatchObjective elbo_minibatch_grad(const VariationalState &state,
                                   const ElboContext &ctx,
                                   std::span<const std::size_t> batch,
                                   AncestorMode mode,
                                   const std::vector<TermNoise> &noise,
                                   const GradientMask &mask, unsigned threads,
                                   const PriorFactor *prior) {
  if (batch.empty())
    throw ConfigError("minibatch must not be empty");
  if (!noise.empty() && noise.size() != batch.size())
    throw ShapeMismatch("one noise block is needed per minibatch element");
  const SparseLowerColumns vf = state.factor();
  std::optional<PriorFactor> own;
  if (!prior)
    prior = &own.emplace(ctx.design(), state.kernel, state.mean, ctx.prior_pattern());
  const TermInputs in{state, vf, *prior, ctx, mode};

  std::vector<double> values(batch.size());
  std::vector<TermGradient> grads(batch.size());
  // d/dV is accumulated per fixed block of consecutive elements and the blocks
  // are summed in order, so the result does not depend on the thread count.
  constexpr std::size_t kBlocks = 8;
  const std::size_t nnz = vf.all_values().size();
  const std::size_t blocks = std::min(kBlocks, batch.size());
  std::vector<std::vector<double>> raw(blocks, std::vector<double>(mask.v ? nnz : 0, 0.0));
  parallel_for(blocks, threads, [&](std::size_t b, std::size_t) {
    const std::size_t lo = b * batch.size() / blocks;
    const std::size_t hi = (b + 1) * batch.size() / blocks;
    for (std::size_t k = lo; k < hi; ++k) {
      const TermNoise *z = noise.empty() ? nullptr : &noise[k];
      values[k] = term_impl(batch[k], in, z, &grads[k], mask, mask.v ? raw[b].data() : nullptr);
    }
  });

  const ParamLayout l = layout_of(state);
  const double scale = static_cast<double>(ctx.size()) / static_cast<double>(batch.size());
  BatchObjective out;
  out.gradient = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(l.size()));
  const auto ls = static_cast<Eigen::Index>(l.log_lengthscales());
  const auto d = static_cast<Eigen::Index>(l.dim);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    out.value += values[k];
    for (const auto &[idx, g] : grads[k].entries)
      out.gradient(static_cast<Eigen::Index>(idx)) += g;
    out.gradient.segment(ls, d) += grads[k].dlog_lengthscales;
    out.gradient(static_cast<Eigen::Index>(l.log_variance())) += grads[k].dlog_variance;
    out.gradient(static_cast<Eigen::Index>(l.log_noise())) += grads[k].dlog_noise;
  }
  if (mask.v) {
    // Chain rule into the stored form: log-diagonal and diagonal-relative entries.
    const auto v_off = static_cast<Eigen::Index>(state.nu.size());
    const auto &vals = vf.all_values();
    for (std::size_t b = 1; b < raw.size(); ++b)
      for (std::size_t e = 0; e < nnz; ++e)
        raw[0][e] += raw[b][e];
    const auto &g = raw[0];
    for (std::size_t col = 0; col < vf.size(); ++col) {
      const std::size_t b = vf.col_begin(col);
      const std::size_t end = b + vf.rows(col).size();
      double theta = 0.0;
      for (std::size_t e = b; e < end; ++e)
        theta += g[e] * vals[e];
      out.gradient(v_off + static_cast<Eigen::Index>(b)) += theta;
      for (std::size_t e = b + 1; e < end; ++e)
        out.gradient(v_off + static_cast<Eigen::Index>(e)) += g[e] * vals[b];
    }
  }
  out.value *= scale;
  out.gradient *= scale;
  return out;
}

VariationalState initialize(const ElboContext &ctx, const KernelSpec &kernel,
                            const LikelihoodSpec &likelihood, const MeanSpec &mean,
                            bool moment_correction) {
  const std::size_t n = ctx.size();
  VariationalState state;
  state.kernel = kernel;
  state.likelihood = likelihood;
  state.mean = mean;
  state.nu = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), mean.constant);
  state.v = SparseLowerColumns(ctx.posterior_pattern().to_vectors());

  const PriorFactor prior(ctx.design(), kernel, mean, ctx.prior_pattern());
  const SparseLowerColumns l = prior_factor_sparse(prior);
  for (std::size_t i = 0; i < n; ++i) {
    const auto prow = l.rows(i);
    const auto pval = l.values(i);
    const auto qrow = state.v.rows(i);
    auto qval = state.v.values(i);
    std::size_t a = 0;
    for (std::size_t b = 0; b < qrow.size(); ++b) {
      while (a < prow.size() && prow[a] < qrow[b])
        ++a;
      qval[b] = (a < prow.size() && prow[a] == qrow[b]) ? pval[a] : 0.0;
    }
    for (std::size_t b = 1; b < qval.size(); ++b)
      qval[b] /= qval[0];
    qval[0] = std::log(qval[0]);
  }

  if (moment_correction && likelihood.family == LikelihoodFamily::Gaussian) {
    // (L L^T + R^{-1}) delta = R^{-1} (y - mu) by conjugate gradients.
    Eigen::VectorXd rinv(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const double t = scale_at(state, i);
      rinv(static_cast<Eigen::Index>(i)) = 1.0 / (t * t);
    }
    auto apply = [&](const Eigen::VectorXd &x) {
      Eigen::VectorXd ltx(static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        const auto r = l.rows(i);
        const auto v = l.values(i);
        for (std::size_t e = 0; e < r.size(); ++e)
          s += v[e] * x(static_cast<Eigen::Index>(r[e]));
        ltx(static_cast<Eigen::Index>(i)) = s;
      }
      Eigen::VectorXd out = rinv.cwiseProduct(x);
      for (std::size_t i = 0; i < n; ++i) {
        const auto r = l.rows(i);
        const auto v = l.values(i);
        for (std::size_t e = 0; e < r.size(); ++e)
          out(static_cast<Eigen::Index>(r[e])) += v[e] * ltx(static_cast<Eigen::Index>(i));
      }
      return out;
    };
    const Eigen::VectorXd b =
        rinv.cwiseProduct((ctx.responses().array() - mean.constant).matrix());
    Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
    Eigen::VectorXd r = b;
    Eigen::VectorXd p = r;
    double rr = r.squaredNorm();
    const double stop = 1e-20 * std::max(rr, 1e-300);
    for (std::size_t it = 0; it < 1000 && rr > stop; ++it) {
      const Eigen::VectorXd ap = apply(p);
      const double alpha = rr / p.dot(ap);
      x += alpha * p;
      r -= alpha * ap;
      const double rr_new = r.squaredNorm();
      p = r + (rr_new / rr) * p;
      rr = rr_new;
    }
    state.nu.array() += x.array();
  }
  return state;
}

} // namespace dkl
