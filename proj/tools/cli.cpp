#include "cli.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "dklgp/error.hpp"
#include "dklgp/log.hpp"
#include "dklgp/rng.hpp"

namespace dkl::cli {

using nlohmann::json;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

std::vector<std::string> split_line(const std::string &line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ','))
    out.push_back(field);
  if (!line.empty() && line.back() == ',')
    out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

double parse_double(const std::string &text, const std::string &where) {
  const std::string t = trim(text);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw ConfigError(where + ": cannot parse '" + text + "' as a number");
  return value;
}

json scales_to_json(const std::vector<double> &scales) {
  json out = json::array();
  for (double s : scales)
    out.push_back(std::isfinite(s) ? json(s) : json(nullptr));
  return out;
}

std::vector<double> scales_from_json(const json &j) {
  std::vector<double> out;
  for (const auto &s : j)
    out.push_back(s.is_null() ? kInfinity : s.get<double>());
  return out;
}

json kernel_to_json(const KernelSpec &k) {
  return {{"family", to_string(k.family)},
          {"variance", k.variance},
          {"lengthscales", std::vector<double>(k.lengthscales.begin(), k.lengthscales.end())},
          {"rq_alpha", k.rq_alpha}};
}

KernelSpec kernel_from_json(const json &j) {
  KernelSpec k;
  k.family = kernel_family_from_string(j.at("family").get<std::string>());
  k.variance = j.at("variance").get<double>();
  const auto ls = j.at("lengthscales").get<std::vector<double>>();
  k.lengthscales = Eigen::Map<const Eigen::VectorXd>(ls.data(), static_cast<Eigen::Index>(ls.size()));
  k.rq_alpha = j.value("rq_alpha", 1.0);
  return k;
}

PointMatrix points_from_json(const json &j, std::size_t d) {
  const auto flat = j.get<std::vector<double>>();
  if (d == 0 || flat.size() % d != 0)
    throw ConfigError("model file: point array does not match the input dimension");
  PointMatrix p(static_cast<Eigen::Index>(flat.size() / d), static_cast<Eigen::Index>(d));
  std::copy(flat.begin(), flat.end(), p.data());
  return p;
}

} // namespace

std::optional<std::size_t> Table::find(const std::string &name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end())
    return std::nullopt;
  return static_cast<std::size_t>(it - header.begin());
}

Eigen::VectorXd Table::column(const std::string &name) const {
  const auto c = find(name);
  if (!c)
    throw ConfigError("missing column '" + name + "'");
  return data.col(static_cast<Eigen::Index>(*c));
}

PointMatrix Table::inputs() const {
  std::vector<std::size_t> cols;
  for (std::size_t k = 1;; ++k) {
    const auto c = find("x" + std::to_string(k));
    if (!c)
      break;
    cols.push_back(*c);
  }
  if (cols.empty())
    throw ConfigError("no input columns (expected x1, x2, ...)");
  PointMatrix x(data.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k)
    x.col(static_cast<Eigen::Index>(k)) = data.col(static_cast<Eigen::Index>(cols[k]));
  return x;
}

Table read_csv(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open '" + path + "' for reading");
  std::string line;
  if (!std::getline(in, line))
    throw ConfigError(path + ": empty file (a header row is required)");
  Table t;
  for (auto &h : split_line(line))
    t.header.push_back(trim(h));
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty())
      continue;
    const auto fields = split_line(line);
    if (fields.size() != t.header.size())
      throw ShapeMismatch(path + ":" + std::to_string(lineno) + ": expected " +
                          std::to_string(t.header.size()) + " fields, found " +
                          std::to_string(fields.size()));
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto &f : fields)
      row.push_back(parse_double(f, path + ":" + std::to_string(lineno)));
    rows.push_back(std::move(row));
  }
  t.data.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      t.data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return t;
}

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

void write_csv(const std::string &path, const Table &table) {
  std::ofstream out(path);
  if (!out)
    throw ConfigError("cannot open '" + path + "' for writing");
  for (std::size_t c = 0; c < table.header.size(); ++c)
    out << (c ? "," : "") << table.header[c];
  out << '\n';
  for (Eigen::Index r = 0; r < table.data.rows(); ++r) {
    for (Eigen::Index c = 0; c < table.data.cols(); ++c)
      out << (c ? "," : "") << format_double(table.data(r, c));
    out << '\n';
  }
  if (!out)
    throw ConfigError("write to '" + path + "' failed");
}

SimulatedData simulate(const SimulateConfig &config) {
  if (config.n > kDenseSampleLimit)
    throw SizeGuard("simulate draws f by dense factorization; n = " + std::to_string(config.n) +
                    " exceeds the limit of " + std::to_string(kDenseSampleLimit));
  if (config.n == 0 || config.d == 0)
    throw ConfigError("simulate needs n >= 1 and d >= 1");
  config.kernel.validate();
  if (config.likelihood.noise_scale != 0.0) // zero gives noiseless responses
    config.likelihood.validate();
  if (config.kernel.dim() != config.d)
    throw ConfigError("kernel has " + std::to_string(config.kernel.dim()) +
                      " length-scales but d = " + std::to_string(config.d));

  const auto n = static_cast<Eigen::Index>(config.n);
  const auto d = static_cast<Eigen::Index>(config.d);
  SimulatedData out;
  out.x.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    CounterRng rng(config.seed, {0x1A7u, static_cast<std::uint64_t>(i)});
    for (Eigen::Index k = 0; k < d; ++k)
      out.x(i, k) = rng.uniform();
  }

  const Eigen::MatrixXd k = cross_covariance(config.kernel, out.x, out.x);
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  double jitter = 0.0;
  while (llt.info() != Eigen::Success) {
    jitter = jitter == 0.0 ? 1e-12 * config.kernel.variance : jitter * 10.0;
    if (jitter > 1e-6 * config.kernel.variance)
      throw NotPositiveDefinite("kernel matrix is not positive definite even with jitter");
    llt.compute(k + jitter * Eigen::MatrixXd::Identity(n, n));
  }
  if (jitter > 0.0)
    log_warning("simulate: added jitter " + format_double(jitter) + " to the kernel diagonal");
  out.jitter = jitter;

  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    CounterRng rng(config.seed, {0xF00u, static_cast<std::uint64_t>(i)});
    z(i) = rng.normal();
  }
  out.f = (llt.matrixL() * z).array() + config.mean.constant;

  out.y.resize(n);
  const double s = config.likelihood.noise_scale;
  for (Eigen::Index i = 0; i < n; ++i) {
    CounterRng rng(config.seed, {0x7E5u, static_cast<std::uint64_t>(i)});
    const double f = out.f(i);
    switch (config.likelihood.family) {
    case LikelihoodFamily::Gaussian:
      out.y(i) = f + s * rng.normal();
      break;
    case LikelihoodFamily::StudentT2: {
      const double z0 = rng.normal();
      const double w = -2.0 * std::log(rng.uniform());
      out.y(i) = f + s * z0 / std::sqrt(w / 2.0);
      break;
    }
    case LikelihoodFamily::BernoulliLogit:
      out.y(i) = rng.uniform() < 1.0 / (1.0 + std::exp(-f)) ? 1.0 : 0.0;
      break;
    }
  }
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
split_rows(std::size_t n, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("test fraction must lie in (0, 1)");
  CounterRng rng(seed, {0x5917u});
  const auto order = shuffled_indices(n, rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {train, test};
}

Table select_rows(const Table &table, const std::vector<std::size_t> &rows) {
  Table out;
  out.header = table.header;
  out.data.resize(static_cast<Eigen::Index>(rows.size()), table.data.cols());
  for (std::size_t r = 0; r < rows.size(); ++r)
    out.data.row(static_cast<Eigen::Index>(r)) = table.data.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

PreprocessResult preprocess(const Table &raw, const PreprocessOptions &options) {
  const auto response = raw.find(options.response);
  if (!response)
    throw ConfigError("response column '" + options.response + "' not found");
  if (raw.rows() == 0)
    throw ConfigError("no data rows to preprocess");

  PreprocessResult res;
  std::vector<Eigen::VectorXd> kept;
  for (std::size_t c = 0; c < raw.header.size(); ++c) {
    if (c == *response)
      continue;
    Eigen::VectorXd col = raw.data.col(static_cast<Eigen::Index>(c));
    const double lo = col.minCoeff();
    const double hi = col.maxCoeff();
    if (hi > lo)
      col = (col.array() - lo) / (hi - lo);
    else
      col.setZero();
    const double sd = std::sqrt((col.array() - col.mean()).square().mean());
    if (sd < options.min_sd) {
      res.dropped_columns.push_back(raw.header[c]);
      continue;
    }
    res.kept_columns.push_back(raw.header[c]);
    res.minima.push_back(lo);
    res.maxima.push_back(hi);
    kept.push_back(std::move(col));
  }
  if (kept.empty())
    throw ConfigError("every covariate was dropped as near-constant");

  const auto n = static_cast<Eigen::Index>(raw.rows());
  const auto d = static_cast<Eigen::Index>(kept.size());
  std::vector<std::size_t> rows;
  // kept rows indexed by their first coordinate for the separation sweep
  std::multimap<double, std::size_t> by_first;
  const double sep = options.min_separation;
  for (Eigen::Index r = 0; r < n; ++r) {
    bool close = false;
    const double x0 = kept[0](r);
    for (auto it = by_first.lower_bound(x0 - sep); it != by_first.end() && it->first <= x0 + sep; ++it) {
      double d2 = 0.0;
      for (Eigen::Index k = 0; k < d; ++k) {
        const double diff = kept[static_cast<std::size_t>(k)](r) -
                            kept[static_cast<std::size_t>(k)](static_cast<Eigen::Index>(it->second));
        d2 += diff * diff;
      }
      if (d2 < sep * sep) {
        close = true;
        break;
      }
    }
    if (close) {
      ++res.dropped_rows;
      continue;
    }
    by_first.emplace(x0, static_cast<std::size_t>(r));
    rows.push_back(static_cast<std::size_t>(r));
  }

  for (Eigen::Index k = 0; k < d; ++k)
    res.table.header.push_back("x" + std::to_string(k + 1));
  res.table.header.push_back("y");
  res.table.data.resize(static_cast<Eigen::Index>(rows.size()), d + 1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    for (Eigen::Index k = 0; k < d; ++k)
      res.table.data(static_cast<Eigen::Index>(i), k) = kept[static_cast<std::size_t>(k)](r);
    res.table.data(static_cast<Eigen::Index>(i), d) =
        raw.data(r, static_cast<Eigen::Index>(*response));
  }
  return res;
}

Metrics evaluate(const std::vector<Normal> &predictions,
                 const std::optional<Eigen::VectorXd> &f,
                 const std::optional<Eigen::VectorXd> &y,
                 const LikelihoodSpec &likelihood) {
  const std::size_t n = predictions.size();
  if (n == 0)
    throw ShapeMismatch("no predictions to evaluate");
  const auto check = [&](const Eigen::VectorXd &v, const char *what) {
    if (static_cast<std::size_t>(v.size()) != n)
      throw ShapeMismatch(std::string(what) + " has " + std::to_string(v.size()) +
                          " rows but there are " + std::to_string(n) + " predictions");
  };
  const double inv_n = 1.0 / static_cast<double>(n);
  Metrics m;
  if (f) {
    check(*f, "latent truth");
    double se = 0.0, nll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = (*f)(static_cast<Eigen::Index>(i)) - predictions[i].mean;
      const double v = predictions[i].variance;
      se += r * r;
      nll += 0.5 * (kLog2Pi + std::log(v) + r * r / v);
    }
    m.rmse_latent = std::sqrt(se * inv_n);
    m.nll_latent = nll * inv_n;
  }
  if (y) {
    check(*y, "response truth");
    double se = 0.0, nll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double yi = (*y)(static_cast<Eigen::Index>(i));
      const double r = yi - response_mean(likelihood, predictions[i]);
      se += r * r;
      nll -= response_log_density(likelihood, likelihood.noise_scale, yi, predictions[i]);
    }
    m.rmse_response = std::sqrt(se * inv_n);
    m.nll_response = nll * inv_n;
  }
  for (const auto &v : {m.rmse_latent, m.nll_latent, m.rmse_response, m.nll_response})
    if (v && !std::isfinite(*v))
      throw NumericalError("a metric evaluated to a non-finite value");
  return m;
}

json to_json(const Metrics &metrics) {
  const auto opt = [](const std::optional<double> &v) { return v ? json(*v) : json(nullptr); };
  return {{"rmse_latent", opt(metrics.rmse_latent)},
          {"nll_latent", opt(metrics.nll_latent)},
          {"rmse_response", opt(metrics.rmse_response)},
          {"nll_response", opt(metrics.nll_response)}};
}

json model_to_json(const VariationalState &state, const OrderedDesign &design,
                   const PatternVariant &variant) {
  const auto n = design.size();
  json j;
  j["format"] = "dklgp-model-1";
  j["kernel"] = kernel_to_json(state.kernel);
  j["likelihood"] = {{"family", to_string(state.likelihood.family)},
                     {"noise_scale", state.likelihood.noise_scale},
                     {"obs_scales", state.likelihood.obs_scales}};
  j["mean"] = state.mean.constant;
  j["variant"] = {{"pattern", to_string(variant.tag)}, {"rho", variant.rho}, {"m", variant.m}};
  j["dim"] = design.dim();
  j["points"] = std::vector<double>(design.points.data(), design.points.data() + design.points.size());
  j["perm"] = design.perm;
  j["scales"] = scales_to_json(design.scales);
  j["metric"] = std::vector<double>(design.metric.lengthscales.begin(), design.metric.lengthscales.end());
  j["nu"] = std::vector<double>(state.nu.begin(), state.nu.end());
  j["v"] = {{"col_ptr", state.v.col_ptr()},
            {"rows", state.v.row_indices()},
            {"values", state.v.all_values()}};
  if (state.nu.size() != static_cast<Eigen::Index>(n))
    throw ShapeMismatch("state and design sizes differ");
  return j;
}

StoredModel model_from_json(const json &j) {
  if (j.value("format", "") != "dklgp-model-1")
    throw ConfigError("not a model file (missing format tag dklgp-model-1)");
  try {
    StoredModel m;
    m.state.kernel = kernel_from_json(j.at("kernel"));
    const auto &lik = j.at("likelihood");
    m.state.likelihood.family = likelihood_family_from_string(lik.at("family").get<std::string>());
    m.state.likelihood.noise_scale = lik.at("noise_scale").get<double>();
    m.state.likelihood.obs_scales = lik.value("obs_scales", std::vector<double>{});
    m.state.mean.constant = j.at("mean").get<double>();
    const auto &var = j.at("variant");
    m.variant.tag = pattern_tag_from_string(var.at("pattern").get<std::string>());
    m.variant.rho = var.at("rho").get<double>();
    m.variant.m = var.at("m").get<std::size_t>();

    const auto d = j.at("dim").get<std::size_t>();
    OrderedDesign &des = m.design;
    des.points = points_from_json(j.at("points"), d);
    des.perm = j.at("perm").get<std::vector<std::size_t>>();
    des.scales = scales_from_json(j.at("scales"));
    const auto metric = j.at("metric").get<std::vector<double>>();
    des.metric.lengthscales =
        Eigen::Map<const Eigen::VectorXd>(metric.data(), static_cast<Eigen::Index>(metric.size()));
    des.scaled = des.metric.transform(des.points);
    const auto n = des.size();
    if (static_cast<std::size_t>(des.points.rows()) != n || des.scales.size() != n)
      throw ShapeMismatch("model file: design arrays have inconsistent lengths");

    const auto nu = j.at("nu").get<std::vector<double>>();
    if (nu.size() != n)
      throw ShapeMismatch("model file: nu has the wrong length");
    m.state.nu = Eigen::Map<const Eigen::VectorXd>(nu.data(), static_cast<Eigen::Index>(n));
    const auto &v = j.at("v");
    m.state.v = SparseLowerColumns(n, v.at("col_ptr").get<std::vector<std::size_t>>(),
                                   v.at("rows").get<std::vector<std::size_t>>(),
                                   v.at("values").get<std::vector<double>>());
    return m;
  } catch (const json::exception &e) {
    throw ConfigError(std::string("malformed model file: ") + e.what());
  }
}

json trace_to_json(const TrainTrace &trace) {
  json epochs = json::array();
  for (const auto &e : trace.epochs)
    epochs.push_back({{"phase", e.phase},
                      {"epoch", e.epoch},
                      {"elbo_estimate", e.elbo_estimate},
                      {"lengthscales", std::vector<double>(e.lengthscales.begin(), e.lengthscales.end())},
                      {"variance", e.variance},
                      {"noise_scale", e.noise_scale},
                      {"learning_rate", e.learning_rate},
                      {"seconds", e.seconds}});
  return {{"initial_elbo", trace.initial_elbo},
          {"final_elbo", trace.final_elbo},
          {"order_seconds", trace.order_seconds},
          {"train_seconds", trace.train_seconds},
          {"epochs", epochs}};
}

json read_json(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open '" + path + "' for reading");
  try {
    return json::parse(in);
  } catch (const json::exception &e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_json(const std::string &path, const json &j) {
  std::ofstream out(path);
  if (!out)
    throw ConfigError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out)
    throw ConfigError("write to '" + path + "' failed");
}

} // namespace dkl::cli
