#include "app.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "cli.hpp"
#include "dklgp/error.hpp"
#include "dklgp/log.hpp"
#include "dklgp/rng.hpp"

namespace dkl::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct ModelOptions {
  std::string kernel = "matern-1.5";
  std::vector<double> lengthscales{0.1};
  double variance = 1.0;
  double rq_alpha = 1.0;
  std::string likelihood = "gaussian";
  double noise = 0.1;
  double mean = 0.0;

  void add_to(CLI::App &app) {
    app.add_option("--kernel", kernel, "matern-1.5, squared-exponential or rational-quadratic")
        ->capture_default_str();
    app.add_option("--lengthscales", lengthscales, "one value, or one per input dimension")
        ->delimiter(',')
        ->capture_default_str();
    app.add_option("--variance", variance, "kernel variance")->capture_default_str();
    app.add_option("--rq-alpha", rq_alpha, "rational-quadratic shape")->capture_default_str();
    app.add_option("--likelihood", likelihood, "gaussian, student-t-2 or bernoulli-logit")
        ->capture_default_str();
    app.add_option("--noise", noise, "noise scale sigma_eps")->capture_default_str();
    app.add_option("--mean", mean, "constant prior mean")->capture_default_str();
  }

  KernelSpec kernel_spec(std::size_t d) const {
    KernelSpec k;
    k.family = kernel_family_from_string(kernel);
    k.variance = variance;
    k.rq_alpha = rq_alpha;
    if (lengthscales.size() == 1)
      k.lengthscales = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d), lengthscales[0]);
    else if (lengthscales.size() == d)
      k.lengthscales = Eigen::Map<const Eigen::VectorXd>(lengthscales.data(),
                                                         static_cast<Eigen::Index>(d));
    else
      throw ConfigError("--lengthscales needs 1 or " + std::to_string(d) + " values, got " +
                        std::to_string(lengthscales.size()));
    k.validate();
    return k;
  }

  LikelihoodSpec likelihood_spec(bool allow_zero_noise = false) const {
    LikelihoodSpec l;
    l.family = likelihood_family_from_string(likelihood);
    l.noise_scale = noise;
    if (!(allow_zero_noise && noise == 0.0))
      l.validate();
    return l;
  }
};

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool verbose = false;
  bool quiet = false;

  // simulate
  std::size_t n = 500;
  std::size_t d = 2;
  double test_fraction = 0.2;
  std::string out;
  ModelOptions model;

  // preprocess
  std::string input;
  std::string response = "y";
  double min_sd = 0.01;
  double min_separation = 0.001;

  // order
  bool uniform = false;
  double rho = 2.0;
  std::string pattern = "nearest-neighbor";
  std::size_t m = 1;
  std::size_t ancestor_sample = 100;
  std::vector<double> metric;

  // train
  std::string train_path;
  std::size_t epochs = 35;
  std::size_t batch_size = 128;
  double lr = 0.01;
  std::vector<std::size_t> milestones;
  double gamma = 0.1;
  std::size_t mc_samples = 1;
  std::size_t eval_samples = 1000;
  std::size_t warmup = 3;
  bool no_reorder = false;
  bool fix_lengthscales = false;
  bool fix_variance = false;
  bool fix_noise = false;
  bool moment_init = true;

  // predict / evaluate
  std::string model_path;
  std::string test_path;
  std::string variance_mode = "auto";
  std::string predictions;
  std::string truth;
  std::string trace;
};

std::string normalize_key(std::string key) {
  for (auto &c : key)
    if (c == '_')
      c = '-';
  return key;
}

std::string json_scalar_text(const json &v, const std::string &key) {
  if (v.is_string())
    return v.get<std::string>();
  if (v.is_boolean())
    return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer() || v.is_number_unsigned())
    return v.dump();
  if (v.is_number_float())
    return format_double(v.get<double>());
  if (v.is_array()) {
    std::string s;
    for (const auto &e : v) {
      if (e.is_array() || e.is_object())
        throw ConfigError("config key '" + key + "': nested arrays are not supported");
      s += (s.empty() ? "" : ",") + json_scalar_text(e, key);
    }
    return s;
  }
  throw ConfigError("config key '" + key + "' has an unsupported value");
}

bool apply_default(CLI::App &app, const std::string &key, const json &value) {
  CLI::Option *opt = app.get_option_no_throw("--" + normalize_key(key));
  if (opt == nullptr)
    return false;
  opt->run_callback_for_default()->default_val(json_scalar_text(value, key));
  return true;
}

/// Config keys become option defaults, so explicit flags still win.
void apply_config(CLI::App &app, const json &config) {
  if (!config.is_object())
    throw ConfigError("config file must hold a JSON object");
  const auto subs = app.get_subcommands([](CLI::App *) { return true; });
  for (const auto &[key, value] : config.items()) {
    if (value.is_object()) {
      CLI::App *sub = app.get_subcommand_no_throw(key);
      if (sub == nullptr)
        throw ConfigError("config section '" + key + "' does not name a subcommand");
      for (const auto &[k, v] : value.items())
        if (!apply_default(*sub, k, v))
          throw ConfigError("config key '" + key + "." + k + "' is not an option of " + key);
      continue;
    }
    bool used = apply_default(app, key, value);
    for (CLI::App *sub : subs)
      used = apply_default(*sub, key, value) || used;
    if (!used)
      throw ConfigError("config key '" + key + "' is not a known option");
  }
}

std::optional<std::string> find_config_path(const std::vector<std::string> &args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size())
        throw ConfigError("--config needs a path");
      return args[i + 1];
    }
    if (args[i].rfind("--config=", 0) == 0)
      return args[i].substr(9);
  }
  return std::nullopt;
}

void ensure_dir(const std::string &dir) {
  if (dir.empty())
    throw ConfigError("--out is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw ConfigError("cannot create directory '" + dir + "': " + ec.message());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

PatternVariant variant_of(const Options &o) {
  PatternVariant v;
  v.tag = pattern_tag_from_string(o.pattern);
  v.rho = o.rho;
  v.m = o.m;
  v.validate();
  return v;
}

Table points_table(const PointMatrix &x) {
  Table t;
  for (Eigen::Index k = 0; k < x.cols(); ++k)
    t.header.push_back("x" + std::to_string(k + 1));
  t.data = x;
  return t;
}

Table append_column(Table t, const std::string &name, const Eigen::VectorXd &v) {
  t.header.push_back(name);
  t.data.conservativeResize(Eigen::NoChange, t.data.cols() + 1);
  t.data.col(t.data.cols() - 1) = v;
  return t;
}

json size_summary(const SparsityPattern &p) {
  std::map<std::size_t, std::size_t> hist;
  for (std::size_t i = 0; i < p.columns(); ++i)
    ++hist[p.col(i).size()];
  json h = json::object();
  for (const auto &[size, count] : hist)
    h[std::to_string(size)] = count;
  return {{"mean", p.mean_size()}, {"histogram", h}};
}

void write_pattern_file(const std::string &path, const SparsityPattern &p) {
  std::ofstream out(path);
  if (!out)
    throw ConfigError("cannot open '" + path + "' for writing");
  write_pattern(out, p);
}

int cmd_simulate(const Options &o) {
  ensure_dir(o.out);
  SimulateConfig cfg;
  cfg.n = o.n;
  cfg.d = o.d;
  cfg.kernel = o.model.kernel_spec(o.d);
  cfg.likelihood = o.model.likelihood_spec(true);
  cfg.mean.constant = o.model.mean;
  cfg.seed = o.seed;
  const SimulatedData sim = simulate(cfg);

  Table all = append_column(append_column(points_table(sim.x), "f", sim.f), "y", sim.y);
  const auto [train_rows, test_rows] = split_rows(o.n, o.test_fraction, o.seed);
  write_csv((fs::path(o.out) / "train.csv").string(), select_rows(all, train_rows));
  write_csv((fs::path(o.out) / "test.csv").string(), select_rows(all, test_rows));

  json side = {{"seed", o.seed},
               {"n", o.n},
               {"d", o.d},
               {"test_fraction", o.test_fraction},
               {"kernel", {{"family", to_string(cfg.kernel.family)},
                           {"variance", cfg.kernel.variance},
                           {"lengthscales", std::vector<double>(cfg.kernel.lengthscales.begin(),
                                                                cfg.kernel.lengthscales.end())},
                           {"rq_alpha", cfg.kernel.rq_alpha}}},
               {"likelihood", {{"family", to_string(cfg.likelihood.family)},
                               {"noise_scale", cfg.likelihood.noise_scale}}},
               {"mean", cfg.mean.constant},
               {"jitter", sim.jitter},
               {"train_rows", train_rows.size()},
               {"test_rows", test_rows.size()}};
  write_json((fs::path(o.out) / "simulate.json").string(), side);
  std::cout << "wrote " << train_rows.size() << " training and " << test_rows.size()
            << " test rows to " << o.out << "\n";
  return 0;
}

int cmd_preprocess(const Options &o) {
  ensure_dir(o.out);
  PreprocessOptions po;
  po.response = o.response;
  po.min_sd = o.min_sd;
  po.min_separation = o.min_separation;
  const PreprocessResult res = preprocess(read_csv(o.input), po);
  const auto [train_rows, test_rows] = split_rows(res.table.rows(), o.test_fraction, o.seed);
  write_csv((fs::path(o.out) / "train.csv").string(), select_rows(res.table, train_rows));
  write_csv((fs::path(o.out) / "test.csv").string(), select_rows(res.table, test_rows));
  json side = {{"seed", o.seed},
               {"input", o.input},
               {"kept_columns", res.kept_columns},
               {"dropped_columns", res.dropped_columns},
               {"minima", res.minima},
               {"maxima", res.maxima},
               {"dropped_rows", res.dropped_rows},
               {"train_rows", train_rows.size()},
               {"test_rows", test_rows.size()}};
  write_json((fs::path(o.out) / "preprocess.json").string(), side);
  std::cout << "kept " << res.kept_columns.size() << " covariates, dropped "
            << res.dropped_columns.size() << " columns and " << res.dropped_rows << " rows\n";
  return 0;
}

int cmd_order(const Options &o) {
  PointMatrix x;
  if (o.uniform) {
    if (!o.input.empty())
      throw ConfigError("--uniform and --input are mutually exclusive");
    if (o.n == 0 || o.d == 0)
      throw ConfigError("--uniform needs --n >= 1 and --d >= 1");
    x.resize(static_cast<Eigen::Index>(o.n), static_cast<Eigen::Index>(o.d));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      CounterRng rng(o.seed, {0x1A7u, static_cast<std::uint64_t>(i)});
      for (Eigen::Index k = 0; k < x.cols(); ++k)
        x(i, k) = rng.uniform();
    }
  } else {
    if (o.input.empty())
      throw ConfigError("order needs --input or --uniform");
    x = read_csv(o.input).inputs();
  }
  const PatternVariant variant = variant_of(o);
  DistanceMetric metric;
  if (!o.metric.empty()) {
    ModelOptions scales;
    scales.lengthscales = o.metric;
    metric.lengthscales = scales.kernel_spec(static_cast<std::size_t>(x.cols())).lengthscales;
  }

  const auto t0 = std::chrono::steady_clock::now();
  const OrderedDesign design = reverse_maximin_order(x, metric);
  const SparsityPattern prior = variant_pattern(design, variant, PatternKind::Prior);
  const SparsityPattern posterior = variant_pattern(design, variant, PatternKind::Posterior);
  const SparsityPattern reduced = reduced_ancestors(design, o.rho);
  const double order_seconds = seconds_since(t0);

  json summary = {{"n", design.size()},
                  {"d", design.dim()},
                  {"rho", o.rho},
                  {"pattern", to_string(variant.tag)},
                  {"seed", o.seed},
                  {"sparsity", size_summary(prior)},
                  {"reduced_ancestors", size_summary(reduced)},
                  {"order_seconds", order_seconds}};

  if (o.ancestor_sample > 0) {
    CounterRng rng(o.seed, {0xA5Cu});
    const auto cols = shuffled_indices(design.size(), rng);
    const std::size_t k = std::min(o.ancestor_sample, design.size());
    double total = 0.0;
    std::map<std::size_t, std::size_t> hist;
    for (std::size_t t = 0; t < k; ++t) {
      const std::size_t sz = ancestor_set(prior, posterior, cols[t]).size();
      total += static_cast<double>(sz);
      ++hist[sz];
    }
    json h = json::object();
    for (const auto &[size, count] : hist)
      h[std::to_string(size)] = count;
    summary["full_ancestors"] = {{"sampled_columns", k},
                                 {"mean", total / static_cast<double>(k)},
                                 {"histogram", h}};
  }

  if (!o.out.empty()) {
    ensure_dir(o.out);
    write_pattern_file((fs::path(o.out) / "sparsity.txt").string(), prior);
    write_pattern_file((fs::path(o.out) / "reduced_ancestors.txt").string(), reduced);
    std::ofstream perm((fs::path(o.out) / "order.txt").string());
    for (std::size_t i = 0; i < design.size(); ++i)
      perm << design.perm[i] + 1 << '\n';
    write_json((fs::path(o.out) / "sizes.json").string(), summary);
  }
  std::cout << "n " << design.size() << "  mean |S_i| " << prior.mean_size()
            << "  mean |reduced A_i| " << reduced.mean_size();
  if (summary.contains("full_ancestors"))
    std::cout << "  mean |A_i| " << summary["full_ancestors"]["mean"].get<double>() << " (over "
              << summary["full_ancestors"]["sampled_columns"].get<std::size_t>() << " columns)";
  std::cout << "\n";
  return 0;
}

int cmd_train(const Options &o) {
  ensure_dir(o.out);
  const Table table = read_csv(o.train_path);
  Dataset data;
  data.inputs = table.inputs();
  data.y = table.column("y");
  data.likelihood = o.model.likelihood_spec();
  data.validate();

  TrainConfig cfg;
  cfg.variant = variant_of(o);
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch_size;
  cfg.learning_rate = o.lr;
  cfg.milestones = o.milestones;
  cfg.gamma = o.gamma;
  cfg.mc_samples = o.mc_samples;
  cfg.eval_samples = o.eval_samples;
  cfg.seed = o.seed;
  cfg.warmup_epochs = o.warmup;
  cfg.reorder = !o.no_reorder;
  cfg.train_lengthscales = !o.fix_lengthscales;
  cfg.train_variance = !o.fix_variance;
  cfg.train_noise = !o.fix_noise;
  cfg.moment_init = o.moment_init;
  cfg.threads = o.threads;

  MeanSpec mean;
  mean.constant = o.model.mean;
  const TrainResult res = train(data, o.model.kernel_spec(data.dim()), mean, cfg);
  write_json((fs::path(o.out) / "model.json").string(),
             model_to_json(res.state, res.design, res.variant));
  write_json((fs::path(o.out) / "trace.json").string(), trace_to_json(res.trace));
  std::cout << "final ELBO " << res.trace.final_elbo << " after " << res.trace.epochs.size()
            << " epochs\n";
  return 0;
}

int cmd_predict(const Options &o) {
  if (o.out.empty())
    throw ConfigError("--out is required");
  const StoredModel model = model_from_json(read_json(o.model_path));
  const Table test = read_csv(o.test_path);
  const PointMatrix x = test.inputs();
  if (static_cast<std::size_t>(x.cols()) != model.design.dim())
    throw ShapeMismatch("test inputs have " + std::to_string(x.cols()) +
                        " columns but the model was trained with " +
                        std::to_string(model.design.dim()));

  PredictionOptions po;
  po.rho = o.rho;
  if (o.variance_mode == "exact")
    po.mode = VarianceMode::Exact;
  else if (o.variance_mode == "reduced")
    po.mode = VarianceMode::Reduced;
  else if (o.variance_mode != "auto")
    throw ConfigError("--variance-mode must be auto, exact or reduced");

  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<Normal> pred = predict_latent(model.state, model.design, x, po);
  const double seconds = seconds_since(t0);

  const auto n = static_cast<Eigen::Index>(pred.size());
  Table out;
  out.header = {"mean", "variance", "response_mean"};
  out.data.resize(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Normal &p = pred[static_cast<std::size_t>(i)];
    if (!std::isfinite(p.mean) || !(p.variance > 0.0) || !std::isfinite(p.variance))
      throw NumericalError("prediction " + std::to_string(i + 1) + " is not finite");
    out.data(i, 0) = p.mean;
    out.data(i, 1) = p.variance;
    out.data(i, 2) = response_mean(model.state.likelihood, p);
  }
  const fs::path path(o.out);
  if (path.has_parent_path())
    ensure_dir(path.parent_path().string());
  write_csv(o.out, out);
  write_json(o.out + ".json", {{"model", o.model_path},
                               {"test", o.test_path},
                               {"rho", o.rho},
                               {"variance_mode", o.variance_mode},
                               {"predict_seconds", seconds}});
  std::cout << "wrote " << n << " predictions to " << o.out << "\n";
  return 0;
}

int cmd_evaluate(const Options &o) {
  const Table pred = read_csv(o.predictions);
  const Table truth = read_csv(o.truth);
  if (pred.rows() != truth.rows())
    throw ShapeMismatch("predictions have " + std::to_string(pred.rows()) +
                        " rows but the truth file has " + std::to_string(truth.rows()));
  const Eigen::VectorXd mean = pred.column("mean");
  const Eigen::VectorXd var = pred.column("variance");
  std::vector<Normal> normals(pred.rows());
  for (std::size_t i = 0; i < normals.size(); ++i)
    normals[i] = {mean(static_cast<Eigen::Index>(i)), var(static_cast<Eigen::Index>(i))};

  LikelihoodSpec lik = o.model.likelihood_spec();
  if (!o.model_path.empty())
    lik = model_from_json(read_json(o.model_path)).state.likelihood;
  std::optional<Eigen::VectorXd> f, y;
  if (truth.find("f"))
    f = truth.column("f");
  if (truth.find("y"))
    y = truth.column("y");
  if (!f && !y)
    throw ConfigError("truth file needs an f or y column");

  json report = to_json(evaluate(normals, f, y, lik));
  report["likelihood"] = to_string(lik.family);
  json seconds = {{"order", nullptr}, {"train", nullptr}, {"predict", nullptr}};
  if (!o.trace.empty()) {
    const json tr = read_json(o.trace);
    seconds["order"] = tr.at("order_seconds");
    seconds["train"] = tr.at("train_seconds");
    report["elbo"] = {{"initial", tr.at("initial_elbo")},
                      {"final", tr.at("final_elbo")},
                      {"epochs", tr.at("epochs").size()}};
  }
  if (fs::exists(o.predictions + ".json"))
    seconds["predict"] = read_json(o.predictions + ".json").at("predict_seconds");
  report["seconds"] = seconds;

  if (o.out.empty()) {
    std::cout << report.dump(2) << "\n";
  } else {
    const fs::path path(o.out);
    if (path.has_parent_path())
      ensure_dir(path.parent_path().string());
    write_json(o.out, report);
  }
  return 0;
}

} // namespace

int run(const std::vector<std::string> &args) {
  Options o;
  CLI::App app{"Double-KL variational Gaussian-process inference with sparse inverse "
               "Cholesky factors", "dklgp"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", o.config, "JSON file of option values; flags override it");
  app.add_option("--seed", o.seed, "seed for every random choice")->capture_default_str();
  app.add_option("--threads", o.threads, "worker threads")
      ->check(CLI::Range(1u, 1024u))
      ->capture_default_str();
  app.add_flag("-v,--verbose", o.verbose, "per-epoch progress on stderr");
  app.add_flag("-q,--quiet", o.quiet, "suppress warnings");

  CLI::App *sim = app.add_subcommand("simulate", "draw a synthetic dataset");
  sim->add_option("--n", o.n, "number of points")->capture_default_str();
  sim->add_option("--d", o.d, "input dimension")->capture_default_str();
  sim->add_option("--test-fraction", o.test_fraction, "share of rows held out")->capture_default_str();
  sim->add_option("--out", o.out, "output directory")->required();
  o.model.add_to(*sim);

  CLI::App *pre = app.add_subcommand("preprocess", "standardize a real dataset and split it");
  pre->add_option("--input", o.input, "raw CSV with a header row")->required();
  pre->add_option("--response", o.response, "response column name")->capture_default_str();
  pre->add_option("--min-sd", o.min_sd, "drop covariates whose scaled SD is below this")
      ->capture_default_str();
  pre->add_option("--min-separation", o.min_separation, "minimum distance between kept inputs")
      ->capture_default_str();
  pre->add_option("--test-fraction", o.test_fraction, "share of rows held out")->capture_default_str();
  pre->add_option("--out", o.out, "output directory")->required();

  CLI::App *ord = app.add_subcommand("order", "order inputs and export sparsity patterns");
  ord->add_option("--input", o.input, "CSV with x1..xd columns");
  ord->add_flag("--uniform", o.uniform, "draw --n points uniformly on [0,1]^d instead");
  ord->add_option("--n", o.n, "number of uniform points")->capture_default_str();
  ord->add_option("--d", o.d, "dimension of uniform points")->capture_default_str();
  ord->add_option("--rho", o.rho, "sparsity radius factor")->capture_default_str();
  ord->add_option("--pattern", o.pattern, "nearest-neighbor, diagonal or global")->capture_default_str();
  ord->add_option("--m", o.m, "conditioning-set size for the global pattern")->capture_default_str();
  ord->add_option("--lengthscales", o.metric, "distance metric length-scales (default: Euclidean)")
      ->delimiter(',');
  ord->add_option("--ancestor-sample", o.ancestor_sample,
                  "columns sampled for the full-ancestor mean (0 to skip)")
      ->capture_default_str();
  ord->add_option("--out", o.out, "output directory for pattern files");

  CLI::App *tr = app.add_subcommand("train", "fit the variational posterior");
  tr->add_option("--train", o.train_path, "training CSV (x1..xd, y)")->required();
  tr->add_option("--out", o.out, "output directory")->required();
  o.model.add_to(*tr);
  tr->add_option("--pattern", o.pattern, "nearest-neighbor, diagonal or global")->capture_default_str();
  tr->add_option("--rho", o.rho, "sparsity radius factor")->capture_default_str();
  tr->add_option("--m", o.m, "conditioning-set size for the global pattern")->capture_default_str();
  tr->add_option("--epochs", o.epochs, "main-phase epochs")->capture_default_str();
  tr->add_option("--batch-size", o.batch_size, "minibatch size")->capture_default_str();
  tr->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
  tr->add_option("--milestones", o.milestones, "epochs at which the rate is multiplied by gamma")
      ->delimiter(',');
  tr->add_option("--gamma", o.gamma, "learning-rate decay factor")->capture_default_str();
  tr->add_option("--mc-samples", o.mc_samples, "draws per term during training")->capture_default_str();
  tr->add_option("--eval-samples", o.eval_samples, "draws per term for full ELBO evaluation")
      ->capture_default_str();
  tr->add_option("--warmup", o.warmup, "warm-up epochs before reordering")->capture_default_str();
  tr->add_flag("--no-reorder", o.no_reorder, "keep the initial ordering");
  tr->add_flag("--fix-lengthscales", o.fix_lengthscales, "hold length-scales fixed");
  tr->add_flag("--fix-variance", o.fix_variance, "hold the kernel variance fixed");
  tr->add_flag("--fix-noise", o.fix_noise, "hold the noise scale fixed");
  tr->add_flag("--moment-init,!--no-moment-init", o.moment_init,
               "start the mean at the approximate posterior mean (gaussian only)")
      ->capture_default_str();

  CLI::App *pr = app.add_subcommand("predict", "latent predictive distributions at test inputs");
  pr->add_option("--model", o.model_path, "model.json written by train")->required();
  pr->add_option("--test", o.test_path, "CSV with x1..xd columns")->required();
  pr->add_option("--out", o.out, "output CSV")->required();
  pr->add_option("--rho", o.rho, "prediction sparsity radius factor")->capture_default_str();
  pr->add_option("--variance-mode", o.variance_mode, "auto, exact or reduced")->capture_default_str();

  CLI::App *ev = app.add_subcommand("evaluate", "RMSE and NLL of predictions");
  ev->add_option("--predictions", o.predictions, "CSV written by predict")->required();
  ev->add_option("--truth", o.truth, "CSV with f and/or y columns, same row order")->required();
  ev->add_option("--model", o.model_path, "model.json supplying the likelihood");
  ev->add_option("--likelihood", o.model.likelihood, "likelihood when no model is given")
      ->capture_default_str();
  ev->add_option("--noise", o.model.noise, "noise scale when no model is given")->capture_default_str();
  ev->add_option("--trace", o.trace, "trace.json written by train");
  ev->add_option("--out", o.out, "metrics JSON (stdout if omitted)");

  try {
    try {
      if (const auto path = find_config_path(args))
        apply_config(app, read_json(*path));
      std::vector<std::string> rev(args.rbegin(), args.rend());
      app.parse(std::move(rev));
    } catch (const CLI::Success &e) {
      return app.exit(e);
    } catch (const CLI::ParseError &e) {
      app.exit(e);
      return 2;
    }
    set_log_level(o.quiet ? LogLevel::Quiet : o.verbose ? LogLevel::Info : LogLevel::Warning);

    if (sim->parsed())
      return cmd_simulate(o);
    if (pre->parsed())
      return cmd_preprocess(o);
    if (ord->parsed())
      return cmd_order(o);
    if (tr->parsed())
      return cmd_train(o);
    if (pr->parsed())
      return cmd_predict(o);
    return cmd_evaluate(o);
  } catch (const NumericalError &e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

} // namespace dkl::cli
