#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <doctest.h>

#include "app.hpp"
#include "cli.hpp"
#include "dklgp/error.hpp"

namespace fs = std::filesystem;
using namespace dkl;
using namespace dkl::cli;

namespace {

fs::path scratch(const std::string &name) {
  const fs::path dir = fs::temp_directory_path() / ("dklgp_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

SimulateConfig small_config(std::size_t n, double noise, std::uint64_t seed) {
  SimulateConfig c;
  c.n = n;
  c.d = 2;
  c.kernel.family = KernelFamily::Matern15;
  c.kernel.variance = 1.0;
  c.kernel.lengthscales = Eigen::VectorXd::Constant(2, 0.3);
  c.likelihood.noise_scale = noise;
  c.seed = seed;
  return c;
}

} // namespace

TEST_CASE("metrics match a hand-computed ten-row fixture") {
  const std::vector<double> f{0.3, -1.2, 0.8, 2.1, -0.4, 0.0, 1.5, -2.2, 0.9, -0.7};
  const std::vector<double> m{0.25, -1.0, 0.95, 1.8, -0.5, 0.1, 1.2, -2.0, 1.1, -0.6};
  const std::vector<double> v{0.1, 0.2, 0.05, 0.3, 0.15, 0.25, 0.4, 0.12, 0.08, 0.22};
  const std::vector<double> y{0.5, -1.5, 0.6, 2.4, -0.1, -0.3, 1.9, -2.6, 1.3, -0.2};
  std::vector<Normal> pred;
  for (std::size_t i = 0; i < f.size(); ++i)
    pred.push_back({m[i], v[i]});
  LikelihoodSpec lik;
  lik.noise_scale = 0.5;
  const Metrics r = evaluate(pred, Eigen::Map<const Eigen::VectorXd>(f.data(), 10),
                             Eigen::Map<const Eigen::VectorXd>(y.data(), 10), lik);
  CHECK(*r.rmse_latent == doctest::Approx(0.18841443681416775).epsilon(1e-12));
  CHECK(*r.nll_latent == doctest::Approx(0.1046336067610939).epsilon(1e-12));
  CHECK(*r.rmse_response == doctest::Approx(0.46529560496527367).epsilon(1e-12));
  CHECK(*r.nll_response == doctest::Approx(0.726796763978865).epsilon(1e-12));
}

TEST_CASE("perfect predictions give zero rmse and the entropy term") {
  const Eigen::VectorXd f = Eigen::VectorXd::LinSpaced(7, -1.0, 1.0);
  std::vector<Normal> pred;
  for (Eigen::Index i = 0; i < f.size(); ++i)
    pred.push_back({f(i), 0.3});
  const Metrics r = evaluate(pred, f, std::nullopt, {});
  CHECK(*r.rmse_latent == 0.0);
  CHECK(*r.nll_latent == doctest::Approx(0.5 * std::log(2.0 * M_PI * 0.3)).epsilon(1e-14));
  CHECK_FALSE(r.rmse_response.has_value());
}

TEST_CASE("constant-zero predictor on standardized truth has rmse one") {
  Eigen::VectorXd f(6);
  f << 1.0, -1.0, 1.0, -1.0, 1.0, -1.0;
  const std::vector<Normal> pred(6, Normal{0.0, 1.0});
  CHECK(*evaluate(pred, f, std::nullopt, {}).rmse_latent == doctest::Approx(1.0));
}

TEST_CASE("evaluate rejects misaligned rows") {
  const std::vector<Normal> pred(3, Normal{0.0, 1.0});
  CHECK_THROWS_AS(evaluate(pred, Eigen::VectorXd::Zero(4), std::nullopt, {}), ShapeMismatch);
}

TEST_CASE("noiseless gaussian simulation returns y = f") {
  const SimulatedData d = simulate(small_config(80, 0.0, 3));
  CHECK((d.y.array() == d.f.array()).all());

  const fs::path dir = scratch("noiseless");
  REQUIRE(run({"simulate", "--n", "30", "--noise", "0", "--out", dir.string()}) == 0);
  const Table t = read_csv((dir / "train.csv").string());
  CHECK((t.column("f").array() == t.column("y").array()).all());
}

TEST_CASE("simulation is deterministic given the seed") {
  const SimulatedData a = simulate(small_config(60, 0.1, 5));
  const SimulatedData b = simulate(small_config(60, 0.1, 5));
  const SimulatedData c = simulate(small_config(60, 0.1, 6));
  CHECK((a.x.array() == b.x.array()).all());
  CHECK((a.y.array() == b.y.array()).all());
  CHECK((a.y.array() != c.y.array()).any());
}

TEST_CASE("simulation refuses sizes above the dense guard") {
  CHECK_THROWS_AS(simulate(small_config(kDenseSampleLimit + 1, 0.1, 0)), SizeGuard);
}

TEST_CASE("empirical variance of f matches the kernel variance") {
  // The same input row across replicates is a fresh uniform point, so the
  // marginal law of f there is still N(0, variance).
  SimulateConfig c = small_config(20, 0.0, 0);
  c.kernel.variance = 2.0;
  const int reps = 50;
  double sum = 0.0, sum2 = 0.0;
  for (int r = 0; r < reps; ++r) {
    c.seed = 100 + static_cast<std::uint64_t>(r);
    const double v = simulate(c).f(7);
    sum += v;
    sum2 += v * v;
  }
  const double s2 = sum2 / reps;
  // SE of the second moment of N(0, s) is s * sqrt(2 / reps).
  CHECK(std::abs(s2 - 2.0) <= 3.0 * 2.0 * std::sqrt(2.0 / reps));
  CHECK(std::abs(sum / reps) <= 3.0 * std::sqrt(2.0 / reps));
}

TEST_CASE("csv round trip is exact") {
  const fs::path dir = scratch("csv");
  Table t;
  t.header = {"x1", "x2", "y"};
  t.data.resize(2, 3);
  t.data << 0.1, 1.0 / 3.0, -2.5e-17, std::nextafter(1.0, 2.0), 4.0, 1e300;
  write_csv((dir / "t.csv").string(), t);
  const Table back = read_csv((dir / "t.csv").string());
  CHECK(back.header == t.header);
  CHECK((back.data.array() == t.data.array()).all());
}

TEST_CASE("preprocess scales to the unit cube and drops constant columns") {
  Table raw;
  raw.header = {"a", "b", "c", "y"};
  raw.data.resize(4, 4);
  raw.data << 10, 5, 1, 0.1,  //
      20, 5, 2, 0.2,          //
      30, 5, 3, 0.3,          //
      20.00001, 5, 2, 0.4;
  const PreprocessResult r = preprocess(raw, {});
  CHECK(r.kept_columns == std::vector<std::string>{"a", "c"});
  CHECK(r.dropped_columns == std::vector<std::string>{"b"});
  CHECK(r.dropped_rows == 1);
  CHECK(r.table.rows() == 3);
  CHECK(r.table.data.leftCols(2).minCoeff() == 0.0);
  CHECK(r.table.data.leftCols(2).maxCoeff() == 1.0);
}

TEST_CASE("model json round trip preserves predictions") {
  const SimulatedData d = simulate(small_config(120, 0.2, 8));
  Dataset data;
  data.inputs = d.x;
  data.y = d.y;
  data.likelihood.noise_scale = 0.2;
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.warmup_epochs = 1;
  const KernelSpec k0 = small_config(1, 0.2, 0).kernel;
  const TrainResult res = train(data, k0, {}, cfg);
  const StoredModel back = model_from_json(
      nlohmann::json::parse(model_to_json(res.state, res.design, res.variant).dump()));
  const PointMatrix xt = d.x.topRows(10).array() * 0.9 + 0.05;
  const auto a = predict_latent(res.state, res.design, xt, {});
  const auto b = predict_latent(back.state, back.design, xt, {});
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(a[t].mean == b[t].mean);
    CHECK(a[t].variance == b[t].variance);
  }
}

TEST_CASE("end-to-end pipeline produces finite metrics") {
  const fs::path dir = scratch("e2e");
  const std::string d = dir.string();
  const auto start = std::chrono::steady_clock::now();
  REQUIRE(run({"simulate", "--n", "500", "--d", "2", "--lengthscales", "0.2", "--noise", "0.1",
               "--out", d + "/data", "--seed", "4"}) == 0);
  REQUIRE(run({"train", "--train", d + "/data/train.csv", "--out", d + "/model", "--noise", "0.3",
               "--lengthscales", "0.3", "--seed", "4", "-q"}) == 0);
  REQUIRE(run({"predict", "--model", d + "/model/model.json", "--test", d + "/data/test.csv",
               "--out", d + "/pred.csv"}) == 0);
  REQUIRE(run({"evaluate", "--predictions", d + "/pred.csv", "--truth", d + "/data/test.csv",
               "--model", d + "/model/model.json", "--trace", d + "/model/trace.json", "--out",
               d + "/metrics.json"}) == 0);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(seconds < 120.0);
  const nlohmann::json m = read_json(d + "/metrics.json");
  for (const char *key : {"rmse_latent", "nll_latent", "rmse_response", "nll_response"}) {
    CAPTURE(key);
    REQUIRE(m.at(key).is_number());
    CHECK(std::isfinite(m.at(key).get<double>()));
  }
  CHECK(m.at("rmse_latent").get<double>() < 1.0);
  for (const char *phase : {"order", "train", "predict"})
    CHECK(m.at("seconds").contains(phase));
}

TEST_CASE("train is reproducible and supports the diagonal pattern") {
  const fs::path dir = scratch("diag");
  const std::string d = dir.string();
  REQUIRE(run({"simulate", "--n", "150", "--d", "2", "--out", d + "/data", "--seed", "9"}) == 0);
  for (const char *out : {"/a", "/b"})
    REQUIRE(run({"train", "--train", d + "/data/train.csv", "--out", d + out, "--pattern",
                 "diagonal", "--epochs", "3", "--seed", "2", "-q"}) == 0);
  CHECK(slurp(d + "/a/model.json") == slurp(d + "/b/model.json"));
  CHECK(read_json(d + "/a/model.json").at("variant").dump().find("diagonal") != std::string::npos);
}

TEST_CASE("config file supplies defaults and flags override it") {
  const fs::path dir = scratch("config");
  const std::string d = dir.string();
  {
    std::ofstream cfg(d + "/run.json");
    cfg << R"({"seed": 3, "simulate": {"n": 40, "d": 3, "test_fraction": 0.25}})";
  }
  REQUIRE(run({"--config", d + "/run.json", "simulate", "--out", d + "/a"}) == 0);
  const Table a = read_csv(d + "/a/train.csv");
  CHECK(a.rows() == 30);
  CHECK(a.inputs().cols() == 3);
  REQUIRE(run({"--config", d + "/run.json", "simulate", "--n", "60", "--out", d + "/b"}) == 0);
  CHECK(read_csv(d + "/b/train.csv").rows() == 45);
  CHECK(read_json(d + "/a/simulate.json").at("seed") == 3);
}

TEST_CASE("config flags hold hyperparameters fixed") {
  const fs::path dir = scratch("config_flag");
  const std::string d = dir.string();
  REQUIRE(run({"simulate", "--n", "120", "--out", d + "/data"}) == 0);
  {
    std::ofstream on(d + "/on.json");
    on << R"({"train": {"fix_noise": true, "epochs": 2}})";
    std::ofstream off(d + "/off.json");
    off << R"({"train": {"fix_noise": false, "epochs": 2}})";
  }
  const auto noise_moved = [&](const std::string &config, const std::string &out,
                               std::vector<std::string> extra) {
    std::vector<std::string> args{"--config", d + config, "train", "--train",
                                  d + "/data/train.csv", "--out", d + out, "--noise", "0.7", "-q"};
    args.insert(args.end(), extra.begin(), extra.end());
    REQUIRE(run(args) == 0);
    const auto epochs = read_json(d + out + "/trace.json").at("epochs");
    CHECK(epochs.size() == 5);
    return epochs.back().at("noise_scale").get<double>() != 0.7;
  };
  CHECK_FALSE(noise_moved("/on.json", "/a", {}));
  CHECK(noise_moved("/off.json", "/b", {}));
  CHECK_FALSE(noise_moved("/off.json", "/c", {"--fix-noise"}));
}

TEST_CASE("exit codes distinguish configuration errors") {
  const fs::path dir = scratch("codes");
  CHECK(run({"train", "--train", (dir / "missing.csv").string(), "--out", dir.string(), "-q"}) == 2);
  CHECK(run({"simulate", "--n", "not-a-number", "--out", dir.string()}) == 2);
  {
    std::ofstream cfg(dir / "bad.json");
    cfg << R"({"no_such_option": 1})";
  }
  CHECK(run({"--config", (dir / "bad.json").string(), "simulate", "--out", dir.string()}) == 2);
  CHECK(run({"simulate", "--n", "30000", "--out", dir.string()}) == 2);
}
