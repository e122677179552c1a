#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "cdl/rng.hpp"
#include "cdl/trainer.hpp"

using namespace cdl;

namespace {

// target = monotone remap of source plus small noise; learnable correlation
FeatureBatch correlated_batch(int n, std::uint64_t seed) {
  FeatureBatch b;
  b.target.resize(n, 3);
  b.source.resize(n, 3);
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double s = rng.uniform();
      b.source(i, j) = s;
      b.target(i, j) = std::clamp(std::sqrt(s) + rng.normal(0.0, 0.01), 0.0, 1.0);
    }
  }
  return b;
}

TrainConfig quick_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.alpha = 0.1;
  cfg.beta = 0.01;
  cfg.learning_rate = 0.5;
  cfg.eps = 1e-12;
  cfg.max_iters = 60;
  cfg.rng_seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("huge eps stops after exactly one iteration", "[trainer]") {
  TrainConfig cfg = quick_config(1);
  cfg.eps = 1e12;
  const TrainResult r = train_network(correlated_batch(64, 2), {3, 4, 2},
                                      Activation::sigmoid, cfg);
  CHECK(r.history.size() == 1);
  CHECK(r.converged);
}

TEST_CASE("iteration cap bounds the history exactly", "[trainer]") {
  TrainConfig cfg = quick_config(3);
  cfg.max_iters = 5;
  cfg.eps = 1e-300;
  const TrainResult r = train_network(correlated_batch(64, 4), {3, 4, 2},
                                      Activation::sigmoid, cfg);
  CHECK(r.history.size() == 5);
  CHECK_FALSE(r.converged);
}

TEST_CASE("training improves the cost on a correlated batch", "[trainer]") {
  const TrainConfig cfg = quick_config(9);
  const TrainResult r = train_network(correlated_batch(512, 10), {3, 8, 4},
                                      Activation::sigmoid, cfg);
  REQUIRE(r.history.size() >= 2);
  CHECK(r.history.back() > r.initial_cost);
  CHECK(r.history.back() > r.history.front());
}

TEST_CASE("ascent shrinks the weights on a quadratic-only problem", "[trainer]") {
  // identical branches freeze MI and MMD; C = const - beta ||theta||^2, so the
  // stated update signs must shrink ||W|| monotonically while C increases
  FeatureBatch batch = correlated_batch(32, 11);
  batch.source = batch.target;
  TrainConfig cfg;
  cfg.alpha = 1e-30;
  cfg.beta = 1.0;
  cfg.learning_rate = 0.1;
  cfg.decay = 1.0;
  cfg.eps = 1e-300;
  cfg.max_iters = 10;
  cfg.rng_seed = 12;

  NetworkParams params = init_network({3, 4, 2}, Activation::sigmoid, cfg);
  double prev_norm = params.squared_param_norm();
  double prev_cost = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < 10; ++k) {
    const ForwardCache cache = forward(params, batch);
    const double c = cost(params, cache, cfg);
    CHECK(c > prev_cost);
    prev_cost = c;
    const Gradients g = backward(params, cache, cfg);
    for (int m = 0; m < params.num_layers(); ++m) {
      params.W[m] += cfg.learning_rate * g.dW[m];
      params.b[m] += cfg.learning_rate * g.db[m];
    }
    const double norm = params.squared_param_norm();
    CHECK(norm < prev_norm);
    prev_norm = norm;
  }
}

TEST_CASE("training is deterministic", "[trainer]") {
  const TrainConfig cfg = quick_config(21);
  const FeatureBatch batch = correlated_batch(128, 22);
  const TrainResult a = train_network(batch, {3, 6, 3}, Activation::sigmoid, cfg);
  const TrainResult b = train_network(batch, {3, 6, 3}, Activation::sigmoid, cfg);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) REQUIRE(a.history[i] == b.history[i]);
  for (int m = 0; m < a.params.num_layers(); ++m) {
    REQUIRE((a.params.W[m] - b.params.W[m]).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((a.params.b[m] - b.params.b[m]).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("divergence error carries iteration and history", "[trainer]") {
  TrainConfig cfg = quick_config(30);
  cfg.learning_rate = 1e155;  // one update overflows z into inf -> nan activations
  cfg.init_scale = 1.0;
  cfg.max_iters = 50;
  try {
    train_network(correlated_batch(32, 31), {3, 4, 2}, Activation::sigmoid, cfg);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.iteration() >= 1);
    CHECK(e.history().size() == static_cast<std::size_t>(e.iteration() - 1));
  } catch (const NumericalError&) {
    SUCCEED("non-finite forward detected");
  }
}

TEST_CASE("model file round trips and validates", "[trainer]") {
  const TrainConfig cfg = quick_config(77);
  const NetworkParams p = init_network({3, 5, 2}, Activation::tanh, cfg);
  const auto path = (std::filesystem::temp_directory_path() / "cdl_model_rt.json").string();
  save_model(path, p, cfg, "unit-test");
  const LoadedModel m = load_model(path);
  CHECK(m.params.activation == Activation::tanh);
  CHECK(m.params.layer_dims() == std::vector<int>{3, 5, 2});
  for (int l = 0; l < p.num_layers(); ++l) {
    REQUIRE((m.params.W[l] - p.W[l]).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((m.params.b[l] - p.b[l]).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(m.train_config.alpha == cfg.alpha);
  CHECK(m.provenance == "unit-test");
}

TEST_CASE("model loader rejects a broken dims chain", "[trainer]") {
  const auto path = (std::filesystem::temp_directory_path() / "cdl_model_bad.json").string();
  {
    std::ofstream out(path);
    out << R"({"version":1,"activation":"sigmoid","dims":[3,4,2],
               "weights":[[0,0,0,0,0,0,0,0,0,0,0,0],[0,0,0,0,0,0,0]],
               "biases":[[0,0,0,0],[0,0]],
               "train_config":{"alpha":0.1,"beta":10,"learning_rate":0.2,"decay":0.95,
                               "eps":1e-6,"max_iters":500,"rng_seed":0,"init_scale":0}})";
  }
  CHECK_THROWS_AS(load_model(path), ValidationError);
}
