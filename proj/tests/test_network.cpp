#include <catch2/catch_amalgamated.hpp>

#include "cdl/network.hpp"
#include "cdl/rng.hpp"
#include "cdl/trainer.hpp"
#include "cdl/verification.hpp"

using namespace cdl;

namespace {

FeatureBatch random_batch(int n, int d, std::uint64_t seed) {
  FeatureBatch b;
  b.target.resize(n, d);
  b.source.resize(n, d);
  Rng rng(seed);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      b.target(i, j) = rng.uniform();
      b.source(i, j) = rng.uniform();
    }
  return b;
}

NetworkParams zero_network(const std::vector<int>& dims, Activation act) {
  NetworkParams p;
  p.activation = act;
  for (std::size_t m = 1; m < dims.size(); ++m) {
    p.W.push_back(Matrix::Zero(dims[m], dims[m - 1]));
    p.b.push_back(Vector::Zero(dims[m]));
  }
  return p;
}

}  // namespace

TEST_CASE("forward with zero parameters hits phi(0)", "[network]") {
  const FeatureBatch batch = random_batch(6, 3, 1);
  {
    const NetworkParams p = zero_network({3, 4, 2}, Activation::sigmoid);
    const ForwardCache cache = forward(p, batch);
    for (int m = 1; m <= 2; ++m) {
      CHECK((cache.layer(m).h_t.array() == 0.5).all());
      CHECK((cache.layer(m).h_s.array() == 0.5).all());
    }
  }
  {
    const NetworkParams p = zero_network({3, 4, 2}, Activation::tanh);
    const ForwardCache cache = forward(p, batch);
    CHECK((cache.layer(2).h_t.array() == 0.0).all());
    CHECK((cache.layer(2).h_s.array() == 0.0).all());
  }
}

TEST_CASE("forward matches the naive triple-loop oracle", "[network]") {
  TrainConfig cfg;
  cfg.rng_seed = 33;
  const NetworkParams p = init_network({3, 5, 4}, Activation::sigmoid, cfg);
  const FeatureBatch batch = random_batch(9, 3, 34);

  std::vector<std::vector<double>> xt(9, std::vector<double>(3)), xs = xt;
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 3; ++j) {
      xt[i][j] = batch.target(i, j);
      xs[i][j] = batch.source(i, j);
    }
  const auto ot = naive_forward(p, xt);
  const auto os = naive_forward(p, xs);
  const ForwardCache cache = forward(p, batch);
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 4; ++j) {
      REQUIRE(std::abs(cache.layer(2).h_t(i, j) - ot[i][j]) < 1e-12);
      REQUIRE(std::abs(cache.layer(2).h_s(i, j) - os[i][j]) < 1e-12);
    }
}

TEST_CASE("forward validates shapes and finiteness", "[network]") {
  TrainConfig cfg;
  const NetworkParams p = init_network({3, 4}, Activation::sigmoid, cfg);
  const FeatureBatch wrong = random_batch(5, 2, 3);
  CHECK_THROWS_AS(forward(p, wrong), ValidationError);
}

TEST_CASE("mutual information trivial values", "[network]") {
  Rng rng(8);
  Matrix h(10, 2);
  for (int i = 0; i < h.rows(); ++i)
    for (int j = 0; j < h.cols(); ++j) h(i, j) = rng.uniform();
  // identical branches: r = 1, MI = 0
  {
    const ForwardCache c = ForwardCache::from_activations(h, h);
    CHECK(std::abs(mutual_information(c, 1)) < 1e-12);
  }
  // perfect anticorrelation about the mean: r = -1, MI = -1
  {
    const double mean = h.mean();
    const Matrix flipped = (2.0 * mean - h.array()).matrix();
    const ForwardCache c = ForwardCache::from_activations(h, flipped);
    CHECK(std::abs(mutual_information(c, 1) + 1.0) < 1e-12);
  }
}

TEST_CASE("mutual information matches the two-pass Pearson oracle", "[network]") {
  Rng rng(55);
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 30, p = 4;
    Matrix ht(n, p), hs(n, p);
    std::vector<double> ft, fs;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p; ++j) {
        ht(i, j) = rng.uniform();
        hs(i, j) = 0.4 * ht(i, j) + 0.6 * rng.uniform();
        ft.push_back(ht(i, j));
        fs.push_back(hs(i, j));
      }
    const ForwardCache c = ForwardCache::from_activations(ht, hs);
    const double expect = -0.5 * (1.0 - naive_pearson(ft, fs));
    REQUIRE(std::abs(mutual_information(c, 1) - expect) < 1e-12);
    REQUIRE(mutual_information(c, 1) <= 1e-15);
    REQUIRE(mutual_information(c, 1) >= -1.0 - 1e-15);
  }
}

TEST_CASE("degenerate batch raises", "[network]") {
  const Matrix flat = Matrix::Constant(6, 2, 0.5);
  Matrix varying(6, 2);
  Rng rng(2);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 2; ++j) varying(i, j) = rng.uniform();
  const ForwardCache c = ForwardCache::from_activations(flat, varying);
  CHECK_THROWS_AS(mutual_information(c, 1), DegenerateBatchError);
}

TEST_CASE("MI estimator invariant under shared positive affine rescale", "[network]") {
  Rng rng(91);
  const int n = 25, p = 3;
  Matrix ht(n, p), hs(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) {
      ht(i, j) = rng.uniform();
      hs(i, j) = rng.uniform();
    }
  const double base =
      mutual_information(ForwardCache::from_activations(ht, hs), 1);
  for (const double a : {0.2, 3.0, 17.5}) {
    const double b = rng.uniform(-2.0, 2.0);
    const Matrix ht2 = (a * ht.array() + b).matrix();
    const Matrix hs2 = (a * hs.array() + b).matrix();
    const double scaled =
        mutual_information(ForwardCache::from_activations(ht2, hs2), 1);
    REQUIRE(std::abs(scaled - base) < 1e-10);
  }
}

TEST_CASE("paper-literal MI form is available for study", "[network]") {
  Rng rng(14);
  Matrix ht(12, 2), hs(12, 2);
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 2; ++j) {
      ht(i, j) = rng.uniform();
      hs(i, j) = rng.uniform();
    }
  const ForwardCache c = ForwardCache::from_activations(ht, hs);
  const double literal = mutual_information(c, 1, MiForm::paper_literal);
  CHECK(std::isfinite(literal));
  // differs from the Pearson reading by the doubled mean product
  const PooledStats st = ForwardCache::compute_pooled(ht, hs);
  const double gap = literal - mutual_information(c, 1);
  CHECK(std::abs(gap - (st.mean_t * st.mean_s) / (st.sd_t * st.sd_s)) < 1e-12);
}

TEST_CASE("mmd trivial values and loop oracle", "[network]") {
  {
    Matrix h(4, 3);
    h.setRandom();
    CHECK(mmd(ForwardCache::from_activations(h, h), 1) == 0.0);
  }
  {
    Matrix ht(2, 1), hs(2, 1);
    ht << 2, 2;
    hs << 0, 0;
    CHECK(std::abs(mmd(ForwardCache::from_activations(ht, hs), 1) - 4.0) < 1e-12);
  }
  Rng rng(66);
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 15, p = 4;
    Matrix ht(n, p), hs(n, p);
    std::vector<std::vector<double>> vt(n, std::vector<double>(p)), vs = vt;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p; ++j) {
        ht(i, j) = rng.uniform();
        hs(i, j) = rng.uniform();
        vt[i][j] = ht(i, j);
        vs[i][j] = hs(i, j);
      }
    const double got = mmd(ForwardCache::from_activations(ht, hs), 1);
    REQUIRE(std::abs(got - naive_mmd(vt, vs)) < 1e-12);
    REQUIRE(got >= 0.0);
  }
}

TEST_CASE("mmd zero iff branch means equal", "[network]") {
  Rng rng(31);
  Matrix ht(8, 2), hs(8, 2);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 2; ++j) {
      ht(i, j) = rng.uniform();
      hs(i, j) = rng.uniform();
    }
  // shift source columns so the means match exactly
  for (int j = 0; j < 2; ++j)
    hs.col(j).array() += ht.col(j).mean() - hs.col(j).mean();
  CHECK(mmd(ForwardCache::from_activations(ht, hs), 1) < 1e-12);
  hs(0, 0) += 0.25;
  CHECK(mmd(ForwardCache::from_activations(ht, hs), 1) > 1e-12);
}

TEST_CASE("cost composes MI, MMD and the regularizer", "[network]") {
  TrainConfig cfg;
  cfg.alpha = 0.3;
  cfg.beta = 2.0;
  cfg.rng_seed = 70;
  const NetworkParams p = init_network({3, 4, 3}, Activation::sigmoid, cfg);
  const FeatureBatch batch = random_batch(12, 3, 71);
  const ForwardCache cache = forward(p, batch);

  const int M = cache.top();
  std::vector<double> ft, fs;
  std::vector<std::vector<double>> vt, vs;
  for (int i = 0; i < cache.layer(M).h_t.rows(); ++i) {
    vt.emplace_back();
    vs.emplace_back();
    for (int j = 0; j < cache.layer(M).h_t.cols(); ++j) {
      ft.push_back(cache.layer(M).h_t(i, j));
      fs.push_back(cache.layer(M).h_s(i, j));
      vt.back().push_back(cache.layer(M).h_t(i, j));
      vs.back().push_back(cache.layer(M).h_s(i, j));
    }
  }
  const double expect = -0.5 * (1.0 - naive_pearson(ft, fs)) - cfg.alpha * naive_mmd(vt, vs) -
                        cfg.beta * naive_squared_param_norm(p);
  REQUIRE(std::abs(cost(p, cache, cfg) - expect) < 1e-10);
}

TEST_CASE("cost with identical branches and beta-only regularizer", "[network]") {
  // identical inputs through shared weights: MI = 0 and MMD = 0 by construction
  TrainConfig cfg;
  cfg.alpha = 0.1;
  cfg.beta = 10.0;
  NetworkParams p = zero_network({2, 2}, Activation::sigmoid);
  p.W[0] << 1.0, 0.0, 0.0, 1.0;  // ||W||_F^2 = 2
  FeatureBatch batch;
  batch.target.resize(4, 2);
  Rng rng(5);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 2; ++j) batch.target(i, j) = rng.uniform();
  batch.source = batch.target;
  const ForwardCache cache = forward(p, batch);
  REQUIRE(std::abs(cost(p, cache, cfg) - (-20.0)) < 1e-12);
}

TEST_CASE("identical branches zero the MMD gradient component", "[network]") {
  TrainConfig cfg;
  cfg.alpha = 0.7;
  cfg.beta = 0.0 + 1e-30;  // effectively disable the regularizer term
  cfg.rng_seed = 12;
  const NetworkParams p = init_network({3, 4, 2}, Activation::sigmoid, cfg);
  FeatureBatch batch = random_batch(10, 3, 13);
  batch.source = batch.target;
  const ForwardCache cache = forward(p, batch);
  // identical branches also zero the exact MI seed, so dW is (numerically) zero
  const Gradients g_alpha = backward(p, cache, cfg);
  TrainConfig cfg0 = cfg;
  cfg0.alpha = 1e-30;
  const Gradients g_zero = backward(p, cache, cfg0);
  for (int m = 0; m < p.num_layers(); ++m) {
    REQUIRE((g_alpha.dW[m] - g_zero.dW[m]).cwiseAbs().maxCoeff() < 1e-14);
    REQUIRE((g_alpha.db[m] - g_zero.db[m]).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("beta-only gradient is exactly -2 beta W", "[network]") {
  // with source == target the MI and MMD seeds vanish identically
  TrainConfig cfg;
  cfg.alpha = 0.25;
  cfg.beta = 3.0;
  cfg.rng_seed = 40;
  const NetworkParams p = init_network({3, 5, 3}, Activation::sigmoid, cfg);
  FeatureBatch batch = random_batch(8, 3, 41);
  batch.source = batch.target;
  const ForwardCache cache = forward(p, batch);
  const Gradients g = backward(p, cache, cfg);
  for (int m = 0; m < p.num_layers(); ++m) {
    REQUIRE((g.dW[m] + 2.0 * cfg.beta * p.W[m]).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE((g.db[m] + 2.0 * cfg.beta * p.b[m]).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("gradients match finite differences on 20 seeds", "[network]") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const GradCheckResult res = network_gradient_check(seed);
    INFO("seed " << seed << " max rel err " << res.max_rel_err);
    REQUIRE(res.pass);
  }
}

TEST_CASE("tanh gradients also pass finite differences", "[network]") {
  NetworkGradFixture fx = make_network_grad_fixture(7);
  fx.params.activation = Activation::tanh;
  const auto f = [&](const Vector& v) {
    const NetworkParams p = unflatten_params(fx.params, v);
    return cost(p, forward(p, fx.batch), fx.cfg);
  };
  const Vector x0 = flatten_params(fx.params);
  const Vector grad = flatten_gradients(backward(fx.params, forward(fx.params, fx.batch), fx.cfg));
  const GradCheckResult res =
      check_gradient(f, x0, grad, Vector::Constant(x0.size(), 1e-5), 1e-4);
  REQUIRE(res.pass);
}

TEST_CASE("injected sign flip in the MMD gradient fails the check", "[network]") {
  const NetworkGradFixture fx = make_network_grad_fixture(3);
  // make the MMD term dominant so the flip is visible
  TrainConfig cfg = fx.cfg;
  cfg.alpha = 5.0;
  const ForwardCache cache = forward(fx.params, fx.batch);
  Gradients g = backward(fx.params, cache, cfg);
  TrainConfig cfg_noalpha = cfg;
  cfg_noalpha.alpha = 1e-30;
  const Gradients g_mi = backward(fx.params, cache, cfg_noalpha);
  // flipped-MMD gradient: MI part + (MI part - full) = 2*MI - full
  Gradients flipped = g;
  for (std::size_t m = 0; m < g.dW.size(); ++m) {
    flipped.dW[m] = 2.0 * g_mi.dW[m] - g.dW[m];
    flipped.db[m] = 2.0 * g_mi.db[m] - g.db[m];
  }
  const auto f = [&](const Vector& v) {
    const NetworkParams p = unflatten_params(fx.params, v);
    return cost(p, forward(p, fx.batch), cfg);
  };
  const Vector x0 = flatten_params(fx.params);
  const GradCheckResult good = check_gradient(f, x0, flatten_gradients(g),
                                              Vector::Constant(x0.size(), 1e-5), 1e-4);
  const GradCheckResult bad = check_gradient(f, x0, flatten_gradients(flipped),
                                             Vector::Constant(x0.size(), 1e-5), 1e-4);
  CHECK(good.pass);
  CHECK_FALSE(bad.pass);
}
