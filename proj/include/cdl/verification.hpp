#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cdl/density.hpp"
#include "cdl/network.hpp"
#include "cdl/registration.hpp"
#include "cdl/rng.hpp"
#include "cdl/synthetic.hpp"
#include "cdl/trainer.hpp"

namespace cdl {

// ---------------------------------------------------------------------------
// Generic central finite-difference gradient check.
// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_rel_err = 0.0;
  int worst_index = -1;
  bool pass = true;
};

// rel err per entry against max(|analytic|, |fd|); entries where both sides
// are below `floor` compare absolutely. `richardson` combines central
// differences at h and h/2, cancelling the h^2 truncation term so the step
// can stay above the rounding-noise floor.
inline GradCheckResult check_gradient(const std::function<double(const Vector&)>& f,
                                      const Vector& x0, const Vector& grad,
                                      const Vector& h, double tol, double floor = 1e-8,
                                      bool richardson = false) {
  GradCheckResult res;
  Vector x = x0;
  const auto central = [&](int i, double step) {
    x(i) = x0(i) + step;
    const double fp = f(x);
    x(i) = x0(i) - step;
    const double fm = f(x);
    x(i) = x0(i);
    return (fp - fm) / (2.0 * step);
  };
  for (int i = 0; i < x0.size(); ++i) {
    const double d1 = central(i, h(i));
    const double fd = richardson ? (4.0 * central(i, 0.5 * h(i)) - d1) / 3.0 : d1;
    const double denom = std::max(std::abs(grad(i)), std::abs(fd));
    const double rel = denom < floor ? std::abs(grad(i) - fd) : std::abs(grad(i) - fd) / denom;
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_index = i;
    }
  }
  res.pass = res.max_rel_err < tol;
  return res;
}

// ---------------------------------------------------------------------------
// Straight-line oracles, coded independently of the Eigen implementation path.
// ---------------------------------------------------------------------------

// Naive triple-loop forward pass over raw arrays.
inline std::vector<std::vector<double>> naive_forward(const NetworkParams& params,
                                                      const std::vector<std::vector<double>>& x) {
  std::vector<std::vector<double>> h = x;
  for (int m = 0; m < params.num_layers(); ++m) {
    const int rows = static_cast<int>(params.W[m].rows());
    const int cols = static_cast<int>(params.W[m].cols());
    std::vector<std::vector<double>> next(h.size(), std::vector<double>(rows, 0.0));
    for (std::size_t i = 0; i < h.size(); ++i) {
      for (int r = 0; r < rows; ++r) {
        double z = params.b[m](r);
        for (int c = 0; c < cols; ++c) z += params.W[m](r, c) * h[i][c];
        next[i][r] = activate(params.activation, z);
      }
    }
    h = std::move(next);
  }
  return h;
}

// Textbook two-pass Pearson correlation of two flat samples.
inline double naive_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
    sab += (a[i] - ma) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Explicit mean-difference loop for the linear-kernel MMD.
inline double naive_mmd(const std::vector<std::vector<double>>& h_t,
                        const std::vector<std::vector<double>>& h_s) {
  const std::size_t n = h_t.size();
  const std::size_t p = h_t.front().size();
  double out = 0.0;
  for (std::size_t j = 0; j < p; ++j) {
    double g = 0.0;
    for (std::size_t i = 0; i < n; ++i) g += h_t[i][j] - h_s[i][j];
    g /= static_cast<double>(n);
    out += g * g;
  }
  return out;
}

inline double naive_squared_param_norm(const NetworkParams& params) {
  double s = 0.0;
  for (int m = 0; m < params.num_layers(); ++m) {
    for (int i = 0; i < params.W[m].rows(); ++i)
      for (int j = 0; j < params.W[m].cols(); ++j) s += params.W[m](i, j) * params.W[m](i, j);
    for (int i = 0; i < params.b[m].size(); ++i) s += params.b[m](i) * params.b[m](i);
  }
  return s;
}

// All-pairs brute-force Hausdorff over boundary voxels, no early exit.
inline double naive_hausdorff_mm(const BinaryMask& a, const BinaryMask& b,
                                 const Spacing& sp) {
  const auto ba = boundary_voxels(a);
  const auto bb = boundary_voxels(b);
  if (ba.empty() || bb.empty()) throw ValidationError("naive_hausdorff: empty mask");
  const auto directed = [&](const std::vector<std::array<int, 3>>& u,
                            const std::vector<std::array<int, 3>>& v) {
    double worst = 0.0;
    for (const auto& pu : u) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& pv : v) {
        const double dx = (pu[0] - pv[0]) * sp[0];
        const double dy = (pu[1] - pv[1]) * sp[1];
        const double dz = (pu[2] - pv[2]) * sp[2];
        best = std::min(best, dx * dx + dy * dy + dz * dz);
      }
      worst = std::max(worst, best);
    }
    return std::sqrt(worst);
  };
  return std::max(directed(ba, bb), directed(bb, ba));
}

// Exact two-sided rank-sum p by enumerating all C(n+m, n) group assignments.
inline double exact_ranksum_p(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> all = x;
  all.insert(all.end(), y.begin(), y.end());
  const std::size_t total = all.size();
  const std::size_t n = x.size();
  std::vector<std::size_t> order(total);
  for (std::size_t i = 0; i < total; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return all[a] < all[b]; });
  std::vector<double> rank(total);
  std::size_t i = 0;
  while (i < total) {
    std::size_t j = i;
    while (j + 1 < total && all[order[j + 1]] == all[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double w_obs = 0.0;
  for (std::size_t k = 0; k < n; ++k) w_obs += rank[k];
  const double mean_w = static_cast<double>(n) * static_cast<double>(total + 1) / 2.0;
  const double dev_obs = std::abs(w_obs - mean_w);

  std::vector<bool> pick(total, false);
  std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(n), true);
  std::sort(pick.begin(), pick.end());  // start from lexicographically smallest
  std::size_t count = 0, extreme = 0;
  do {
    double w = 0.0;
    for (std::size_t k = 0; k < total; ++k)
      if (pick[k]) w += rank[k];
    ++count;
    if (std::abs(w - mean_w) >= dev_obs - 1e-12) ++extreme;
  } while (std::next_permutation(pick.begin(), pick.end()));
  return static_cast<double>(extreme) / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Reusable check fixtures.
// ---------------------------------------------------------------------------

inline Vector flatten_params(const NetworkParams& p) {
  std::vector<double> flat;
  for (int m = 0; m < p.num_layers(); ++m) {
    for (int i = 0; i < p.W[m].rows(); ++i)
      for (int j = 0; j < p.W[m].cols(); ++j) flat.push_back(p.W[m](i, j));
    for (int i = 0; i < p.b[m].size(); ++i) flat.push_back(p.b[m](i));
  }
  return Eigen::Map<Vector>(flat.data(), static_cast<int>(flat.size()));
}

inline NetworkParams unflatten_params(const NetworkParams& like, const Vector& v) {
  NetworkParams p = like;
  int at = 0;
  for (int m = 0; m < p.num_layers(); ++m) {
    for (int i = 0; i < p.W[m].rows(); ++i)
      for (int j = 0; j < p.W[m].cols(); ++j) p.W[m](i, j) = v(at++);
    for (int i = 0; i < p.b[m].size(); ++i) p.b[m](i) = v(at++);
  }
  return p;
}

inline Vector flatten_gradients(const Gradients& g) {
  std::vector<double> flat;
  for (std::size_t m = 0; m < g.dW.size(); ++m) {
    for (int i = 0; i < g.dW[m].rows(); ++i)
      for (int j = 0; j < g.dW[m].cols(); ++j) flat.push_back(g.dW[m](i, j));
    for (int i = 0; i < g.db[m].size(); ++i) flat.push_back(g.db[m](i));
  }
  return Eigen::Map<Vector>(flat.data(), static_cast<int>(flat.size()));
}

struct NetworkGradFixture {
  NetworkParams params;
  FeatureBatch batch;
  TrainConfig cfg;
};

inline NetworkGradFixture make_network_grad_fixture(std::uint64_t seed,
                                                    const std::vector<int>& arch = {3, 4, 3},
                                                    int n = 24) {
  NetworkGradFixture fx;
  fx.cfg.rng_seed = seed;
  fx.cfg.alpha = 0.1;
  fx.cfg.beta = 0.5;
  fx.params = init_network(arch, Activation::sigmoid, fx.cfg);
  Rng rng(seed ^ 0xFEEDull);
  fx.batch.target.resize(n, arch.front());
  fx.batch.source.resize(n, arch.front());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < arch.front(); ++j) {
      fx.batch.target(i, j) = rng.uniform();
      fx.batch.source(i, j) = rng.uniform();
    }
  return fx;
}

// Entrywise FD check of backward() on a seeded fixture.
inline GradCheckResult network_gradient_check(std::uint64_t seed, double h_step = 1e-5,
                                              double tol = 1e-4) {
  const NetworkGradFixture fx = make_network_grad_fixture(seed);
  const auto f = [&](const Vector& v) {
    const NetworkParams p = unflatten_params(fx.params, v);
    const ForwardCache cache = forward(p, fx.batch);
    return cost(p, cache, fx.cfg);
  };
  const Vector x0 = flatten_params(fx.params);
  const ForwardCache cache = forward(fx.params, fx.batch);
  const Vector grad = flatten_gradients(backward(fx.params, cache, fx.cfg));
  const Vector h = Vector::Constant(x0.size(), h_step);
  return check_gradient(f, x0, grad, h, tol);
}

struct MetricGradFixture {
  SyntheticPair pair;
  NetworkParams model;
  TrainConfig cfg;
  MetricSamplingConfig sampling;
  AffineParams mu;
};

// Small seeded registration scene with an untrained (random) model; the
// chain-rule check does not depend on the model being good.
inline MetricGradFixture make_metric_grad_fixture(std::uint64_t seed, int threads = 1) {
  MetricGradFixture fx;
  const PhantomSpec spec = default_phantom_spec(seed, {32, 32, 32}, {2.0, 2.0, 2.0});
  Rng rng(seed ^ 0xABCDull);
  const Vec3 center(31.0, 31.0, 31.0);
  AffineParams truth = random_rigid_perturbation(rng, 4.0, 2.0, center);
  fx.pair = make_pair(spec, drift_preset_t1_t2(), truth, {seed, seed + 1}, threads);

  fx.cfg.rng_seed = seed ^ 0x5EEDull;
  fx.cfg.alpha = 0.1;
  // keep the constant regularizer offset small: FD precision on the tiny
  // rotation components is limited by rounding noise proportional to |cost|
  fx.cfg.beta = 0.01;
  fx.model = init_network({3, 8, 4}, Activation::sigmoid, fx.cfg);

  fx.sampling.n_samples = 1500;
  fx.sampling.seed = seed ^ 0x1234ull;
  fx.sampling.threads = threads;
  // sample solid foreground only: background voxels that pass the 0.01
  // threshold through noise can cross the zero-padding support edge under
  // the FD perturbations and leave micro-jumps in the objective
  fx.sampling.sample_threshold = 0.05;

  // evaluate the gradient somewhere generic, near but not at the truth
  fx.mu = AffineParams::identity(center);
  fx.mu.mu[mu_index::rz] = 0.02;
  fx.mu.mu[mu_index::tx] = 1.0;
  fx.mu.mu[mu_index::ty] = -0.5;
  fx.mu.mu[mu_index::sx] = 1.01;
  fx.mu.mu[mu_index::kxy] = 0.01;
  return fx;
}

// FD check of the Eq.-10 search direction against the implemented metric,
// with per-parameter steps h_i = h_base / scaling_i.
inline GradCheckResult metric_gradient_check(std::uint64_t seed, double h_base = 0.03,
                                             double tol = 1e-3, int threads = 1) {
  const MetricGradFixture fx = make_metric_grad_fixture(seed, threads);
  CdlMetric metric(fx.model, fx.cfg, fx.pair.target, fx.pair.source,
                   FeatureMode::intensity_mean_std, fx.sampling);
  const Vec12 scaling = OptimizerConfig::default_scaling();
  const auto f = [&](const Vector& v) {
    AffineParams p = fx.mu;
    for (int i = 0; i < 12; ++i) p.mu[i] = v(i);
    return metric.value(p);
  };
  Vector x0(12), h(12);
  for (int i = 0; i < 12; ++i) {
    x0(i) = fx.mu.mu[i];
    h(i) = h_base / scaling(i);
  }
  const Vec12 d = metric.direction(fx.mu);
  Vector grad(12);
  for (int i = 0; i < 12; ++i) grad(i) = d(i);
  return check_gradient(f, x0, grad, h, tol, 1e-10, /*richardson=*/true);
}

// ---------------------------------------------------------------------------
// The verify suite: one row per check, with the measured value and tolerance.
// ---------------------------------------------------------------------------

struct CheckRow {
  std::string name;
  double measured = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

inline std::vector<CheckRow> run_verify_suite(int network_seeds = 20, int metric_seeds = 3,
                                              int threads = 1) {
  std::vector<CheckRow> rows;
  const auto add = [&](const std::string& name, double measured, double tol) {
    rows.push_back({name, measured, tol, measured < tol});
  };

  for (int s = 0; s < network_seeds; ++s) {
    const auto res = network_gradient_check(1000 + static_cast<std::uint64_t>(s));
    add("network_gradient_fd_seed" + std::to_string(s), res.max_rel_err, 1e-4);
  }

  for (int s = 0; s < metric_seeds; ++s) {
    const auto res =
        metric_gradient_check(2000 + static_cast<std::uint64_t>(s), 0.03, 1e-3, threads);
    add("metric_gradient_fd_seed" + std::to_string(s), res.max_rel_err, 1e-3);
  }

  // MI and MMD against the straight-loop oracles on random caches
  {
    Rng rng(77);
    double worst_mi = 0.0, worst_mmd = 0.0;
    for (int rep = 0; rep < 10; ++rep) {
      const int n = 40, p = 5;
      Matrix ht(n, p), hs(n, p);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < p; ++j) {
          ht(i, j) = rng.uniform();
          hs(i, j) = rng.uniform();
        }
      const ForwardCache cache = ForwardCache::from_activations(ht, hs);
      std::vector<double> flat_t, flat_s;
      std::vector<std::vector<double>> rows_t(n, std::vector<double>(p)),
          rows_s(n, std::vector<double>(p));
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < p; ++j) {
          flat_t.push_back(ht(i, j));
          flat_s.push_back(hs(i, j));
          rows_t[i][j] = ht(i, j);
          rows_s[i][j] = hs(i, j);
        }
      worst_mi = std::max(worst_mi,
                          std::abs(mutual_information(cache, 1) -
                                   (-0.5 * (1.0 - naive_pearson(flat_t, flat_s)))));
      worst_mmd = std::max(worst_mmd, std::abs(mmd(cache, 1) - naive_mmd(rows_t, rows_s)));
    }
    add("mi_vs_pearson_oracle", worst_mi, 1e-12);
    add("mmd_vs_loop_oracle", worst_mmd, 1e-12);
  }

  // density grid: unit mass and sampling agreement
  {
    double worst_mass = 0.0;
    for (double mu : {-1.0, 0.0, 1.0})
      for (double sigma : {0.1, 0.5, 1.0, 2.0})
        for (Activation act : {Activation::sigmoid, Activation::tanh})
          worst_mass = std::max(
              worst_mass, std::abs(integrate_transformed_density({mu, sigma}, act) - 1.0));
    add("density_unit_mass_grid", worst_mass, 1e-6);

    const auto rep = gaussianity_check({0.0, 1.0}, Activation::sigmoid, 100000, 99);
    add("density_ks_closed_form", rep.ks_closed_form, 0.01);

    const auto small = gaussianity_check({0.0, 0.01}, Activation::tanh, 100000, 101);
    add("density_small_sigma_skew", std::abs(small.skewness), 0.05);
    add("density_small_sigma_kurtosis", std::abs(small.excess_kurtosis), 0.1);
  }

  return rows;
}

}  // namespace cdl
