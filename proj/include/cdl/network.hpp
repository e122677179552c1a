#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "cdl/errors.hpp"

namespace cdl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { sigmoid, tanh };

inline const char* activation_name(Activation a) {
  return a == Activation::sigmoid ? "sigmoid" : "tanh";
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "tanh") return Activation::tanh;
  throw ValidationError("unknown activation '" + s + "'");
}

inline double activate(Activation a, double z) {
  if (a == Activation::sigmoid) {
    // split form avoids exp overflow for large |z|
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  }
  return std::tanh(z);
}

// derivative expressed through the activation value
inline double activate_deriv_from_h(Activation a, double h) {
  return a == Activation::sigmoid ? h * (1.0 - h) : 1.0 - h * h;
}

// Weights and biases of the communal map; layer m maps p^(m-1) -> p^(m).
struct NetworkParams {
  std::vector<Matrix> W;  // W[m]: p^(m) x p^(m-1)
  std::vector<Vector> b;  // b[m]: p^(m)
  Activation activation = Activation::sigmoid;

  int num_layers() const { return static_cast<int>(W.size()); }
  int input_dim() const { return static_cast<int>(W.front().cols()); }
  int output_dim() const { return static_cast<int>(W.back().rows()); }

  std::vector<int> layer_dims() const {
    std::vector<int> dims;
    dims.push_back(input_dim());
    for (const auto& w : W) dims.push_back(static_cast<int>(w.rows()));
    return dims;
  }

  void validate() const {
    if (W.empty() || W.size() != b.size())
      throw ValidationError("network needs at least one layer with matching biases");
    for (std::size_t m = 0; m < W.size(); ++m) {
      if (W[m].rows() != b[m].size()) throw ValidationError("bias size mismatch at layer");
      if (m > 0 && W[m].cols() != W[m - 1].rows())
        throw ValidationError("layer dimension chain broken");
      if (!W[m].allFinite() || !b[m].allFinite())
        throw ValidationError("network parameters must be finite");
    }
  }

  double squared_param_norm() const {
    double s = 0.0;
    for (std::size_t m = 0; m < W.size(); ++m) s += W[m].squaredNorm() + b[m].squaredNorm();
    return s;
  }
};

// Paired rows of source/target features, N x d each.
struct FeatureBatch {
  Matrix source;
  Matrix target;

  int n() const { return static_cast<int>(source.rows()); }
  int dim() const { return static_cast<int>(source.cols()); }

  void validate() const {
    if (source.rows() != target.rows() || source.cols() != target.cols())
      throw ValidationError("feature batch source/target shapes differ");
    if (source.rows() < 1) throw ValidationError("feature batch is empty");
    if (!source.allFinite() || !target.allFinite())
      throw ValidationError("feature batch contains non-finite values");
  }
};

// Pooled first/second moments of one layer's activations, both branches.
// Pooling runs over all N*p entries (the estimator treats the layer output
// as one scalar sample per entry, with a single sigma per branch).
struct PooledStats {
  double mean_t = 0.0, mean_s = 0.0;
  double sd_t = 0.0, sd_s = 0.0;
};

struct LayerCache {
  Matrix z_t, h_t;  // N x p^(m)
  Matrix z_s, h_s;
};

struct ForwardCache {
  Matrix input_t, input_s;        // h^(0)
  std::vector<LayerCache> layers;  // index m-1 holds layer m
  std::vector<PooledStats> pooled;

  int top() const { return static_cast<int>(layers.size()); }
  const LayerCache& layer(int m) const { return layers.at(m - 1); }
  const PooledStats& stats(int m) const { return pooled.at(m - 1); }

  // Assemble a single-layer cache directly from activations; lets the MI/MMD
  // estimators be exercised without going through phi.
  static ForwardCache from_activations(const Matrix& h_t, const Matrix& h_s) {
    ForwardCache c;
    c.layers.push_back(LayerCache{h_t, h_t, h_s, h_s});
    c.pooled.push_back(compute_pooled(h_t, h_s));
    return c;
  }

  static PooledStats compute_pooled(const Matrix& h_t, const Matrix& h_s) {
    PooledStats p;
    p.mean_t = h_t.mean();
    p.mean_s = h_s.mean();
    const double n = static_cast<double>(h_t.size());
    p.sd_t = std::sqrt(std::max(0.0, (h_t.array() - p.mean_t).square().sum() / n));
    p.sd_s = std::sqrt(std::max(0.0, (h_s.array() - p.mean_s).square().sum() / n));
    return p;
  }
};

struct TrainConfig {
  double alpha = 0.1;
  double beta = 10.0;
  double learning_rate = 0.2;
  double decay = 0.95;
  double eps = 1e-6;
  int max_iters = 500;
  std::uint64_t rng_seed = 0;
  double init_scale = 0.0;  // 0 = 1/sqrt(fan_in)

  void validate() const {
    if (!(alpha > 0)) throw ValidationError("alpha must be > 0");
    if (!(beta > 0)) throw ValidationError("beta must be > 0");
    if (!(learning_rate > 0)) throw ValidationError("learning_rate must be > 0");
    if (!(decay > 0 && decay <= 1)) throw ValidationError("decay must be in (0,1]");
    if (!(eps > 0)) throw ValidationError("eps must be > 0");
    if (max_iters < 1) throw ValidationError("max_iters must be >= 1");
    if (init_scale < 0) throw ValidationError("init_scale must be >= 0");
  }
};

struct Gradients {
  std::vector<Matrix> dW;
  std::vector<Vector> db;
  std::vector<Matrix> L_t, L_s;  // per-layer adjoints dC/dz, N x p^(m)
  Matrix d_input_s;              // dC/d(source features), N x d
};

// ---------------------------------------------------------------------------

inline ForwardCache forward(const NetworkParams& params, const FeatureBatch& batch) {
  params.validate();
  batch.validate();
  if (batch.dim() != params.input_dim())
    throw ValidationError("feature dimension does not match network input dim");

  ForwardCache cache;
  cache.input_t = batch.target;
  cache.input_s = batch.source;
  const Matrix* prev_t = &cache.input_t;
  const Matrix* prev_s = &cache.input_s;
  for (int m = 0; m < params.num_layers(); ++m) {
    LayerCache lc;
    lc.z_t = ((*prev_t) * params.W[m].transpose()).rowwise() + params.b[m].transpose();
    lc.z_s = ((*prev_s) * params.W[m].transpose()).rowwise() + params.b[m].transpose();
    lc.h_t = lc.z_t.unaryExpr(
        [&](double z) { return activate(params.activation, z); });
    lc.h_s = lc.z_s.unaryExpr(
        [&](double z) { return activate(params.activation, z); });
    if (!lc.h_t.allFinite() || !lc.h_s.allFinite() || !lc.z_t.allFinite() ||
        !lc.z_s.allFinite())
      throw NumericalError("non-finite activation at layer " + std::to_string(m + 1));
    cache.pooled.push_back(ForwardCache::compute_pooled(lc.h_t, lc.h_s));
    cache.layers.push_back(std::move(lc));
    prev_t = &cache.layers.back().h_t;
    prev_s = &cache.layers.back().h_s;
  }
  return cache;
}

enum class MiForm {
  pearson,        // -1/2 (1 - Pearson correlation), the reading used throughout
  paper_literal,  // non-centered cross term plus added mean product, for study
};

constexpr double kDegenerateSd = 1e-12;

inline double pooled_cross_moment(const Matrix& h_t, const Matrix& h_s) {
  return (h_t.array() * h_s.array()).sum() / static_cast<double>(h_t.size());
}

// Correlation-form mutual information of the pooled layer-m activations.
inline double mutual_information(const ForwardCache& cache, int m,
                                 MiForm form = MiForm::pearson) {
  const LayerCache& lc = cache.layer(m);
  const PooledStats& st = cache.stats(m);
  if (st.sd_t <= kDegenerateSd || st.sd_s <= kDegenerateSd)
    throw DegenerateBatchError("constant activations: zero sigma at layer " +
                               std::to_string(m));
  const double cross = pooled_cross_moment(lc.h_t, lc.h_s);
  if (form == MiForm::paper_literal) {
    // the printed formula read with the mean product grouped into the
    // correlation, i.e. r = cross/(N s s) + mean_t mean_s/(s s); the other
    // grouping reduces to the Pearson form below
    return -0.5 * (1.0 - cross / (st.sd_t * st.sd_s) -
                   (st.mean_t * st.mean_s) / (st.sd_t * st.sd_s));
  }
  const double cov = cross - st.mean_t * st.mean_s;
  const double r = cov / (st.sd_t * st.sd_s);
  return -0.5 * (1.0 - r);
}

// Squared norm of the mean pairwise difference at layer m (linear-kernel MMD).
inline double mmd(const ForwardCache& cache, int m) {
  const LayerCache& lc = cache.layer(m);
  const Eigen::RowVectorXd g =
      (lc.h_t - lc.h_s).colwise().mean();
  return g.squaredNorm();
}

inline double cost(const NetworkParams& params, const ForwardCache& cache,
                   const TrainConfig& cfg) {
  const int M = cache.top();
  return mutual_information(cache, M) - cfg.alpha * mmd(cache, M) -
         cfg.beta * params.squared_param_norm();
}

// Analytic gradient of the implemented cost with respect to every W and b.
// The derivation keeps the sigma and mean terms of the correlation (they are
// functions of the parameters), so the result is the exact gradient of
// cost(); finite-difference checks hold entrywise.
inline Gradients backward(const NetworkParams& params, const ForwardCache& cache,
                          const TrainConfig& cfg) {
  const int M = cache.top();
  const LayerCache& top = cache.layer(M);
  const PooledStats& st = cache.stats(M);
  if (st.sd_t <= kDegenerateSd || st.sd_s <= kDegenerateSd)
    throw DegenerateBatchError("constant activations: zero sigma at layer " +
                               std::to_string(M));

  const double n_pool = static_cast<double>(top.h_t.size());
  const double n_rows = static_cast<double>(top.h_t.rows());
  const double cov = pooled_cross_moment(top.h_t, top.h_s) - st.mean_t * st.mean_s;
  const double r = cov / (st.sd_t * st.sd_s);

  // dMI/dh at the top layer, exact for the Pearson form.
  const Matrix ct = top.h_t.array() - st.mean_t;
  const Matrix cs = top.h_s.array() - st.mean_s;
  const Matrix dmi_dt =
      (0.5 / n_pool) *
      (cs.array() / (st.sd_t * st.sd_s) - r * ct.array() / (st.sd_t * st.sd_t));
  const Matrix dmi_ds =
      (0.5 / n_pool) *
      (ct.array() / (st.sd_t * st.sd_s) - r * cs.array() / (st.sd_s * st.sd_s));

  // dD/dh: the mean-difference seed, identical across rows.
  const Eigen::RowVectorXd g = (top.h_t - top.h_s).colwise().mean();
  const double mmd_coeff = 2.0 / n_rows;

  Gradients grads;
  grads.dW.resize(M);
  grads.db.resize(M);
  grads.L_t.resize(M);
  grads.L_s.resize(M);

  const auto phi_prime = [&](const Matrix& h) {
    return h.unaryExpr(
        [&](double v) { return activate_deriv_from_h(params.activation, v); });
  };

  // top-layer adjoints dC/dz (regularizer handled per layer below)
  Matrix G_t =
      ((dmi_dt.array() - cfg.alpha * mmd_coeff * (Matrix::Ones(top.h_t.rows(), 1) * g).array()) *
       phi_prime(top.h_t).array())
          .matrix();
  Matrix G_s =
      ((dmi_ds.array() + cfg.alpha * mmd_coeff * (Matrix::Ones(top.h_s.rows(), 1) * g).array()) *
       phi_prime(top.h_s).array())
          .matrix();

  for (int m = M; m >= 1; --m) {
    const Matrix& h_prev_t = (m == 1) ? cache.input_t : cache.layer(m - 1).h_t;
    const Matrix& h_prev_s = (m == 1) ? cache.input_s : cache.layer(m - 1).h_s;
    grads.L_t[m - 1] = G_t;
    grads.L_s[m - 1] = G_s;
    grads.dW[m - 1] = G_t.transpose() * h_prev_t + G_s.transpose() * h_prev_s -
                      2.0 * cfg.beta * params.W[m - 1];
    grads.db[m - 1] =
        G_t.colwise().sum().transpose() + G_s.colwise().sum().transpose() -
        2.0 * cfg.beta * params.b[m - 1];
    if (m > 1) {
      // inner recursion carries the phi'(z^(m-1)) factor
      G_t = ((G_t * params.W[m - 1]).array() * phi_prime(cache.layer(m - 1).h_t).array())
                .matrix();
      G_s = ((G_s * params.W[m - 1]).array() * phi_prime(cache.layer(m - 1).h_s).array())
                .matrix();
    } else {
      grads.d_input_s = G_s * params.W[0];
    }
  }
  return grads;
}

}  // namespace cdl
