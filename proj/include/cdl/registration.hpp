#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cdl/affine.hpp"
#include "cdl/bspline.hpp"
#include "cdl/errors.hpp"
#include "cdl/features.hpp"
#include "cdl/network.hpp"
#include "cdl/parallel.hpp"
#include "cdl/volume.hpp"

namespace cdl {

// ---------------------------------------------------------------------------
// Resampling through an affine map. Output voxel p takes the source value at
// T(p); points outside the spline support become 0.
// ---------------------------------------------------------------------------

inline Vec3 voxel_to_mm(const VoxelIndex& v, const Spacing& sp) {
  return Vec3(v[0] * sp[0], v[1] * sp[1], v[2] * sp[2]);
}

inline ImageVolume resample(const SplineCoefficients& source, const Spacing& source_spacing,
                            const AffineMatrix& T, const Dims& target_dims,
                            const Spacing& target_spacing, int threads = 1) {
  ImageVolume out;
  out.dims = target_dims;
  out.spacing = target_spacing;
  out.data.resize(voxel_count(target_dims));
  const int nx = target_dims[0], ny = target_dims[1];
  parallel_chunks(out.data.size(), 4096, threads,
                  [&](std::size_t, std::size_t b, std::size_t e) {
                    for (std::size_t i = b; i < e; ++i) {
                      const int x = static_cast<int>(i % nx);
                      const int y = static_cast<int>((i / nx) % ny);
                      const int z = static_cast<int>(i / (static_cast<std::size_t>(nx) * ny));
                      const Vec3 p(x * target_spacing[0], y * target_spacing[1],
                                   z * target_spacing[2]);
                      const Vec3 q = T.apply(p);
                      const std::array<double, 3> qv = {q.x() / source_spacing[0],
                                                        q.y() / source_spacing[1],
                                                        q.z() / source_spacing[2]};
                      out.data[i] = static_cast<float>(sample_interpolated(source, qv).value);
                    }
                  });
  out.refresh_range();
  return out;
}

inline ImageVolume resample(const SplineCoefficients& source, const Spacing& source_spacing,
                            const AffineParams& mu, const Dims& target_dims,
                            const Spacing& target_spacing, int threads = 1) {
  return resample(source, source_spacing, to_matrix(mu), target_dims, target_spacing, threads);
}

// Nearest-neighbour mask resampling, for ground-truth overlap tracking.
inline BinaryMask resample_mask(const BinaryMask& source, const Spacing& source_spacing,
                                const AffineMatrix& T, const Dims& target_dims,
                                const Spacing& target_spacing) {
  BinaryMask out(target_dims);
  const int nx = target_dims[0], ny = target_dims[1], nz = target_dims[2];
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      for (int x = 0; x < nx; ++x) {
        const Vec3 p(x * target_spacing[0], y * target_spacing[1], z * target_spacing[2]);
        const Vec3 q = T.apply(p);
        const int qx = static_cast<int>(std::lround(q.x() / source_spacing[0]));
        const int qy = static_cast<int>(std::lround(q.y() / source_spacing[1]));
        const int qz = static_cast<int>(std::lround(q.z() / source_spacing[2]));
        if (qx >= 0 && qy >= 0 && qz >= 0 && qx < source.dims[0] && qy < source.dims[1] &&
            qz < source.dims[2])
          out.set(x, y, z, source.at(qx, qy, qz));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metric interface for the optimizer: a scalar objective to maximize and an
// ascent direction dC/dmu.
// ---------------------------------------------------------------------------

struct RegistrationMetric {
  virtual ~RegistrationMetric() = default;
  virtual double value(const AffineParams& mu) const = 0;
  virtual Vec12 direction(const AffineParams& mu) const = 0;
  virtual void redraw_samples(std::uint64_t seed) = 0;
};

struct MetricSamplingConfig {
  int n_samples = 5000;
  std::uint64_t seed = 0;
  double sample_threshold = 0.01;  // target-support definition: intensity > threshold
  bool threshold_sampling = true;
  double min_valid_fraction = 0.5;  // below this in-support fraction: insufficient overlap
  int threads = 1;
};

// ---------------------------------------------------------------------------
// CDL metric: cost of Eq.-11 form evaluated on a fixed, seeded voxel sample
// of the target, with the source features sampled through T_mu.
// ---------------------------------------------------------------------------

class CdlMetric : public RegistrationMetric {
 public:
  CdlMetric(NetworkParams model, TrainConfig cost_cfg, const ImageVolume& target,
            const ImageVolume& source, FeatureMode mode, MetricSamplingConfig cfg)
      : model_(std::move(model)),
        cost_cfg_(std::move(cost_cfg)),
        cfg_(cfg),
        target_(&target),
        source_spacing_(source.spacing),
        target_spacing_(target.spacing) {
    model_.validate();
    if (model_.input_dim() != feature_dim(mode))
      throw ValidationError("model input dim does not match feature mode");
    field_t_ = make_feature_field(target, mode, cfg.threads);
    field_s_ = make_feature_field(source, mode, cfg.threads);
    redraw_samples(cfg.seed);
  }

  void redraw_samples(std::uint64_t seed) override {
    positions_ = sample_positions(*target_, cfg_.n_samples, seed, cfg_.sample_threshold,
                                  cfg_.threshold_sampling);
    const int n = static_cast<int>(positions_.size());
    target_features_.resize(n, field_t_.dim());
    phys_points_.resize(n);
    for (int i = 0; i < n; ++i) {
      const std::array<double, 3> p = {static_cast<double>(positions_[i][0]),
                                       static_cast<double>(positions_[i][1]),
                                       static_cast<double>(positions_[i][2])};
      target_features_.row(i) = sample_features(field_t_, p).values.transpose();
      phys_points_[i] = voxel_to_mm(positions_[i], target_spacing_);
    }
  }

  struct Evaluation {
    FeatureBatch batch;
    std::vector<FeatureSample> source_samples;
    int valid = 0;
  };

  Evaluation evaluate_features(const AffineParams& mu) const {
    const AffineMatrix T = to_matrix(mu);
    const int n = static_cast<int>(positions_.size());
    Evaluation ev;
    ev.batch.target = target_features_;
    ev.batch.source.resize(n, field_s_.dim());
    ev.source_samples.resize(n);
    std::vector<int> valid_per_chunk((n + 255) / 256, 0);
    parallel_chunks(static_cast<std::size_t>(n), 256, cfg_.threads,
                    [&](std::size_t c, std::size_t b, std::size_t e) {
                      int valid = 0;
                      for (std::size_t i = b; i < e; ++i) {
                        const Vec3 q = T.apply(phys_points_[i]);
                        const std::array<double, 3> qv = {q.x() / source_spacing_[0],
                                                          q.y() / source_spacing_[1],
                                                          q.z() / source_spacing_[2]};
                        ev.source_samples[i] = sample_features(field_s_, qv);
                        ev.batch.source.row(i) = ev.source_samples[i].values.transpose();
                        valid += ev.source_samples[i].inside ? 1 : 0;
                      }
                      valid_per_chunk[c] = valid;
                    });
    for (int v : valid_per_chunk) ev.valid += v;
    if (ev.valid < static_cast<int>(cfg_.min_valid_fraction * n))
      throw InsufficientOverlapError(
          "insufficient overlap: " + std::to_string(ev.valid) + "/" + std::to_string(n) +
          " samples inside source support");
    return ev;
  }

  double value(const AffineParams& mu) const override {
    const Evaluation ev = evaluate_features(mu);
    const ForwardCache cache = forward(model_, ev.batch);
    return cost(model_, cache, cost_cfg_);
  }

  // Exact dC/dmu: network input adjoint -> feature Jacobian (mm) -> dT/dmu.
  Vec12 direction(const AffineParams& mu) const override {
    const Evaluation ev = evaluate_features(mu);
    const ForwardCache cache = forward(model_, ev.batch);
    // A branch with constant activations (a flat source field) carries no
    // signal: the chain through the zero spatial gradient is exactly zero,
    // even though the cost value itself is degenerate there.
    const PooledStats& st = cache.stats(cache.top());
    if (st.sd_t <= kDegenerateSd || st.sd_s <= kDegenerateSd) return Vec12::Zero();
    const Gradients grads = backward(model_, cache, cost_cfg_);
    const int n = static_cast<int>(positions_.size());

    const std::size_t chunk = 256;
    const std::size_t num_chunks = (static_cast<std::size_t>(n) + chunk - 1) / chunk;
    std::vector<Vec12> partial(num_chunks, Vec12::Zero());
    parallel_chunks(static_cast<std::size_t>(n), chunk, cfg_.threads,
                    [&](std::size_t c, std::size_t b, std::size_t e) {
                      Vec12 acc = Vec12::Zero();
                      for (std::size_t i = b; i < e; ++i) {
                        if (!ev.source_samples[i].inside) continue;
                        // d(feature)/d(mm): spline gradient is in voxel units
                        Eigen::Matrix<double, Eigen::Dynamic, 3> jac_mm =
                            ev.source_samples[i].jac;
                        for (int a = 0; a < 3; ++a) jac_mm.col(a) /= source_spacing_[a];
                        const Vec3 u =
                            jac_mm.transpose() * grads.d_input_s.row(i).transpose();
                        const Jacobian3x12 jt =
                            transform_jacobian(mu, phys_points_[static_cast<int>(i)]);
                        acc += jt.transpose() * u;
                      }
                      partial[c] = acc;
                    });
    Vec12 d = Vec12::Zero();
    for (const auto& p : partial) d += p;
    return d;
  }

  const std::vector<VoxelIndex>& positions() const { return positions_; }

 private:
  NetworkParams model_;
  TrainConfig cost_cfg_;
  MetricSamplingConfig cfg_;
  const ImageVolume* target_;
  Spacing source_spacing_, target_spacing_;
  FeatureField field_t_, field_s_;
  std::vector<VoxelIndex> positions_;
  std::vector<Vec3> phys_points_;
  Matrix target_features_;
};

// ---------------------------------------------------------------------------
// Histogram mutual information (Shannon, natural log) over a joint histogram.
// ---------------------------------------------------------------------------

enum class MaskPolicy { none, background, supplied };

inline int histogram_bin(double v, int bins) {
  const int b = static_cast<int>(std::clamp(v, 0.0, 1.0) * bins);
  return std::min(b, bins - 1);
}

inline double hist_mi_from_counts(const std::vector<double>& joint, int bins,
                                  double total) {
  std::vector<double> pt(bins, 0.0), pm(bins, 0.0);
  for (int i = 0; i < bins; ++i)
    for (int j = 0; j < bins; ++j) {
      pt[i] += joint[static_cast<std::size_t>(i) * bins + j];
      pm[j] += joint[static_cast<std::size_t>(i) * bins + j];
    }
  double mi = 0.0;
  for (int i = 0; i < bins; ++i) {
    for (int j = 0; j < bins; ++j) {
      const double pij = joint[static_cast<std::size_t>(i) * bins + j] / total;
      if (pij > 0.0) mi += pij * std::log(pij / ((pt[i] / total) * (pm[j] / total)));
    }
  }
  return mi;
}

// Shannon MI between two equally shaped volumes in [0,1]. Mask policy selects
// MI (none), MI+M (background threshold on the target), MI+B (supplied mask).
inline double hist_mi(const ImageVolume& target, const ImageVolume& moving, int bins,
                      MaskPolicy policy = MaskPolicy::none, double bg_threshold = 0.01,
                      const BinaryMask* mask = nullptr) {
  if (target.dims != moving.dims) throw ValidationError("hist_mi: volume dims differ");
  if (bins < 2) throw ValidationError("hist_mi: bins must be >= 2");
  if (policy == MaskPolicy::supplied) {
    if (mask == nullptr) throw ValidationError("hist_mi: supplied-mask policy needs a mask");
    if (mask->dims != target.dims) throw ValidationError("hist_mi: mask dims differ");
  }
  std::vector<double> joint(static_cast<std::size_t>(bins) * bins, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < target.data.size(); ++i) {
    if (policy == MaskPolicy::background && !(target.data[i] > bg_threshold)) continue;
    if (policy == MaskPolicy::supplied && mask->bits[i] == 0) continue;
    joint[static_cast<std::size_t>(histogram_bin(target.data[i], bins)) * bins +
          histogram_bin(moving.data[i], bins)] += 1.0;
    total += 1.0;
  }
  if (total == 0.0) throw ValidationError("hist_mi: empty mask (no voxels selected)");
  return hist_mi_from_counts(joint, bins, total);
}

// Marginal histogram entropy of the (masked) volume, for reference values.
inline double hist_entropy(const ImageVolume& v, int bins) {
  std::vector<double> p(bins, 0.0);
  for (float x : v.data) p[histogram_bin(x, bins)] += 1.0;
  const double total = static_cast<double>(v.data.size());
  double h = 0.0;
  for (double c : p)
    if (c > 0) h -= (c / total) * std::log(c / total);
  return h;
}

// Baseline metric: histogram MI over the same seeded voxel sample set, with
// central finite differences for the search direction. param_scaling drives
// the per-parameter step h_i.
class HistMiMetric : public RegistrationMetric {
 public:
  HistMiMetric(const ImageVolume& target, const ImageVolume& source, int bins,
               MetricSamplingConfig cfg, Vec12 fd_scaling, double fd_step = 0.5,
               MaskPolicy policy = MaskPolicy::background, const BinaryMask* mask = nullptr)
      : cfg_(cfg),
        bins_(bins),
        fd_scaling_(std::move(fd_scaling)),
        fd_step_(fd_step),
        target_(&target),
        source_spacing_(source.spacing),
        target_spacing_(target.spacing) {
    if (bins_ < 2) throw ValidationError("hist-mi metric: bins must be >= 2");
    source_coeffs_ = prefilter_bspline(source, cfg.threads);
    // sampling restriction doubles as the mask policy for the sampled metric
    if (policy == MaskPolicy::supplied) {
      if (mask == nullptr || mask->dims != target.dims)
        throw ValidationError("hist-mi metric: bad supplied mask");
      mask_ = *mask;
    }
    policy_ = policy;
    redraw_samples(cfg.seed);
  }

  void redraw_samples(std::uint64_t seed) override {
    if (policy_ == MaskPolicy::supplied) {
      std::vector<VoxelIndex> eligible;
      for (int z = 1; z <= target_->dims[2] - 2; ++z)
        for (int y = 1; y <= target_->dims[1] - 2; ++y)
          for (int x = 1; x <= target_->dims[0] - 2; ++x)
            if (mask_.at(x, y, z)) eligible.push_back({x, y, z});
      if (eligible.empty()) throw ValidationError("hist-mi metric: empty mask");
      Rng rng(seed);
      positions_.clear();
      for (int i = 0; i < cfg_.n_samples; ++i)
        positions_.push_back(eligible[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(eligible.size()) - 1))]);
    } else {
      positions_ = sample_positions(*target_, cfg_.n_samples, seed, cfg_.sample_threshold,
                                    policy_ == MaskPolicy::background);
    }
    target_values_.resize(positions_.size());
    phys_points_.resize(positions_.size());
    for (std::size_t i = 0; i < positions_.size(); ++i) {
      target_values_[i] = target_->at(positions_[i][0], positions_[i][1], positions_[i][2]);
      phys_points_[i] = voxel_to_mm(positions_[i], target_spacing_);
    }
  }

  double value(const AffineParams& mu) const override {
    const AffineMatrix T = to_matrix(mu);
    const std::size_t n = positions_.size();
    const std::size_t chunk = 1024;
    const std::size_t num_chunks = (n + chunk - 1) / chunk;
    std::vector<std::vector<double>> joints(num_chunks);
    std::vector<int> valids(num_chunks, 0);
    parallel_chunks(n, chunk, cfg_.threads, [&](std::size_t c, std::size_t b, std::size_t e) {
      std::vector<double> joint(static_cast<std::size_t>(bins_) * bins_, 0.0);
      int valid = 0;
      for (std::size_t i = b; i < e; ++i) {
        const Vec3 q = T.apply(phys_points_[i]);
        const std::array<double, 3> qv = {q.x() / source_spacing_[0],
                                          q.y() / source_spacing_[1],
                                          q.z() / source_spacing_[2]};
        const SplineSample s = sample_interpolated(source_coeffs_, qv);
        if (!s.inside) continue;
        ++valid;
        joint[static_cast<std::size_t>(histogram_bin(target_values_[i], bins_)) * bins_ +
              histogram_bin(s.value, bins_)] += 1.0;
      }
      joints[c] = std::move(joint);
      valids[c] = valid;
    });
    std::vector<double> joint(static_cast<std::size_t>(bins_) * bins_, 0.0);
    int valid = 0;
    for (std::size_t c = 0; c < num_chunks; ++c) {
      valid += valids[c];
      for (std::size_t k = 0; k < joint.size(); ++k) joint[k] += joints[c][k];
    }
    if (valid < static_cast<int>(cfg_.min_valid_fraction * static_cast<double>(n)))
      throw InsufficientOverlapError("insufficient overlap in hist-mi metric: " +
                                     std::to_string(valid) + "/" + std::to_string(n));
    return hist_mi_from_counts(joint, bins_, static_cast<double>(valid));
  }

  Vec12 direction(const AffineParams& mu) const override {
    Vec12 d = Vec12::Zero();
    for (int i = 0; i < 12; ++i) {
      const double h = fd_step_ / fd_scaling_(i);
      AffineParams plus = mu, minus = mu;
      plus.mu[i] += h;
      minus.mu[i] -= h;
      d(i) = (value(plus) - value(minus)) / (2.0 * h);
    }
    return d;
  }

 private:
  MetricSamplingConfig cfg_;
  int bins_;
  Vec12 fd_scaling_;
  double fd_step_;
  const ImageVolume* target_;
  Spacing source_spacing_, target_spacing_;
  SplineCoefficients source_coeffs_;
  MaskPolicy policy_ = MaskPolicy::background;
  BinaryMask mask_;
  std::vector<VoxelIndex> positions_;
  std::vector<double> target_values_;
  std::vector<Vec3> phys_points_;
};

// ---------------------------------------------------------------------------
// Regular-step gradient ascent: mu_{k+1} = mu_k + a_k * scaled(d_k), with
// a_k = a0/k on the unit-normalized scaled direction.
// ---------------------------------------------------------------------------

struct OptimizerConfig {
  int max_iters = 500;
  double base_step = 0.2;  // a0, in scaled (mm-equivalent) units
  Vec12 param_scaling = default_scaling();
  double stop_tol = 0.0;  // on ||mu_{k+1} - mu_k||; 0 disables
  bool resample_each_iteration = false;
  std::uint64_t resample_seed = 0;

  // rotations/shears and scales get ~100 mm-equivalent leverage, translations 1
  static Vec12 default_scaling() {
    Vec12 s;
    s << 100, 100, 100, 1, 1, 1, 100, 100, 100, 100, 100, 100;
    return s;
  }

  void validate() const {
    if (max_iters < 0) throw ValidationError("max_iters must be >= 0");
    if (!(base_step > 0)) throw ValidationError("base_step must be > 0");
    for (int i = 0; i < 12; ++i)
      if (!(param_scaling(i) > 0)) throw ValidationError("param_scaling must be positive");
  }
};

struct TraceRow {
  int k = 0;
  double cost = 0.0;
  double step = 0.0;
  std::array<double, 12> mu{};
  std::optional<double> dice;
};

struct RegistrationTrace {
  std::vector<TraceRow> rows;
};

struct RegistrationResult {
  AffineParams params;  // best-cost parameters
  RegistrationTrace trace;
};

// Thrown when the metric fails mid-run; carries the trace so far.
class RegistrationError : public NumericalError {
 public:
  RegistrationError(RegistrationTrace trace, const std::string& msg)
      : NumericalError(msg), trace_(std::move(trace)) {}
  const RegistrationTrace& trace() const { return trace_; }

 private:
  RegistrationTrace trace_;
};

using DiceProbe = std::function<double(const AffineParams&)>;

inline RegistrationResult register_volumes(RegistrationMetric& metric,
                                           const AffineParams& initial,
                                           const OptimizerConfig& opt,
                                           const DiceProbe& dice_probe = nullptr) {
  opt.validate();
  RegistrationTrace trace;
  AffineParams mu = initial;

  auto record = [&](int k, double c, double step) {
    TraceRow row;
    row.k = k;
    row.cost = c;
    row.step = step;
    row.mu = mu.mu;
    if (dice_probe) row.dice = dice_probe(mu);
    trace.rows.push_back(row);
  };

  double best_cost = metric.value(mu);
  AffineParams best = mu;
  record(0, best_cost, 0.0);

  try {
    for (int k = 1; k <= opt.max_iters; ++k) {
      if (opt.resample_each_iteration)
        metric.redraw_samples(Rng(opt.resample_seed).fork(static_cast<std::uint64_t>(k)).seed());
      Vec12 d = metric.direction(mu);
      if (mu.mode == TransformMode::rigid) d.tail<6>().setZero();
      Vec12 g;
      for (int i = 0; i < 12; ++i) g(i) = d(i) / opt.param_scaling(i);
      const double norm = g.norm();
      if (!(norm > 0.0)) break;  // flat metric, nothing to follow
      const double a_k = opt.base_step / static_cast<double>(k);
      double delta_norm2 = 0.0;
      for (int i = 0; i < 12; ++i) {
        const double delta = a_k * g(i) / (norm * opt.param_scaling(i));
        mu.mu[i] += delta;
        delta_norm2 += delta * delta;
      }
      const double c = metric.value(mu);
      if (!std::isfinite(c))
        throw RegistrationError(trace, "non-finite cost at iteration " + std::to_string(k));
      record(k, c, a_k);
      if (c > best_cost) {
        best_cost = c;
        best = mu;
      }
      if (opt.stop_tol > 0.0 && std::sqrt(delta_norm2) < opt.stop_tol) break;
    }
  } catch (const RegistrationError&) {
    throw;
  } catch (const Error& e) {
    throw RegistrationError(trace, e.what());
  }

  return RegistrationResult{best, std::move(trace)};
}

// ---------------------------------------------------------------------------
// Trace CSV: header `k,cost,step,rx,...,kyz,dice`.
// ---------------------------------------------------------------------------

inline void save_trace(const std::string& path, const RegistrationTrace& trace) {
  CsvWriter csv(path);
  std::vector<std::string> header = {"k", "cost", "step"};
  for (const char* n : kMuNames) header.push_back(n);
  header.push_back("dice");
  csv.row(header);
  for (const TraceRow& r : trace.rows) {
    std::vector<std::string> cells = {num_str(r.k), num_str(r.cost), num_str(r.step)};
    for (double v : r.mu) cells.push_back(num_str(v));
    cells.push_back(r.dice ? num_str(*r.dice) : std::string());
    csv.row(cells);
  }
}

}  // namespace cdl
