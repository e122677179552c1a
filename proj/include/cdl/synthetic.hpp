#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "cdl/affine.hpp"
#include "cdl/bspline.hpp"
#include "cdl/errors.hpp"
#include "cdl/registration.hpp"
#include "cdl/rng.hpp"
#include "cdl/volume.hpp"

namespace cdl {

struct Blob {
  Vec3 center_mm = Vec3::Zero();
  Vec3 radii_mm = Vec3::Ones();
  double intensity = 1.0;
};

struct PhantomSpec {
  Dims dims{48, 48, 48};
  Spacing spacing{2.0, 2.0, 2.0};
  std::vector<Blob> blobs;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    for (int a = 0; a < 3; ++a)
      if (dims[a] < 4 || !(spacing[a] > 0)) throw ValidationError("bad phantom geometry");
    if (noise_sigma < 0) throw ValidationError("noise_sigma must be >= 0");
    for (const Blob& b : blobs) {
      for (int a = 0; a < 3; ++a) {
        if (!(b.radii_mm(a) > 0)) throw ValidationError("blob radii must be positive");
        const double extent = (dims[a] - 1) * spacing[a];
        if (b.center_mm(a) - b.radii_mm(a) < 0 || b.center_mm(a) + b.radii_mm(a) > extent)
          throw ValidationError("blob extends outside the volume");
      }
    }
  }
};

struct SceneSample {
  double value = 0.0;
  bool inside = false;
};

// Continuous scene evaluation: smooth blob profiles summed at an arbitrary
// physical point. Both members of a pair render from this, so neither side
// carries extra interpolation blur.
inline SceneSample phantom_scene(const PhantomSpec& spec, const Vec3& p_mm) {
  SceneSample s;
  for (const Blob& b : spec.blobs) {
    const Vec3 d = p_mm - b.center_mm;
    const double rho2 = (d.array() / b.radii_mm.array()).square().sum();
    if (rho2 <= 1.0) {
      s.inside = true;
      const double f = 1.0 - rho2;
      s.value += b.intensity * f * f;
    }
  }
  return s;
}

// Smooth blobs + seeded Gaussian noise; the mask is the union of blob
// supports (the ground-truth foreground for Dice/HD).
inline std::pair<ImageVolume, BinaryMask> make_phantom(const PhantomSpec& spec) {
  spec.validate();
  ImageVolume v(spec.dims, spec.spacing);
  BinaryMask mask(spec.dims);
  const int nx = spec.dims[0], ny = spec.dims[1], nz = spec.dims[2];
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      for (int x = 0; x < nx; ++x) {
        const SceneSample s = phantom_scene(
            spec, Vec3(x * spec.spacing[0], y * spec.spacing[1], z * spec.spacing[2]));
        v.at(x, y, z) = static_cast<float>(s.value);
        mask.set(x, y, z, s.inside);
      }
    }
  }
  if (spec.noise_sigma > 0) {
    Rng rng(spec.seed);
    for (auto& val : v.data)
      val = static_cast<float>(
          std::clamp(static_cast<double>(val) + rng.normal(0.0, spec.noise_sigma), 0.0, 1.0));
  } else {
    for (auto& val : v.data) val = static_cast<float>(std::clamp<double>(val, 0.0, 1.0));
  }
  v.refresh_range();
  return {std::move(v), std::move(mask)};
}

// ---------------------------------------------------------------------------
// Intensity drift: a per-voxel remap, optional multiplicative bias field,
// additive seeded noise, re-clamped to [0,1].
// ---------------------------------------------------------------------------

enum class DriftKind { identity, gamma, sigmoid_remap, piecewise_monotone, inversion };

inline const char* drift_kind_name(DriftKind k) {
  switch (k) {
    case DriftKind::identity: return "identity";
    case DriftKind::gamma: return "gamma";
    case DriftKind::sigmoid_remap: return "sigmoid_remap";
    case DriftKind::piecewise_monotone: return "piecewise_monotone";
    case DriftKind::inversion: return "inversion";
  }
  return "?";
}

struct DriftSpec {
  DriftKind kind = DriftKind::identity;
  double gamma = 1.0;
  double sigmoid_center = 0.5;
  double sigmoid_slope = 8.0;
  // piecewise knots (x strictly increasing in [0,1]); piecewise_monotone
  // requires nondecreasing y, inversion allows descending segments and
  // defaults to the full flip 1-v when empty
  std::vector<std::array<double, 2>> knots;
  std::array<double, 4> bias = {1.0, 0.0, 0.0, 0.0};  // b0 + b1 u + b2 v + b3 w
  double noise_sigma = 0.0;

  void validate() const {
    if (noise_sigma < 0) throw ValidationError("drift noise_sigma must be >= 0");
    if (kind == DriftKind::gamma && !(gamma > 0))
      throw ValidationError("gamma drift needs gamma > 0");
    if (kind == DriftKind::piecewise_monotone || kind == DriftKind::inversion) {
      for (std::size_t i = 1; i < knots.size(); ++i) {
        if (!(knots[i][0] > knots[i - 1][0]))
          throw ValidationError("drift knots must have strictly increasing x");
        if (kind == DriftKind::piecewise_monotone && knots[i][1] < knots[i - 1][1])
          throw ValidationError("non-monotone knots for piecewise_monotone drift");
      }
      if (kind == DriftKind::piecewise_monotone && knots.size() < 2)
        throw ValidationError("piecewise_monotone drift needs at least 2 knots");
    }
  }

  bool monotone() const { return kind != DriftKind::inversion; }

  double remap(double v) const {
    v = std::clamp(v, 0.0, 1.0);
    switch (kind) {
      case DriftKind::identity:
        return v;
      case DriftKind::gamma:
        return std::pow(v, gamma);
      case DriftKind::sigmoid_remap: {
        const auto s = [&](double x) {
          return 1.0 / (1.0 + std::exp(-sigmoid_slope * (x - sigmoid_center)));
        };
        const double lo = s(0.0), hi = s(1.0);
        return (s(v) - lo) / (hi - lo);
      }
      case DriftKind::piecewise_monotone:
      case DriftKind::inversion: {
        if (knots.empty()) return kind == DriftKind::inversion ? 1.0 - v : v;
        if (v <= knots.front()[0]) return knots.front()[1];
        if (v >= knots.back()[0]) return knots.back()[1];
        for (std::size_t i = 1; i < knots.size(); ++i) {
          if (v <= knots[i][0]) {
            const double t = (v - knots[i - 1][0]) / (knots[i][0] - knots[i - 1][0]);
            return (1.0 - t) * knots[i - 1][1] + t * knots[i][1];
          }
        }
        return knots.back()[1];
      }
    }
    return v;
  }
};

inline ImageVolume apply_drift(const ImageVolume& v, const DriftSpec& d, std::uint64_t seed) {
  d.validate();
  ImageVolume out;
  out.dims = v.dims;
  out.spacing = v.spacing;
  out.data.resize(v.data.size());
  Rng rng(seed);
  const bool has_bias =
      d.bias[0] != 1.0 || d.bias[1] != 0.0 || d.bias[2] != 0.0 || d.bias[3] != 0.0;
  const int nx = v.dims[0], ny = v.dims[1], nz = v.dims[2];
  std::size_t i = 0;
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      for (int x = 0; x < nx; ++x, ++i) {
        double val = d.remap(v.data[i]);
        if (has_bias) {
          const double ux = static_cast<double>(x) / (nx - 1) - 0.5;
          const double uy = static_cast<double>(y) / (ny - 1) - 0.5;
          const double uz = static_cast<double>(z) / (nz - 1) - 0.5;
          val *= d.bias[0] + d.bias[1] * ux + d.bias[2] * uy + d.bias[3] * uz;
        }
        if (d.noise_sigma > 0) val += rng.normal(0.0, d.noise_sigma);
        out.data[i] = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
    }
  }
  out.refresh_range();
  return out;
}

// ---------------------------------------------------------------------------
// Paired volumes: target = phantom, source = drift(phantom) pushed through
// mu_true^-1, so registering source onto target should recover mu_true.
// ---------------------------------------------------------------------------

struct SyntheticPair {
  ImageVolume target;
  ImageVolume source;
  BinaryMask target_mask;
  BinaryMask source_mask;
  AffineParams mu_true;
  bool low_overlap_warning = false;
};

struct PairSeeds {
  std::uint64_t phantom = 0;
  std::uint64_t drift = 0;
};

inline SyntheticPair make_pair(const PhantomSpec& spec, const DriftSpec& drift,
                               const AffineParams& mu_true, const PairSeeds& seeds,
                               int threads = 1) {
  (void)threads;
  drift.validate();
  PhantomSpec s = spec;
  s.seed = seeds.phantom;
  auto [phantom, mask] = make_phantom(s);

  SyntheticPair pair;
  pair.mu_true = mu_true;
  pair.target = phantom;
  pair.target_mask = mask;

  // render the drifted source analytically through mu_true^-1, so the source
  // is an independent noisy render of the same continuous scene rather than
  // a re-interpolated (and therefore asymmetrically blurred) copy
  const AffineMatrix inv = to_matrix(mu_true).inverse();
  pair.source = ImageVolume(spec.dims, spec.spacing);
  pair.source_mask = BinaryMask(spec.dims);
  {
    Rng rng(seeds.drift);
    const bool has_bias = drift.bias[0] != 1.0 || drift.bias[1] != 0.0 ||
                          drift.bias[2] != 0.0 || drift.bias[3] != 0.0;
    const int nx = spec.dims[0], ny = spec.dims[1], nz = spec.dims[2];
    for (int z = 0; z < nz; ++z) {
      for (int y = 0; y < ny; ++y) {
        for (int x = 0; x < nx; ++x) {
          const Vec3 q(x * spec.spacing[0], y * spec.spacing[1], z * spec.spacing[2]);
          const SceneSample sc = phantom_scene(s, inv.apply(q));
          double val = drift.remap(std::clamp(sc.value, 0.0, 1.0));
          if (has_bias) {
            const double ux = static_cast<double>(x) / (nx - 1) - 0.5;
            const double uy = static_cast<double>(y) / (ny - 1) - 0.5;
            const double uz = static_cast<double>(z) / (nz - 1) - 0.5;
            val *= drift.bias[0] + drift.bias[1] * ux + drift.bias[2] * uy + drift.bias[3] * uz;
          }
          if (drift.noise_sigma > 0) val += rng.normal(0.0, drift.noise_sigma);
          pair.source.at(x, y, z) = static_cast<float>(std::clamp(val, 0.0, 1.0));
          pair.source_mask.set(x, y, z, sc.inside);
        }
      }
    }
    pair.source.refresh_range();
  }

  // overlap sanity: fraction of mask voxels that stay inside the frame
  std::size_t inside = 0, total = 0;
  const AffineMatrix fwd = to_matrix(mu_true);
  for (int z = 0; z < spec.dims[2]; ++z)
    for (int y = 0; y < spec.dims[1]; ++y)
      for (int x = 0; x < spec.dims[0]; ++x) {
        if (!mask.at(x, y, z)) continue;
        ++total;
        const Vec3 q = fwd.apply(Vec3(x * spec.spacing[0], y * spec.spacing[1],
                                      z * spec.spacing[2]));
        const double qx = q.x() / spec.spacing[0], qy = q.y() / spec.spacing[1],
                     qz = q.z() / spec.spacing[2];
        if (qx >= 0 && qy >= 0 && qz >= 0 && qx <= spec.dims[0] - 1 &&
            qy <= spec.dims[1] - 1 && qz <= spec.dims[2] - 1)
          ++inside;
      }
  pair.low_overlap_warning = total > 0 && inside * 2 < total;
  return pair;
}

// ---------------------------------------------------------------------------
// Presets: drift regimes that defeat SSD-style metrics.
// ---------------------------------------------------------------------------

// Monotone-breaking remap of the mid-range plus mild noise.
inline DriftSpec drift_preset_t1_t2() {
  DriftSpec d;
  d.kind = DriftKind::inversion;
  d.knots = {{0.0, 0.0}, {0.3, 0.75}, {0.55, 0.45}, {0.8, 0.8}, {1.0, 1.0}};
  d.noise_sigma = 0.02;
  return d;
}

// Strong sigmoid compression of the soft-tissue range.
inline DriftSpec drift_preset_mr_ct() {
  DriftSpec d;
  d.kind = DriftKind::sigmoid_remap;
  d.sigmoid_center = 0.55;
  d.sigmoid_slope = 10.0;
  d.noise_sigma = 0.01;
  return d;
}

inline DriftSpec drift_preset(const std::string& name) {
  if (name == "t1-t2") return drift_preset_t1_t2();
  if (name == "mr-ct") return drift_preset_mr_ct();
  if (name == "identity") return DriftSpec{};
  throw ValidationError("unknown drift preset '" + name + "'");
}

// Seeded multi-blob phantom: one enclosing ellipsoid plus interior structures
// at distinct intensity levels, so drift remaps reorder a rich histogram.
inline PhantomSpec default_phantom_spec(std::uint64_t seed, Dims dims = {48, 48, 48},
                                        Spacing spacing = {2.0, 2.0, 2.0}) {
  PhantomSpec spec;
  spec.dims = dims;
  spec.spacing = spacing;
  spec.noise_sigma = 0.01;
  spec.seed = seed;
  Rng rng(seed ^ 0xC0FFEEull);
  const Vec3 extent((dims[0] - 1) * spacing[0], (dims[1] - 1) * spacing[1],
                    (dims[2] - 1) * spacing[2]);
  const Vec3 center = 0.5 * extent;

  Blob head;
  head.center_mm = center;
  for (int a = 0; a < 3; ++a)
    head.radii_mm(a) = 0.5 * extent(a) * rng.uniform(0.62, 0.72);
  head.intensity = 0.35;
  spec.blobs.push_back(head);

  // a handful of mid-size structures plus many small high-contrast ones;
  // the fine texture is what gives rotations a usable similarity signal
  const int n_mid = 4 + static_cast<int>(rng.uniform_int(0, 2));
  const int n_small = 12 + static_cast<int>(rng.uniform_int(0, 5));
  const auto place = [&](double min_r, double max_r, double min_i, double max_i,
                         double max_reach) {
    Blob b;
    for (int a = 0; a < 3; ++a) b.radii_mm(a) = rng.uniform(min_r, max_r) * extent(a) * 0.5;
    Vec3 dir(rng.normal(), rng.normal(), rng.normal());
    if (dir.norm() < 1e-9) dir = Vec3(1, 0, 0);
    dir.normalize();
    const double reach = rng.uniform(0.05, max_reach);
    for (int a = 0; a < 3; ++a)
      b.center_mm(a) = center(a) + dir(a) * reach * (head.radii_mm(a) - b.radii_mm(a));
    b.intensity = rng.uniform(min_i, max_i);
    spec.blobs.push_back(b);
  };
  for (int i = 0; i < n_mid; ++i) place(0.12, 0.22, 0.2, 0.5, 0.5);
  for (int i = 0; i < n_small; ++i) place(0.04, 0.1, 0.3, 0.6, 0.85);
  return spec;
}

// One randomly chosen rotation parameter plus a random translation, bounded
// by the given magnitudes.
inline AffineParams random_rigid_perturbation(Rng& rng, double max_rot_deg,
                                              double max_trans_mm, const Vec3& center) {
  AffineParams p = AffineParams::identity(center, TransformMode::rigid);
  const int axis = static_cast<int>(rng.uniform_int(0, 2));
  p.mu[static_cast<std::size_t>(mu_index::rx + axis)] =
      rng.uniform(-max_rot_deg, max_rot_deg) * M_PI / 180.0;
  for (int a = 0; a < 3; ++a)
    p.mu[static_cast<std::size_t>(mu_index::tx + a)] = rng.uniform(-max_trans_mm, max_trans_mm);
  return p;
}

}  // namespace cdl
