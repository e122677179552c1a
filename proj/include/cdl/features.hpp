#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "cdl/bspline.hpp"
#include "cdl/errors.hpp"
#include "cdl/network.hpp"
#include "cdl/rng.hpp"
#include "cdl/volume.hpp"

namespace cdl {

enum class FeatureMode {
  intensity,           // d = 1: raw normalized intensity
  intensity_mean_std,  // d = 3: intensity, local 3x3x3 mean, local 3x3x3 sd
};

inline int feature_dim(FeatureMode mode) {
  return mode == FeatureMode::intensity ? 1 : 3;
}

inline const char* feature_mode_name(FeatureMode m) {
  return m == FeatureMode::intensity ? "intensity" : "intensity_mean_std";
}

inline FeatureMode feature_mode_from_name(const std::string& s) {
  if (s == "intensity") return FeatureMode::intensity;
  if (s == "intensity_mean_std") return FeatureMode::intensity_mean_std;
  throw ValidationError("unknown feature mode '" + s + "'");
}

// Per-voxel feature volumes of an image, each prefiltered for B-spline
// sampling, so features and their spatial derivatives are available at
// continuous positions. Training and the registration metric share this
// sampling path, which keeps their values consistent at grid points.
struct FeatureField {
  Dims dims{0, 0, 0};
  Spacing spacing{1, 1, 1};
  FeatureMode mode = FeatureMode::intensity_mean_std;
  std::vector<SplineCoefficients> comps;

  int dim() const { return static_cast<int>(comps.size()); }
};

struct FeatureSample {
  Vector values;                              // d
  Eigen::Matrix<double, Eigen::Dynamic, 3> jac;  // d x 3, d(value)/d(voxel coord)
  bool inside = true;
};

namespace detail {

// Local 3x3x3 mean and population sd; neighborhoods clamp at the grid edge.
inline void local_moments(const ImageVolume& v, std::vector<double>& mean,
                          std::vector<double>& sd) {
  const int nx = v.dims[0], ny = v.dims[1], nz = v.dims[2];
  mean.resize(v.data.size());
  sd.resize(v.data.size());
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      for (int x = 0; x < nx; ++x) {
        double sum = 0.0, sum2 = 0.0;
        int count = 0;
        for (int dz = -1; dz <= 1; ++dz) {
          const int zz = z + dz;
          if (zz < 0 || zz >= nz) continue;
          for (int dy = -1; dy <= 1; ++dy) {
            const int yy = y + dy;
            if (yy < 0 || yy >= ny) continue;
            for (int dx = -1; dx <= 1; ++dx) {
              const int xx = x + dx;
              if (xx < 0 || xx >= nx) continue;
              const double val = v.at(xx, yy, zz);
              sum += val;
              sum2 += val * val;
              ++count;
            }
          }
        }
        const double m = sum / count;
        mean[v.index(x, y, z)] = m;
        sd[v.index(x, y, z)] = std::sqrt(std::max(0.0, sum2 / count - m * m));
      }
    }
  }
}

}  // namespace detail

inline FeatureField make_feature_field(const ImageVolume& v, FeatureMode mode,
                                       int threads = 1) {
  FeatureField f;
  f.dims = v.dims;
  f.spacing = v.spacing;
  f.mode = mode;
  {
    SplineCoefficients c;
    c.dims = v.dims;
    c.coeffs.assign(v.data.begin(), v.data.end());
    prefilter_grid(c.dims, c.coeffs, threads);
    f.comps.push_back(std::move(c));
  }
  if (mode == FeatureMode::intensity_mean_std) {
    std::vector<double> mean, sd;
    detail::local_moments(v, mean, sd);
    SplineCoefficients cm;
    cm.dims = v.dims;
    cm.coeffs = std::move(mean);
    prefilter_grid(cm.dims, cm.coeffs, threads);
    f.comps.push_back(std::move(cm));
    SplineCoefficients cs;
    cs.dims = v.dims;
    cs.coeffs = std::move(sd);
    prefilter_grid(cs.dims, cs.coeffs, threads);
    f.comps.push_back(std::move(cs));
  }
  return f;
}

// Sample all feature components at a continuous voxel coordinate. Out of
// support: zero values, zero Jacobian, inside = false.
inline FeatureSample sample_features(const FeatureField& f, const std::array<double, 3>& p) {
  FeatureSample s;
  const int d = f.dim();
  s.values = Vector::Zero(d);
  s.jac = Eigen::Matrix<double, Eigen::Dynamic, 3>::Zero(d, 3);
  if (!in_spline_support(f.dims, p)) {
    s.inside = false;
    return s;
  }
  for (int c = 0; c < d; ++c) {
    const SplineSample ss = sample_interpolated(f.comps[c], p);
    s.values(c) = ss.value;
    s.jac(c, 0) = ss.gradient[0];
    s.jac(c, 1) = ss.gradient[1];
    s.jac(c, 2) = ss.gradient[2];
  }
  return s;
}

using VoxelIndex = std::array<int, 3>;

// Seeded uniform draw (with replacement) of voxel positions from the spline-
// supported interior, restricted to intensities above `threshold` when
// thresholding is enabled.
inline std::vector<VoxelIndex> sample_positions(const ImageVolume& v, int n,
                                                std::uint64_t seed, double threshold,
                                                bool use_threshold = true) {
  std::vector<VoxelIndex> eligible;
  for (int z = 1; z <= v.dims[2] - 2; ++z)
    for (int y = 1; y <= v.dims[1] - 2; ++y)
      for (int x = 1; x <= v.dims[0] - 2; ++x)
        if (!use_threshold || v.at(x, y, z) > threshold) eligible.push_back({x, y, z});
  if (eligible.empty())
    throw ValidationError("no eligible sample voxels (volume empty above threshold)");
  Rng rng(seed);
  std::vector<VoxelIndex> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto idx =
        static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(eligible.size()) - 1));
    out.push_back(eligible[idx]);
  }
  return out;
}

// Paired features of two aligned fields at the same voxel positions.
inline FeatureBatch extract_aligned_batch(const FeatureField& target,
                                          const FeatureField& source,
                                          const std::vector<VoxelIndex>& positions) {
  if (target.dim() != source.dim())
    throw ValidationError("feature fields have different dimensions");
  const int n = static_cast<int>(positions.size());
  const int d = target.dim();
  FeatureBatch batch;
  batch.target.resize(n, d);
  batch.source.resize(n, d);
  for (int i = 0; i < n; ++i) {
    const std::array<double, 3> p = {static_cast<double>(positions[i][0]),
                                     static_cast<double>(positions[i][1]),
                                     static_cast<double>(positions[i][2])};
    const FeatureSample ft = sample_features(target, p);
    const FeatureSample fs = sample_features(source, p);
    batch.target.row(i) = ft.values.transpose();
    batch.source.row(i) = fs.values.transpose();
  }
  return batch;
}

}  // namespace cdl
