#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "cdl/errors.hpp"
#include "cdl/parallel.hpp"
#include "cdl/volume.hpp"

namespace cdl {

// Prefiltered cubic B-spline coefficients. Interpolating this grid at integer
// voxel positions reproduces the original intensities.
struct SplineCoefficients {
  Dims dims{0, 0, 0};
  std::vector<double> coeffs;

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims[1]) * z);
  }
};

enum class OutOfSupport { zero_pad, error };

struct SplineSample {
  double value = 0.0;
  std::array<double, 3> gradient{0.0, 0.0, 0.0};  // d(value)/d(voxel coordinate)
  bool inside = true;
};

namespace detail {

constexpr double kCubicPole = -0.26794919243112270647;  // sqrt(3) - 2

// Unser-style recursive prefilter, mirror (whole-sample symmetric) boundary.
inline double initial_causal(const double* c, int n, double z) {
  int horizon = static_cast<int>(std::ceil(std::log(1e-17) / std::log(std::abs(z))));
  if (horizon < n) {
    double zn = z;
    double sum = c[0];
    for (int k = 1; k < horizon; ++k) {
      sum += zn * c[k];
      zn *= z;
    }
    return sum;
  }
  double zn = z;
  const double iz = 1.0 / z;
  double z2n = std::pow(z, n - 1);
  double sum = c[0] + z2n * c[n - 1];
  z2n *= z2n * iz;
  for (int k = 1; k <= n - 2; ++k) {
    sum += (zn + z2n) * c[k];
    zn *= z;
    z2n *= iz;
  }
  return sum / (1.0 - zn * zn);
}

inline double initial_anticausal(const double* c, int n, double z) {
  return (z / (z * z - 1.0)) * (z * c[n - 2] + c[n - 1]);
}

inline void filter_line(double* c, int n) {
  const double z = kCubicPole;
  const double gain = (1.0 - z) * (1.0 - 1.0 / z);
  for (int k = 0; k < n; ++k) c[k] *= gain;
  c[0] = initial_causal(c, n, z);
  for (int k = 1; k < n; ++k) c[k] += z * c[k - 1];
  c[n - 1] = initial_anticausal(c, n, z);
  for (int k = n - 2; k >= 0; --k) c[k] = z * (c[k + 1] - c[k]);
}

// Cubic B-spline tap weights and their derivatives at fractional offset u.
inline void cubic_weights(double u, double w[4], double dw[4]) {
  const double v = 1.0 - u;
  w[0] = v * v * v / 6.0;
  w[1] = (4.0 - 6.0 * u * u + 3.0 * u * u * u) / 6.0;
  w[2] = (4.0 - 6.0 * v * v + 3.0 * v * v * v) / 6.0;
  w[3] = u * u * u / 6.0;
  dw[0] = -0.5 * v * v;
  dw[1] = -2.0 * u + 1.5 * u * u;
  dw[2] = 2.0 * v - 1.5 * v * v;
  dw[3] = 0.5 * u * u;
}

}  // namespace detail

// In-place prefilter of a double grid along all three axes.
inline void prefilter_grid(const Dims& dims, std::vector<double>& g, int threads = 1) {
  for (int a = 0; a < 3; ++a)
    if (dims[a] < 4) throw ValidationError("prefilter_bspline requires dims >= 4 per axis");
  const int nx = dims[0], ny = dims[1], nz = dims[2];
  const auto idx = [&](int x, int y, int z) {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(nx) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(ny) * z);
  };
  // x lines are contiguous
  parallel_chunks(static_cast<std::size_t>(ny) * nz, 16, threads,
                  [&](std::size_t, std::size_t b, std::size_t e) {
                    for (std::size_t l = b; l < e; ++l) {
                      const int y = static_cast<int>(l % ny);
                      const int z = static_cast<int>(l / ny);
                      detail::filter_line(&g[idx(0, y, z)], nx);
                    }
                  });
  parallel_chunks(static_cast<std::size_t>(nx) * nz, 16, threads,
                  [&](std::size_t, std::size_t b, std::size_t e) {
                    std::vector<double> line(ny);
                    for (std::size_t l = b; l < e; ++l) {
                      const int x = static_cast<int>(l % nx);
                      const int z = static_cast<int>(l / nx);
                      for (int y = 0; y < ny; ++y) line[y] = g[idx(x, y, z)];
                      detail::filter_line(line.data(), ny);
                      for (int y = 0; y < ny; ++y) g[idx(x, y, z)] = line[y];
                    }
                  });
  parallel_chunks(static_cast<std::size_t>(nx) * ny, 16, threads,
                  [&](std::size_t, std::size_t b, std::size_t e) {
                    std::vector<double> line(nz);
                    for (std::size_t l = b; l < e; ++l) {
                      const int x = static_cast<int>(l % nx);
                      const int y = static_cast<int>(l / nx);
                      for (int z = 0; z < nz; ++z) line[z] = g[idx(x, y, z)];
                      detail::filter_line(line.data(), nz);
                      for (int z = 0; z < nz; ++z) g[idx(x, y, z)] = line[z];
                    }
                  });
}

inline SplineCoefficients prefilter_bspline(const ImageVolume& v, int threads = 1) {
  SplineCoefficients c;
  c.dims = v.dims;
  c.coeffs.assign(v.data.begin(), v.data.end());
  prefilter_grid(c.dims, c.coeffs, threads);
  return c;
}

// Full 4-tap support needs p in [1, dim-2] along every axis.
inline bool in_spline_support(const Dims& dims, const std::array<double, 3>& p) {
  for (int a = 0; a < 3; ++a) {
    if (!(p[a] >= 1.0 && p[a] <= static_cast<double>(dims[a] - 2))) return false;
  }
  return true;
}

// Cubic B-spline value and analytic spatial derivative at a continuous voxel
// coordinate. Out-of-support points follow `policy` (zero value + zero
// gradient by default, flagged through `inside`).
inline SplineSample sample_interpolated(const SplineCoefficients& c,
                                        const std::array<double, 3>& p,
                                        OutOfSupport policy = OutOfSupport::zero_pad) {
  SplineSample s;
  if (!in_spline_support(c.dims, p)) {
    if (policy == OutOfSupport::error)
      throw ValidationError("sample point outside spline support");
    s.inside = false;
    return s;
  }
  int base[3];
  double w[3][4], dw[3][4];
  for (int a = 0; a < 3; ++a) {
    const double fl = std::floor(p[a]);
    base[a] = static_cast<int>(fl) - 1;
    detail::cubic_weights(p[a] - fl, w[a], dw[a]);
  }
  // At the upper support edge the last tap has zero weight; clamp its index.
  int ix[3][4];
  for (int a = 0; a < 3; ++a)
    for (int j = 0; j < 4; ++j) ix[a][j] = std::min(base[a] + j, c.dims[a] - 1);

  double val = 0.0, gx = 0.0, gy = 0.0, gz = 0.0;
  for (int kz = 0; kz < 4; ++kz) {
    for (int ky = 0; ky < 4; ++ky) {
      const std::size_t row = c.index(0, ix[1][ky], ix[2][kz]);
      double line = 0.0, dline = 0.0;
      for (int kx = 0; kx < 4; ++kx) {
        const double cv = c.coeffs[row + ix[0][kx]];
        line += w[0][kx] * cv;
        dline += dw[0][kx] * cv;
      }
      const double wyz = w[1][ky] * w[2][kz];
      val += wyz * line;
      gx += wyz * dline;
      gy += dw[1][ky] * w[2][kz] * line;
      gz += w[1][ky] * dw[2][kz] * line;
    }
  }
  s.value = val;
  s.gradient = {gx, gy, gz};
  return s;
}

}  // namespace cdl
