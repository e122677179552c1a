#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "cdl/csv.hpp"
#include "cdl/errors.hpp"

namespace cdl {

using Dims = std::array<int, 3>;
using Spacing = std::array<double, 3>;

inline std::size_t voxel_count(const Dims& d) {
  return static_cast<std::size_t>(d[0]) * static_cast<std::size_t>(d[1]) *
         static_cast<std::size_t>(d[2]);
}

// Dense 3-D scalar grid, x-fastest row-major, physical spacing in mm/voxel.
struct ImageVolume {
  Dims dims{0, 0, 0};
  Spacing spacing{1.0, 1.0, 1.0};
  std::vector<float> data;
  float min_intensity = 0.0f;
  float max_intensity = 0.0f;

  ImageVolume() = default;
  ImageVolume(Dims d, Spacing s, float fill = 0.0f)
      : dims(d), spacing(s), data(voxel_count(d), fill) {
    validate_geometry();
    refresh_range();
  }

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims[1]) * z);
  }

  float at(int x, int y, int z) const { return data[index(x, y, z)]; }
  float& at(int x, int y, int z) { return data[index(x, y, z)]; }

  bool in_grid(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] && z < dims[2];
  }

  void validate_geometry() const {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] <= 0) throw ValidationError("volume dims must be positive");
      if (!(spacing[a] > 0.0)) throw ValidationError("volume spacing must be positive");
    }
  }

  void refresh_range() {
    if (data.empty()) {
      min_intensity = max_intensity = 0.0f;
      return;
    }
    auto [lo, hi] = std::minmax_element(data.begin(), data.end());
    min_intensity = *lo;
    max_intensity = *hi;
  }

  bool looks_normalized() const { return min_intensity >= 0.0f && max_intensity <= 1.0f; }
};

struct BinaryMask {
  Dims dims{0, 0, 0};
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  explicit BinaryMask(Dims d, std::uint8_t fill = 0) : dims(d), bits(voxel_count(d), fill) {}

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims[1]) * z);
  }

  bool at(int x, int y, int z) const { return bits[index(x, y, z)] != 0; }
  void set(int x, int y, int z, bool v) { bits[index(x, y, z)] = v ? 1 : 0; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits) n += (b != 0);
    return n;
  }
};

// ---------------------------------------------------------------------------
// CDLV1 file format: text header (magic, dims, spacing, dtype, blank line)
// followed by a raw little-endian payload, x-fastest.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string read_header_line(std::istream& in, const std::string& path) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("malformed header (unexpected EOF): " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

inline void write_header(std::ostream& out, const Dims& d, const Spacing& s,
                         const std::string& dtype) {
  out << "CDLV1\n";
  out << "dims " << d[0] << ' ' << d[1] << ' ' << d[2] << '\n';
  out << "spacing " << num_str(s[0]) << ' ' << num_str(s[1]) << ' ' << num_str(s[2]) << '\n';
  out << "dtype " << dtype << '\n';
  out << '\n';
}

struct Header {
  Dims dims;
  Spacing spacing;
  std::string dtype;
};

inline Header read_header(std::istream& in, const std::string& path) {
  Header h;
  if (read_header_line(in, path) != "CDLV1")
    throw IoError("malformed header (bad magic, expected CDLV1): " + path);
  {
    std::istringstream ls(read_header_line(in, path));
    std::string key;
    ls >> key >> h.dims[0] >> h.dims[1] >> h.dims[2];
    if (key != "dims" || !ls || h.dims[0] <= 0 || h.dims[1] <= 0 || h.dims[2] <= 0)
      throw IoError("malformed header (dims line): " + path);
  }
  {
    std::istringstream ls(read_header_line(in, path));
    std::string key;
    ls >> key >> h.spacing[0] >> h.spacing[1] >> h.spacing[2];
    if (key != "spacing" || !ls || !(h.spacing[0] > 0) || !(h.spacing[1] > 0) ||
        !(h.spacing[2] > 0))
      throw IoError("malformed header (spacing line): " + path);
  }
  {
    std::istringstream ls(read_header_line(in, path));
    std::string key;
    ls >> key >> h.dtype;
    if (key != "dtype" || !ls) throw IoError("malformed header (dtype line): " + path);
  }
  if (!read_header_line(in, path).empty())
    throw IoError("malformed header (missing blank separator): " + path);
  return h;
}

}  // namespace detail

inline ImageVolume load_volume(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open volume file: " + path);
  const auto h = detail::read_header(in, path);
  if (h.dtype != "f32le") throw IoError("unsupported dtype '" + h.dtype + "' in " + path);
  ImageVolume v;
  v.dims = h.dims;
  v.spacing = h.spacing;
  const std::size_t n = voxel_count(v.dims);
  v.data.resize(n);
  in.read(reinterpret_cast<char*>(v.data.data()), static_cast<std::streamsize>(n * 4));
  if (static_cast<std::size_t>(in.gcount()) != n * 4)
    throw IoError("truncated payload (expected " + std::to_string(n) + " voxels): " + path);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(v.data[i]))
      throw IoError("non-finite intensity at voxel " + std::to_string(i) + ": " + path);
  }
  v.refresh_range();
  return v;
}

inline void save_volume(const std::string& path, const ImageVolume& v) {
  v.validate_geometry();
  if (v.data.size() != voxel_count(v.dims))
    throw ValidationError("volume payload length does not match dims");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  detail::write_header(out, v.dims, v.spacing, "f32le");
  out.write(reinterpret_cast<const char*>(v.data.data()),
            static_cast<std::streamsize>(v.data.size() * 4));
  if (!out) throw IoError("write failed: " + path);
}

inline BinaryMask load_mask(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open mask file: " + path);
  const auto h = detail::read_header(in, path);
  if (h.dtype != "u8") throw IoError("unsupported mask dtype '" + h.dtype + "' in " + path);
  BinaryMask m;
  m.dims = h.dims;
  const std::size_t n = voxel_count(m.dims);
  m.bits.resize(n);
  in.read(reinterpret_cast<char*>(m.bits.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw IoError("truncated payload (expected " + std::to_string(n) + " voxels): " + path);
  for (std::size_t i = 0; i < n; ++i) {
    if (m.bits[i] > 1)
      throw IoError("mask value outside {0,1} at voxel " + std::to_string(i) + ": " + path);
  }
  return m;
}

inline void save_mask(const std::string& path, const BinaryMask& m, const Spacing& spacing) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  detail::write_header(out, m.dims, spacing, "u8");
  out.write(reinterpret_cast<const char*>(m.bits.data()),
            static_cast<std::streamsize>(m.bits.size()));
  if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------

struct NormalizeResult {
  ImageVolume volume;
  bool degenerate_span = false;  // constant input, everything mapped to 0
  double lo_value = 0.0;         // intensity mapped to 0
  double hi_value = 0.0;         // intensity mapped to 1
};

// Percentile by sorted-order linear interpolation at rank pct/100*(n-1).
inline double percentile_sorted(const std::vector<float>& sorted, double pct) {
  if (sorted.empty()) throw ValidationError("percentile of empty data");
  const double rank = pct / 100.0 * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(sorted.size() - 1, lo + 1);
  const double frac = rank - static_cast<double>(lo);
  return (1.0 - frac) * sorted[lo] + frac * sorted[hi];
}

// Affine map sending the lo_pct percentile to 0 and hi_pct to 1, clamped.
inline NormalizeResult normalize_intensities(const ImageVolume& v, double lo_pct = 0.5,
                                             double hi_pct = 99.5) {
  if (!(lo_pct >= 0.0 && lo_pct < hi_pct && hi_pct <= 100.0))
    throw ValidationError("normalize percentiles must satisfy 0 <= lo < hi <= 100");
  std::vector<float> sorted = v.data;
  std::sort(sorted.begin(), sorted.end());
  const double lo = percentile_sorted(sorted, lo_pct);
  const double hi = percentile_sorted(sorted, hi_pct);

  NormalizeResult r;
  r.volume.dims = v.dims;
  r.volume.spacing = v.spacing;
  r.volume.data.resize(v.data.size());
  r.lo_value = lo;
  r.hi_value = hi;
  if (!(hi > lo)) {
    r.degenerate_span = true;
    std::fill(r.volume.data.begin(), r.volume.data.end(), 0.0f);
  } else {
    const double inv = 1.0 / (hi - lo);
    for (std::size_t i = 0; i < v.data.size(); ++i) {
      const double t = (static_cast<double>(v.data[i]) - lo) * inv;
      r.volume.data[i] = static_cast<float>(std::clamp(t, 0.0, 1.0));
    }
  }
  r.volume.refresh_range();
  return r;
}

// bit set iff intensity > t
inline BinaryMask threshold_mask(const ImageVolume& v, double t) {
  BinaryMask m(v.dims);
  for (std::size_t i = 0; i < v.data.size(); ++i) m.bits[i] = (v.data[i] > t) ? 1 : 0;
  return m;
}

}  // namespace cdl
