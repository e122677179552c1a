#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "cdl/csv.hpp"
#include "cdl/errors.hpp"

namespace cdl {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Jacobian3x12 = Eigen::Matrix<double, 3, 12>;
using Vec12 = Eigen::Matrix<double, 12, 1>;

enum class TransformMode { rigid, affine };

// Parameter indices in mu. Composition order (right to left):
//   T = Translate o Center o Rz o Ry o Rx o Shear o Scale o Center^-1
namespace mu_index {
constexpr int rx = 0, ry = 1, rz = 2;     // radians
constexpr int tx = 3, ty = 4, tz = 5;     // mm
constexpr int sx = 6, sy = 7, sz = 8;     // scale factors
constexpr int kxy = 9, kxz = 10, kyz = 11;  // shear
}  // namespace mu_index

constexpr std::array<const char*, 12> kMuNames = {"rx", "ry", "rz", "tx",  "ty",  "tz",
                                                  "sx", "sy", "sz", "kxy", "kxz", "kyz"};

// mu = (rx,ry,rz, tx,ty,tz, sx,sy,sz, kxy,kxz,kyz) about a fixed center (mm).
struct AffineParams {
  std::array<double, 12> mu{0, 0, 0, 0, 0, 0, 1, 1, 1, 0, 0, 0};
  Vec3 center = Vec3::Zero();
  TransformMode mode = TransformMode::affine;

  static AffineParams identity(const Vec3& center = Vec3::Zero(),
                               TransformMode mode = TransformMode::affine) {
    AffineParams p;
    p.center = center;
    p.mode = mode;
    return p;
  }

  void validate() const {
    using namespace mu_index;
    if (!(mu[sx] > 0 && mu[sy] > 0 && mu[sz] > 0))
      throw ValidationError("affine scales must be positive");
    for (double v : mu)
      if (!std::isfinite(v)) throw ValidationError("affine parameter not finite");
  }
};

// Plain linear map q -> A q + d; used for inverses and resampling.
struct AffineMatrix {
  Mat3 A = Mat3::Identity();
  Vec3 d = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return A * p + d; }

  AffineMatrix inverse() const {
    AffineMatrix inv;
    inv.A = A.inverse();
    inv.d = -inv.A * d;
    return inv;
  }
};

namespace detail {

inline Mat3 rot_x(double a) {
  Mat3 m;
  m << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return m;
}
inline Mat3 rot_y(double a) {
  Mat3 m;
  m << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return m;
}
inline Mat3 rot_z(double a) {
  Mat3 m;
  m << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return m;
}
inline Mat3 drot_x(double a) {
  Mat3 m;
  m << 0, 0, 0, 0, -std::sin(a), -std::cos(a), 0, std::cos(a), -std::sin(a);
  return m;
}
inline Mat3 drot_y(double a) {
  Mat3 m;
  m << -std::sin(a), 0, std::cos(a), 0, 0, 0, -std::cos(a), 0, -std::sin(a);
  return m;
}
inline Mat3 drot_z(double a) {
  Mat3 m;
  m << -std::sin(a), -std::cos(a), 0, std::cos(a), -std::sin(a), 0, 0, 0, 0;
  return m;
}
inline Mat3 shear(double kxy, double kxz, double kyz) {
  Mat3 m;
  m << 1, kxy, kxz, 0, 1, kyz, 0, 0, 1;
  return m;
}

}  // namespace detail

inline AffineMatrix to_matrix(const AffineParams& p) {
  using namespace mu_index;
  const Mat3 R = detail::rot_z(p.mu[rz]) * detail::rot_y(p.mu[ry]) * detail::rot_x(p.mu[rx]);
  const Mat3 K = detail::shear(p.mu[kxy], p.mu[kxz], p.mu[kyz]);
  const Mat3 S = Vec3(p.mu[sx], p.mu[sy], p.mu[sz]).asDiagonal();
  AffineMatrix m;
  m.A = R * K * S;
  m.d = Vec3(p.mu[tx], p.mu[ty], p.mu[tz]) + p.center - m.A * p.center;
  return m;
}

inline Vec3 apply_transform(const AffineParams& p, const Vec3& point) {
  return to_matrix(p).apply(point);
}

// Analytic d T_mu(p) / d mu, one column per parameter.
inline Jacobian3x12 transform_jacobian(const AffineParams& p, const Vec3& point) {
  using namespace mu_index;
  const Mat3 Rx = detail::rot_x(p.mu[rx]);
  const Mat3 Ry = detail::rot_y(p.mu[ry]);
  const Mat3 Rz = detail::rot_z(p.mu[rz]);
  const Mat3 K = detail::shear(p.mu[kxy], p.mu[kxz], p.mu[kyz]);
  const Mat3 S = Vec3(p.mu[sx], p.mu[sy], p.mu[sz]).asDiagonal();
  const Vec3 q = point - p.center;

  const Mat3 KS = K * S;
  const Mat3 R = Rz * Ry * Rx;

  Jacobian3x12 J;
  J.col(rx) = Rz * Ry * detail::drot_x(p.mu[rx]) * KS * q;
  J.col(ry) = Rz * detail::drot_y(p.mu[ry]) * Rx * KS * q;
  J.col(rz) = detail::drot_z(p.mu[rz]) * Ry * Rx * KS * q;
  J.col(tx) = Vec3(1, 0, 0);
  J.col(ty) = Vec3(0, 1, 0);
  J.col(tz) = Vec3(0, 0, 1);
  const Vec3 Sq = S * q;
  J.col(sx) = R * K * Vec3(q.x(), 0, 0);
  J.col(sy) = R * K * Vec3(0, q.y(), 0);
  J.col(sz) = R * K * Vec3(0, 0, q.z());
  J.col(kxy) = R * Vec3(Sq.y(), 0, 0);
  J.col(kxz) = R * Vec3(Sq.z(), 0, 0);
  J.col(kyz) = R * Vec3(0, Sq.z(), 0);
  return J;
}

// ---------------------------------------------------------------------------
// Transform file: key-value text with version and composition-order tag.
// ---------------------------------------------------------------------------

constexpr const char* kTransformMagic = "CDLT1";
constexpr const char* kComposeTag = "translate*center*rz*ry*rx*shear*scale*center_inv";

inline void save_transform(const std::string& path, const AffineParams& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << kTransformMagic << '\n';
  out << "compose " << kComposeTag << '\n';
  out << "mode " << (p.mode == TransformMode::rigid ? "rigid" : "affine") << '\n';
  out << "center " << num_str(p.center.x()) << ' ' << num_str(p.center.y()) << ' '
      << num_str(p.center.z()) << '\n';
  for (int i = 0; i < 12; ++i) out << kMuNames[i] << ' ' << num_str(p.mu[i]) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

inline AffineParams load_transform(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open transform file: " + path);
  std::string line;
  if (!std::getline(in, line) || line != kTransformMagic)
    throw IoError("bad transform magic in " + path);
  AffineParams p;
  bool saw_compose = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "compose") {
      std::string tag;
      ls >> tag;
      if (tag != kComposeTag) throw IoError("unknown composition order in " + path);
      saw_compose = true;
    } else if (key == "mode") {
      std::string mode;
      ls >> mode;
      if (mode == "rigid")
        p.mode = TransformMode::rigid;
      else if (mode == "affine")
        p.mode = TransformMode::affine;
      else
        throw IoError("unknown transform mode '" + mode + "' in " + path);
    } else if (key == "center") {
      ls >> p.center.x() >> p.center.y() >> p.center.z();
      if (!ls) throw IoError("bad center line in " + path);
    } else {
      bool matched = false;
      for (int i = 0; i < 12; ++i) {
        if (key == kMuNames[i]) {
          ls >> p.mu[i];
          if (!ls) throw IoError("bad value for " + key + " in " + path);
          matched = true;
          break;
        }
      }
      if (!matched) throw IoError("unknown transform key '" + key + "' in " + path);
    }
  }
  if (!saw_compose) throw IoError("missing composition-order tag in " + path);
  p.validate();
  return p;
}

}  // namespace cdl
