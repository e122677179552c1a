#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cdl/csv.hpp"
#include "cdl/errors.hpp"
#include "cdl/volume.hpp"

namespace cdl {

// 2|A n B| / (|A| + |B|); both-empty returns the degenerate 1 convention.
inline double dice(const BinaryMask& a, const BinaryMask& b, bool* degenerate = nullptr) {
  if (a.dims != b.dims) throw ValidationError("dice: mask dims differ");
  std::size_t na = 0, nb = 0, inter = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    na += a.bits[i] != 0;
    nb += b.bits[i] != 0;
    inter += (a.bits[i] != 0 && b.bits[i] != 0);
  }
  if (degenerate) *degenerate = (na + nb == 0);
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

// Surface voxels under 6-connectivity; grid border counts as outside.
inline std::vector<std::array<int, 3>> boundary_voxels(const BinaryMask& m) {
  std::vector<std::array<int, 3>> out;
  const int nx = m.dims[0], ny = m.dims[1], nz = m.dims[2];
  const auto inside = [&](int x, int y, int z) {
    return x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz && m.at(x, y, z);
  };
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        if (!m.at(x, y, z)) continue;
        if (!inside(x - 1, y, z) || !inside(x + 1, y, z) || !inside(x, y - 1, z) ||
            !inside(x, y + 1, z) || !inside(x, y, z - 1) || !inside(x, y, z + 1))
          out.push_back({x, y, z});
      }
  return out;
}

namespace detail {

// max over a of min over b, with the classical early-break: once some b is
// closer than the current max, a cannot raise it.
inline double directed_hausdorff_mm(const std::vector<std::array<int, 3>>& a,
                                    const std::vector<std::array<int, 3>>& b,
                                    const Spacing& sp) {
  double max2 = 0.0;
  for (const auto& pa : a) {
    double min2 = std::numeric_limits<double>::infinity();
    for (const auto& pb : b) {
      const double dx = (pa[0] - pb[0]) * sp[0];
      const double dy = (pa[1] - pb[1]) * sp[1];
      const double dz = (pa[2] - pb[2]) * sp[2];
      const double d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < min2) {
        min2 = d2;
        if (min2 <= max2) break;
      }
    }
    if (min2 > max2) max2 = min2;
  }
  return std::sqrt(max2);
}

}  // namespace detail

// Classical max-min Hausdorff distance between boundary voxel sets, in mm.
inline double hausdorff_mm(const BinaryMask& a, const BinaryMask& b, const Spacing& spacing) {
  if (a.dims != b.dims) throw ValidationError("hausdorff: mask dims differ");
  const auto ba = boundary_voxels(a);
  const auto bb = boundary_voxels(b);
  if (ba.empty() || bb.empty()) throw ValidationError("hausdorff: empty mask");
  return std::max(detail::directed_hausdorff_mm(ba, bb, spacing),
                  detail::directed_hausdorff_mm(bb, ba, spacing));
}

// ---------------------------------------------------------------------------
// Wilcoxon rank-sum test, two-sided, normal approximation with tie correction
// and continuity correction.
// ---------------------------------------------------------------------------

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

struct RankSumResult {
  double p = 1.0;
  bool all_tied = false;
};

inline RankSumResult ranksum(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size(), m = y.size();
  if (n < 3 || m < 3) throw ValidationError("ranksum: each sample needs >= 3 values");
  struct Item {
    double v;
    bool from_x;
  };
  std::vector<Item> all;
  all.reserve(n + m);
  for (double v : x) all.push_back({v, true});
  for (double v : y) all.push_back({v, false});
  std::stable_sort(all.begin(), all.end(),
                   [](const Item& a, const Item& b) { return a.v < b.v; });

  const std::size_t total = n + m;
  std::vector<double> rank(total);
  double tie_term = 0.0;
  std::size_t i = 0;
  while (i < total) {
    std::size_t j = i;
    while (j + 1 < total && all[j + 1].v == all[i].v) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[k] = avg_rank;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }

  double w = 0.0;
  for (std::size_t k = 0; k < total; ++k)
    if (all[k].from_x) w += rank[k];

  const double dn = static_cast<double>(n), dm = static_cast<double>(m),
               dt = static_cast<double>(total);
  const double mean_w = dn * (dt + 1.0) / 2.0;
  const double var_w =
      dn * dm / 12.0 * ((dt + 1.0) - tie_term / (dt * (dt - 1.0)));

  RankSumResult r;
  if (!(var_w > 0.0)) {
    r.p = 1.0;
    r.all_tied = true;
    return r;
  }
  const double z = std::max(0.0, std::abs(w - mean_w) - 0.5) / std::sqrt(var_w);
  r.p = std::clamp(2.0 * (1.0 - normal_cdf(z)), 0.0, 1.0);
  return r;
}

inline double ranksum_p(const std::vector<double>& x, const std::vector<double>& y) {
  return ranksum(x, y).p;
}

// ---------------------------------------------------------------------------
// Gain curves and scatter pairs from per-iteration Dice traces.
// ---------------------------------------------------------------------------

struct DiceTrace {
  std::string case_id;
  std::vector<double> dice;  // per iteration, index 0 = initial
};

struct GainCurve {
  std::vector<double> mean_gain;  // per iteration
  int n_cases = 0;
};

// Mean Dice gain per iteration; shorter traces carry their final value forward.
inline GainCurve gain_curve(const std::vector<DiceTrace>& traces) {
  GainCurve g;
  g.n_cases = static_cast<int>(traces.size());
  std::size_t max_len = 0;
  for (const auto& t : traces) {
    if (t.dice.empty()) throw ValidationError("gain_curve: trace without dice values");
    max_len = std::max(max_len, t.dice.size());
  }
  g.mean_gain.assign(max_len, 0.0);
  for (std::size_t k = 0; k < max_len; ++k) {
    double sum = 0.0;
    for (const auto& t : traces) {
      const double d = t.dice[std::min(k, t.dice.size() - 1)];
      sum += d - t.dice.front();
    }
    g.mean_gain[k] = sum / static_cast<double>(traces.size());
  }
  return g;
}

inline void save_gain_curve(const std::string& path, const GainCurve& g) {
  CsvWriter csv(path);
  csv.row({"k", "mean_dice_gain", "n_cases"});
  for (std::size_t k = 0; k < g.mean_gain.size(); ++k)
    csv.row({num_str(k), num_str(g.mean_gain[k]), num_str(g.n_cases)});
}

// ---------------------------------------------------------------------------
// Per-case evaluation report and aggregates.
// ---------------------------------------------------------------------------

struct CaseResult {
  std::string case_id;
  std::string method;
  double initial_dice = 0.0;
  double final_dice = 0.0;
  double initial_hd_mm = 0.0;
  double final_hd_mm = 0.0;
};

struct Aggregate {
  double mean = 0.0;
  double sd = 0.0;
};

inline Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  if (values.empty()) return a;
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) /
           static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - a.mean) * (v - a.mean);
  a.sd = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
  return a;
}

inline void save_report_csv(const std::string& path, const std::vector<CaseResult>& rows) {
  CsvWriter csv(path);
  csv.row({"case", "method", "initial_dice", "final_dice", "initial_hd_mm", "final_hd_mm"});
  for (const auto& r : rows)
    csv.row({r.case_id, r.method, num_str(r.initial_dice), num_str(r.final_dice),
             num_str(r.initial_hd_mm), num_str(r.final_hd_mm)});
}

}  // namespace cdl
