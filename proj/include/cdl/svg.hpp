#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include "cdl/csv.hpp"
#include "cdl/errors.hpp"

namespace cdl {

// Minimal static SVG renders for the line/scatter report outputs.

struct SvgSeries {
  std::string label;
  std::string color = "#1f77b4";
  std::vector<double> x, y;
};

namespace detail {

struct SvgFrame {
  double x0, x1, y0, y1;
  static constexpr double width = 640, height = 420;
  static constexpr double ml = 60, mr = 20, mt = 20, mb = 45;

  double px(double x) const {
    return ml + (x - x0) / (x1 - x0 + 1e-300) * (width - ml - mr);
  }
  double py(double y) const {
    return height - mb - (y - y0) / (y1 - y0 + 1e-300) * (height - mt - mb);
  }
};

inline SvgFrame fit_frame(const std::vector<SvgSeries>& series) {
  SvgFrame f{0, 1, 0, 1};
  bool first = true;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (first) {
        f.x0 = f.x1 = s.x[i];
        f.y0 = f.y1 = s.y[i];
        first = false;
      }
      f.x0 = std::min(f.x0, s.x[i]);
      f.x1 = std::max(f.x1, s.x[i]);
      f.y0 = std::min(f.y0, s.y[i]);
      f.y1 = std::max(f.y1, s.y[i]);
    }
  }
  if (f.x1 == f.x0) f.x1 = f.x0 + 1;
  if (f.y1 == f.y0) f.y1 = f.y0 + 1;
  return f;
}

inline void svg_header(std::ofstream& out, const SvgFrame& f, const std::string& xlabel,
                       const std::string& ylabel) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\""
      << f.height << "\" viewBox=\"0 0 " << f.width << ' ' << f.height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << f.ml << "\" y1=\"" << f.height - f.mb << "\" x2=\""
      << f.width - f.mr << "\" y2=\"" << f.height - f.mb << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << f.ml << "\" y1=\"" << f.mt << "\" x2=\"" << f.ml << "\" y2=\""
      << f.height - f.mb << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << (f.ml + f.width - f.mr) / 2 << "\" y=\"" << f.height - 10
      << "\" text-anchor=\"middle\" font-size=\"13\">" << xlabel << "</text>\n";
  out << "<text x=\"15\" y=\"" << (f.mt + f.height - f.mb) / 2
      << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 15 "
      << (f.mt + f.height - f.mb) / 2 << ")\">" << ylabel << "</text>\n";
  // axis extent labels
  out << "<text x=\"" << f.ml << "\" y=\"" << f.height - f.mb + 16
      << "\" font-size=\"11\" text-anchor=\"middle\">" << num_str(f.x0) << "</text>\n";
  out << "<text x=\"" << f.width - f.mr << "\" y=\"" << f.height - f.mb + 16
      << "\" font-size=\"11\" text-anchor=\"middle\">" << num_str(f.x1) << "</text>\n";
  out << "<text x=\"" << f.ml - 6 << "\" y=\"" << f.height - f.mb
      << "\" font-size=\"11\" text-anchor=\"end\">" << num_str(f.y0) << "</text>\n";
  out << "<text x=\"" << f.ml - 6 << "\" y=\"" << f.mt + 10
      << "\" font-size=\"11\" text-anchor=\"end\">" << num_str(f.y1) << "</text>\n";
}

}  // namespace detail

inline void save_svg_lines(const std::string& path, const std::vector<SvgSeries>& series,
                           const std::string& xlabel, const std::string& ylabel) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  const auto f = detail::fit_frame(series);
  detail::svg_header(out, f, xlabel, ylabel);
  double legend_y = f.mt + 12;
  for (const auto& s : series) {
    out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      out << f.px(s.x[i]) << ',' << f.py(s.y[i]) << ' ';
    out << "\"/>\n";
    out << "<text x=\"" << f.width - f.mr - 150 << "\" y=\"" << legend_y
        << "\" font-size=\"12\" fill=\"" << s.color << "\">" << s.label << "</text>\n";
    legend_y += 16;
  }
  out << "</svg>\n";
}

inline void save_svg_scatter(const std::string& path, const std::vector<SvgSeries>& series,
                             const std::string& xlabel, const std::string& ylabel,
                             bool identity_line = true) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  const auto f = detail::fit_frame(series);
  detail::svg_header(out, f, xlabel, ylabel);
  if (identity_line) {
    const double lo = std::max(f.x0, f.y0), hi = std::min(f.x1, f.y1);
    if (hi > lo)
      out << "<line x1=\"" << f.px(lo) << "\" y1=\"" << f.py(lo) << "\" x2=\"" << f.px(hi)
          << "\" y2=\"" << f.py(hi) << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
  }
  double legend_y = f.mt + 12;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i)
      out << "<circle cx=\"" << f.px(s.x[i]) << "\" cy=\"" << f.py(s.y[i])
          << "\" r=\"3.5\" fill=\"" << s.color << "\" fill-opacity=\"0.75\"/>\n";
    out << "<text x=\"" << f.ml + 10 << "\" y=\"" << legend_y << "\" font-size=\"12\" fill=\""
        << s.color << "\">" << s.label << "</text>\n";
    legend_y += 16;
  }
  out << "</svg>\n";
}

}  // namespace cdl
