#ifndef KMSPC_SVG_HPP
#define KMSPC_SVG_HPP

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "kmspc/chart_io.hpp"
#include "kmspc/common.hpp"

namespace kmspc {

namespace detail {

inline std::string svg_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

inline std::string svg_label(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

// Affine map from data coordinates to pixel coordinates. Degenerate ranges
// are widened by one unit so every chart stays drawable.
struct AxisMap {
  double lo = 0.0, hi = 1.0, pix_lo = 0.0, pix_hi = 1.0;

  AxisMap(double data_lo, double data_hi, double p_lo, double p_hi)
      : lo(data_lo), hi(data_hi), pix_lo(p_lo), pix_hi(p_hi) {
    if (!(hi > lo)) {
      lo -= 0.5;
      hi += 0.5;
    }
  }
  double operator()(double v) const {
    return pix_lo + (v - lo) / (hi - lo) * (pix_hi - pix_lo);
  }
};

inline std::string polyline_points(const Vector& x, const Vector& y,
                                   const AxisMap& xm, const AxisMap& ym) {
  std::string pts;
  for (Index i = 0; i < x.size(); ++i) {
    if (i) pts += ' ';
    pts += svg_num(xm(x[i])) + ',' + svg_num(ym(y[i]));
  }
  return pts;
}

}  // namespace detail

// Statistic trace with its credible band and control limit. The band polygon
// is emitted even when its width is zero everywhere.
inline void emit_chart_svg(const ChartTable& t, const std::string& svg_path,
                           const std::string& title) {
  if (t.rows() < 1) throw InputError("emit_chart_svg: empty chart table");
  const double width = 860.0, height = 420.0;
  const double ml = 70.0, mr = 25.0, mt = 45.0, mb = 55.0;

  double y_min = 0.0, y_max = 0.0;
  const Vector* y_all[] = {&t.point,      &t.lower,       &t.upper,
                           &t.median,     &t.point_limit, &t.limit_lower,
                           &t.limit_upper};
  bool first = true;
  for (const Vector* v : y_all) {
    const double lo = v->minCoeff(), hi = v->maxCoeff();
    y_min = first ? lo : std::min(y_min, lo);
    y_max = first ? hi : std::max(y_max, hi);
    first = false;
  }
  const double pad = 0.05 * (y_max - y_min);
  detail::AxisMap xm(t.timestamp.minCoeff(), t.timestamp.maxCoeff(), ml,
                     width - mr);
  detail::AxisMap ym(y_min - pad, y_max + pad, height - mb, mt);

  std::ofstream out(svg_path);
  detail::require_stream(out, svg_path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << ' ' << height
      << "\">\n";
  out << "<rect width=\"" << width << "\" height=\"" << height
      << "\" fill=\"#ffffff\"/>\n";
  out << "<text x=\"" << detail::svg_num(width / 2) << "\" y=\"24\" "
      << "font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">"
      << title << "</text>\n";

  for (int k = 0; k <= 4; ++k) {
    const double v = ym.lo + (ym.hi - ym.lo) * k / 4.0;
    const std::string y = detail::svg_num(ym(v));
    out << "<line x1=\"" << detail::svg_num(ml) << "\" y1=\"" << y << "\" x2=\""
        << detail::svg_num(width - mr) << "\" y2=\"" << y
        << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    out << "<text x=\"" << detail::svg_num(ml - 8) << "\" y=\"" << y
        << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\" "
        << "dominant-baseline=\"middle\">" << detail::svg_label(v) << "</text>\n";
  }
  for (int k = 0; k <= 4; ++k) {
    const double v = xm.lo + (xm.hi - xm.lo) * k / 4.0;
    const std::string x = detail::svg_num(xm(v));
    out << "<text x=\"" << x << "\" y=\"" << detail::svg_num(height - mb + 18)
        << "\" font-family=\"sans-serif\" font-size=\"11\" "
        << "text-anchor=\"middle\">" << detail::svg_label(v) << "</text>\n";
  }

  // Limit band, then statistic band, so the statistic stays visible on top.
  std::string limit_band = detail::polyline_points(t.timestamp, t.limit_upper, xm, ym);
  for (Index i = t.rows() - 1; i >= 0; --i)
    limit_band += ' ' + detail::svg_num(xm(t.timestamp[i])) + ',' +
                  detail::svg_num(ym(t.limit_lower[i]));
  out << "<polygon points=\"" << limit_band
      << "\" fill=\"#f3cdbd\" fill-opacity=\"0.7\" stroke=\"none\"/>\n";

  std::string band = detail::polyline_points(t.timestamp, t.upper, xm, ym);
  for (Index i = t.rows() - 1; i >= 0; --i)
    band += ' ' + detail::svg_num(xm(t.timestamp[i])) + ',' +
            detail::svg_num(ym(t.lower[i]));
  out << "<polygon points=\"" << band
      << "\" fill=\"#b9cfe8\" fill-opacity=\"0.8\" stroke=\"none\"/>\n";

  out << "<polyline points=\""
      << detail::polyline_points(t.timestamp, t.limit_mean, xm, ym)
      << "\" fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.5\" "
      << "stroke-dasharray=\"6,4\"/>\n";
  out << "<polyline points=\""
      << detail::polyline_points(t.timestamp, t.median, xm, ym)
      << "\" fill=\"none\" stroke=\"#2e6da4\" stroke-width=\"1.5\"/>\n";
  out << "<polyline points=\""
      << detail::polyline_points(t.timestamp, t.point, xm, ym)
      << "\" fill=\"none\" stroke=\"#222222\" stroke-width=\"1\"/>\n";

  out << "<line x1=\"" << detail::svg_num(ml) << "\" y1=\""
      << detail::svg_num(height - mb) << "\" x2=\"" << detail::svg_num(width - mr)
      << "\" y2=\"" << detail::svg_num(height - mb)
      << "\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
  out << "<line x1=\"" << detail::svg_num(ml) << "\" y1=\"" << detail::svg_num(mt)
      << "\" x2=\"" << detail::svg_num(ml) << "\" y2=\""
      << detail::svg_num(height - mb)
      << "\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
  out << "<text x=\"" << detail::svg_num((ml + width - mr) / 2) << "\" y=\""
      << detail::svg_num(height - 14)
      << "\" font-family=\"sans-serif\" font-size=\"12\" "
      << "text-anchor=\"middle\">sample</text>\n";
  out << "</svg>\n";
  detail::require_stream(out, svg_path);
}

// One panel per diagnosed timestamp: posterior-mean bars with interval
// whiskers, variables in column order.
inline void emit_contrib_svg(const std::vector<ContributionBlock>& blocks,
                             const std::string& svg_path,
                             const std::string& title) {
  if (blocks.empty()) throw InputError("emit_contrib_svg: no contribution blocks");
  const double width = 860.0;
  const double panel_h = 240.0, mt = 45.0, mb = 10.0;
  const double height = mt + panel_h * double(blocks.size()) + mb;
  const double ml = 70.0, mr = 25.0;

  std::ofstream out(svg_path);
  detail::require_stream(out, svg_path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << ' ' << height
      << "\">\n";
  out << "<rect width=\"" << width << "\" height=\"" << height
      << "\" fill=\"#ffffff\"/>\n";
  out << "<text x=\"" << detail::svg_num(width / 2) << "\" y=\"24\" "
      << "font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">"
      << title << "</text>\n";

  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& block = blocks[b];
    const double top = mt + panel_h * double(b);
    const double bottom = top + panel_h - 60.0;
    const Index m = block.mean.size();
    double lo = std::min(0.0, block.lower.minCoeff());
    double hi = std::max(0.0, block.upper.maxCoeff());
    const double pad = 0.05 * (hi - lo);
    detail::AxisMap ym(lo - pad, hi + pad, bottom, top + 24.0);
    const double slot = (width - ml - mr) / double(m);
    const double bar_w = 0.6 * slot;

    out << "<text x=\"" << detail::svg_num(ml) << "\" y=\""
        << detail::svg_num(top + 12)
        << "\" font-family=\"sans-serif\" font-size=\"12\">sample "
        << block.timestamp << "</text>\n";
    const std::string zero_y = detail::svg_num(ym(0.0));
    out << "<line x1=\"" << detail::svg_num(ml) << "\" y1=\"" << zero_y
        << "\" x2=\"" << detail::svg_num(width - mr) << "\" y2=\"" << zero_y
        << "\" stroke=\"#999999\" stroke-width=\"1\"/>\n";

    for (Index j = 0; j < m; ++j) {
      const double cx = ml + slot * (double(j) + 0.5);
      const double y0 = ym(0.0);
      const double y1 = ym(block.mean[j]);
      const double bar_top = std::min(y0, y1);
      const double bar_h = std::abs(y1 - y0);
      const bool top_ranked = block.rank[static_cast<std::size_t>(j)] <= 3;
      out << "<rect x=\"" << detail::svg_num(cx - bar_w / 2) << "\" y=\""
          << detail::svg_num(bar_top) << "\" width=\"" << detail::svg_num(bar_w)
          << "\" height=\"" << detail::svg_num(bar_h) << "\" fill=\""
          << (top_ranked ? "#d98a5f" : "#7da7cc") << "\"/>\n";
      out << "<line x1=\"" << detail::svg_num(cx) << "\" y1=\""
          << detail::svg_num(ym(block.lower[j])) << "\" x2=\""
          << detail::svg_num(cx) << "\" y2=\""
          << detail::svg_num(ym(block.upper[j]))
          << "\" stroke=\"#333333\" stroke-width=\"1.5\"/>\n";
      out << "<text x=\"" << detail::svg_num(cx) << "\" y=\""
          << detail::svg_num(bottom + 16)
          << "\" font-family=\"sans-serif\" font-size=\"10\" "
          << "text-anchor=\"middle\">"
          << block.variables[static_cast<std::size_t>(j)] << "</text>\n";
    }
  }
  out << "</svg>\n";
  detail::require_stream(out, svg_path);
}

inline void emit_chart_svg_file(const std::string& csv_path,
                                const std::string& svg_path,
                                const std::string& title) {
  emit_chart_svg(read_chart_csv(csv_path), svg_path, title);
}

inline void emit_contrib_svg_file(const std::string& csv_path,
                                  const std::string& svg_path,
                                  const std::string& title) {
  emit_contrib_svg(read_contrib_csv(csv_path), svg_path, title);
}

// Renders every chart file in a run directory. The two chart CSVs are
// mandatory; contribution CSVs are rendered when present.
inline void emit_plots(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path d(dir);
  emit_chart_svg_file((d / "chart_t2.csv").string(), (d / "chart_t2.svg").string(),
                      "T2 control chart");
  emit_chart_svg_file((d / "chart_spe.csv").string(),
                      (d / "chart_spe.svg").string(), "SPE control chart");
  if (fs::exists(d / "contrib_t2.csv"))
    emit_contrib_svg_file((d / "contrib_t2.csv").string(),
                          (d / "contrib_t2.svg").string(), "T2 contributions");
  if (fs::exists(d / "contrib_spe.csv"))
    emit_contrib_svg_file((d / "contrib_spe.csv").string(),
                          (d / "contrib_spe.svg").string(), "SPE contributions");
}

}  // namespace kmspc

#endif  // KMSPC_SVG_HPP
