#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "crl/csv.hpp"

namespace crl {

struct NonPositiveValue : Error {
  using Error::Error;
};

namespace detail {

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace detail

/// Renders two CSV columns as a single polyline with axis ticks and writes
/// the SVG atomically. Log axes reject nonpositive data, naming the row.
inline void emit_svg(const std::string& csv_path, const std::string& x_col,
                     const std::string& y_col, bool log_x, bool log_y,
                     const std::string& out_path) {
  CsvTable t = read_csv(csv_path);
  std::size_t xi = t.column(x_col);
  std::size_t yi = t.column(y_col);
  if (t.rows.empty()) throw Error("emit_svg: no data rows in " + csv_path);

  std::vector<double> xs(t.rows.size()), ys(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    xs[r] = t.number(r, xi);
    ys[r] = t.number(r, yi);
    if (log_x && xs[r] <= 0.0)
      throw NonPositiveValue("emit_svg: nonpositive '" + x_col + "' on log axis at data row " +
                             std::to_string(r + 1));
    if (log_y && ys[r] <= 0.0)
      throw NonPositiveValue("emit_svg: nonpositive '" + y_col + "' on log axis at data row " +
                             std::to_string(r + 1));
  }
  auto fwd_x = [&](double v) { return log_x ? std::log10(v) : v; };
  auto fwd_y = [&](double v) { return log_y ? std::log10(v) : v; };

  double x_lo = fwd_x(xs[0]), x_hi = x_lo, y_lo = fwd_y(ys[0]), y_hi = y_lo;
  for (std::size_t r = 0; r < xs.size(); ++r) {
    x_lo = std::min(x_lo, fwd_x(xs[r]));
    x_hi = std::max(x_hi, fwd_x(xs[r]));
    y_lo = std::min(y_lo, fwd_y(ys[r]));
    y_hi = std::max(y_hi, fwd_y(ys[r]));
  }
  if (x_hi == x_lo) {
    x_lo -= 0.5;
    x_hi += 0.5;
  }
  if (y_hi == y_lo) {
    y_lo -= 0.5;
    y_hi += 0.5;
  }

  const double width = 640, height = 480, ml = 70, mr = 20, mt = 20, mb = 50;
  auto px = [&](double v) { return ml + (fwd_x(v) - x_lo) / (x_hi - x_lo) * (width - ml - mr); };
  auto py = [&](double v) {
    return height - mb - (fwd_y(v) - y_lo) / (y_hi - y_lo) * (height - mt - mb);
  };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
         "viewBox=\"0 0 640 480\">\n";
  svg += "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";
  char buf[160];
  // Axes.
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", ml,
                height - mb, width - mr, height - mb);
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", ml,
                mt, ml, height - mb);
  svg += buf;
  // Five ticks per axis, uniform in (possibly log) plot coordinates.
  const int n_ticks = 5;
  for (int k = 0; k < n_ticks; ++k) {
    double f = static_cast<double>(k) / (n_ticks - 1);
    double xv = x_lo + f * (x_hi - x_lo);
    double yv = y_lo + f * (y_hi - y_lo);
    double x_data = log_x ? std::pow(10.0, xv) : xv;
    double y_data = log_y ? std::pow(10.0, yv) : yv;
    double xp = ml + f * (width - ml - mr);
    double yp = height - mb - f * (height - mt - mb);
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", xp,
                  height - mb, xp, height - mb + 5);
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"middle\">%s</text>\n",
                  xp, height - mb + 18, detail::tick_label(x_data).c_str());
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
                  ml - 5, yp, ml, yp);
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"end\">%s</text>\n",
                  ml - 8, yp + 4, detail::tick_label(y_data).c_str());
    svg += buf;
  }
  // Axis names.
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" text-anchor=\"middle\">%s</text>\n",
                (ml + width - mr) / 2, height - 10, x_col.c_str());
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"14\" y=\"%.1f\" font-size=\"12\" text-anchor=\"middle\" "
                "transform=\"rotate(-90 14 %.1f)\">%s</text>\n",
                (mt + height - mb) / 2, (mt + height - mb) / 2, y_col.c_str());
  svg += buf;
  // The data, as exactly one polyline.
  svg += "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
  for (std::size_t r = 0; r < xs.size(); ++r) {
    std::snprintf(buf, sizeof(buf), "%s%.2f,%.2f", r ? " " : "", px(xs[r]), py(ys[r]));
    svg += buf;
  }
  svg += "\"/>\n</svg>\n";

  write_file_atomic(out_path, svg);
}

}  // namespace crl
