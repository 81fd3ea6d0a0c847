#pragma once

// Self-contained SVG line charts: one left y-axis, optionally a second series
// group on a right-hand axis.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

namespace psw::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool right_axis = false;
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::string y2_label;  // used when any series sits on the right axis
  std::vector<Series> series;
  int width = 720;
  int height = 420;
};

namespace detail {

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) {
      const double pad = std::max(std::fabs(lo) * 0.05, 0.5);
      lo -= pad;
      hi += pad;
    }
  }
};

inline const char* color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
  return palette[i % 7];
}

}  // namespace detail

inline std::string render(const Chart& c) {
  using detail::num;
  const double left = 70, right = 70, top = 40, bottom = 55;
  const double pw = c.width - left - right, ph = c.height - top - bottom;
  detail::Range xr, yl, yr;
  bool twin = false;
  for (const auto& s : c.series) {
    for (double v : s.x) xr.add(v);
    for (double v : s.y) (s.right_axis ? yr : yl).add(v);
    twin = twin || s.right_axis;
  }
  xr.finish();
  yl.finish();
  yr.finish();
  auto px = [&](double x) { return left + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto py = [&](double y, const detail::Range& r) { return top + ph - (y - r.lo) / (r.hi - r.lo) * ph; };

  std::string o;
  o += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(c.width) + "\" height=\"" +
       std::to_string(c.height) + "\" viewBox=\"0 0 " + std::to_string(c.width) + " " + std::to_string(c.height) +
       "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += "<text x=\"" + num(c.width / 2.0) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
       detail::escape(c.title) + "</text>\n";
  o += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
       "\" fill=\"none\" stroke=\"#444\"/>\n";

  for (int k = 0; k <= 4; ++k) {
    const double fx = xr.lo + (xr.hi - xr.lo) * k / 4.0;
    const double fy = yl.lo + (yl.hi - yl.lo) * k / 4.0;
    const double gx = px(fx), gy = py(fy, yl);
    o += "<line x1=\"" + num(gx) + "\" y1=\"" + num(top) + "\" x2=\"" + num(gx) + "\" y2=\"" + num(top + ph) +
         "\" stroke=\"#ddd\"/>\n";
    o += "<text x=\"" + num(gx) + "\" y=\"" + num(top + ph + 16) + "\" text-anchor=\"middle\">" + num(fx) +
         "</text>\n";
    o += "<text x=\"" + num(left - 6) + "\" y=\"" + num(gy + 4) + "\" text-anchor=\"end\">" + num(fy) + "</text>\n";
    if (twin) {
      const double fy2 = yr.lo + (yr.hi - yr.lo) * k / 4.0;
      o += "<text x=\"" + num(left + pw + 6) + "\" y=\"" + num(py(fy2, yr) + 4) + "\">" + num(fy2) + "</text>\n";
    }
  }
  o += "<text x=\"" + num(left + pw / 2) + "\" y=\"" + num(c.height - 12.0) + "\" text-anchor=\"middle\">" +
       detail::escape(c.x_label) + "</text>\n";
  o += "<text transform=\"translate(16," + num(top + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
       detail::escape(c.y_label) + "</text>\n";
  if (twin)
    o += "<text transform=\"translate(" + num(c.width - 12.0) + "," + num(top + ph / 2) +
         ") rotate(90)\" text-anchor=\"middle\">" + detail::escape(c.y2_label) + "</text>\n";

  for (std::size_t i = 0; i < c.series.size(); ++i) {
    const auto& s = c.series[i];
    const auto& r = s.right_axis ? yr : yl;
    std::string pts;
    for (std::size_t k = 0; k < std::min(s.x.size(), s.y.size()); ++k) {
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
      pts += num(px(s.x[k])) + "," + num(py(s.y[k], r)) + " ";
    }
    o += "<polyline fill=\"none\" stroke=\"" + std::string(detail::color(i)) + "\" stroke-width=\"2\"" +
         (s.right_axis ? " stroke-dasharray=\"6 3\"" : "") + " points=\"" + pts + "\"/>\n";
    const double ly = top + 14.0 + 16.0 * static_cast<double>(i);
    o += "<line x1=\"" + num(left + 10) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" + num(left + 30) + "\" y2=\"" +
         num(ly - 4) + "\" stroke=\"" + detail::color(i) + "\" stroke-width=\"2\"/>\n";
    o += "<text x=\"" + num(left + 35) + "\" y=\"" + num(ly) + "\">" + detail::escape(s.label) +
         (s.right_axis ? " (right)" : "") + "</text>\n";
  }
  o += "</svg>\n";
  return o;
}

}  // namespace psw::svg
