#pragma once

// Tiny static SVG plots: scatter and histogram. Enough for the eval report,
// no styling ambitions.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "microdrive/metrics.hpp"

namespace microdrive {

namespace svg_detail {

inline std::string header(int w, int h, const std::string& title) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << w / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << title
     << "</text>\n";
  return os.str();
}

struct Range {
  double lo = 0.0, hi = 1.0;
  double map(double v, double a, double b) const {
    if (hi <= lo) return (a + b) / 2;
    return a + (v - lo) / (hi - lo) * (b - a);
  }
};

inline Range span(const std::vector<double>& v) {
  Range r{0.0, 1.0};
  if (!v.empty()) {
    r.lo = *std::min_element(v.begin(), v.end());
    r.hi = *std::max_element(v.begin(), v.end());
    if (r.hi == r.lo) r.hi = r.lo + 1.0;
  }
  return r;
}

inline std::string axes(int w, int h, const std::string& xlabel, const std::string& ylabel) {
  std::ostringstream os;
  os << "<line x1=\"50\" y1=\"" << h - 40 << "\" x2=\"" << w - 20 << "\" y2=\"" << h - 40
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"50\" y1=\"30\" x2=\"50\" y2=\"" << h - 40 << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << w / 2 << "\" y=\"" << h - 10
     << "\" text-anchor=\"middle\" font-size=\"12\">" << xlabel << "</text>\n"
     << "<text x=\"15\" y=\"" << h / 2 << "\" text-anchor=\"middle\" font-size=\"12\" "
     << "transform=\"rotate(-90 15 " << h / 2 << ")\">" << ylabel << "</text>\n";
  return os.str();
}

}  // namespace svg_detail

inline void write_scatter_svg(const std::string& path,
                              const std::vector<std::pair<double, double>>& pts,
                              const std::string& xlabel, const std::string& ylabel,
                              const std::string& title) {
  const int w = 520, h = 400;
  std::vector<double> xs, ys;
  for (const auto& [x, y] : pts) {
    xs.push_back(x);
    ys.push_back(y);
  }
  const auto rx = svg_detail::span(xs), ry = svg_detail::span(ys);
  std::ostringstream os;
  os << svg_detail::header(w, h, title) << svg_detail::axes(w, h, xlabel, ylabel);
  for (const auto& [x, y] : pts) {
    os << "<circle cx=\"" << rx.map(x, 50, w - 20) << "\" cy=\"" << ry.map(y, h - 40, 30)
       << "\" r=\"2\" fill=\"steelblue\" fill-opacity=\"0.5\"/>\n";
  }
  char lim[128];
  std::snprintf(lim, sizeof(lim),
                "<text x=\"50\" y=\"%d\" font-size=\"10\">%.3g</text>"
                "<text x=\"%d\" y=\"%d\" text-anchor=\"end\" font-size=\"10\">%.3g</text>\n",
                h - 26, rx.lo, w - 20, h - 26, rx.hi);
  os << lim << "</svg>\n";
  write_file(path, os.str());
}

inline void write_histogram_svg(const std::string& path, const std::vector<double>& values,
                                int nbins, const std::string& xlabel, const std::string& title) {
  const int w = 520, h = 400;
  const auto rx = svg_detail::span(values);
  std::vector<int> bins(std::max(nbins, 1), 0);
  for (double v : values) {
    int b = static_cast<int>((v - rx.lo) / (rx.hi - rx.lo) * nbins);
    b = std::clamp(b, 0, nbins - 1);
    bins[b]++;
  }
  const int peak = std::max(1, *std::max_element(bins.begin(), bins.end()));
  std::ostringstream os;
  os << svg_detail::header(w, h, title) << svg_detail::axes(w, h, xlabel, "count");
  const double bw = (w - 70.0) / nbins;
  for (int b = 0; b < nbins; ++b) {
    const double bh = (h - 70.0) * bins[b] / peak;
    os << "<rect x=\"" << 50 + b * bw << "\" y=\"" << (h - 40 - bh) << "\" width=\"" << bw - 1
       << "\" height=\"" << bh << "\" fill=\"darkseagreen\"/>\n";
  }
  os << "</svg>\n";
  write_file(path, os.str());
}

}  // namespace microdrive
