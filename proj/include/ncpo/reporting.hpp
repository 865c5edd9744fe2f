#pragma once

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ncpo/io.hpp"
#include "ncpo/train_eval.hpp"

namespace ncpo {

// Fixed header: step, wall_clock_seconds, loss, mean_reward, win_rate, then
// one column per named loss term (column set taken from the first row).
inline void write_metrics_csv(std::ostream& out, const std::vector<MetricRecord>& recs) {
  out << "step,wall_clock_seconds,loss,mean_reward,win_rate";
  std::vector<std::string> term_cols;
  if (!recs.empty()) {
    for (const auto& [name, value] : recs.front().per_term) {
      (void)value;
      term_cols.push_back(name);
      out << ',' << name;
    }
  }
  out << '\n';
  for (const MetricRecord& r : recs) {
    out << r.step << ',' << format_double(r.wall_clock_seconds) << ','
        << format_double(r.loss) << ',' << format_double(r.mean_reward) << ','
        << format_double(r.win_rate);
    for (const std::string& name : term_cols) {
      auto it = r.per_term.find(name);
      if (it == r.per_term.end()) {
        throw std::runtime_error("metric rows disagree on term columns: missing " + name);
      }
      out << ',' << format_double(it->second);
    }
    out << '\n';
  }
}

// Square matrix of win rates; entry (row, col) is how often row beats col.
inline void write_winrate_matrix_csv(std::ostream& out, const std::vector<std::string>& names,
                                     const std::vector<Vec>& matrix) {
  require(names.size() == matrix.size(), "write_winrate_matrix_csv: shape mismatch");
  out << "model";
  for (const std::string& n : names) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < names.size(); ++i) {
    require(matrix[i].size() == names.size(), "write_winrate_matrix_csv: shape mismatch");
    out << names[i];
    for (double v : matrix[i]) out << ',' << format_double(v);
    out << '\n';
  }
}

struct CurveSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (x, y)
};

namespace detail {

inline std::string svg_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

}  // namespace detail

// Minimal line plot: one polyline per series, shared axes, legend at the top.
inline void write_curves_svg(std::ostream& out, const std::vector<CurveSeries>& series,
                             const std::string& x_label, const std::string& y_label,
                             const std::string& title = "") {
  require(!series.empty(), "write_curves_svg: no series");
  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
  bool first = true;
  for (const CurveSeries& s : series) {
    require(!s.points.empty(), "write_curves_svg: empty series '" + s.label + "'");
    for (auto [x, y] : s.points) {
      if (first) {
        xmin = xmax = x;
        ymin = ymax = y;
        first = false;
      } else {
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
      }
    }
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  double pad = (ymax - ymin) * 0.05;
  if (pad == 0.0) pad = std::abs(ymax) * 0.05 + 1e-3;
  ymin -= pad;
  ymax += pad;

  const double W = 720, H = 440, L = 64, R = 16, T = 40, B = 52;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
  const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  const int n_colors = 6;

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  out << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  if (!title.empty()) {
    out << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\""
        << " font-size=\"14\">" << title << "</text>\n";
  }
  // axes
  out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    double xv = xmin + (xmax - xmin) * k / 4.0;
    double yv = ymin + (ymax - ymin) * k / 4.0;
    out << "<line x1=\"" << detail::svg_num(px(xv)) << "\" y1=\"" << H - B << "\" x2=\""
        << detail::svg_num(px(xv)) << "\" y2=\"" << H - B + 5 << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << detail::svg_num(px(xv)) << "\" y=\"" << H - B + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
        << detail::tick_label(xv) << "</text>\n";
    out << "<line x1=\"" << L - 5 << "\" y1=\"" << detail::svg_num(py(yv)) << "\" x2=\"" << L
        << "\" y2=\"" << detail::svg_num(py(yv)) << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << L - 8 << "\" y=\"" << detail::svg_num(py(yv) + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
        << detail::tick_label(yv) << "</text>\n";
  }
  out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << x_label
      << "</text>\n";
  out << "<text x=\"14\" y=\"" << (T + H - B) / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 "
      << (T + H - B) / 2 << ")\">" << y_label << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const char* color = palette[si % n_colors];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (auto [x, y] : series[si].points) {
      out << detail::svg_num(px(x)) << ',' << detail::svg_num(py(y)) << ' ';
    }
    out << "\"/>\n";
    double lx = L + 12, ly = T + 8 + 18.0 * si;
    out << "<line x1=\"" << lx << "\" y1=\"" << ly << "\" x2=\"" << lx + 24 << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << lx + 30 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << series[si].label << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace ncpo
