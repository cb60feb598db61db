#pragma once

// Minimal SVG output: per-grade score histograms and grade-pair heatmaps.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "setrank/analysis.hpp"

namespace setrank {

namespace detail {

inline std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
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

inline const char* series_color(std::size_t i) {
  static const char* palette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"};
  return palette[i % 6];
}

}  // namespace detail

// Overlaid histograms of score per grade, shared bins.
inline void render_score_histogram(std::ostream& os, const std::vector<ScoreRow>& rows, std::size_t bins = 20,
                                   const std::string& title = "score by grade") {
  const double width = 640, height = 400, left = 60, right = 120, top = 40, bottom = 50;
  const double pw = width - left - right, ph = height - top - bottom;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
     << detail::xml_escape(title) << "</text>\n";
  if (rows.empty() || bins == 0) {
    os << "<text x=\"" << width / 2 << "\" y=\"" << height / 2 << "\" text-anchor=\"middle\">no data</text>\n</svg>\n";
    return;
  }
  double lo = rows.front().score, hi = lo;
  for (const auto& r : rows) {
    lo = std::min(lo, r.score);
    hi = std::max(hi, r.score);
  }
  if (hi == lo) hi = lo + 1.0;
  std::map<int, std::vector<std::size_t>> counts;
  for (const auto& r : rows) {
    auto& c = counts[r.grade];
    c.resize(bins, 0);
    auto b = static_cast<std::size_t>((r.score - lo) / (hi - lo) * static_cast<double>(bins));
    ++c[std::min(b, bins - 1)];
  }
  std::size_t peak = 1;
  for (const auto& [g, c] : counts)
    for (auto v : c) peak = std::max(peak, v);

  os << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
     << "\" stroke=\"black\"/>\n";
  const double bw = pw / static_cast<double>(bins);
  std::size_t series = 0;
  for (const auto& [grade, c] : counts) {
    for (std::size_t b = 0; b < bins; ++b) {
      if (c[b] == 0) continue;
      const double h = ph * static_cast<double>(c[b]) / static_cast<double>(peak);
      os << "<rect x=\"" << detail::fmt("%.2f", left + bw * static_cast<double>(b)) << "\" y=\""
         << detail::fmt("%.2f", top + ph - h) << "\" width=\"" << detail::fmt("%.2f", bw) << "\" height=\""
         << detail::fmt("%.2f", h) << "\" fill=\"" << detail::series_color(series)
         << "\" fill-opacity=\"0.5\"/>\n";
    }
    const double ly = top + 20.0 * static_cast<double>(series);
    os << "<rect x=\"" << left + pw + 15 << "\" y=\"" << ly << "\" width=\"12\" height=\"12\" fill=\""
       << detail::series_color(series) << "\"/>\n";
    os << "<text x=\"" << left + pw + 32 << "\" y=\"" << ly + 11 << "\" font-size=\"12\">grade " << grade
       << "</text>\n";
    ++series;
  }
  os << "<text x=\"" << left << "\" y=\"" << top + ph + 18 << "\" font-size=\"11\">" << detail::fmt("%.3g", lo)
     << "</text>\n";
  os << "<text x=\"" << left + pw << "\" y=\"" << top + ph + 18 << "\" font-size=\"11\" text-anchor=\"end\">"
     << detail::fmt("%.3g", hi) << "</text>\n";
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
     << "score</text>\n";
  os << "<text x=\"" << left - 8 << "\" y=\"" << top + 10 << "\" text-anchor=\"end\" font-size=\"11\">" << peak
     << "</text>\n";
  os << "</svg>\n";
}

// One heatmap of normalized grade-pair similarity per layer, side by side.
inline void render_similarity_heatmap(std::ostream& os, const std::vector<LabelPairSummary>& rows,
                                      const std::string& title = "normalized similarity by grade pair") {
  std::map<std::size_t, std::map<std::pair<int, int>, double>> layers;
  std::vector<int> grades;
  for (const auto& r : rows) {
    layers[r.layer][{r.r1, r.r2}] = r.normalized;
    grades.push_back(r.r1);
    grades.push_back(r.r2);
  }
  std::sort(grades.begin(), grades.end());
  grades.erase(std::unique(grades.begin(), grades.end()), grades.end());
  const double cell = 48, gap = 40, left = 50, top = 60;
  const double panel = cell * static_cast<double>(std::max<std::size_t>(grades.size(), 1));
  const double width = left + static_cast<double>(std::max<std::size_t>(layers.size(), 1)) * (panel + gap) + 20;
  const double height = top + panel + 50;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
     << detail::xml_escape(title) << "</text>\n";
  std::size_t p = 0;
  for (const auto& [layer, cells] : layers) {
    const double x0 = left + static_cast<double>(p) * (panel + gap);
    os << "<text x=\"" << x0 + panel / 2 << "\" y=\"" << top - 10 << "\" text-anchor=\"middle\" font-size=\"13\">"
       << "layer " << layer << "</text>\n";
    for (std::size_t a = 0; a < grades.size(); ++a) {
      for (std::size_t b = 0; b < grades.size(); ++b) {
        const double x = x0 + cell * static_cast<double>(b), y = top + cell * static_cast<double>(a);
        auto it = cells.find({grades[a], grades[b]});
        if (it == cells.end()) {
          os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
             << "\" fill=\"#eeeeee\" stroke=\"white\"/>\n";
          continue;
        }
        const double v = std::clamp(it->second, 0.0, 1.0);
        const int shade = static_cast<int>(std::lround(255.0 * (1.0 - v)));
        char color[16];
        std::snprintf(color, sizeof(color), "#%02x%02xff", shade, shade);
        os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
           << "\" fill=\"" << color << "\" stroke=\"white\"/>\n";
        os << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4
           << "\" text-anchor=\"middle\" font-size=\"11\" fill=\"" << (v > 0.6 ? "white" : "black") << "\">"
           << detail::fmt("%.2f", it->second) << "</text>\n";
      }
    }
    for (std::size_t a = 0; a < grades.size(); ++a) {
      os << "<text x=\"" << x0 - 6 << "\" y=\"" << top + cell * (static_cast<double>(a) + 0.5) + 4
         << "\" text-anchor=\"end\" font-size=\"11\">" << grades[a] << "</text>\n";
      os << "<text x=\"" << x0 + cell * (static_cast<double>(a) + 0.5) << "\" y=\"" << top + panel + 16
         << "\" text-anchor=\"middle\" font-size=\"11\">" << grades[a] << "</text>\n";
    }
    ++p;
  }
  os << "</svg>\n";
}

}  // namespace setrank
