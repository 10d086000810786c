#include "infocons/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "infocons/scoremap.hpp"

namespace infocons {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

std::string ramp_color(double score) {
  if (!std::isfinite(score)) score = 0;
  const int i = std::clamp(static_cast<int>(std::floor(score * 256.0)), 0, 255);
  return "rgb(" + std::to_string(i) + ",0," + std::to_string(255 - i) + ")";
}

std::string score_map_svg(const PointCloud& pc, std::span<const double> scores, std::size_t top_b,
                          const std::string& title) {
  if (scores.size() != pc.size()) throw std::invalid_argument("score_map_svg: one score per point required");
  constexpr double panel = 260, margin = 20, top = 40;
  const double width = 3 * panel + 4 * margin, height = panel + top + margin + 30;
  const int axes[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  const char* names[3] = {"xy", "xz", "yz"};

  auto ranked = rank_by_score(scores);
  ranked.resize(std::min(top_b, ranked.size()));
  std::vector<char> critical(pc.size(), 0);
  for (auto i : ranked) critical[i] = 1;

  // Draw low scores first so the critical points end up on top.
  std::vector<std::size_t> order(pc.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double extent = 1e-12;
  for (const auto& p : pc.points)
    for (double v : p) extent = std::max(extent, std::abs(v));

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" +
                  num(height) + "\" viewBox=\"0 0 " + num(width) + " " + num(height) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(margin) + "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" + escape(title) +
       "</text>\n";
  for (int k = 0; k < 3; ++k) {
    const double x0 = margin + k * (panel + margin), y0 = top;
    s += "<g>\n<rect x=\"" + num(x0) + "\" y=\"" + num(y0) + "\" width=\"" + num(panel) + "\" height=\"" +
         num(panel) + "\" fill=\"none\" stroke=\"#999\"/>\n";
    s += "<text x=\"" + num(x0 + 4) + "\" y=\"" + num(y0 + 14) + "\" font-family=\"sans-serif\" font-size=\"11\">" +
         names[k] + "</text>\n";
    auto px = [&](const Point3& p) {
      const double u = p[axes[k][0]] / extent, v = p[axes[k][1]] / extent;
      return std::pair{x0 + panel * (0.5 + 0.45 * u), y0 + panel * (0.5 - 0.45 * v)};
    };
    for (auto i : order) {
      auto [cx, cy] = px(pc.points[i]);
      s += "<circle cx=\"" + num(cx) + "\" cy=\"" + num(cy) + "\" r=\"2\" fill=\"" + ramp_color(scores[i]) + "\"/>\n";
    }
    for (auto i : order) {
      if (!critical[i]) continue;
      auto [cx, cy] = px(pc.points[i]);
      s += "<circle cx=\"" + num(cx) + "\" cy=\"" + num(cy) +
           "\" r=\"4.5\" fill=\"none\" stroke=\"black\" stroke-width=\"0.8\"/>\n";
    }
    s += "</g>\n";
  }
  // colour bar
  const double bar_y = top + panel + 12, bar_w = 256;
  for (int i = 0; i < 256; i += 4)
    s += "<rect x=\"" + num(margin + i * bar_w / 256) + "\" y=\"" + num(bar_y) + "\" width=\"" + num(4 * bar_w / 256) +
         "\" height=\"8\" fill=\"" + ramp_color((i + 0.5) / 256.0) + "\"/>\n";
  s += "<text x=\"" + num(margin + bar_w + 8) + "\" y=\"" + num(bar_y + 8) +
       "\" font-family=\"sans-serif\" font-size=\"10\">score 0 to 1; circled: top " + std::to_string(ranked.size()) +
       "</text>\n";
  s += "</svg>\n";
  return s;
}

std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          std::span<const Curve> curves) {
  constexpr double w = 640, h = 400, left = 60, right = 170, top = 40, bottom = 50;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& c : curves) {
    if (c.x.size() != c.y.size()) throw std::invalid_argument("line_plot_svg: x and y lengths differ");
    for (std::size_t i = 0; i < c.x.size(); ++i) {
      if (first) {
        xmin = xmax = c.x[i];
        ymin = ymax = c.y[i];
        first = false;
      }
      xmin = std::min(xmin, c.x[i]);
      xmax = std::max(xmax, c.x[i]);
      ymin = std::min(ymin, c.y[i]);
      ymax = std::max(ymax, c.y[i]);
    }
  }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  const double pw = w - left - right, ph = h - top - bottom;
  auto sx = [&](double x) { return left + pw * (x - xmin) / (xmax - xmin); };
  auto sy = [&](double y) { return top + ph * (1 - (y - ymin) / (ymax - ymin)); };

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" + num(h) +
                  "\" viewBox=\"0 0 " + num(w) + " " + num(h) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(left) + "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" + escape(title) + "</text>\n";
  s += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
       "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = xmin + (xmax - xmin) * t / 4, yv = ymin + (ymax - ymin) * t / 4;
    s += "<text x=\"" + num(sx(xv)) + "\" y=\"" + num(top + ph + 16) +
         "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">" + num(xv) + "</text>\n";
    s += "<text x=\"" + num(left - 6) + "\" y=\"" + num(sy(yv) + 3) +
         "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">" + num(yv) + "</text>\n";
  }
  s += "<text x=\"" + num(left + pw / 2) + "\" y=\"" + num(h - 12) +
       "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">" + escape(x_label) + "</text>\n";
  s += "<text x=\"14\" y=\"" + num(top + ph / 2) + "\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 " +
       num(top + ph / 2) + ")\" text-anchor=\"middle\">" + escape(y_label) + "</text>\n";
  for (std::size_t c = 0; c < curves.size(); ++c) {
    const char* color = kPalette[c % std::size(kPalette)];
    const std::string dash = (c / std::size(kPalette)) % 2 ? " stroke-dasharray=\"5,3\"" : "";
    std::string pts;
    for (std::size_t i = 0; i < curves[c].x.size(); ++i)
      pts += (i ? " " : "") + num(sx(curves[c].x[i])) + "," + num(sy(curves[c].y[i]));
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\"" + dash + " points=\"" +
         pts + "\"/>\n";
    for (std::size_t i = 0; i < curves[c].x.size(); ++i)
      s += "<circle cx=\"" + num(sx(curves[c].x[i])) + "\" cy=\"" + num(sy(curves[c].y[i])) + "\" r=\"2.5\" fill=\"" +
           color + "\"/>\n";
    const double ly = top + 14 + 16 * static_cast<double>(c);
    s += "<line x1=\"" + num(w - right + 10) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" + num(w - right + 30) +
         "\" y2=\"" + num(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"1.5\"" + dash + "/>\n";
    s += "<text x=\"" + num(w - right + 36) + "\" y=\"" + num(ly) + "\" font-family=\"sans-serif\" font-size=\"11\">" +
         escape(curves[c].label) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace infocons
