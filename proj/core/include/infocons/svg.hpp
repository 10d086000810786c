#pragma once

// Deterministic SVG output: score-map projections and line plots. Numbers are
// printed with fixed precision and nothing time-dependent is emitted, so the
// same inputs always give the same bytes.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "infocons/shapes.hpp"

namespace infocons {

// 256-step ramp: score s maps to step i = min(255, floor(256 s)) and colour
// rgb(i, 0, 255 - i), so 0 is pure blue and 1 pure red.
std::string ramp_color(double score);

// Three orthographic scatter panels (xy, xz, yz) of the cloud coloured by
// score, with the top_b highest-scored points circled.
std::string score_map_svg(const PointCloud& pc, std::span<const double> scores, std::size_t top_b,
                          const std::string& title);

struct Curve {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          std::span<const Curve> curves);

}  // namespace infocons
