#pragma once

#include <cstddef>
#include <string>

#include "toa/matrix.hpp"

namespace toa::svg {

// Reduces a matrix to at most max_cells x max_cells by blocks, keeping the
// signed entry of largest magnitude in each block so isolated extremes (and
// both signs) survive the downsampling.
Matrix downsample_extremes(const Matrix& m, std::size_t max_cells);

// Diverging color for v in [-scale, scale]: blue for negative, red for
// positive, white at zero. Returns "#rrggbb".
std::string diverging_color(double v, double scale);

// Heatmap with a symmetric color scale at max |entry| (of the full matrix).
std::string heatmap(const Matrix& m, const std::string& title, std::size_t max_cells = 224);

}  // namespace toa::svg
