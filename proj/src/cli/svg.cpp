#include "toa/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "toa/io.hpp"
#include "toa/linalg.hpp"

namespace toa::svg {
namespace {

std::string escape(const std::string& s) {
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

}  // namespace

Matrix downsample_extremes(const Matrix& m, std::size_t max_cells) {
  if (max_cells == 0) throw ConfigError("heatmap cell budget must be positive");
  const std::size_t br = (m.rows() + max_cells - 1) / max_cells;
  const std::size_t bc = (m.cols() + max_cells - 1) / max_cells;
  if (br <= 1 && bc <= 1) return m;
  const std::size_t rows = (m.rows() + br - 1) / br, cols = (m.cols() + bc - 1) / bc;
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      double best = 0.0;
      for (std::size_t i = r * br; i < std::min(m.rows(), (r + 1) * br); ++i)
        for (std::size_t j = c * bc; j < std::min(m.cols(), (c + 1) * bc); ++j)
          if (std::abs(m(i, j)) > std::abs(best)) best = m(i, j);
      out(r, c) = best;
    }
  return out;
}

std::string diverging_color(double v, double scale) {
  double t = scale > 0.0 ? std::clamp(v / scale, -1.0, 1.0) : 0.0;
  // Interpolate from white toward a saturated endpoint.
  const int hi[3] = {t >= 0.0 ? 178 : 33, t >= 0.0 ? 24 : 102, t >= 0.0 ? 43 : 172};
  const double a = std::abs(t);
  char buf[8];
  auto ch = [&](int end) { return static_cast<int>(std::lround(255.0 + (end - 255.0) * a)); };
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", ch(hi[0]), ch(hi[1]), ch(hi[2]));
  return buf;
}

std::string heatmap(const Matrix& m, const std::string& title, std::size_t max_cells) {
  if (m.empty()) throw ShapeError("heatmap: empty matrix");
  const double scale = max_abs(m);
  const Matrix cells = downsample_extremes(m, max_cells);
  const double cell = std::max(1.0, 448.0 / static_cast<double>(std::max(cells.rows(), cells.cols())));
  const double top = 28.0;
  const double width = cell * static_cast<double>(cells.cols());
  const double height = top + cell * static_cast<double>(cells.rows()) + 22.0;

  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\" shape-rendering=\"crispEdges\">\n"
      << "<title>" << escape(title) << "</title>\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
      << "\" fill=\"#ffffff\"/>\n"
      << "<text x=\"4\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">" << escape(title)
      << "</text>\n<g transform=\"translate(0," << top << ")\">\n";
  for (std::size_t r = 0; r < cells.rows(); ++r)
    for (std::size_t c = 0; c < cells.cols(); ++c) {
      const std::string color = diverging_color(cells(r, c), scale);
      if (color == "#ffffff") continue;
      out << "<rect x=\"" << cell * static_cast<double>(c) << "\" y=\""
          << cell * static_cast<double>(r) << "\" width=\"" << cell << "\" height=\"" << cell
          << "\" fill=\"" << color << "\"/>\n";
    }
  out << "</g>\n<text x=\"4\" y=\"" << height - 6.0
      << "\" font-family=\"sans-serif\" font-size=\"11\">scale: +/- " << io::format_double(scale)
      << " (" << m.rows() << "x" << m.cols() << ")</text>\n</svg>\n";
  return out.str();
}

}  // namespace toa::svg
