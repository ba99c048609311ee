#include "toa/warp.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "toa/matrix.hpp"

namespace toa::synthetic {

double warp(double t, int z, double length) {
  if (!(length > 0.0)) throw ConfigError("warp: length must be positive");
  if (!(t >= 0.0) || !std::isfinite(t)) throw ConfigError("warp: time index must be >= 0");
  switch (z) {
    case 0: return t;
    case 1: return t + 20.0 * std::sin(4.0 * std::numbers::pi * t / length);
    case 2: {
      const double r = t / length;
      return t + 40.0 * r * r;
    }
    default: throw ConfigError("warp: regime " + std::to_string(z) + " is not one of 0, 1, 2");
  }
}

}  // namespace toa::synthetic
