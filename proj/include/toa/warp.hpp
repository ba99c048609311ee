#pragma once

namespace toa::synthetic {

// Time warps of the three regimes, for sample index t of a length-L window:
//   z = 0: t
//   z = 1: t + 20 sin(4 pi t / L)
//   z = 2: t + 40 (t / L)^2
// t may run past L - 1 when a continuation is evaluated. Throws ConfigError
// for z outside {0, 1, 2}, negative t or nonpositive L.
double warp(double t, int z, double length);

}  // namespace toa::synthetic
