#pragma once

#include <cstddef>
#include <vector>

#include "toa/matrix.hpp"
#include "toa/model.hpp"

namespace toa::synthetic {

struct HeadOperator {
  std::size_t layer = 0;
  std::size_t head = 0;
  Matrix mixing;  // L x L
};

// Effective mixing matrix of every head, evaluated on the normalized tokens
// that reach each attention layer when the model reads probe x (1 x L).
// No SOR masks are applied.
std::vector<HeadOperator> extract_operators(const ModelParams& params, const Matrix& x);

// Magnitude spectrum of one operator row (1 x L).
Matrix spectral_response(const Matrix& row);

// Fraction of spectral energy in bins [0, cutoff) averaged over the rows.
double low_band_energy_fraction(const Matrix& op, std::size_t cutoff);

// Smallest entry of the matrix.
double min_entry(const Matrix& m);

}  // namespace toa::synthetic
