#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "toa/matrix.hpp"

namespace toa::theory {

enum class CaseLabel {
  HarmonicContinuation,
  Residualization,
  LatentDemixing,
  PhaseWarped,
  LocalQuadrature,
  PatchDifferencing,
  ChannelDemixing,
};

std::string_view to_string(CaseLabel label);

// A target sequence operator together with the inputs that produced it.
struct CanonicalOperator {
  Matrix matrix;
  CaseLabel label = CaseLabel::HarmonicContinuation;
  nlohmann::json construction;
  // True when some row is expected to fall outside the simplex.
  bool expects_violation = true;

  bool square() const { return matrix.rows() == matrix.cols(); }
};

// Least-squares continuation in a quadrature basis: T x L operator
// Phi_fcast pinv(Phi_obs) with observation indices 0..L-1 and forecast
// indices L..L+T-1. Every period must divide L and L >= 2 * |periods|.
CanonicalOperator build_harmonic_continuation(std::size_t length, std::size_t horizon,
                                              const std::vector<double>& periods);

// Smoothing kernels for the residualization case. Both are circular and
// row-stochastic; width must be odd.
Matrix moving_average_kernel(std::size_t n, std::size_t width);
Matrix gaussian_kernel(std::size_t n, double bandwidth);

// I - G for a nonnegative row-stochastic G.
CanonicalOperator build_residualization(const Matrix& g);

// Orthogonal projector A (A^T A)^{-1} A^T onto the columns of A (C x r).
CanonicalOperator build_latent_demixing(const Matrix& a);
// Same projector, labelled as a channel-mixing operator.
CanonicalOperator build_channel_demixing(const Matrix& a);

// Least-squares continuation in the warped basis cos(w tau(t) + phi),
// sin(w tau(t) + phi). Rank is checked numerically.
CanonicalOperator build_phase_warped(std::size_t length, std::size_t horizon,
                                     const std::vector<double>& periods, double phase, int warp);

enum class Window { Gaussian, Boxcar };

struct AtomSpec {
  std::size_t n = 0;
  double center = 0.0;
  double scale = 1.0;  // Gaussian std (support +-3 scale) or boxcar half-width
  double omega = 0.0;
  double phase = 0.0;
  Window window = Window::Gaussian;
};

// Windowed cosine atom w(t - c) cos(omega (t - c) + phase), made zero-mean by
// subtracting its mean over the window support.
Matrix quadrature_atom(const AtomSpec& spec);

// Rank-2 projector onto the atom pair at phase and phase + pi/2:
//   T = 2 (psi psi^T + psi' psi'^T) / (|psi|^2 + |psi'|^2).
// This is the orthogonal projector when psi and psi' are orthogonal with
// equal norms (construction["exact_projector"] records whether they are).
CanonicalOperator build_local_quadrature(const AtomSpec& spec);

// Identity with an extra -1 at (target, reference): row target computes
// h_target - h_reference.
CanonicalOperator build_patch_differencing(std::size_t n, std::size_t target,
                                           std::size_t reference);

// ---- simplex membership -----------------------------------------------------

inline constexpr double kSimplexTolerance = 1e-9;

struct RowVerdict {
  double min_entry = 0.0;
  double row_sum = 0.0;
  bool in_simplex = false;
};

struct SimplexReport {
  std::vector<RowVerdict> rows;

  std::size_t violations() const;
  bool all_in_simplex() const { return violations() == 0; }
};

SimplexReport simplex_report(const Matrix& t, double tolerance = kSimplexTolerance);
inline SimplexReport simplex_report(const CanonicalOperator& t) { return simplex_report(t.matrix); }

// ---- export -------------------------------------------------------------------

// Case metadata plus the operator (bit-exact encoding alongside decimals).
nlohmann::json to_json(const CanonicalOperator& op);
nlohmann::json to_json(const SimplexReport& report);

// Writes <stem>.csv (row-major, 17 significant digits), <stem>.json and
// <stem>.simplex.json.
void export_operator(const CanonicalOperator& op, const std::filesystem::path& stem);

}  // namespace toa::theory
