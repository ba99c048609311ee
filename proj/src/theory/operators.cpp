#include "toa/operators.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "toa/linalg.hpp"
#include "toa/warp.hpp"

namespace toa::theory {
namespace {

void require_finite(const Matrix& m, const char* what) {
  if (!all_finite(m)) throw NumericError(std::string(what) + ": operator has non-finite entries");
}

// Columns cos(w_k s(t) + phase), sin(w_k s(t) + phase) for t in [first, first + count).
template <class TimeMap>
Matrix quadrature_basis(std::size_t first, std::size_t count, const std::vector<double>& periods,
                        double phase, TimeMap time) {
  Matrix phi(count, 2 * periods.size());
  for (std::size_t i = 0; i < count; ++i) {
    const double s = time(static_cast<double>(first + i));
    for (std::size_t k = 0; k < periods.size(); ++k) {
      const double w = 2.0 * std::numbers::pi / periods[k];
      phi(i, 2 * k) = std::cos(w * s + phase);
      phi(i, 2 * k + 1) = std::sin(w * s + phase);
    }
  }
  return phi;
}

void check_periods(const std::vector<double>& periods, std::size_t length, std::size_t horizon) {
  if (periods.empty()) throw ConfigError("at least one period is required");
  if (horizon == 0) throw ConfigError("horizon must be positive");
  if (length < 2 * periods.size())
    throw ConfigError("length " + std::to_string(length) + " is shorter than twice the " +
                      std::to_string(periods.size()) + " periods");
  for (double p : periods)
    if (!(p > 0.0) || !std::isfinite(p)) throw ConfigError("periods must be positive");
}

nlohmann::json periods_json(const std::vector<double>& periods) {
  return nlohmann::json(periods);
}

void check_row_stochastic(const Matrix& g) {
  if (g.rows() != g.cols() || g.empty())
    throw ConfigError("smoothing kernel must be square, got " + g.shape_string());
  for (std::size_t r = 0; r < g.rows(); ++r) {
    double s = 0.0;
    for (double v : g.row(r)) {
      if (v < 0.0) throw ConfigError("smoothing kernel has a negative entry in row " + std::to_string(r));
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9)
      throw ConfigError("smoothing kernel row " + std::to_string(r) + " sums to " +
                        std::to_string(s));
  }
}

double window_value(const AtomSpec& spec, double offset) {
  switch (spec.window) {
    case Window::Gaussian:
      if (std::abs(offset) > 3.0 * spec.scale) return 0.0;
      return std::exp(-0.5 * offset * offset / (spec.scale * spec.scale));
    case Window::Boxcar:
      return std::abs(offset) <= spec.scale ? 1.0 : 0.0;
  }
  return 0.0;
}

}  // namespace

std::string_view to_string(CaseLabel label) {
  switch (label) {
    case CaseLabel::HarmonicContinuation: return "HarmonicContinuation";
    case CaseLabel::Residualization: return "Residualization";
    case CaseLabel::LatentDemixing: return "LatentDemixing";
    case CaseLabel::PhaseWarped: return "PhaseWarped";
    case CaseLabel::LocalQuadrature: return "LocalQuadrature";
    case CaseLabel::PatchDifferencing: return "PatchDifferencing";
    case CaseLabel::ChannelDemixing: return "ChannelDemixing";
  }
  return "Unknown";
}

CanonicalOperator build_harmonic_continuation(std::size_t length, std::size_t horizon,
                                              const std::vector<double>& periods) {
  check_periods(periods, length, horizon);
  for (double p : periods) {
    const double ratio = static_cast<double>(length) / p;
    if (std::abs(ratio - std::round(ratio)) > 1e-9)
      throw ConfigError("period " + std::to_string(p) + " does not divide length " +
                        std::to_string(length));
  }
  auto identity = [](double t) { return t; };
  const Matrix obs = quadrature_basis(0, length, periods, 0.0, identity);
  const Matrix fcast = quadrature_basis(length, horizon, periods, 0.0, identity);
  CanonicalOperator op;
  op.matrix = lstsq_pinv_apply(obs, fcast);
  require_finite(op.matrix, "harmonic continuation");
  op.label = CaseLabel::HarmonicContinuation;
  op.construction = {{"length", length}, {"horizon", horizon}, {"periods", periods_json(periods)}};
  return op;
}

Matrix moving_average_kernel(std::size_t n, std::size_t width) {
  if (n == 0) throw ConfigError("moving average: n must be positive");
  if (width == 0 || width % 2 == 0 || width > n)
    throw ConfigError("moving average: width must be odd and at most n");
  Matrix g(n, n);
  const std::size_t half = width / 2;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < width; ++j) g(r, (r + n - half + j) % n) += 1.0 / static_cast<double>(width);
  return g;
}

Matrix gaussian_kernel(std::size_t n, double bandwidth) {
  if (n == 0) throw ConfigError("gaussian kernel: n must be positive");
  if (!(bandwidth > 0.0)) throw ConfigError("gaussian kernel: bandwidth must be positive");
  Matrix g(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double raw = std::abs(static_cast<double>(r) - static_cast<double>(c));
      const double d = std::min(raw, static_cast<double>(n) - raw);
      g(r, c) = std::exp(-0.5 * d * d / (bandwidth * bandwidth));
      total += g(r, c);
    }
    for (double& v : g.row(r)) v /= total;
  }
  return g;
}

CanonicalOperator build_residualization(const Matrix& g) {
  check_row_stochastic(g);
  CanonicalOperator op;
  op.matrix = Matrix::identity(g.rows()) - g;
  op.label = CaseLabel::Residualization;
  op.construction = {{"n", g.rows()}, {"smoother", "custom"}};
  op.expects_violation = !(g == Matrix::identity(g.rows()));
  return op;
}

CanonicalOperator build_latent_demixing(const Matrix& a) {
  if (a.rows() == 0 || a.cols() == 0 || a.cols() > a.rows())
    throw ConfigError("mixing matrix must be C x r with 0 < r <= C, got " + a.shape_string());
  const Matrix gram = matmul_tn(a, a);
  CanonicalOperator op;
  op.matrix = matmul(a, solve(gram, transpose(a)));
  require_finite(op.matrix, "latent demixing");
  op.label = CaseLabel::LatentDemixing;
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < a.rows(); ++r)
    rows.push_back(std::vector<double>(a.row(r).begin(), a.row(r).end()));
  op.construction = {{"channels", a.rows()}, {"rank", a.cols()}, {"mixing", rows}};
  // 1 in col(A) is the exceptional all-rows-pass case.
  const Matrix ones(a.rows(), 1, 1.0);
  op.expects_violation = max_abs_diff(matmul(op.matrix, ones), ones) > 1e-9;
  return op;
}

CanonicalOperator build_channel_demixing(const Matrix& a) {
  CanonicalOperator op = build_latent_demixing(a);
  op.label = CaseLabel::ChannelDemixing;
  return op;
}

CanonicalOperator build_phase_warped(std::size_t length, std::size_t horizon,
                                     const std::vector<double>& periods, double phase, int warp) {
  check_periods(periods, length, horizon);
  const double len = static_cast<double>(length);
  auto tau = [&](double t) { return synthetic::warp(t, warp, len); };
  const Matrix obs = quadrature_basis(0, length, periods, phase, tau);
  const Matrix fcast = quadrature_basis(length, horizon, periods, phase, tau);
  if (rank(obs) < obs.cols())
    throw SingularMatrixError("warped quadrature basis is rank deficient");
  CanonicalOperator op;
  op.matrix = lstsq_pinv_apply(obs, fcast);
  require_finite(op.matrix, "phase-warped continuation");
  op.label = CaseLabel::PhaseWarped;
  op.construction = {{"length", length},
                     {"horizon", horizon},
                     {"periods", periods_json(periods)},
                     {"phase", phase},
                     {"warp", warp}};
  return op;
}

Matrix quadrature_atom(const AtomSpec& spec) {
  if (spec.n == 0) throw ConfigError("atom length must be positive");
  if (!(spec.scale > 0.0)) throw ConfigError("atom window scale must be positive");
  Matrix psi(spec.n, 1);
  std::vector<std::size_t> support;
  double mean = 0.0;
  for (std::size_t t = 0; t < spec.n; ++t) {
    const double off = static_cast<double>(t) - spec.center;
    const double w = window_value(spec, off);
    if (w <= 0.0) continue;
    psi(t, 0) = w * std::cos(spec.omega * off + spec.phase);
    support.push_back(t);
    mean += psi(t, 0);
  }
  if (support.empty()) throw ConfigError("atom window has no support inside the sequence");
  mean /= static_cast<double>(support.size());
  for (std::size_t t : support) psi(t, 0) -= mean;
  return psi;
}

CanonicalOperator build_local_quadrature(const AtomSpec& spec) {
  AtomSpec companion = spec;
  companion.phase += std::numbers::pi / 2.0;
  const Matrix psi = quadrature_atom(spec);
  const Matrix psi2 = quadrature_atom(companion);
  const double n1 = sum(hadamard(psi, psi));
  const double n2 = sum(hadamard(psi2, psi2));
  const double scale = std::max(n1, n2);
  if (n1 <= 1e-300 || n2 <= 1e-300 || n1 < 1e-24 * scale || n2 < 1e-24 * scale)
    throw ConfigError("quadrature atom has zero norm");
  CanonicalOperator op;
  op.matrix = matmul_nt(psi, psi) + matmul_nt(psi2, psi2);
  op.matrix *= 2.0 / (n1 + n2);
  op.label = CaseLabel::LocalQuadrature;
  const double cross = sum(hadamard(psi, psi2));
  const bool exact = std::abs(cross) <= 1e-12 * scale && std::abs(n1 - n2) <= 1e-12 * scale;
  op.construction = {{"n", spec.n},
                     {"center", spec.center},
                     {"scale", spec.scale},
                     {"omega", spec.omega},
                     {"phase", spec.phase},
                     {"window", spec.window == Window::Gaussian ? "gaussian" : "boxcar"},
                     {"exact_projector", exact}};
  return op;
}

CanonicalOperator build_patch_differencing(std::size_t n, std::size_t target,
                                           std::size_t reference) {
  if (target >= n || reference >= n)
    throw ConfigError("patch differencing: index out of range for n = " + std::to_string(n));
  if (target == reference) throw ConfigError("patch differencing: target equals reference");
  CanonicalOperator op;
  op.matrix = Matrix::identity(n);
  op.matrix(target, reference) = -1.0;
  op.label = CaseLabel::PatchDifferencing;
  op.construction = {{"n", n}, {"target", target}, {"reference", reference}};
  return op;
}

std::size_t SimplexReport::violations() const {
  return static_cast<std::size_t>(
      std::count_if(rows.begin(), rows.end(), [](const RowVerdict& r) { return !r.in_simplex; }));
}

SimplexReport simplex_report(const Matrix& t, double tolerance) {
  SimplexReport report;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    RowVerdict v;
    auto row = t.row(r);
    v.min_entry = row.empty() ? 0.0 : *std::min_element(row.begin(), row.end());
    for (double x : row) v.row_sum += x;
    v.in_simplex = v.min_entry >= -tolerance && std::abs(v.row_sum - 1.0) <= tolerance;
    report.rows.push_back(v);
  }
  return report;
}

}  // namespace toa::theory
