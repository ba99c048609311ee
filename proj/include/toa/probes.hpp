#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "toa/attention.hpp"
#include "toa/operators.hpp"

namespace toa::theory {

// ---- small-scale collapse ---------------------------------------------------

struct CollapseStep {
  double alpha = 0.0;
  Matrix kernel;         // softmax of the unscaled score of alpha * H
  double max_deviation;  // max |kernel - 1/N|
};

// Kernels of the baseline head on alpha * H for each alpha, with unscaled
// logits (so the logits scale as alpha^2).
std::vector<CollapseStep> collapse_probe(const attention::HeadParams& head, const Matrix& h,
                                         const std::vector<double>& alphas);

// ---- exact realization by a TOA head -----------------------------------------

// A TOA head whose forward pass applies T* to a scalar value channel.
//
// Probe tokens are H = [v | I_N] (d = N + 1): column 0 carries the values and
// the remaining columns a one-hot position code. With W_Q = W_K = c [0 | I_N]
// the raw score is A = c^2 I, and W_V = e_0^T returns v. Scores are unscaled.
//  - toa-relu: S1 = I makes the left factor ReLU(c^2 I) = c^2 I, so
//    M2 = T* / c^2 - I.
//  - toa-gated: the right branch is zeroed, giving a uniform gate ln 2, and
//    the left branch is as for toa-relu; M2 = T* / (c^2 ln 2) - I.
//  - toa-softmax: the kernel of c^2 I is F = a I + b 1 1^T with
//    b = 1 / (e^{c^2} + N - 1) and a = (e^{c^2} - 1) b; F is invertible, so
//    M2 = F^{-1} T* - I.
// A constant score (W_Q = W_K = 0) cannot work: it makes ReLU vanish and
// softmax rank one, which is why the position code is part of the probe.
struct Realization {
  attention::Variant variant = attention::Variant::ToaRelu;
  std::optional<attention::HeadParams> head;  // empty for non-square T*
  Matrix post_mixer;                          // S2 (or T* itself when non-square)
  bool pipeline_checked = false;
  std::string note;
};

Realization realize_with_toa(const CanonicalOperator& t,
                             attention::Variant variant = attention::Variant::ToaRelu);

// [v | I_N] for a column of values v (N x 1).
Matrix realization_tokens(const Matrix& v);

// Output of the realized head on values v (N x 1).
Matrix realized_apply(const Realization& r, const Matrix& v);

// Max abs error of the realized head against T* v over `count` standard
// normal vectors.
double realization_error(const Realization& r, const CanonicalOperator& t, std::size_t count,
                         std::uint64_t seed);

// ---- impossibility gap --------------------------------------------------------

struct GapConfig {
  std::size_t steps = 2000;
  std::size_t restarts = 5;
  std::size_t batch = 16;
  std::size_t eval_vectors = 256;
  double learning_rate = 1e-2;
  std::uint64_t seed = 7;
};

struct GapResult {
  double baseline_rel_error = 0.0;  // best restart
  std::vector<double> restart_errors;
  double toa_abs_error = 0.0;
};

// Fits a baseline softmax head to v -> T* v with Adam on the same probe
// tokens. Values stay the scalar channel v; only the query and key maps
// train, with unscaled scores. Returns the relative error
// sqrt(sum |out - T* v|^2 / sum |T* v|^2) on fresh vectors.
GapResult impossibility_gap(const CanonicalOperator& t, const GapConfig& config = {});

// ---- shared suites --------------------------------------------------------------

struct NamedOperator {
  std::string name;
  CanonicalOperator op;
};

// The square canonical operators used by the realization and gap probes.
std::vector<NamedOperator> square_operator_suite();

// A named pass/fail check with its measured values.
struct ProbeResult {
  std::string name;
  bool pass = false;
  nlohmann::json measured;
};

// which: all, caseA, caseB, caseC, caseD, caseE, prop1, realization, gap.
// Throws ConfigError for an unknown name.
std::vector<ProbeResult> run_theory(const std::string& which);
nlohmann::json theory_report(const std::vector<ProbeResult>& results);

// Individual probes (also used by the acceptance run).
ProbeResult probe_collapse(std::size_t instances = 50, double alpha = 1e-6);
ProbeResult probe_case_a();
ProbeResult probe_case_b();
ProbeResult probe_case_c();
ProbeResult probe_case_d();
ProbeResult probe_case_e();
ProbeResult probe_realization(std::size_t vectors = 100);
ProbeResult probe_gap(const GapConfig& config = {});

}  // namespace toa::theory
