#include "toa/probes.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "toa/adam.hpp"
#include "toa/linalg.hpp"
#include "toa/warp.hpp"

namespace toa::theory {
namespace {

using attention::HeadParams;
using attention::Variant;

Matrix gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

// [0 | c I_N], N x (N + 1).
Matrix position_selector(std::size_t n, double c) {
  Matrix w(n, n + 1);
  for (std::size_t i = 0; i < n; ++i) w(i, i + 1) = c;
  return w;
}

Matrix value_selector(std::size_t n) {
  Matrix w(1, n + 1);
  w(0, 0) = 1.0;
  return w;
}

double max_row_sum_abs(const Matrix& m) {
  double worst = 0.0;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    for (double v : m.row(r)) s += v;
    worst = std::max(worst, std::abs(s));
  }
  return worst;
}

// cos(2 pi / period * tau(t) + phase) for t in [first, first + count).
Matrix cosine_column(std::size_t first, std::size_t count, double period, double phase,
                     int warp_id, double length) {
  Matrix x(count, 1);
  for (std::size_t i = 0; i < count; ++i) {
    const double s = synthetic::warp(static_cast<double>(first + i), warp_id, length);
    x(i, 0) = std::cos(2.0 * std::numbers::pi / period * s + phase);
  }
  return x;
}

HeadParams random_baseline_head(std::size_t d, std::size_t d_h, std::mt19937_64& rng) {
  attention::Dims dims{1, d, 1, d_h, d};
  HeadParams head = attention::init_multihead(Variant::SoftmaxBaseline, dims, rng).heads.front();
  return head;
}

bool all_rows_fail(const Matrix& m) {
  return simplex_report(m).violations() == m.rows();
}

}  // namespace

// ---- collapse -------------------------------------------------------------------

std::vector<CollapseStep> collapse_probe(const HeadParams& head, const Matrix& h,
                                         const std::vector<double>& alphas) {
  const double uniform = 1.0 / static_cast<double>(h.rows());
  std::vector<CollapseStep> steps;
  for (double alpha : alphas) {
    if (!(alpha >= 0.0)) throw ConfigError("collapse probe: alphas must be nonnegative");
    CollapseStep s;
    s.alpha = alpha;
    s.kernel = softmax_rows(attention::score(alpha * h, head));
    s.max_deviation = 0.0;
    for (double v : s.kernel.values()) s.max_deviation = std::max(s.max_deviation, std::abs(v - uniform));
    steps.push_back(std::move(s));
  }
  return steps;
}

// ---- realization ----------------------------------------------------------------

Matrix realization_tokens(const Matrix& v) {
  if (v.cols() != 1) throw ShapeError("realization values must be N x 1, got " + v.shape_string());
  const std::size_t n = v.rows();
  Matrix h(n, n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    h(i, 0) = v(i, 0);
    h(i, i + 1) = 1.0;
  }
  return h;
}

Realization realize_with_toa(const CanonicalOperator& t, Variant variant) {
  if (!attention::has_offsets(variant))
    throw ConfigError("realize_with_toa needs a TOA variant, not the softmax baseline");
  Realization r;
  r.variant = variant;
  if (!t.square()) {
    r.post_mixer = t.matrix;
    r.note = "operator is " + t.matrix.shape_string() +
             "; returned as a post-mixer alone, forward-pipeline check skipped";
    return r;
  }
  const std::size_t n = t.matrix.rows();
  const Matrix identity = Matrix::identity(n);
  HeadParams head;
  head.w_v = value_selector(n);
  switch (variant) {
    case Variant::ToaRelu:
      head.w_q = position_selector(n, 1.0);
      head.w_k = position_selector(n, 1.0);
      head.m1 = Matrix(n, n);
      r.post_mixer = t.matrix;
      break;
    case Variant::ToaGated: {
      attention::GatedProjections g;
      g.w_q_left = position_selector(n, 1.0);
      g.w_k_left = position_selector(n, 1.0);
      g.w_q_right = Matrix(n, n + 1);
      g.w_k_right = Matrix(n, n + 1);
      g.m1_left = Matrix(n, n);
      g.m1_right = Matrix(n, n);
      head.gated = std::move(g);
      r.post_mixer = t.matrix * (1.0 / std::log(2.0));
      break;
    }
    case Variant::ToaSoftmax: {
      head.w_q = position_selector(n, 1.0);
      head.w_k = position_selector(n, 1.0);
      head.m1 = Matrix(n, n);
      // F = a I + b 1 1^T, F^{-1} = (I - b / (a + N b) 1 1^T) / a.
      const double e = std::exp(1.0);
      const double b = 1.0 / (e + static_cast<double>(n) - 1.0);
      const double a = (e - 1.0) * b;
      const double shift = b / (a + static_cast<double>(n) * b);
      Matrix f_inv = identity - Matrix(n, n, shift);
      f_inv *= 1.0 / a;
      r.post_mixer = matmul(f_inv, t.matrix);
      break;
    }
    case Variant::SoftmaxBaseline: break;
  }
  head.m2 = r.post_mixer - identity;
  r.head = std::move(head);
  r.pipeline_checked = true;
  return r;
}

Matrix realized_apply(const Realization& r, const Matrix& v) {
  if (!r.head) return matmul(r.post_mixer, v);
  auto ops = std::make_shared<const attention::HeadOperators>(attention::materialize(*r.head, nullptr));
  return attention::head_forward(realization_tokens(v), *r.head, r.variant,
                                 attention::ScoreOptions::unscaled(), ops, nullptr);
}

double realization_error(const Realization& r, const CanonicalOperator& t, std::size_t count,
                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const Matrix v = gaussian(t.matrix.cols(), 1, rng);
    worst = std::max(worst, max_abs_diff(realized_apply(r, v), matmul(t.matrix, v)));
  }
  return worst;
}

// ---- impossibility gap ------------------------------------------------------------

namespace {

double baseline_fit(const Matrix& target, const GapConfig& cfg, std::uint64_t seed) {
  const std::size_t n = target.rows();
  std::mt19937_64 rng(seed);
  attention::Dims dims{n, n + 1, 1, n, 1};
  HeadParams head = attention::init_multihead(Variant::SoftmaxBaseline, dims, rng).heads.front();
  // Values stay the scalar first coordinate; only the query/key maps learn.
  head.w_v = Matrix(1, n + 1);
  head.w_v(0, 0) = 1.0;
  const auto options = attention::ScoreOptions::unscaled();
  AdamConfig adam_cfg;
  adam_cfg.learning_rate = cfg.learning_rate;
  Adam adam(adam_cfg, {&head.w_q, &head.w_k});

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    HeadParams grads = attention::zeros_like(head);
    std::vector<Matrix> vs, ys, outs;
    std::vector<attention::HeadCache> caches;
    double denom = 0.0;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      vs.push_back(gaussian(n, 1, rng));
      ys.push_back(matmul(target, vs.back()));
      denom += sum(hadamard(ys.back(), ys.back()));
    }
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const Matrix h = realization_tokens(vs[b]);
      auto [out, cache] = attention::forward_softmax_baseline(h, head, options);
      Matrix d_out = out - ys[b];
      d_out *= 2.0 / denom;
      attention::head_backward(d_out, cache, h, head, grads);
    }
    adam.step({&grads.w_q, &grads.w_k});
  }

  double err = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < cfg.eval_vectors; ++i) {
    const Matrix v = gaussian(n, 1, rng);
    const Matrix y = matmul(target, v);
    const Matrix out = attention::forward_softmax_baseline(realization_tokens(v), head, options).first;
    const Matrix diff = out - y;
    err += sum(hadamard(diff, diff));
    ref += sum(hadamard(y, y));
  }
  return std::sqrt(err / ref);
}

}  // namespace

GapResult impossibility_gap(const CanonicalOperator& t, const GapConfig& config) {
  if (!t.square()) throw ConfigError("impossibility gap needs a square operator");
  if (config.restarts == 0 || config.batch == 0 || config.eval_vectors == 0)
    throw ConfigError("gap configuration counts must be positive");
  GapResult result;
  for (std::size_t r = 0; r < config.restarts; ++r)
    result.restart_errors.push_back(baseline_fit(t.matrix, config, config.seed * 1000003 + r));
  result.baseline_rel_error =
      *std::min_element(result.restart_errors.begin(), result.restart_errors.end());
  const Realization real = realize_with_toa(t, Variant::ToaRelu);
  result.toa_abs_error = realization_error(real, t, 100, config.seed + 17);
  return result;
}

// ---- suites ----------------------------------------------------------------------

std::vector<NamedOperator> square_operator_suite() {
  std::vector<NamedOperator> suite;
  {
    auto op = build_residualization(moving_average_kernel(5, 3));
    op.construction["smoother"] = "moving_average";
    op.construction["width"] = 3;
    suite.push_back({"residualization_movavg3_n5", std::move(op)});
  }
  {
    auto op = build_residualization(gaussian_kernel(16, 1.5));
    op.construction["smoother"] = "gaussian";
    op.construction["bandwidth"] = 1.5;
    suite.push_back({"residualization_gaussian_n16", std::move(op)});
  }
  suite.push_back({"projector_2x1", build_latent_demixing(Matrix{{1.0}, {-1.0}})});
  {
    std::mt19937_64 rng(2024);
    suite.push_back({"projector_6x2", build_latent_demixing(gaussian(6, 2, rng))});
  }
  suite.push_back({"harmonic_continuation_24", build_harmonic_continuation(24, 24, {24.0, 12.0})});
  suite.push_back({"phase_warped_chirp_32", build_phase_warped(32, 32, {16.0, 8.0}, 0.7, 2)});
  {
    AtomSpec spec;
    spec.n = 32;
    spec.center = 15.5;
    spec.scale = 4.0;
    spec.omega = 2.0 * std::numbers::pi / 8.0;
    spec.phase = 0.3;
    suite.push_back({"local_quadrature_n32", build_local_quadrature(spec)});
  }
  suite.push_back({"patch_differencing_n8", build_patch_differencing(8, 5, 1)});
  return suite;
}

// ---- probes ------------------------------------------------------------------------

ProbeResult probe_collapse(std::size_t instances, double alpha) {
  ProbeResult res{"prop1_collapse", true, nlohmann::json::object()};
  double worst = 0.0;
  bool monotone = true;
  nlohmann::json sweep = nlohmann::json::array();
  const std::vector<double> alphas{1.0, 0.1, 0.01, 0.001};
  for (std::size_t i = 0; i < instances; ++i) {
    std::mt19937_64 rng(1000 + i);
    const std::size_t n = 16, d = 8;
    const HeadParams head = random_baseline_head(d, 4, rng);
    const Matrix h = gaussian(n, d, rng);
    worst = std::max(worst, collapse_probe(head, h, {alpha}).front().max_deviation);
    const auto steps = collapse_probe(head, h, alphas);
    for (std::size_t k = 1; k < steps.size(); ++k)
      if (steps[k].max_deviation > steps[k - 1].max_deviation) monotone = false;
    if (i == 0)
      for (const auto& s : steps) sweep.push_back({{"alpha", s.alpha}, {"max_deviation", s.max_deviation}});
    const auto zero = collapse_probe(head, h, {0.0}).front();
    if (zero.max_deviation != 0.0) res.pass = false;
  }
  res.measured = {{"instances", instances},
                  {"alpha", alpha},
                  {"max_deviation", worst},
                  {"threshold", 1e-8},
                  {"sweep_first_instance", sweep},
                  {"sweep_monotone", monotone}};
  res.pass = res.pass && worst < 1e-8 && monotone;
  return res;
}

ProbeResult probe_case_a() {
  ProbeResult res{"caseA_harmonic_continuation", true, nlohmann::json::object()};
  const auto small = build_harmonic_continuation(24, 4, {24.0});
  const auto full = build_harmonic_continuation(672, 96, {24.0, 84.0, 168.0});
  const Matrix x = cosine_column(0, 24, 24.0, 0.0, 0, 24.0);
  const Matrix expected = cosine_column(24, 4, 24.0, 0.0, 0, 24.0);
  const double continuation = max_abs_diff(matmul(small.matrix, x), expected);
  const double dc = max_abs(matmul(small.matrix, Matrix(24, 1, 1.0)));
  const double rows_small = max_row_sum_abs(small.matrix);
  const double rows_full = max_row_sum_abs(full.matrix);
  const bool fail_small = all_rows_fail(small.matrix);
  const bool fail_full = all_rows_fail(full.matrix);
  res.measured = {{"max_abs_row_sum_L24", rows_small},
                  {"max_abs_row_sum_L672", rows_full},
                  {"continuation_error", continuation},
                  {"dc_response", dc},
                  {"all_rows_outside_simplex", fail_small && fail_full}};
  res.pass = rows_small <= 1e-9 && rows_full <= 1e-9 && continuation <= 1e-8 && dc <= 1e-9 &&
             fail_small && fail_full;
  return res;
}

ProbeResult probe_case_b() {
  ProbeResult res{"caseB_residualization", true, nlohmann::json::object()};
  const auto mov = build_residualization(moving_average_kernel(5, 3));
  double closed_form = 0.0;
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      const std::size_t dist = std::min((r + 5 - c) % 5, (c + 5 - r) % 5);
      const double expect = dist == 0 ? 2.0 / 3.0 : dist == 1 ? -1.0 / 3.0 : 0.0;
      closed_form = std::max(closed_form, std::abs(mov.matrix(r, c) - expect));
    }
  const auto gau = build_residualization(gaussian_kernel(32, 2.0));
  const double rows = std::max(max_row_sum_abs(mov.matrix), max_row_sum_abs(gau.matrix));
  const double constant = max_abs(matmul(gau.matrix, Matrix(32, 1, 1.0)));
  const bool fail = all_rows_fail(mov.matrix) && all_rows_fail(gau.matrix);
  const bool identity_zero = max_abs(build_residualization(Matrix::identity(4)).matrix) == 0.0;
  res.measured = {{"max_abs_row_sum", rows},
                  {"movavg3_closed_form_error", closed_form},
                  {"constant_response", constant},
                  {"all_rows_outside_simplex", fail},
                  {"identity_smoother_gives_zero", identity_zero}};
  res.pass = rows <= 1e-9 && closed_form <= 1e-15 && constant <= 1e-9 && fail && identity_zero;
  return res;
}

ProbeResult probe_case_c() {
  ProbeResult res{"caseC_latent_demixing", true, nlohmann::json::object()};
  const auto p = build_latent_demixing(Matrix{{1.0}, {-1.0}});
  const double closed = max_abs_diff(p.matrix, Matrix{{0.5, -0.5}, {-0.5, 0.5}});
  double idem = 0.0, sym = 0.0;
  std::size_t generic_fail = 0, tested = 0;
  std::mt19937_64 rng(99);
  for (int i = 0; i < 100; ++i) {
    const Matrix a = gaussian(6, 2, rng);
    const auto op = build_latent_demixing(a);
    idem = std::max(idem, max_abs_diff(matmul(op.matrix, op.matrix), op.matrix));
    sym = std::max(sym, max_abs_diff(op.matrix, transpose(op.matrix)));
    if (!op.expects_violation) continue;
    ++tested;
    if (simplex_report(op.matrix).violations() >= 1) ++generic_fail;
  }
  Matrix with_ones{{1.0, 0.3}, {1.0, -1.2}, {1.0, 0.5}, {1.0, 2.0}};
  const auto ones_case = build_latent_demixing(with_ones);
  const double ones_fixed = max_abs_diff(matmul(ones_case.matrix, Matrix(4, 1, 1.0)), Matrix(4, 1, 1.0));
  res.measured = {{"closed_form_error", closed},
                  {"max_idempotence_error", idem},
                  {"max_symmetry_error", sym},
                  {"random_instances_tested", tested},
                  {"random_instances_with_violation", generic_fail},
                  {"ones_in_column_space_error", ones_fixed}};
  res.pass = closed <= 1e-12 && idem <= 1e-9 && sym <= 1e-12 && generic_fail == tested &&
             tested > 0 && ones_fixed <= 1e-12;
  return res;
}

ProbeResult probe_case_d() {
  ProbeResult res{"caseD_phase_warped", true, nlohmann::json::object()};
  const std::vector<double> periods{24.0, 12.0};
  const auto a = build_harmonic_continuation(48, 8, periods);
  const auto d0 = build_phase_warped(48, 8, periods, 0.0, 0);
  const double reduction = max_abs_diff(a.matrix, d0.matrix);
  double continuation = 0.0, invariance = 0.0;
  for (int warp : {1, 2}) {
    const auto op = build_phase_warped(96, 12, {24.0}, std::numbers::pi, warp);
    const Matrix x = cosine_column(0, 96, 24.0, std::numbers::pi, warp, 96.0);
    const Matrix y = cosine_column(96, 12, 24.0, std::numbers::pi, warp, 96.0);
    continuation = std::max(continuation, max_abs_diff(matmul(op.matrix, x), y));
    const auto p0 = build_phase_warped(96, 12, {24.0}, 0.0, warp);
    const auto p1 = build_phase_warped(96, 12, {24.0}, std::numbers::pi / 2.0, warp);
    invariance = std::max(invariance, max_abs_diff(p0.matrix, p1.matrix));
  }
  // The span of cos(x + phi), sin(x + phi) does not depend on phi, so the
  // least-squares operator is phase invariant.
  res.measured = {{"identity_warp_reduction_error", reduction},
                  {"warped_continuation_error", continuation},
                  {"phase_invariance_max_diff", invariance},
                  {"row_outside_simplex", simplex_report(d0.matrix).violations() > 0}};
  res.pass = reduction <= 1e-10 && continuation <= 1e-8 && invariance <= 1e-8 &&
             simplex_report(d0.matrix).violations() > 0;
  return res;
}

ProbeResult probe_case_e() {
  ProbeResult res{"caseE_local_quadrature", true, nlohmann::json::object()};
  AtomSpec gauss;
  gauss.n = 64;
  gauss.center = 30.0;
  gauss.scale = 5.0;
  gauss.omega = 2.0 * std::numbers::pi / 10.0;
  gauss.phase = 0.4;
  const auto g = build_local_quadrature(gauss);
  AtomSpec box;
  box.n = 32;
  box.center = 0.0;
  box.scale = 64.0;
  box.window = Window::Boxcar;
  box.omega = 2.0 * std::numbers::pi * 3.0 / 32.0;
  box.phase = 1.1;
  const auto b = build_local_quadrature(box);
  const Matrix psi = quadrature_atom(box);
  const double eigen = max_abs_diff(matmul(b.matrix, psi), psi);
  const double rows = std::max(max_row_sum_abs(g.matrix), max_row_sum_abs(b.matrix));
  const std::size_t rank_g = rank(g.matrix), rank_b = rank(b.matrix);
  const double sym = max_abs_diff(g.matrix, transpose(g.matrix));
  res.measured = {{"max_abs_row_sum", rows},
                  {"eigenvector_error", eigen},
                  {"boxcar_exact_projector", b.construction["exact_projector"]},
                  {"rank_gaussian_window", rank_g},
                  {"rank_boxcar_window", rank_b},
                  {"symmetry_error", sym},
                  {"row_outside_simplex", simplex_report(g.matrix).violations() > 0}};
  res.pass = rows <= 1e-9 && eigen <= 1e-9 && rank_g == 2 && rank_b == 2 && sym <= 1e-15 &&
             b.construction["exact_projector"].get<bool>() && simplex_report(g.matrix).violations() > 0;
  return res;
}

ProbeResult probe_realization(std::size_t vectors) {
  ProbeResult res{"realization_exactness", true, nlohmann::json::object()};
  double worst = 0.0;
  for (const auto& [name, op] : square_operator_suite()) {
    nlohmann::json row = nlohmann::json::object();
    for (Variant v : {Variant::ToaRelu, Variant::ToaGated, Variant::ToaSoftmax}) {
      const Realization r = realize_with_toa(op, v);
      const double err = realization_error(r, op, vectors, 31);
      row[std::string(attention::to_string(v))] = err;
      worst = std::max(worst, err);
    }
    res.measured[name] = row;
  }
  res.measured["max_abs_error"] = worst;
  res.measured["threshold"] = 1e-10;
  res.pass = worst <= 1e-10;
  return res;
}

ProbeResult probe_gap(const GapConfig& config) {
  ProbeResult res{"impossibility_gap", true, nlohmann::json::object()};
  for (const auto& [name, op] : square_operator_suite()) {
    const GapResult g = impossibility_gap(op, config);
    res.measured[name] = {{"baseline_rel_error", g.baseline_rel_error},
                          {"restart_errors", g.restart_errors},
                          {"toa_abs_error", g.toa_abs_error}};
    if (!(g.baseline_rel_error >= 0.1 && g.toa_abs_error <= 1e-10)) res.pass = false;
  }
  res.measured["config"] = {{"steps", config.steps},
                            {"restarts", config.restarts},
                            {"batch", config.batch},
                            {"learning_rate", config.learning_rate}};
  return res;
}

std::vector<ProbeResult> run_theory(const std::string& which) {
  if (which == "prop1") return {probe_collapse()};
  if (which == "caseA") return {probe_case_a()};
  if (which == "caseB") return {probe_case_b()};
  if (which == "caseC") return {probe_case_c()};
  if (which == "caseD") return {probe_case_d()};
  if (which == "caseE") return {probe_case_e()};
  if (which == "realization") return {probe_realization()};
  if (which == "gap") return {probe_gap()};
  if (which == "all")
    return {probe_collapse(), probe_case_a(), probe_case_b(), probe_case_c(), probe_case_d(),
            probe_case_e(), probe_realization(), probe_gap()};
  throw ConfigError("unknown theory probe '" + which +
                    "' (expected all, caseA..caseE, prop1, realization or gap)");
}

nlohmann::json theory_report(const std::vector<ProbeResult>& results) {
  nlohmann::json probes = nlohmann::json::array();
  bool all = true;
  for (const auto& r : results) {
    probes.push_back({{"name", r.name}, {"pass", r.pass}, {"measured", r.measured}});
    all = all && r.pass;
  }
  return {{"pass", all}, {"probes", probes}};
}

}  // namespace toa::theory
