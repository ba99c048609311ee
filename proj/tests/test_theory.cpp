#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "toa/io.hpp"
#include "toa/linalg.hpp"
#include "toa/operators.hpp"
#include "toa/probes.hpp"

using namespace toa;
using namespace toa::theory;

namespace {

Matrix gaussian(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (double& v : m.values()) v = n(rng);
  return m;
}

double max_abs_row_sum(const Matrix& m) {
  double worst = 0.0;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    for (double v : m.row(r)) s += v;
    worst = std::max(worst, std::abs(s));
  }
  return worst;
}

Matrix column(std::size_t n, const std::function<double(double)>& f, std::size_t offset = 0) {
  Matrix v(n, 1);
  for (std::size_t t = 0; t < n; ++t) v(t, 0) = f(static_cast<double>(t + offset));
  return v;
}

}  // namespace

TEST_CASE("harmonic continuation") {
  const CanonicalOperator op = build_harmonic_continuation(24, 4, {24});
  CHECK(op.matrix.rows() == 4);
  CHECK(op.matrix.cols() == 24);
  CHECK(max_abs_row_sum(op.matrix) <= 1e-9);

  const auto wave = [](double t) { return std::cos(2.0 * M_PI * t / 24.0); };
  const Matrix pred = matmul(op.matrix, column(24, wave));
  CHECK(max_abs_diff(pred, column(4, wave, 24)) <= 1e-8);
  CHECK(max_abs(matmul(op.matrix, Matrix(24, 1, 1.0))) <= 1e-9);

  const SimplexReport rep = simplex_report(op);
  CHECK(rep.violations() == 4);

  CHECK_THROWS_AS(build_harmonic_continuation(24, 4, {7}), ConfigError);
  CHECK_THROWS_AS(build_harmonic_continuation(2, 1, {2, 1}), ConfigError);
}

TEST_CASE("residualization") {
  CHECK(max_abs(build_residualization(Matrix::identity(5)).matrix) == 0.0);

  const CanonicalOperator op = build_residualization(moving_average_kernel(5, 3));
  CHECK(max_abs_row_sum(op.matrix) <= 1e-12);
  for (std::size_t r = 0; r < 5; ++r) {
    CHECK(op.matrix(r, r) == doctest::Approx(2.0 / 3.0));
    CHECK(op.matrix(r, (r + 1) % 5) == doctest::Approx(-1.0 / 3.0));
    CHECK(op.matrix(r, (r + 4) % 5) == doctest::Approx(-1.0 / 3.0));
  }
  CHECK(max_abs(matmul(op.matrix, Matrix(5, 1, 1.0))) <= 1e-12);
  CHECK(simplex_report(op).violations() == 5);

  const Matrix g = gaussian_kernel(9, 1.5);
  for (std::size_t r = 0; r < 9; ++r) {
    double s = 0.0;
    for (double v : g.row(r)) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(max_abs_row_sum(build_residualization(g).matrix) <= 1e-9);

  CHECK_THROWS_AS(build_residualization(Matrix{{0.5, 0.6}, {0.5, 0.5}}), ConfigError);
  CHECK_THROWS_AS(build_residualization(Matrix{{1.5, -0.5}, {0.5, 0.5}}), ConfigError);
}

TEST_CASE("latent demixing") {
  const CanonicalOperator op = build_latent_demixing(Matrix{{1.0}, {-1.0}});
  const Matrix expect{{0.5, -0.5}, {-0.5, 0.5}};
  CHECK(max_abs_diff(op.matrix, expect) <= 1e-12);

  const Matrix a{{1.0, 0.3}, {1.0, -2.0}, {1.0, 0.7}};
  const Matrix p = build_latent_demixing(a).matrix;
  CHECK(max_abs_diff(matmul(p, Matrix(3, 1, 1.0)), Matrix(3, 1, 1.0)) <= 1e-12);

  std::mt19937_64 rng(1);
  std::size_t failing = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix pa = build_channel_demixing(gaussian(6, 2, rng)).matrix;
    CHECK(max_abs_diff(matmul(pa, pa), pa) <= 1e-9);
    CHECK(max_abs_diff(pa, transpose(pa)) <= 1e-12);
    CHECK(rank(pa) == 2);
    if (simplex_report(pa).violations() > 0) ++failing;
  }
  CHECK(failing == 100);

  CHECK_THROWS_AS(build_latent_demixing(Matrix{{1.0, 2.0}, {2.0, 4.0}}), SingularMatrixError);
}

TEST_CASE("phase warped continuation") {
  const CanonicalOperator a = build_harmonic_continuation(48, 6, {24, 48});
  const CanonicalOperator d = build_phase_warped(48, 6, {24, 48}, 0.0, 0);
  CHECK(max_abs_diff(a.matrix, d.matrix) <= 1e-10);

  for (int warp : {0, 1, 2}) {
    const CanonicalOperator op = build_phase_warped(96, 8, {24}, M_PI, warp);
    const double w = 2.0 * M_PI / 24.0;
    const auto signal = [&](double t) {
      const double tau = t + (warp == 1   ? 20.0 * std::sin(4.0 * M_PI * t / 96.0)
                              : warp == 2 ? 40.0 * (t / 96.0) * (t / 96.0)
                                          : 0.0);
      return std::cos(w * tau + M_PI);
    };
    CHECK(max_abs_diff(matmul(op.matrix, column(96, signal)), column(8, signal, 96)) <= 1e-8);
  }

  // A global phase rotates the cos/sin pair inside its own span, so the
  // least-squares operator does not depend on it.
  const Matrix p0 = build_phase_warped(96, 8, {24}, 0.0, 1).matrix;
  const Matrix p1 = build_phase_warped(96, 8, {24}, M_PI / 2.0, 1).matrix;
  CHECK(max_abs_diff(p0, p1) <= 1e-10);
}

TEST_CASE("local quadrature projector") {
  AtomSpec spec;
  spec.n = 64;
  spec.center = 32.0;
  spec.scale = 6.0;
  spec.omega = 2.0 * M_PI / 8.0;
  const CanonicalOperator op = build_local_quadrature(spec);
  CHECK(max_abs_row_sum(op.matrix) <= 1e-9);
  CHECK(rank(op.matrix) == 2);
  CHECK(max_abs_diff(op.matrix, transpose(op.matrix)) <= 1e-12);

  const Matrix psi = quadrature_atom(spec);
  double mean = 0.0;
  for (double v : psi.values()) mean += v;
  CHECK(std::abs(mean) <= 1e-12);

  // A boxcar covering whole periods of the sequence makes the atom pair
  // orthogonal with equal norms, so the operator fixes its atoms.
  AtomSpec box;
  box.n = 32;
  box.scale = 64.0;
  box.window = Window::Boxcar;
  box.omega = 2.0 * M_PI * 3.0 / 32.0;
  box.phase = 0.8;
  const CanonicalOperator proj = build_local_quadrature(box);
  CHECK(proj.construction.at("exact_projector").get<bool>());
  const Matrix atom = quadrature_atom(box);
  CHECK(max_abs_diff(matmul(proj.matrix, atom), atom) <= 1e-9);
  CHECK(max_abs_diff(matmul(proj.matrix, proj.matrix), proj.matrix) <= 1e-9);
}

TEST_CASE("patch differencing") {
  const CanonicalOperator op = build_patch_differencing(6, 3, 1);
  std::mt19937_64 rng(2);
  const Matrix h = gaussian(6, 4, rng);
  const Matrix out = matmul(op.matrix, h);
  for (std::size_t c = 0; c < 4; ++c) CHECK(out(3, c) == doctest::Approx(h(3, c) - h(1, c)));
  for (std::size_t r : {0u, 1u, 2u, 4u, 5u}) {
    for (std::size_t c = 0; c < 4; ++c) CHECK(out(r, c) == h(r, c));
  }
  const SimplexReport rep = simplex_report(op);
  CHECK(rep.rows[3].row_sum == 0.0);
  CHECK(rep.rows[3].min_entry == -1.0);
  CHECK_FALSE(rep.rows[3].in_simplex);
  CHECK(rep.violations() == 1);
  CHECK_THROWS_AS(build_patch_differencing(6, 2, 2), ConfigError);
  CHECK_THROWS_AS(build_patch_differencing(6, 6, 2), ConfigError);
}

TEST_CASE("simplex report") {
  CHECK(simplex_report(Matrix(3, 4, 0.25)).all_in_simplex());
  CHECK(simplex_report(Matrix::identity(5)).all_in_simplex());
  const SimplexReport rep = simplex_report(Matrix{{0.5, 0.5 + 2e-9}, {-2e-9, 1.0}});
  CHECK_FALSE(rep.rows[0].in_simplex);
  CHECK_FALSE(rep.rows[1].in_simplex);
  CHECK(simplex_report(Matrix{{0.5, 0.5 + 5e-10}}).all_in_simplex());
}

TEST_CASE("collapse probe") {
  std::mt19937_64 rng(3);
  attention::HeadParams head;
  head.w_q = gaussian(3, 4, rng);
  head.w_k = gaussian(3, 4, rng);
  head.w_v = gaussian(2, 4, rng);
  const Matrix h = gaussian(8, 4, rng);

  const auto tiny = collapse_probe(head, h, {1e-6});
  CHECK(tiny.front().max_deviation < 1e-8);

  const auto zero = collapse_probe(head, h, {0.0});
  CHECK(max_abs_diff(zero.front().kernel, Matrix(8, 8, 1.0 / 8.0)) == 0.0);

  const auto sweep = collapse_probe(head, h, {1.0, 0.1, 0.01, 0.001});
  for (std::size_t i = 1; i < sweep.size(); ++i)
    CHECK(sweep[i].max_deviation <= sweep[i - 1].max_deviation);
  // Logits scale as alpha^2, so each decade cuts the deviation about 100x.
  CHECK(sweep[3].max_deviation < 2e-2 * sweep[2].max_deviation);

  const ProbeResult probe = probe_collapse(50, 1e-6);
  CHECK(probe.pass);
}

TEST_CASE("realization by a TOA head") {
  const CanonicalOperator eye{Matrix::identity(4), CaseLabel::Residualization, {}, false};
  const Realization r0 = realize_with_toa(eye);
  REQUIRE(r0.head.has_value());
  CHECK(max_abs(r0.head->m2) <= 1e-15);

  std::vector<CanonicalOperator> ops = {
      build_residualization(moving_average_kernel(7, 3)),
      build_latent_demixing(Matrix{{1.0}, {-1.0}}),
      build_patch_differencing(5, 4, 0),
  };
  for (const auto& op : ops) {
    for (auto v : {attention::Variant::ToaRelu, attention::Variant::ToaGated,
                   attention::Variant::ToaSoftmax}) {
      const Realization r = realize_with_toa(op, v);
      CHECK(r.pipeline_checked);
      CHECK(realization_error(r, op, 100, 4) <= 1e-10);
    }
  }

  const Realization rect = realize_with_toa(build_harmonic_continuation(24, 4, {24}));
  CHECK_FALSE(rect.head.has_value());
  CHECK_FALSE(rect.pipeline_checked);
  CHECK_FALSE(rect.note.empty());
}

TEST_CASE("square operator suite is realized exactly") {
  for (const auto& named : square_operator_suite()) {
    INFO(named.name);
    REQUIRE(named.op.square());
    CHECK(realization_error(realize_with_toa(named.op), named.op, 100, 5) <= 1e-10);
  }
}

TEST_CASE("baseline fit stays far from a signed operator") {
  GapConfig cfg;
  cfg.steps = 300;
  cfg.restarts = 2;
  const GapResult gap = impossibility_gap(build_latent_demixing(Matrix{{1.0}, {-1.0}}), cfg);
  CHECK(gap.restart_errors.size() == 2);
  CHECK(gap.baseline_rel_error >= 0.1);
  CHECK(gap.toa_abs_error <= 1e-10);
}

TEST_CASE("probe suites and export") {
  for (const char* which : {"caseA", "caseB", "caseC", "caseD", "caseE", "realization"}) {
    INFO(which);
    const auto results = run_theory(which);
    REQUIRE_FALSE(results.empty());
    for (const auto& r : results) CHECK(r.pass);
    CHECK(theory_report(results).dump().size() > 10);
  }
  CHECK_THROWS_AS(run_theory("caseZ"), ConfigError);

  const auto dir = std::filesystem::temp_directory_path() / "toa_theory_export";
  std::filesystem::remove_all(dir);
  const CanonicalOperator op = build_residualization(moving_average_kernel(5, 3));
  export_operator(op, dir / "resid");
  const Matrix back = io::read_matrix_csv(dir / "resid.csv");
  CHECK(back == op.matrix);
  std::ifstream js(dir / "resid.json");
  const auto j = nlohmann::json::parse(js);
  CHECK(j.at("case").get<std::string>() == "Residualization");
  CHECK(std::filesystem::exists(dir / "resid.simplex.json"));
  std::filesystem::remove_all(dir);
}
