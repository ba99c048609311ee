#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <string>

#include "doctest.h"
#include "toa/attention.hpp"
#include "toa/grad_check.hpp"
#include "toa/linalg.hpp"
#include "toa/serialize.hpp"

using namespace toa;
using namespace toa::attention;

namespace {

Matrix gaussian(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(r, c);
  for (double& v : m.values()) v = n(rng);
  return m;
}

sor::SorState sor_off() { return sor::SorState(sor::SorConfig{}); }

sor::SorState sor_on(std::uint64_t seed, bool shared_p = true) {
  sor::SorConfig c;
  c.enabled = true;
  c.seed = seed;
  c.shared_p = shared_p;
  return sor::SorState(c);
}

// Straight-line evaluation of one head, written independently of the library
// kernels: every product is an explicit loop.
Matrix loop_mul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k)
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += a(i, k) * b(k, j);
  return out;
}

Matrix loop_t(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Matrix oracle_scores(const Matrix& h, const Matrix& wq, const Matrix& wk, const Matrix& s1,
                     double scale) {
  Matrix a = loop_mul(loop_mul(loop_mul(h, loop_t(wq)), wk), loop_t(h));
  if (!s1.empty()) a = loop_mul(a, s1);
  for (double& v : a.values()) v *= scale;
  return a;
}

Matrix oracle_softmax(Matrix a) {
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double mx = a(r, 0), total = 0.0;
    for (double v : a.row(r)) mx = std::max(mx, v);
    for (double& v : a.row(r)) total += (v = std::exp(v - mx));
    for (double& v : a.row(r)) v /= total;
  }
  return a;
}

Matrix oracle_head(const Matrix& h, const HeadParams& head, Variant variant,
                   const ScoreOptions& opt) {
  const std::size_t n = h.rows();
  const std::size_t d_h = head.gated ? head.gated->w_q_left.rows() : head.w_q.rows();
  const double temp = opt.temperature ? 1.0 / std::sqrt(static_cast<double>(d_h)) : 1.0;
  const double relu_len = opt.length_normalized_relu ? 1.0 / static_cast<double>(n) : 1.0;
  const Matrix eye = Matrix::identity(n);
  Matrix left;
  switch (variant) {
    case Variant::SoftmaxBaseline:
      left = oracle_softmax(oracle_scores(h, head.w_q, head.w_k, Matrix(), temp));
      break;
    case Variant::ToaSoftmax:
      left = oracle_softmax(oracle_scores(h, head.w_q, head.w_k, eye + head.m1, temp));
      break;
    case Variant::ToaRelu:
      left = oracle_scores(h, head.w_q, head.w_k, eye + head.m1, temp * relu_len);
      for (double& v : left.values()) v = std::max(0.0, v);
      break;
    case Variant::ToaGated: {
      const auto& g = *head.gated;
      left = oracle_scores(h, g.w_q_left, g.w_k_left, eye + g.m1_left, temp * relu_len);
      const Matrix right = oracle_scores(h, g.w_q_right, g.w_k_right, eye + g.m1_right, temp);
      for (std::size_t i = 0; i < left.size(); ++i)
        left.data()[i] = std::max(0.0, left.data()[i]) * std::log1p(std::exp(right.data()[i]));
      break;
    }
  }
  Matrix values = loop_mul(h, loop_t(head.w_v));
  if (has_offsets(variant)) values = loop_mul(eye + head.m2, values);
  return loop_mul(left, values);
}

std::pair<Matrix, HeadCache> run_head(const Matrix& h, const HeadParams& head, Variant v,
                                      sor::SorState& s, const ScoreOptions& opt = {}) {
  switch (v) {
    case Variant::SoftmaxBaseline: return forward_softmax_baseline(h, head, opt);
    case Variant::ToaSoftmax: return forward_toa_softmax(h, head, s, opt);
    case Variant::ToaRelu: return forward_toa_relu(h, head, s, opt);
    case Variant::ToaGated: return forward_toa_gated(h, head, s, opt);
  }
  throw std::logic_error("unreachable");
}

// Larger-than-init offsets so the operators matter numerically.
MultiHeadParams random_params(Variant v, const Dims& dims, std::uint64_t seed,
                              double sigma_m = 0.3) {
  std::mt19937_64 rng(seed);
  return init_multihead(v, dims, rng, sigma_m);
}

double weighted_sum(const Matrix& out, const Matrix& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out.data()[i] * weights.data()[i];
  return s;
}

}  // namespace

TEST_CASE("variant names round trip") {
  for (Variant v : kAllVariants) CHECK(parse_variant(to_string(v)) == v);
  CHECK_THROWS_AS(parse_variant("linear"), ConfigError);
  CHECK_FALSE(has_offsets(Variant::SoftmaxBaseline));
  CHECK(has_offsets(Variant::ToaGated));
}

TEST_CASE("score") {
  std::mt19937_64 rng(1);
  HeadParams head;
  head.w_q = gaussian(3, 4, rng);
  head.w_k = gaussian(3, 4, rng);
  CHECK(max_abs(score(Matrix(6, 4), head)) == 0.0);

  // Orthonormal rows with identity projections give the identity score.
  HeadParams eye;
  eye.w_q = Matrix::identity(4);
  eye.w_k = Matrix::identity(4);
  const double c = std::cos(0.4), s = std::sin(0.4);
  const Matrix rot{{c, -s, 0, 0}, {s, c, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
  CHECK(max_abs_diff(score(rot, eye), Matrix::identity(4)) < 1e-15);

  for (int trial = 0; trial < 10; ++trial) {
    const Matrix h = gaussian(12, 4, rng);
    CHECK(rank(score(h, head)) <= 3);
  }
  CHECK_THROWS_AS(score(Matrix(6, 5), head), ShapeError);
}

TEST_CASE("baseline with a single token") {
  std::mt19937_64 rng(2);
  HeadParams head = random_params(Variant::SoftmaxBaseline, {1, 3, 1, 2, 2}, 2).heads.front();
  const Matrix h = gaussian(1, 3, rng);
  const auto [out, cache] = forward_softmax_baseline(h, head);
  CHECK(kernel(cache) == Matrix{{1.0}});
  CHECK(max_abs_diff(out, matmul_nt(h, head.w_v)) < 1e-15);
}

TEST_CASE("baseline kernel rows are identical for identical tokens") {
  std::mt19937_64 rng(3);
  const HeadParams head = random_params(Variant::SoftmaxBaseline, {5, 3, 1, 2, 2}, 3).heads.front();
  const Matrix tok = gaussian(1, 3, rng);
  Matrix h(5, 3);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 3; ++c) h(r, c) = tok(0, c);
  const Matrix k = kernel(forward_softmax_baseline(h, head).second);
  for (std::size_t r = 1; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c) CHECK(k(r, c) == k(0, c));
}

TEST_CASE("baseline kernel rows lie in the simplex") {
  std::mt19937_64 rng(4);
  for (int draw = 0; draw < 1000; ++draw) {
    HeadParams head;
    head.w_q = gaussian(3, 4, rng, 2.0);
    head.w_k = gaussian(3, 4, rng, 2.0);
    head.w_v = gaussian(2, 4, rng);
    const Matrix k = kernel(forward_softmax_baseline(gaussian(7, 4, rng, 2.0), head).second);
    for (std::size_t r = 0; r < k.rows(); ++r) {
      double total = 0.0;
      bool nonneg = true;
      for (double v : k.row(r)) {
        nonneg = nonneg && v >= 0.0;
        total += v;
      }
      REQUIRE(nonneg);
      REQUIRE(std::abs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("every variant matches its straight-line formula") {
  const Dims dims{9, 5, 1, 3, 2};
  std::mt19937_64 rng(5);
  for (Variant v : kAllVariants) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const HeadParams head = random_params(v, dims, 100 + seed).heads.front();
      const Matrix h = gaussian(dims.n, dims.d, rng);
      for (const ScoreOptions& opt : {ScoreOptions{}, ScoreOptions::unscaled()}) {
        auto s = sor_off();
        const Matrix out = run_head(h, head, v, s, opt).first;
        const Matrix expect = oracle_head(h, head, v, opt);
        INFO(to_string(v));
        CHECK(max_abs_diff(out, expect) <= 1e-12 * std::max(1.0, max_abs(expect)));
      }
    }
  }
}

TEST_CASE("zero offsets reduce every variant to its ancestor") {
  const Dims dims{8, 4, 1, 3, 3};
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix h = gaussian(dims.n, dims.d, rng);
    HeadParams soft = random_params(Variant::ToaSoftmax, dims, trial).heads.front();
    soft.m1.fill(0.0);
    soft.m2.fill(0.0);
    HeadParams base = soft;
    base.m1 = Matrix();
    base.m2 = Matrix();
    auto s = sor_off();
    CHECK(max_abs_diff(forward_toa_softmax(h, soft, s).first,
                       forward_softmax_baseline(h, base).first) <= 1e-12);

    // Plain ReLU attention: ReLU(scaled A) V.
    HeadParams relu = soft;
    const ScoreOptions opt;
    Matrix k = oracle_scores(h, relu.w_q, relu.w_k, Matrix(),
                             1.0 / (std::sqrt(3.0) * static_cast<double>(dims.n)));
    for (double& v : k.values()) v = std::max(0.0, v);
    CHECK(max_abs_diff(forward_toa_relu(h, relu, s).first, loop_mul(k, matmul_nt(h, relu.w_v))) <=
          1e-12);

    HeadParams gated = random_params(Variant::ToaGated, dims, 1000 + trial).heads.front();
    gated.gated->m1_left.fill(0.0);
    gated.gated->m1_right.fill(0.0);
    gated.m2.fill(0.0);
    const auto& g = *gated.gated;
    Matrix left = oracle_scores(h, g.w_q_left, g.w_k_left, Matrix(),
                                1.0 / (std::sqrt(3.0) * static_cast<double>(dims.n)));
    const Matrix right = oracle_scores(h, g.w_q_right, g.w_k_right, Matrix(), 1.0 / std::sqrt(3.0));
    for (std::size_t i = 0; i < left.size(); ++i)
      left.data()[i] = std::max(0.0, left.data()[i]) * std::log1p(std::exp(right.data()[i]));
    CHECK(max_abs_diff(forward_toa_gated(h, gated, s).first, loop_mul(left, matmul_nt(h, gated.w_v))) <= 1e-12);
  }
}

TEST_CASE("toa-softmax with one token scales the value by 1 + m2") {
  std::mt19937_64 rng(7);
  HeadParams head = random_params(Variant::ToaSoftmax, {1, 3, 1, 2, 2}, 7).heads.front();
  head.m2(0, 0) = 0.37;
  const Matrix h = gaussian(1, 3, rng);
  auto s = sor_off();
  const Matrix out = forward_toa_softmax(h, head, s).first;
  CHECK(max_abs_diff(out, matmul_nt(h, head.w_v) * 1.37) < 1e-15);
}

TEST_CASE("relu kernels can vanish and can difference values") {
  // w_k = -w_q on positive scalar tokens makes every score nonpositive.
  HeadParams head;
  head.w_q = Matrix{{1.0}};
  head.w_k = Matrix{{-1.0}};
  head.w_v = Matrix{{1.0}};
  head.m1 = Matrix(4, 4);
  head.m2 = Matrix(4, 4);
  const Matrix h{{0.5}, {1.0}, {2.0}, {0.1}};
  auto s = sor_off();
  CHECK(max_abs(forward_toa_relu(h, head, s).first) == 0.0);

  // S2 row 0 = (1, -1, 0, 0): the mixed values carry v0 - v1 in row 0.
  head.w_k = Matrix{{1.0}};
  head.m2(0, 1) = -1.0;
  const auto [out, cache] = forward_toa_relu(h, head, s);
  CHECK(cache.u(0, 0) == doctest::Approx(0.5 - 1.0));
  CHECK(max_abs_diff(out, matmul(kernel(cache), cache.u)) < 1e-14);
}

TEST_CASE("gated head: negative left scores vanish, zero right scores give ln 2") {
  HeadParams head;
  GatedProjections g;
  g.w_q_left = Matrix{{1.0}};
  g.w_k_left = Matrix{{-1.0}};
  g.w_q_right = Matrix{{0.7}};
  g.w_k_right = Matrix{{1.3}};
  g.m1_left = Matrix(4, 4);
  g.m1_right = Matrix(4, 4);
  head.gated = g;
  head.w_v = Matrix{{1.0}};
  head.m2 = Matrix(4, 4);
  const Matrix h{{0.5}, {1.0}, {2.0}, {0.1}};
  auto s = sor_off();
  CHECK(max_abs(forward_toa_gated(h, head, s).first) == 0.0);

  std::mt19937_64 rng(8);
  const Dims dims{6, 4, 1, 3, 2};
  HeadParams gated = random_params(Variant::ToaGated, dims, 8).heads.front();
  gated.gated->w_q_right.fill(0.0);
  HeadParams relu;
  relu.w_q = gated.gated->w_q_left;
  relu.w_k = gated.gated->w_k_left;
  relu.m1 = gated.gated->m1_left;
  relu.m2 = gated.m2;
  relu.w_v = gated.w_v;
  const Matrix x = gaussian(dims.n, dims.d, rng);
  const auto [out, cache] = forward_toa_gated(x, gated, s);
  const Matrix expect = forward_toa_relu(x, relu, s).first * std::log(2.0);
  CHECK(max_abs_diff(out, expect) <= 1e-14);

  HeadParams broken = gated;
  broken.gated.reset();
  CHECK_THROWS_AS(forward_toa_gated(x, broken, s), ConfigError);
}

TEST_CASE("inputs must match the operator length") {
  const HeadParams head = random_params(Variant::ToaRelu, {6, 3, 1, 2, 2}, 9).heads.front();
  auto s = sor_off();
  CHECK_THROWS_AS(forward_toa_relu(Matrix(5, 3), head, s), ShapeError);
  CHECK_THROWS_AS(forward_toa_relu(Matrix(6, 4), head, s), ShapeError);
}

TEST_CASE("multi-head aggregation") {
  std::mt19937_64 rng(10);
  const Dims one{6, 4, 1, 3, 4};
  MultiHeadParams p = random_params(Variant::ToaRelu, one, 10);
  p.w_o = Matrix::identity(4);
  const Matrix h = gaussian(6, 4, rng);
  auto s = sor_off();
  CHECK(max_abs_diff(forward_multihead(h, p, nullptr).first,
                     forward_toa_relu(h, p.heads.front(), s).first) <= 1e-15);

  for (Variant v : kAllVariants) {
    const Dims dims{6, 4, 3, 3, 2};
    const MultiHeadParams params = random_params(v, dims, 11);
    const Matrix out = forward_multihead(h, params, nullptr).first;
    CHECK(out.rows() == 6);
    CHECK(out.cols() == 4);

    // Reverse the heads and the matching row blocks of W_O.
    MultiHeadParams perm = params;
    std::reverse(perm.heads.begin(), perm.heads.end());
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 4; ++c) perm.w_o((2 - i) * 2 + r, c) = params.w_o(i * 2 + r, c);
    CHECK(max_abs_diff(forward_multihead(h, perm, nullptr).first, out) <= 1e-14);
  }
}

namespace {

// Checks every parameter tensor and the input against central differences of
// sum(out * weights), with the masks held fixed.
double worst_gradient_error(Variant v, const LayerMasks* masks, std::uint64_t seed) {
  const Dims dims{5, 4, 2, 3, 2};
  MultiHeadParams params = random_params(v, dims, seed);
  std::mt19937_64 rng(seed + 1);
  const Matrix h = gaussian(dims.n, dims.d, rng);
  const Matrix w = gaussian(dims.n, dims.d, rng);
  const auto [out, cache] = forward_multihead(h, params, masks);
  const LayerGradients g = backward(w, cache, params);

  double worst = 0.0;
  auto params_t = tensors(params);
  const auto grads_t = tensors(g.params);
  REQUIRE(params_t.size() == grads_t.size());
  for (std::size_t i = 0; i < params_t.size(); ++i) {
    Matrix* target = params_t[i];
    const Matrix saved = *target;
    const auto f = [&](const Matrix& x) {
      *target = x;
      const double val = weighted_sum(forward_multihead(h, params, masks).first, w);
      *target = saved;
      return val;
    };
    worst = std::max(worst, grad_check(f, saved, *grads_t[i]).max_rel_error);
  }
  const auto fh = [&](const Matrix& x) {
    return weighted_sum(forward_multihead(x, params, masks).first, w);
  };
  worst = std::max(worst, grad_check(fh, h, g.d_input).max_rel_error);
  return worst;
}

}  // namespace

TEST_CASE("gradients match central differences") {
  for (Variant v : kAllVariants) {
    INFO(to_string(v));
    CHECK(worst_gradient_error(v, nullptr, 20) < 1e-4);
    for (bool shared : {true, false}) {
      const MultiHeadParams params = random_params(v, {5, 4, 2, 3, 2}, 20);
      auto state = sor_on(77, shared);
      const LayerMasks masks = draw_layer_masks(state, params);
      CHECK(worst_gradient_error(v, &masks, 20) < 1e-4);
    }
  }
}

TEST_CASE("zero upstream gradient gives zero gradients") {
  for (Variant v : kAllVariants) {
    const MultiHeadParams params = random_params(v, {5, 4, 2, 3, 2}, 21);
    std::mt19937_64 rng(21);
    const Matrix h = gaussian(5, 4, rng);
    const auto [out, cache] = forward_multihead(h, params, nullptr);
    const LayerGradients g = backward(Matrix(5, 4), cache, params);
    for (const Matrix* t : tensors(g.params)) CHECK(max_abs(*t) == 0.0);
    CHECK(max_abs(g.d_input) == 0.0);
  }
}

TEST_CASE("dropped offset coordinates receive no gradient") {
  for (Variant v : {Variant::ToaSoftmax, Variant::ToaRelu, Variant::ToaGated}) {
    const MultiHeadParams params = random_params(v, {6, 4, 2, 3, 2}, 22);
    auto state = sor_on(5);
    LayerMasks masks;
    // Redraw until some coordinate is actually dropped.
    do masks = draw_layer_masks(state, params);
    while (sum(masks.heads[0].m2->mask) == 36.0);
    std::mt19937_64 rng(22);
    const Matrix h = gaussian(6, 4, rng);
    const auto [out, cache] = forward_multihead(h, params, &masks);
    const LayerGradients g = backward(gaussian(6, 4, rng), cache, params);
    for (std::size_t i = 0; i < params.heads.size(); ++i) {
      const auto& hm = masks.heads[i];
      const auto& gh = g.params.heads[i];
      const auto check = [](const std::optional<sor::OffsetMask>& m, const Matrix& grad) {
        REQUIRE(m.has_value());
        std::size_t dropped = 0;
        for (std::size_t j = 0; j < grad.size(); ++j)
          if (m->mask.data()[j] == 0.0) {
            ++dropped;
            CHECK(grad.data()[j] == 0.0);
          }
        return dropped;
      };
      check(hm.m2, gh.m2);
      if (v == Variant::ToaGated) {
        check(hm.m1_left, gh.gated->m1_left);
        check(hm.m1_right, gh.gated->m1_right);
      } else {
        check(hm.m1, gh.m1);
      }
    }
  }
}

TEST_CASE("backward rejects a cache from other parameters") {
  const MultiHeadParams relu = random_params(Variant::ToaRelu, {5, 4, 2, 3, 2}, 23);
  const MultiHeadParams soft = random_params(Variant::ToaSoftmax, {5, 4, 2, 3, 2}, 23);
  std::mt19937_64 rng(23);
  const auto [out, cache] = forward_multihead(gaussian(5, 4, rng), relu, nullptr);
  CHECK_THROWS_AS(backward(out, cache, soft), ConfigError);
  CHECK_THROWS_AS(backward(Matrix(4, 4), cache, relu), ShapeError);
}

TEST_CASE("disabled SOR draws no masks and sampled masks change the output") {
  const MultiHeadParams params = random_params(Variant::ToaRelu, {6, 4, 2, 3, 2}, 24);
  auto off = sor_off();
  const LayerMasks none = draw_layer_masks(off, params);
  for (const auto& hm : none.heads) CHECK_FALSE(hm.m2.has_value());

  std::mt19937_64 rng(24);
  const Matrix h = gaussian(6, 4, rng);
  const Matrix clean = forward_multihead(h, params, nullptr).first;
  CHECK(forward_multihead(h, params, off).first == clean);
  auto on = sor_on(3);
  CHECK(forward_multihead(h, params, on).first != clean);

  auto shared = sor_on(4, true);
  const LayerMasks m = draw_layer_masks(shared, params);
  CHECK(m.heads[0].m1->p == m.heads[1].m2->p);
  auto separate = sor_on(4, false);
  const LayerMasks ms = draw_layer_masks(separate, params);
  CHECK(ms.heads[0].m1->p != ms.heads[0].m2->p);
}

TEST_CASE("effective mixing matrix reproduces the head output") {
  std::mt19937_64 rng(25);
  for (Variant v : kAllVariants) {
    const Dims dims{7, 4, 1, 3, 3};
    const HeadParams head = random_params(v, dims, 25).heads.front();
    const Matrix h = gaussian(dims.n, dims.d, rng);
    const Matrix mix = effective_mixing(h, head, v);
    auto s = sor_off();
    const Matrix out = run_head(h, head, v, s).first;
    CHECK(max_abs_diff(matmul(mix, matmul_nt(h, head.w_v)), out) <= 1e-12);
    if (v == Variant::SoftmaxBaseline)
      for (std::size_t r = 0; r < dims.n; ++r) {
        double total = 0.0;
        for (double x : mix.row(r)) {
          CHECK(x >= 0.0);
          total += x;
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
      }
  }
}

TEST_CASE("batched forward matches per-sample forward, with any thread count") {
  for (Variant v : kAllVariants) {
    const MultiHeadParams params = random_params(v, {40, 6, 2, 3, 3}, 26);
    auto state = sor_on(9);
    const LayerMasks masks = draw_layer_masks(state, params);
    std::mt19937_64 rng(26);
    std::vector<Matrix> xs;
    for (int b = 0; b < 5; ++b) xs.push_back(gaussian(40, 6, rng));
    std::vector<const Matrix*> ptrs;
    for (const auto& x : xs) ptrs.push_back(&x);
    const auto single = forward_multihead_batch(ptrs, params, &masks, nullptr, 1);
    const auto threaded = forward_multihead_batch(ptrs, params, &masks, nullptr, 3);
    for (std::size_t b = 0; b < xs.size(); ++b) {
      const Matrix alone = forward_multihead(xs[b], params, &masks).first;
      CHECK(max_abs_diff(single[b], alone) <= 1e-12);
      CHECK(max_abs_diff(threaded[b], single[b]) <= 1e-12);
    }
  }
}

TEST_CASE("forward passes are deterministic") {
  for (Variant v : kAllVariants) {
    const MultiHeadParams params = random_params(v, {8, 4, 2, 3, 2}, 27);
    std::mt19937_64 rng(27);
    const Matrix h = gaussian(8, 4, rng);
    auto a = sor_on(11), b = sor_on(11);
    CHECK(forward_multihead(h, params, a).first == forward_multihead(h, params, b).first);
  }
}

TEST_CASE("parameter JSON round trip is bit exact") {
  for (Variant v : kAllVariants) {
    MultiHeadParams params = random_params(v, {6, 4, 2, 3, 2}, 28);
    params.options.temperature = false;
    params.w_o(0, 0) = 1.0 / 3.0;
    params.w_o(0, 1) = -0.0;
    params.w_o(1, 0) = 5e-324;
    const std::string text = to_json(params).dump();
    const MultiHeadParams back = multihead_from_json(nlohmann::json::parse(text));
    CHECK(back.variant == v);
    CHECK(back.options.temperature == false);
    const auto a = tensors(params);
    const auto b = tensors(back);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      REQUIRE(a[i]->same_shape(*b[i]));
      CHECK(std::memcmp(a[i]->data(), b[i]->data(), a[i]->size() * sizeof(double)) == 0);
    }
  }
  CHECK_THROWS_AS(multihead_from_json(nlohmann::json::parse(R"({"variant": "toa-relu"})")),
                  FormatError);
  nlohmann::json bad = matrix_to_json(Matrix{{1.0, 2.0}});
  bad["bits"] = "zz";
  CHECK_THROWS_AS(matrix_from_json(bad), FormatError);
}
