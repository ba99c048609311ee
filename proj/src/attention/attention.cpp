#include "toa/attention.hpp"

#include <cmath>
#include <string>

#include "kernel.hpp"
#include "toa/linalg.hpp"
#include "toa/parallel.hpp"

namespace toa::attention {
namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

Matrix zeros_of(const Matrix& m) { return Matrix(m.rows(), m.cols()); }

Matrix residual(const Matrix& offset, const std::optional<sor::OffsetMask>& mask) {
  Matrix s = mask ? sor::apply(offset, *mask) : offset;
  for (std::size_t i = 0; i < s.rows(); ++i) s(i, i) += 1.0;
  return s;
}

void accumulate_offset_grad(Matrix& grad, const Matrix& d_s,
                            const std::optional<sor::OffsetMask>& mask) {
  if (!mask) {
    grad += d_s;
    return;
  }
  const double scale = mask->scale();
  const double* m = mask->mask.data();
  const double* src = d_s.data();
  double* dst = grad.data();
  for (std::size_t i = 0; i < grad.size(); ++i) dst[i] += src[i] * m[i] * scale;
}

std::size_t head_dim(const HeadParams& head) {
  return head.gated ? head.gated->w_q_left.rows() : head.w_q.rows();
}

double temperature(const ScoreOptions& options, std::size_t d_h) {
  return options.temperature ? 1.0 / std::sqrt(static_cast<double>(d_h)) : 1.0;
}

double relu_scale(const ScoreOptions& options, std::size_t n) {
  return options.length_normalized_relu ? 1.0 / static_cast<double>(n) : 1.0;
}

void check_head(const Matrix& h, const HeadParams& head, Variant variant) {
  if (variant == Variant::ToaGated) {
    if (!head.gated) throw ConfigError("toa-gated head is missing its left/right projections");
    if (head.gated->w_q_left.cols() != h.cols())
      throw ShapeError("tokens " + h.shape_string() + " do not match gated projections " +
                       head.gated->w_q_left.shape_string());
  } else {
    if (head.w_q.empty() || head.w_k.empty())
      throw ConfigError(std::string(to_string(variant)) + " head is missing w_q / w_k");
    if (head.w_q.cols() != h.cols() || head.w_k.cols() != h.cols())
      throw ShapeError("tokens " + h.shape_string() + " do not match projections " +
                       head.w_q.shape_string());
    require_same_shape(head.w_q, head.w_k, "w_q/w_k");
  }
  if (head.w_v.cols() != h.cols())
    throw ShapeError("tokens " + h.shape_string() + " do not match w_v " + head.w_v.shape_string());
  if (has_offsets(variant)) {
    if (head.m2.empty()) throw ConfigError(std::string(to_string(variant)) + " head has no M2");
    if (head.m2.rows() != h.rows()) {
      throw ShapeError("sequence length " + std::to_string(h.rows()) +
                       " does not match operator size " + head.m2.shape_string());
    }
  }
}

Matrix columns(const Matrix& m, std::size_t first, std::size_t count) {
  Matrix out(m.rows(), count);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = m(r, first + c);
  return out;
}

void set_columns(Matrix& m, std::size_t first, const Matrix& block) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < block.cols(); ++c) m(r, first + c) = block(r, c);
}

template <class HeadT, class MatT>
std::vector<MatT*> collect(HeadT& head) {
  std::vector<MatT*> out;
  auto push = [&](MatT& m) {
    if (!m.empty()) out.push_back(&m);
  };
  push(head.w_q);
  push(head.w_k);
  push(head.w_v);
  push(head.m1);
  push(head.m2);
  if (head.gated) {
    push(head.gated->w_q_left);
    push(head.gated->w_k_left);
    push(head.gated->w_q_right);
    push(head.gated->w_k_right);
    push(head.gated->m1_left);
    push(head.gated->m1_right);
  }
  return out;
}

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::SoftmaxBaseline: return "softmax";
    case Variant::ToaSoftmax: return "toa-softmax";
    case Variant::ToaRelu: return "toa-relu";
    case Variant::ToaGated: return "toa-gated";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants)
    if (to_string(v) == name) return v;
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected softmax, toa-softmax, toa-relu or toa-gated)");
}

Dims dims_of(const MultiHeadParams& params) {
  if (params.heads.empty()) throw ConfigError("multi-head params have no heads");
  const HeadParams& h0 = params.heads.front();
  Dims d;
  d.heads = params.heads.size();
  d.d = h0.w_v.cols();
  d.d_v = h0.w_v.rows();
  d.d_h = head_dim(h0);
  d.n = h0.m2.rows();
  return d;
}

MultiHeadParams init_multihead(Variant variant, const Dims& dims, std::mt19937_64& rng,
                               double sigma_m, ScoreOptions options) {
  if (dims.n == 0 || dims.d == 0 || dims.heads == 0 || dims.d_h == 0 || dims.d_v == 0)
    throw ConfigError("attention dimensions must be positive");
  MultiHeadParams p;
  p.variant = variant;
  p.options = options;
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(dims.d));
  for (std::size_t i = 0; i < dims.heads; ++i) {
    HeadParams head;
    if (variant == Variant::ToaGated) {
      GatedProjections g;
      g.w_q_left = gaussian(dims.d_h, dims.d, proj_std, rng);
      g.w_k_left = gaussian(dims.d_h, dims.d, proj_std, rng);
      g.w_q_right = gaussian(dims.d_h, dims.d, proj_std, rng);
      g.w_k_right = gaussian(dims.d_h, dims.d, proj_std, rng);
      g.m1_left = gaussian(dims.n, dims.n, sigma_m, rng);
      g.m1_right = gaussian(dims.n, dims.n, sigma_m, rng);
      head.gated = std::move(g);
    } else {
      head.w_q = gaussian(dims.d_h, dims.d, proj_std, rng);
      head.w_k = gaussian(dims.d_h, dims.d, proj_std, rng);
      if (variant != Variant::SoftmaxBaseline) head.m1 = gaussian(dims.n, dims.n, sigma_m, rng);
    }
    head.w_v = gaussian(dims.d_v, dims.d, proj_std, rng);
    if (has_offsets(variant)) head.m2 = gaussian(dims.n, dims.n, sigma_m, rng);
    p.heads.push_back(std::move(head));
  }
  p.w_o = gaussian(dims.heads * dims.d_v, dims.d,
                   1.0 / std::sqrt(static_cast<double>(dims.heads * dims.d_v)), rng);
  return p;
}

HeadParams zeros_like(const HeadParams& head) {
  HeadParams z;
  z.w_q = zeros_of(head.w_q);
  z.w_k = zeros_of(head.w_k);
  z.w_v = zeros_of(head.w_v);
  z.m1 = zeros_of(head.m1);
  z.m2 = zeros_of(head.m2);
  if (head.gated) {
    const auto& g = *head.gated;
    z.gated = GatedProjections{zeros_of(g.w_q_left),  zeros_of(g.w_k_left), zeros_of(g.w_q_right),
                               zeros_of(g.w_k_right), zeros_of(g.m1_left),  zeros_of(g.m1_right)};
  }
  return z;
}

MultiHeadParams zeros_like(const MultiHeadParams& params) {
  MultiHeadParams z;
  z.variant = params.variant;
  z.options = params.options;
  for (const auto& h : params.heads) z.heads.push_back(zeros_like(h));
  z.w_o = zeros_of(params.w_o);
  return z;
}

std::vector<Matrix*> tensors(HeadParams& head) { return collect<HeadParams, Matrix>(head); }
std::vector<const Matrix*> tensors(const HeadParams& head) {
  return collect<const HeadParams, const Matrix>(head);
}

std::vector<Matrix*> tensors(MultiHeadParams& params) {
  std::vector<Matrix*> out;
  for (auto& h : params.heads) {
    auto t = tensors(h);
    out.insert(out.end(), t.begin(), t.end());
  }
  out.push_back(&params.w_o);
  return out;
}

std::vector<const Matrix*> tensors(const MultiHeadParams& params) {
  std::vector<const Matrix*> out;
  for (const auto& h : params.heads) {
    auto t = tensors(h);
    out.insert(out.end(), t.begin(), t.end());
  }
  out.push_back(&params.w_o);
  return out;
}

HeadMasks draw_head_masks(sor::SorState& state, const HeadParams& head,
                          std::optional<double> shared_p) {
  HeadMasks masks;
  if (!state.enabled()) return masks;
  auto draw = [&](const Matrix& m) -> std::optional<sor::OffsetMask> {
    if (m.empty()) return std::nullopt;
    return shared_p ? sor::sample_mask_at(state, m.rows(), m.cols(), *shared_p)
                    : sor::sample_mask(state, m.rows(), m.cols());
  };
  masks.m1 = draw(head.m1);
  masks.m2 = draw(head.m2);
  if (head.gated) {
    masks.m1_left = draw(head.gated->m1_left);
    masks.m1_right = draw(head.gated->m1_right);
  }
  return masks;
}

LayerMasks draw_layer_masks(sor::SorState& state, const MultiHeadParams& params,
                            std::optional<double> shared_p) {
  LayerMasks masks;
  if (state.enabled() && state.config().shared_p && !shared_p) shared_p = state.sample_rate();
  for (const auto& head : params.heads) masks.heads.push_back(draw_head_masks(state, head, shared_p));
  return masks;
}

HeadOperators materialize(const HeadParams& head, const HeadMasks* masks) {
  static const HeadMasks kNone;
  const HeadMasks& m = masks ? *masks : kNone;
  HeadOperators ops;
  if (!head.m1.empty()) ops.s1 = residual(head.m1, m.m1);
  if (!head.m2.empty()) ops.s2 = residual(head.m2, m.m2);
  if (head.gated) {
    ops.s1_left = residual(head.gated->m1_left, m.m1_left);
    ops.s1_right = residual(head.gated->m1_right, m.m1_right);
  }
  return ops;
}

Matrix score(const Matrix& h, const HeadParams& head) {
  if (head.w_q.cols() != h.cols() || head.w_k.cols() != h.cols())
    throw ShapeError("score: tokens " + h.shape_string() + " vs projections " +
                     head.w_q.shape_string() + ", " + head.w_k.shape_string());
  return matmul_nt(matmul_nt(h, head.w_q), matmul_nt(h, head.w_k));
}

namespace {

detail::KernelInputs kernel_inputs(const HeadCache& c) {
  detail::KernelInputs in;
  in.q = &c.q;
  in.kt = &c.kt;
  in.scale = c.score_scale;
  switch (c.variant) {
    case Variant::SoftmaxBaseline:
    case Variant::ToaSoftmax: in.activation = detail::Activation::Softmax; break;
    case Variant::ToaRelu: in.activation = detail::Activation::Relu; break;
    case Variant::ToaGated:
      in.activation = detail::Activation::Gated;
      in.q_right = &c.q_right;
      in.kt_right = &c.kt_right;
      in.right_scale = c.right_score_scale;
      break;
  }
  return in;
}

const HeadMasks& masks_or_none(const std::shared_ptr<const HeadMasks>& masks) {
  static const HeadMasks kNone;
  return masks ? *masks : kNone;
}

// kt = k0^T S1 for every sample, or k0^T when there is no operator.
void keys_through_operator(const std::vector<HeadCache*>& caches, Matrix HeadCache::*k0,
                           Matrix HeadCache::*kt, const Matrix* s1, int threads) {
  if (!s1) {
    parallel_for(caches.size(), threads,
                 [&](std::size_t b) { caches[b]->*kt = transpose(caches[b]->*k0); });
    return;
  }
  std::vector<const Matrix*> keys;
  for (HeadCache* c : caches) keys.push_back(&(c->*k0));
  std::vector<Matrix> mixed = detail::operator_apply_batch(*s1, true, keys, threads);
  parallel_for(caches.size(), threads,
               [&](std::size_t b) { caches[b]->*kt = transpose(mixed[b]); });
}

// Forward pass of one head over a batch sharing ops and masks.
void head_forward_batch(const std::vector<const Matrix*>& hs, const HeadParams& head,
                        Variant variant, const ScoreOptions& options,
                        const std::shared_ptr<const HeadOperators>& ops,
                        const std::shared_ptr<const HeadMasks>& masks,
                        const std::vector<HeadCache*>& caches, std::vector<Matrix>& outs,
                        const Matrix* values_override, int threads) {
  for (const Matrix* h : hs) check_head(*h, head, variant);
  if (has_offsets(variant) && !ops) throw ConfigError("head_forward: operators not materialized");
  if (values_override && values_override->rows() != hs.front()->rows())
    throw ShapeError("value override " + values_override->shape_string() + " for " +
                     std::to_string(hs.front()->rows()) + " tokens");
  const double temp = temperature(options, head_dim(head));
  const bool gated = variant == Variant::ToaGated;

  parallel_for(hs.size(), threads, [&](std::size_t b) {
    const Matrix& h = *hs[b];
    HeadCache& c = *caches[b];
    c.variant = variant;
    c.ops = ops;
    c.masks = masks;
    const double rscale = relu_scale(options, h.rows());
    if (gated) {
      const auto& g = *head.gated;
      c.score_scale = temp * rscale;
      c.right_score_scale = temp;
      c.q = matmul_nt(h, g.w_q_left);
      c.k0 = matmul_nt(h, g.w_k_left);
      c.q_right = matmul_nt(h, g.w_q_right);
      c.k0_right = matmul_nt(h, g.w_k_right);
    } else {
      c.score_scale = variant == Variant::ToaRelu ? temp * rscale : temp;
      c.q = matmul_nt(h, head.w_q);
      c.k0 = matmul_nt(h, head.w_k);
    }
    c.v = values_override ? *values_override : matmul_nt(h, head.w_v);
  });

  switch (variant) {
    case Variant::SoftmaxBaseline:
      keys_through_operator(caches, &HeadCache::k0, &HeadCache::kt, nullptr, threads);
      break;
    case Variant::ToaSoftmax:
    case Variant::ToaRelu:
      keys_through_operator(caches, &HeadCache::k0, &HeadCache::kt, &ops->s1, threads);
      break;
    case Variant::ToaGated:
      keys_through_operator(caches, &HeadCache::k0, &HeadCache::kt, &ops->s1_left, threads);
      keys_through_operator(caches, &HeadCache::k0_right, &HeadCache::kt_right, &ops->s1_right,
                            threads);
      break;
  }

  if (has_offsets(variant)) {
    std::vector<const Matrix*> values;
    for (HeadCache* c : caches) values.push_back(&c->v);
    std::vector<Matrix> mixed = detail::operator_apply_batch(ops->s2, false, values, threads);
    for (std::size_t b = 0; b < caches.size(); ++b) caches[b]->u = std::move(mixed[b]);
  } else {
    for (HeadCache* c : caches) c->u = c->v;
  }

  outs.resize(hs.size());
  parallel_for(hs.size(), threads, [&](std::size_t b) {
    outs[b] = detail::kernel_apply(kernel_inputs(*caches[b]), caches[b]->u);
  });
}

// d_s is dLoss/dS; only kept coordinates of M receive it, scaled by 1/(1-p).
void offset_grad_from_batch(Matrix& grad, const std::vector<const Matrix*>& as,
                            const std::vector<const Matrix*>& bs,
                            const std::optional<sor::OffsetMask>& mask, int threads) {
  accumulate_offset_grad(grad, detail::outer_sum_batch(as, bs, threads), mask);
}

struct BranchRefs {
  Matrix HeadCache::*k0;
  Matrix detail::KernelGradients::*d_q;
  Matrix detail::KernelGradients::*d_kt;
  const Matrix* w_q;
  const Matrix* w_k;
  Matrix* g_wq;
  Matrix* g_wk;
  const Matrix* s1;  // nullptr for the baseline
  Matrix* g_m1;
  const std::optional<sor::OffsetMask>* mask;
};

void branch_backward_batch(const BranchRefs& br, const std::vector<const HeadCache*>& caches,
                           const std::vector<detail::KernelGradients>& kg,
                           const std::vector<const Matrix*>& hs, std::vector<Matrix>& d_hs,
                           int threads) {
  const std::size_t batch = caches.size();
  std::vector<Matrix> d_kt_t(batch);
  parallel_for(batch, threads, [&](std::size_t b) { d_kt_t[b] = transpose(kg[b].*br.d_kt); });
  std::vector<Matrix> d_k0;
  if (br.s1) {
    std::vector<const Matrix*> keys, dk;
    for (std::size_t b = 0; b < batch; ++b) {
      keys.push_back(&(caches[b]->*br.k0));
      dk.push_back(&d_kt_t[b]);
    }
    // dS1 = sum_b k0_b dKt_b and dK0_b = S1 dKt_b^T.
    offset_grad_from_batch(*br.g_m1, keys, dk, *br.mask, threads);
    d_k0 = detail::operator_apply_batch(*br.s1, false, dk, threads);
  } else {
    d_k0 = std::move(d_kt_t);
  }
  for (std::size_t b = 0; b < batch; ++b) {
    matmul_tn_acc(*br.g_wq, kg[b].*br.d_q, *hs[b]);
    matmul_tn_acc(*br.g_wk, d_k0[b], *hs[b]);
  }
  parallel_for(batch, threads, [&](std::size_t b) {
    matmul_acc(d_hs[b], kg[b].*br.d_q, *br.w_q);
    matmul_acc(d_hs[b], d_k0[b], *br.w_k);
  });
}

// Backward pass of one head over a batch sharing ops and masks. Gradients
// accumulate into grads in sample order; d_hs receives dLoss/dH additively.
void head_backward_batch(const std::vector<const Matrix*>& d_outs,
                         const std::vector<const HeadCache*>& caches,
                         const std::vector<const Matrix*>& hs, const HeadParams& head,
                         HeadParams& grads, std::vector<Matrix>& d_hs, int threads) {
  const std::size_t batch = caches.size();
  const Variant variant = caches.front()->variant;
  if ((variant == Variant::ToaGated) != head.gated.has_value())
    throw ConfigError("head_backward: cache/params variant mismatch");
  for (std::size_t b = 0; b < batch; ++b) {
    const HeadCache& c = *caches[b];
    if (c.variant != variant || c.ops != caches.front()->ops)
      throw ConfigError("head_backward: batch caches come from different forward passes");
    if (hs[b]->rows() != c.q.rows()) throw ConfigError("head_backward: cache/input mismatch");
    if (d_outs[b]->rows() != c.u.rows() || d_outs[b]->cols() != c.u.cols())
      throw ShapeError("head_backward: upstream " + d_outs[b]->shape_string() + " vs output " +
                       std::to_string(c.u.rows()) + "x" + std::to_string(c.u.cols()));
  }
  const HeadMasks& masks = masks_or_none(caches.front()->masks);
  const HeadOperators* ops = caches.front()->ops.get();

  std::vector<detail::KernelGradients> kg(batch);
  parallel_for(batch, threads, [&](std::size_t b) {
    kg[b] = detail::kernel_backward(kernel_inputs(*caches[b]), caches[b]->u, *d_outs[b]);
  });

  std::vector<Matrix> d_v;
  if (has_offsets(variant)) {
    std::vector<const Matrix*> du, vs;
    for (std::size_t b = 0; b < batch; ++b) {
      du.push_back(&kg[b].d_u);
      vs.push_back(&caches[b]->v);
    }
    offset_grad_from_batch(grads.m2, du, vs, masks.m2, threads);
    d_v = detail::operator_apply_batch(ops->s2, true, du, threads);
  } else {
    for (auto& g : kg) d_v.push_back(std::move(g.d_u));
  }
  for (std::size_t b = 0; b < batch; ++b) matmul_tn_acc(grads.w_v, d_v[b], *hs[b]);
  parallel_for(batch, threads, [&](std::size_t b) { matmul_acc(d_hs[b], d_v[b], head.w_v); });

  using KG = detail::KernelGradients;
  switch (variant) {
    case Variant::SoftmaxBaseline:
      branch_backward_batch({&HeadCache::k0, &KG::d_q, &KG::d_kt, &head.w_q, &head.w_k,
                             &grads.w_q, &grads.w_k, nullptr, nullptr, &masks.m1},
                            caches, kg, hs, d_hs, threads);
      break;
    case Variant::ToaSoftmax:
    case Variant::ToaRelu:
      branch_backward_batch({&HeadCache::k0, &KG::d_q, &KG::d_kt, &head.w_q, &head.w_k,
                             &grads.w_q, &grads.w_k, &ops->s1, &grads.m1, &masks.m1},
                            caches, kg, hs, d_hs, threads);
      break;
    case Variant::ToaGated: {
      const auto& g = *head.gated;
      auto& gg = *grads.gated;
      branch_backward_batch({&HeadCache::k0, &KG::d_q, &KG::d_kt, &g.w_q_left, &g.w_k_left,
                             &gg.w_q_left, &gg.w_k_left, &ops->s1_left, &gg.m1_left,
                             &masks.m1_left},
                            caches, kg, hs, d_hs, threads);
      branch_backward_batch({&HeadCache::k0_right, &KG::d_q_right, &KG::d_kt_right, &g.w_q_right,
                             &g.w_k_right, &gg.w_q_right, &gg.w_k_right, &ops->s1_right,
                             &gg.m1_right, &masks.m1_right},
                            caches, kg, hs, d_hs, threads);
      break;
    }
  }
}

}  // namespace

Matrix kernel(const HeadCache& cache) { return detail::kernel_matrix(kernel_inputs(cache)); }

Matrix head_forward(const Matrix& h, const HeadParams& head, Variant variant,
                    const ScoreOptions& options, std::shared_ptr<const HeadOperators> ops,
                    HeadCache* cache, const Matrix* values_override) {
  HeadCache local;
  std::vector<Matrix> outs;
  head_forward_batch({&h}, head, variant, options, ops, nullptr, {cache ? cache : &local}, outs,
                     values_override, 1);
  return std::move(outs.front());
}

namespace {

std::pair<Matrix, HeadCache> single_head(const Matrix& h, const HeadParams& head, Variant variant,
                                         sor::SorState* sor, const ScoreOptions& options) {
  auto masks = std::make_shared<HeadMasks>();
  if (sor && sor->enabled()) {
    std::optional<double> shared;
    if (sor->config().shared_p) shared = sor->sample_rate();
    *masks = draw_head_masks(*sor, head, shared);
  }
  std::shared_ptr<const HeadOperators> ops;
  if (has_offsets(variant))
    ops = std::make_shared<const HeadOperators>(materialize(head, masks.get()));
  HeadCache cache;
  std::vector<Matrix> outs;
  head_forward_batch({&h}, head, variant, options, ops, masks, {&cache}, outs, nullptr, 1);
  return {std::move(outs.front()), std::move(cache)};
}

}  // namespace

std::pair<Matrix, HeadCache> forward_softmax_baseline(const Matrix& h, const HeadParams& head,
                                                      const ScoreOptions& options) {
  return single_head(h, head, Variant::SoftmaxBaseline, nullptr, options);
}

std::pair<Matrix, HeadCache> forward_toa_softmax(const Matrix& h, const HeadParams& head,
                                                 sor::SorState& sor,
                                                 const ScoreOptions& options) {
  return single_head(h, head, Variant::ToaSoftmax, &sor, options);
}

std::pair<Matrix, HeadCache> forward_toa_relu(const Matrix& h, const HeadParams& head,
                                              sor::SorState& sor, const ScoreOptions& options) {
  return single_head(h, head, Variant::ToaRelu, &sor, options);
}

std::pair<Matrix, HeadCache> forward_toa_gated(const Matrix& h, const HeadParams& head,
                                               sor::SorState& sor, const ScoreOptions& options) {
  return single_head(h, head, Variant::ToaGated, &sor, options);
}

std::vector<Matrix> forward_multihead_batch(const std::vector<const Matrix*>& inputs,
                                            const MultiHeadParams& params,
                                            const LayerMasks* masks,
                                            std::vector<LayerCache>* caches, int threads) {
  if (params.heads.empty()) throw ConfigError("multi-head params have no heads");
  if (inputs.empty()) throw ConfigError("forward pass over an empty batch");
  if (masks && masks->heads.size() != params.heads.size())
    throw ConfigError("mask count does not match head count");
  const std::size_t d_v = params.heads.front().w_v.rows();
  if (params.w_o.rows() != params.heads.size() * d_v)
    throw ShapeError("w_o " + params.w_o.shape_string() + " does not match " +
                     std::to_string(params.heads.size()) + " heads of width " +
                     std::to_string(d_v));
  for (const Matrix* h : inputs)
    if (h->rows() != inputs.front()->rows())
      throw ShapeError("batch members differ in length: " + h->shape_string() + " vs " +
                       inputs.front()->shape_string());

  const std::size_t batch = inputs.size();
  std::vector<LayerCache> local;
  std::vector<LayerCache>& cs = caches ? *caches : local;
  cs.assign(batch, LayerCache{});
  for (std::size_t b = 0; b < batch; ++b) {
    cs[b].variant = params.variant;
    if (caches) cs[b].input = *inputs[b];
    cs[b].concat = Matrix(inputs[b]->rows(), params.heads.size() * d_v);
    cs[b].heads.resize(params.heads.size());
  }

  for (std::size_t i = 0; i < params.heads.size(); ++i) {
    const HeadParams& head = params.heads[i];
    if (head.w_v.rows() != d_v) throw ShapeError("heads disagree on value width");
    std::shared_ptr<const HeadMasks> hm;
    if (masks) hm = std::make_shared<const HeadMasks>(masks->heads[i]);
    std::shared_ptr<const HeadOperators> ops;
    if (has_offsets(params.variant))
      ops = std::make_shared<const HeadOperators>(materialize(head, hm.get()));
    std::vector<HeadCache*> head_caches;
    for (auto& c : cs) head_caches.push_back(&c.heads[i]);
    std::vector<Matrix> outs;
    head_forward_batch(inputs, head, params.variant, params.options, ops, hm, head_caches, outs,
                       nullptr, threads);
    for (std::size_t b = 0; b < batch; ++b) set_columns(cs[b].concat, i * d_v, outs[b]);
  }

  std::vector<Matrix> outs(batch);
  parallel_for(batch, threads, [&](std::size_t b) { outs[b] = matmul(cs[b].concat, params.w_o); });
  return outs;
}

std::pair<Matrix, LayerCache> forward_multihead(const Matrix& h, const MultiHeadParams& params,
                                                const LayerMasks* masks) {
  std::vector<LayerCache> caches;
  std::vector<Matrix> outs = forward_multihead_batch({&h}, params, masks, &caches, 1);
  return {std::move(outs.front()), std::move(caches.front())};
}

std::pair<Matrix, LayerCache> forward_multihead(const Matrix& h, const MultiHeadParams& params,
                                                sor::SorState& sor) {
  if (!sor.enabled()) return forward_multihead(h, params, static_cast<const LayerMasks*>(nullptr));
  const LayerMasks masks = draw_layer_masks(sor, params);
  return forward_multihead(h, params, &masks);
}

Matrix head_backward(const Matrix& d_out, const HeadCache& cache, const Matrix& h,
                     const HeadParams& head, HeadParams& grads) {
  std::vector<Matrix> d_hs{Matrix(h.rows(), h.cols())};
  head_backward_batch({&d_out}, {&cache}, {&h}, head, grads, d_hs, 1);
  return std::move(d_hs.front());
}

std::vector<Matrix> backward_batch(const std::vector<const Matrix*>& upstream,
                                   const std::vector<const LayerCache*>& caches,
                                   const MultiHeadParams& params, MultiHeadParams& grads,
                                   int threads) {
  if (upstream.size() != caches.size() || caches.empty())
    throw ConfigError("backward: upstream and cache batches differ in size");
  if (grads.heads.size() != params.heads.size())
    throw ConfigError("backward: gradient accumulator does not match parameters");
  const std::size_t batch = caches.size();
  for (std::size_t b = 0; b < batch; ++b) {
    const LayerCache& c = *caches[b];
    if (c.variant != params.variant || c.heads.size() != params.heads.size())
      throw ConfigError("backward: cache was produced by different parameters");
    if (c.input.empty()) throw ConfigError("backward: cache does not hold its input");
    if (upstream[b]->rows() != c.concat.rows() || upstream[b]->cols() != params.w_o.cols())
      throw ShapeError("backward: upstream " + upstream[b]->shape_string() + " for output " +
                       std::to_string(c.concat.rows()) + "x" + std::to_string(params.w_o.cols()));
  }

  // Samples from different forward passes cannot share the operator products.
  for (std::size_t b = 1; b < batch; ++b) {
    for (std::size_t i = 0; i < params.heads.size(); ++i) {
      if (caches[b]->heads[i].ops != caches[0]->heads[i].ops) {
        std::vector<Matrix> d_inputs;
        for (std::size_t s = 0; s < batch; ++s)
          d_inputs.push_back(
              std::move(backward_batch({upstream[s]}, {caches[s]}, params, grads, threads).front()));
        return d_inputs;
      }
    }
  }

  const std::size_t d_v = params.heads.front().w_v.rows();
  std::vector<Matrix> d_concat(batch);
  std::vector<const Matrix*> hs;
  std::vector<Matrix> d_inputs;
  for (std::size_t b = 0; b < batch; ++b) {
    matmul_tn_acc(grads.w_o, caches[b]->concat, *upstream[b]);
    hs.push_back(&caches[b]->input);
    d_inputs.emplace_back(caches[b]->input.rows(), caches[b]->input.cols());
  }
  parallel_for(batch, threads,
               [&](std::size_t b) { d_concat[b] = matmul_nt(*upstream[b], params.w_o); });
  for (std::size_t i = 0; i < params.heads.size(); ++i) {
    std::vector<Matrix> d_out(batch);
    std::vector<const Matrix*> d_out_ptrs;
    std::vector<const HeadCache*> head_caches;
    for (std::size_t b = 0; b < batch; ++b) {
      d_out[b] = columns(d_concat[b], i * d_v, d_v);
      d_out_ptrs.push_back(&d_out[b]);
      head_caches.push_back(&caches[b]->heads[i]);
    }
    head_backward_batch(d_out_ptrs, head_caches, hs, params.heads[i], grads.heads[i], d_inputs,
                        threads);
  }
  return d_inputs;
}

Matrix backward_accumulate(const Matrix& upstream_grad, const LayerCache& cache,
                           const MultiHeadParams& params, MultiHeadParams& grads) {
  return std::move(backward_batch({&upstream_grad}, {&cache}, params, grads, 1).front());
}

LayerGradients backward(const Matrix& upstream_grad, const LayerCache& cache,
                        const MultiHeadParams& params) {
  LayerGradients g;
  g.params = zeros_like(params);
  g.d_input = backward_accumulate(upstream_grad, cache, params, g.params);
  return g;
}

Matrix effective_mixing(const Matrix& h, const HeadParams& head, Variant variant,
                        const ScoreOptions& options, const HeadMasks* masks) {
  std::shared_ptr<const HeadOperators> ops;
  if (has_offsets(variant)) ops = std::make_shared<const HeadOperators>(materialize(head, masks));
  const Matrix identity = Matrix::identity(h.rows());
  return head_forward(h, head, variant, options, ops, nullptr, &identity);
}

}  // namespace toa::attention
