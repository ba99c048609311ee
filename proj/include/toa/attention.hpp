#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

#include "toa/matrix.hpp"
#include "toa/sor.hpp"

namespace toa::attention {

enum class Variant { SoftmaxBaseline, ToaSoftmax, ToaRelu, ToaGated };

inline constexpr Variant kAllVariants[] = {Variant::SoftmaxBaseline, Variant::ToaSoftmax,
                                           Variant::ToaRelu, Variant::ToaGated};

// CLI / file names: softmax, toa-softmax, toa-relu, toa-gated.
std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);

// Only the baseline lacks the residual offsets M1/M2.
inline bool has_offsets(Variant v) { return v != Variant::SoftmaxBaseline; }

// Left/right query-key groups and pre-activation offsets of a gated head.
struct GatedProjections {
  Matrix w_q_left, w_k_left;    // d_h x d
  Matrix w_q_right, w_k_right;  // d_h x d
  Matrix m1_left, m1_right;     // N x N
};

// Per-head parameters. Fields a variant does not use stay empty (0x0):
// the baseline has no offsets, a gated head has no w_q / w_k / m1.
struct HeadParams {
  Matrix w_q, w_k;  // d_h x d
  Matrix w_v;       // d_v x d
  Matrix m1, m2;    // N x N, S_i = I + M_i
  std::optional<GatedProjections> gated;
};

// How raw bilinear scores are scaled before the activation.
struct ScoreOptions {
  // Multiply scores by 1/sqrt(d_h).
  bool temperature = true;
  // Multiply ReLU-branch scores by 1/N so an unnormalized kernel row has
  // O(1) mass at initialization. ReLU is positively homogeneous, so this is
  // a constant rescaling of the kernel.
  bool length_normalized_relu = true;

  static ScoreOptions unscaled() { return {false, false}; }
};

struct MultiHeadParams {
  Variant variant = Variant::SoftmaxBaseline;
  ScoreOptions options;
  std::vector<HeadParams> heads;
  Matrix w_o;  // (H * d_v) x d
};

struct Dims {
  std::size_t n = 0;      // sequence length
  std::size_t d = 0;      // token width
  std::size_t heads = 1;
  std::size_t d_h = 0;
  std::size_t d_v = 0;
};

Dims dims_of(const MultiHeadParams& params);

// Gaussian init: projections N(0, 1/d), w_o N(0, 1/(H d_v)), offsets
// N(0, sigma_m^2).
MultiHeadParams init_multihead(Variant variant, const Dims& dims, std::mt19937_64& rng,
                               double sigma_m = 1e-3, ScoreOptions options = {});

// Same structure with every tensor zeroed; used as a gradient accumulator.
HeadParams zeros_like(const HeadParams& head);
MultiHeadParams zeros_like(const MultiHeadParams& params);

// Every non-empty tensor, in a fixed order.
std::vector<Matrix*> tensors(HeadParams& head);
std::vector<const Matrix*> tensors(const HeadParams& head);
std::vector<Matrix*> tensors(MultiHeadParams& params);
std::vector<const Matrix*> tensors(const MultiHeadParams& params);

// ---- SOR masks and effective operators -------------------------------------

struct HeadMasks {
  std::optional<sor::OffsetMask> m1, m2, m1_left, m1_right;
};

struct LayerMasks {
  std::vector<HeadMasks> heads;
};

// Draws masks for every offset the head carries. With shared_p set, all
// offsets use that drop rate; otherwise each offset samples its own. A
// disabled state yields empty masks.
HeadMasks draw_head_masks(sor::SorState& state, const HeadParams& head,
                          std::optional<double> shared_p);
// One forward pass worth of masks. In shared-rate mode a single rate is
// sampled here unless the caller supplies one.
LayerMasks draw_layer_masks(sor::SorState& state, const MultiHeadParams& params,
                            std::optional<double> shared_p = std::nullopt);

// S = I + M~ for each offset the head carries; never stored in HeadParams.
struct HeadOperators {
  Matrix s1, s2, s1_left, s1_right;
};

HeadOperators materialize(const HeadParams& head, const HeadMasks* masks);

// ---- forward / backward ----------------------------------------------------

// Per-head intermediates of one sample. The N x N kernel itself is not
// stored; the backward pass recomputes it block by block from q and kt.
struct HeadCache {
  Variant variant = Variant::SoftmaxBaseline;
  double score_scale = 1.0;        // factor on the (left) branch scores
  double right_score_scale = 1.0;  // gated right branch
  Matrix q, k0, kt;                // H Wq^T, H Wk^T, (H Wk^T)^T S1
  Matrix q_right, k0_right, kt_right;
  Matrix v, u;                     // H Wv^T and S2 H Wv^T
  // Shared by every sample of one forward pass.
  std::shared_ptr<const HeadMasks> masks;
  std::shared_ptr<const HeadOperators> ops;
};

struct LayerCache {
  Variant variant = Variant::SoftmaxBaseline;
  Matrix input;
  Matrix concat;
  std::vector<HeadCache> heads;
};

// The N x N left factor (softmax, ReLU or gated kernel) of a cached pass.
Matrix kernel(const HeadCache& cache);

// Raw bilinear score A = H Wq^T Wk H^T (no temperature).
Matrix score(const Matrix& h, const HeadParams& head);

// Head forward with explicit operators. When values_override is given it
// replaces H Wv^T (an identity override yields the effective mixing matrix).
Matrix head_forward(const Matrix& h, const HeadParams& head, Variant variant,
                    const ScoreOptions& options, std::shared_ptr<const HeadOperators> ops,
                    HeadCache* cache, const Matrix* values_override = nullptr);

std::pair<Matrix, HeadCache> forward_softmax_baseline(const Matrix& h, const HeadParams& head,
                                                      const ScoreOptions& options = {});
std::pair<Matrix, HeadCache> forward_toa_softmax(const Matrix& h, const HeadParams& head,
                                                 sor::SorState& sor,
                                                 const ScoreOptions& options = {});
std::pair<Matrix, HeadCache> forward_toa_relu(const Matrix& h, const HeadParams& head,
                                              sor::SorState& sor,
                                              const ScoreOptions& options = {});
std::pair<Matrix, HeadCache> forward_toa_gated(const Matrix& h, const HeadParams& head,
                                               sor::SorState& sor,
                                               const ScoreOptions& options = {});

// O = Concat(O_1..O_H) W_O using pre-drawn masks (nullptr: no SOR).
std::pair<Matrix, LayerCache> forward_multihead(const Matrix& h, const MultiHeadParams& params,
                                                const LayerMasks* masks);
// Draws one forward pass of masks from sor (no-op when disabled).
std::pair<Matrix, LayerCache> forward_multihead(const Matrix& h, const MultiHeadParams& params,
                                                sor::SorState& sor);

// Forward pass over a batch that shares one set of masks. Products with the
// N x N operators are formed once for the whole batch. With threads > 1 the
// per-sample work runs in parallel. caches may be nullptr.
std::vector<Matrix> forward_multihead_batch(const std::vector<const Matrix*>& inputs,
                                            const MultiHeadParams& params,
                                            const LayerMasks* masks,
                                            std::vector<LayerCache>* caches, int threads = 1);

// Accumulates parameter gradients into grads and returns dLoss/dH for one head.
Matrix head_backward(const Matrix& d_out, const HeadCache& cache, const Matrix& h,
                     const HeadParams& head, HeadParams& grads);

struct LayerGradients {
  MultiHeadParams params;  // same structure as the forward params
  Matrix d_input;
};

// Accumulates into grads (shaped like params) and returns dLoss/dH.
Matrix backward_accumulate(const Matrix& upstream_grad, const LayerCache& cache,
                           const MultiHeadParams& params, MultiHeadParams& grads);
LayerGradients backward(const Matrix& upstream_grad, const LayerCache& cache,
                        const MultiHeadParams& params);

// Batch counterpart of backward_accumulate: returns dLoss/dH per sample and
// accumulates parameter gradients in sample order.
std::vector<Matrix> backward_batch(const std::vector<const Matrix*>& upstream,
                                   const std::vector<const LayerCache*>& caches,
                                   const MultiHeadParams& params, MultiHeadParams& grads,
                                   int threads = 1);

// W_mix(H) = left factor * S2 for one head.
Matrix effective_mixing(const Matrix& h, const HeadParams& head, Variant variant,
                        const ScoreOptions& options = {}, const HeadMasks* masks = nullptr);

}  // namespace toa::attention
