#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "toa/attention.hpp"
#include "toa/matrix.hpp"
#include "toa/sor.hpp"

namespace toa::synthetic {

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t d_model = 32;
  std::size_t d_h = 0;  // 0: d_model / heads
  std::size_t d_v = 0;  // 0: d_model / heads
  std::size_t mlp_hidden = 64;
  attention::Variant variant = attention::Variant::ToaGated;
  attention::ScoreOptions scores;
  double sigma_m = 1e-3;
  sor::SorConfig sor;

  void validate() const;
  std::size_t head_dim() const { return d_h ? d_h : d_model / heads; }
  std::size_t value_dim() const { return d_v ? d_v : d_model / heads; }
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct LayerNormParams {
  Matrix gain;  // 1 x d
  Matrix bias;  // 1 x d
};

// Pre-norm encoder block: h += MHA(LN(h)); h += MLP(LN(h)).
struct BlockParams {
  LayerNormParams ln_attn, ln_mlp;
  attention::MultiHeadParams attn;
  Matrix w1, b1;  // d x hidden, 1 x hidden
  Matrix w2, b2;  // hidden x d, 1 x d
};

struct ModelParams {
  ModelConfig config;
  std::size_t length = 0;
  Matrix w_in, b_in;  // 1 x d lift of the scalar input
  std::vector<BlockParams> blocks;
  LayerNormParams ln_out;
  Matrix w_out, b_out;  // d x 1, 1 x 1
};

ModelParams init_model(const ModelConfig& config, std::size_t length, std::uint64_t seed);
ModelParams zeros_like(const ModelParams& params);

std::vector<std::pair<std::string, Matrix*>> named_tensors(ModelParams& params);
std::vector<Matrix*> tensors(ModelParams& params);
std::vector<const Matrix*> tensors(const ModelParams& params);
std::size_t parameter_count(const ModelParams& params);

// Fixed sinusoidal code: column 2i is sin(t / 10000^(2i/d)), column 2i+1 the cosine.
Matrix positional_encoding(std::size_t length, std::size_t d_model);
// x (1 x L) -> x^T w_in + b_in + PE, L x d.
Matrix embed(const Matrix& x, const ModelParams& params);
// features (L x d) -> (features w_out + b_out)^T, 1 x L.
Matrix readout(const Matrix& features, const ModelParams& params);

// SOR masks of one training sample: one LayerMasks per block, drawn from a
// stream split off the step's generator by sample index. In shared-rate mode
// a single drop rate covers every offset of every block. Returns an empty
// vector when SOR is disabled.
std::vector<attention::LayerMasks> draw_model_masks(const ModelParams& params, std::uint64_t step,
                                                    std::uint64_t sample);

struct LayerNormCache {
  Matrix xhat;
  std::vector<double> rstd;
};

struct BlockCache {
  std::vector<LayerNormCache> ln_attn, ln_mlp;
  std::vector<attention::LayerCache> attn;
  std::vector<Matrix> mlp_in, mlp_pre;
};

struct BatchCache {
  std::vector<Matrix> inputs;
  std::vector<BlockCache> blocks;
  std::vector<LayerNormCache> ln_out;
  std::vector<Matrix> features;
};

// Predictions (1 x L each) for a batch. masks may be empty (no SOR);
// cache may be nullptr.
std::vector<Matrix> forward_batch(const ModelParams& params, const std::vector<const Matrix*>& xs,
                                  const std::vector<attention::LayerMasks>& masks,
                                  BatchCache* cache, int threads = 1);

// Accumulates parameter gradients for upstream dLoss/dprediction.
void backward_batch(const ModelParams& params, const BatchCache& cache,
                    const std::vector<const Matrix*>& d_preds, ModelParams& grads,
                    int threads = 1);

// Inference without SOR.
Matrix predict(const ModelParams& params, const Matrix& x);

nlohmann::json to_json(const ModelParams& params);
// Throws FormatError on malformed or inconsistent input.
ModelParams model_from_json(const nlohmann::json& j);

}  // namespace toa::synthetic
