#include "toa/model.hpp"

#include <cmath>
#include <random>

#include "toa/linalg.hpp"
#include "toa/parallel.hpp"
#include "toa/serialize.hpp"

namespace toa::synthetic {
namespace {

constexpr double kLayerNormEps = 1e-5;

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

LayerNormParams init_layer_norm(std::size_t d) { return {Matrix(1, d, 1.0), Matrix(1, d)}; }

Matrix layer_norm_forward(const Matrix& x, const LayerNormParams& p, LayerNormCache* cache) {
  const std::size_t n = x.rows(), d = x.cols();
  Matrix out(n, d);
  Matrix xhat(n, d);
  std::vector<double> rstd(n);
  for (std::size_t r = 0; r < n; ++r) {
    double mean = 0.0;
    for (double v : x.row(r)) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : x.row(r)) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat(r, c) = (x(r, c) - mean) * rstd[r];
      out(r, c) = xhat(r, c) * p.gain(0, c) + p.bias(0, c);
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return out;
}

// Returns dLoss/dx and adds the gain / bias gradients.
Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache, const LayerNormParams& p,
                           LayerNormParams& grads) {
  const std::size_t n = dy.rows(), d = dy.cols();
  Matrix dx(n, d);
  std::vector<double> dxhat(d);
  for (std::size_t r = 0; r < n; ++r) {
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      grads.gain(0, c) += dy(r, c) * cache.xhat(r, c);
      grads.bias(0, c) += dy(r, c);
      dxhat[c] = dy(r, c) * p.gain(0, c);
      mean_dxhat += dxhat[c];
      mean_dxhat_xhat += dxhat[c] * cache.xhat(r, c);
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c)
      dx(r, c) = cache.rstd[r] * (dxhat[c] - mean_dxhat - cache.xhat(r, c) * mean_dxhat_xhat);
  }
  return dx;
}

void add_row_bias(Matrix& m, const Matrix& bias) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) += bias(0, c);
}

void add_column_sums(Matrix& acc, const Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) acc(0, c) += m(r, c);
}

// Gradients of the per-sample (non-attention) block parameters, reduced in
// sample order after the parallel section.
struct BlockLocalGrads {
  LayerNormParams ln_attn, ln_mlp;
  Matrix w1, b1, w2, b2;
};

BlockLocalGrads zero_local(const BlockParams& b) {
  auto z = [](const Matrix& m) { return Matrix(m.rows(), m.cols()); };
  return {{z(b.ln_attn.gain), z(b.ln_attn.bias)},
          {z(b.ln_mlp.gain), z(b.ln_mlp.bias)},
          z(b.w1), z(b.b1), z(b.w2), z(b.b2)};
}

const nlohmann::json& field(const nlohmann::json& j, const char* key) {
  if (!j.is_object() || !j.contains(key))
    throw FormatError(std::string("checkpoint: missing field '") + key + "'");
  return j.at(key);
}

void expect_shape(const Matrix& m, std::size_t r, std::size_t c, const char* what) {
  if (m.rows() != r || m.cols() != c)
    throw FormatError(std::string("checkpoint: ") + what + " is " + m.shape_string() +
                      ", expected " + std::to_string(r) + "x" + std::to_string(c));
}

}  // namespace

void ModelConfig::validate() const {
  if (layers == 0 || heads == 0 || d_model == 0 || mlp_hidden == 0)
    throw ConfigError("model layers, heads, width and MLP width must be positive");
  if ((!d_h || !d_v) && d_model % heads != 0)
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  if (head_dim() == 0 || value_dim() == 0) throw ConfigError("head dimensions must be positive");
  if (!(sigma_m >= 0.0) || !std::isfinite(sigma_m)) throw ConfigError("sigma_m must be finite and >= 0");
  sor::validate(sor);
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"layers", c.layers},
          {"heads", c.heads},
          {"d_model", c.d_model},
          {"d_h", c.head_dim()},
          {"d_v", c.value_dim()},
          {"mlp_hidden", c.mlp_hidden},
          {"variant", std::string(attention::to_string(c.variant))},
          {"temperature", c.scores.temperature},
          {"length_normalized_relu", c.scores.length_normalized_relu},
          {"sigma_m", c.sigma_m},
          {"sor",
           {{"enabled", c.sor.enabled},
            {"seed", c.sor.seed},
            {"p_max", c.sor.p_max},
            {"shared_p", c.sor.shared_p}}}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.d_model = j.value("d_model", c.d_model);
    c.d_h = j.value("d_h", c.d_h);
    c.d_v = j.value("d_v", c.d_v);
    c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
    if (j.contains("variant")) c.variant = attention::parse_variant(j.at("variant").get<std::string>());
    c.scores.temperature = j.value("temperature", c.scores.temperature);
    c.scores.length_normalized_relu = j.value("length_normalized_relu", c.scores.length_normalized_relu);
    c.sigma_m = j.value("sigma_m", c.sigma_m);
    if (j.contains("sor")) {
      const auto& s = j.at("sor");
      c.sor.enabled = s.value("enabled", c.sor.enabled);
      c.sor.seed = s.value("seed", c.sor.seed);
      c.sor.p_max = s.value("p_max", c.sor.p_max);
      c.sor.shared_p = s.value("shared_p", c.sor.shared_p);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

ModelParams init_model(const ModelConfig& config, std::size_t length, std::uint64_t seed) {
  config.validate();
  if (length == 0) throw ConfigError("sequence length must be positive");
  std::mt19937_64 rng(seed);
  const std::size_t d = config.d_model, hidden = config.mlp_hidden;
  ModelParams p;
  p.config = config;
  p.length = length;
  p.w_in = gaussian(1, d, 1.0, rng);
  p.b_in = Matrix(1, d);
  const attention::Dims dims{length, d, config.heads, config.head_dim(), config.value_dim()};
  for (std::size_t l = 0; l < config.layers; ++l) {
    BlockParams b;
    b.ln_attn = init_layer_norm(d);
    b.ln_mlp = init_layer_norm(d);
    b.attn = attention::init_multihead(config.variant, dims, rng, config.sigma_m, config.scores);
    b.w1 = gaussian(d, hidden, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    b.b1 = Matrix(1, hidden);
    b.w2 = gaussian(hidden, d, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
    b.b2 = Matrix(1, d);
    p.blocks.push_back(std::move(b));
  }
  p.ln_out = init_layer_norm(d);
  p.w_out = gaussian(d, 1, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  p.b_out = Matrix(1, 1);
  return p;
}

ModelParams zeros_like(const ModelParams& p) {
  auto z = [](const Matrix& m) { return Matrix(m.rows(), m.cols()); };
  ModelParams g;
  g.config = p.config;
  g.length = p.length;
  g.w_in = z(p.w_in);
  g.b_in = z(p.b_in);
  for (const auto& b : p.blocks) {
    BlockParams gb;
    gb.ln_attn = {z(b.ln_attn.gain), z(b.ln_attn.bias)};
    gb.ln_mlp = {z(b.ln_mlp.gain), z(b.ln_mlp.bias)};
    gb.attn = attention::zeros_like(b.attn);
    gb.w1 = z(b.w1);
    gb.b1 = z(b.b1);
    gb.w2 = z(b.w2);
    gb.b2 = z(b.b2);
    g.blocks.push_back(std::move(gb));
  }
  g.ln_out = {z(p.ln_out.gain), z(p.ln_out.bias)};
  g.w_out = z(p.w_out);
  g.b_out = z(p.b_out);
  return g;
}

std::vector<std::pair<std::string, Matrix*>> named_tensors(ModelParams& p) {
  std::vector<std::pair<std::string, Matrix*>> out{{"w_in", &p.w_in}, {"b_in", &p.b_in}};
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    auto& b = p.blocks[l];
    const std::string pre = "block" + std::to_string(l) + ".";
    out.emplace_back(pre + "ln_attn.gain", &b.ln_attn.gain);
    out.emplace_back(pre + "ln_attn.bias", &b.ln_attn.bias);
    for (std::size_t h = 0; h < b.attn.heads.size(); ++h) {
      auto& head = b.attn.heads[h];
      const std::string hp = pre + "head" + std::to_string(h) + ".";
      auto add = [&](const char* name, Matrix& m) {
        if (!m.empty()) out.emplace_back(hp + name, &m);
      };
      add("w_q", head.w_q);
      add("w_k", head.w_k);
      add("w_v", head.w_v);
      add("m1", head.m1);
      add("m2", head.m2);
      if (head.gated) {
        add("w_q_left", head.gated->w_q_left);
        add("w_k_left", head.gated->w_k_left);
        add("w_q_right", head.gated->w_q_right);
        add("w_k_right", head.gated->w_k_right);
        add("m1_left", head.gated->m1_left);
        add("m1_right", head.gated->m1_right);
      }
    }
    out.emplace_back(pre + "w_o", &b.attn.w_o);
    out.emplace_back(pre + "ln_mlp.gain", &b.ln_mlp.gain);
    out.emplace_back(pre + "ln_mlp.bias", &b.ln_mlp.bias);
    out.emplace_back(pre + "w1", &b.w1);
    out.emplace_back(pre + "b1", &b.b1);
    out.emplace_back(pre + "w2", &b.w2);
    out.emplace_back(pre + "b2", &b.b2);
  }
  out.emplace_back("ln_out.gain", &p.ln_out.gain);
  out.emplace_back("ln_out.bias", &p.ln_out.bias);
  out.emplace_back("w_out", &p.w_out);
  out.emplace_back("b_out", &p.b_out);
  return out;
}

std::vector<Matrix*> tensors(ModelParams& p) {
  std::vector<Matrix*> out;
  for (auto& [name, m] : named_tensors(p)) out.push_back(m);
  return out;
}

std::vector<const Matrix*> tensors(const ModelParams& p) {
  std::vector<const Matrix*> out;
  for (Matrix* m : tensors(const_cast<ModelParams&>(p))) out.push_back(m);
  return out;
}

std::size_t parameter_count(const ModelParams& p) {
  std::size_t n = 0;
  for (const Matrix* m : tensors(p)) n += m->size();
  return n;
}

Matrix positional_encoding(std::size_t length, std::size_t d_model) {
  Matrix pe(length, d_model);
  for (std::size_t t = 0; t < length; ++t)
    for (std::size_t c = 0; c < d_model; ++c) {
      const double i2 = static_cast<double>(c - c % 2);
      const double angle =
          static_cast<double>(t) / std::pow(10000.0, i2 / static_cast<double>(d_model));
      pe(t, c) = c % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

namespace {

Matrix embed_with(const Matrix& x, const ModelParams& p, Matrix h) {
  for (std::size_t t = 0; t < x.cols(); ++t)
    for (std::size_t c = 0; c < h.cols(); ++c) h(t, c) += x(0, t) * p.w_in(0, c) + p.b_in(0, c);
  return h;
}

void check_embed(const Matrix& x, const ModelParams& p) {
  if (x.rows() != 1) throw ShapeError("embed: expected a 1xL input, got " + x.shape_string());
  if (p.w_in.rows() != 1 || p.b_in.rows() != 1 || p.w_in.cols() != p.b_in.cols())
    throw ShapeError("embed: lift is " + p.w_in.shape_string() + " with bias " +
                     p.b_in.shape_string());
}

}  // namespace

Matrix embed(const Matrix& x, const ModelParams& p) {
  check_embed(x, p);
  return embed_with(x, p, positional_encoding(x.cols(), p.w_in.cols()));
}

Matrix readout(const Matrix& features, const ModelParams& p) {
  if (features.cols() != p.w_out.rows() || p.w_out.cols() != 1)
    throw ShapeError("readout: features " + features.shape_string() + " vs projection " +
                     p.w_out.shape_string());
  Matrix y = matmul(features, p.w_out);
  Matrix out(1, features.rows());
  for (std::size_t t = 0; t < features.rows(); ++t) out(0, t) = y(t, 0) + p.b_out(0, 0);
  return out;
}

std::vector<attention::LayerMasks> draw_model_masks(const ModelParams& p, std::uint64_t step,
                                                    std::uint64_t sample) {
  const auto& cfg = p.config.sor;
  if (!cfg.enabled || !attention::has_offsets(p.config.variant)) return {};
  sor::SorState state = sor::SorState(cfg, step).split(sample);
  std::optional<double> shared;
  if (cfg.shared_p) shared = state.sample_rate();
  std::vector<attention::LayerMasks> masks;
  for (const auto& b : p.blocks) masks.push_back(attention::draw_layer_masks(state, b.attn, shared));
  return masks;
}

std::vector<Matrix> forward_batch(const ModelParams& p, const std::vector<const Matrix*>& xs,
                                  const std::vector<attention::LayerMasks>& masks,
                                  BatchCache* cache, int threads) {
  const std::size_t batch = xs.size();
  if (!masks.empty() && masks.size() != p.blocks.size())
    throw ShapeError("forward_batch: got masks for " + std::to_string(masks.size()) + " of " +
                     std::to_string(p.blocks.size()) + " blocks");
  for (const Matrix* x : xs)
    if (x->rows() != 1 || x->cols() != p.length)
      throw ShapeError("forward_batch: input " + x->shape_string() + " but model length is " +
                       std::to_string(p.length));

  std::vector<Matrix> h(batch);
  for (const Matrix* x : xs) check_embed(*x, p);
  const Matrix pe = positional_encoding(p.length, p.w_in.cols());
  parallel_for(batch, threads, [&](std::size_t b) { h[b] = embed_with(*xs[b], p, pe); });
  if (cache) {
    *cache = BatchCache{};
    for (const Matrix* x : xs) cache->inputs.push_back(*x);
    cache->blocks.resize(p.blocks.size());
  }

  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    const BlockParams& blk = p.blocks[l];
    BlockCache* bc = cache ? &cache->blocks[l] : nullptr;
    if (bc) {
      bc->ln_attn.resize(batch);
      bc->ln_mlp.resize(batch);
      bc->mlp_in.resize(batch);
      bc->mlp_pre.resize(batch);
    }
    std::vector<Matrix> z(batch);
    parallel_for(batch, threads, [&](std::size_t b) {
      z[b] = layer_norm_forward(h[b], blk.ln_attn, bc ? &bc->ln_attn[b] : nullptr);
    });
    std::vector<const Matrix*> zp;
    for (const auto& m : z) zp.push_back(&m);
    const auto att = attention::forward_multihead_batch(zp, blk.attn, masks.empty() ? nullptr : &masks[l],
                                                        bc ? &bc->attn : nullptr, threads);
    parallel_for(batch, threads, [&](std::size_t b) {
      h[b] += att[b];
      Matrix z2 = layer_norm_forward(h[b], blk.ln_mlp, bc ? &bc->ln_mlp[b] : nullptr);
      Matrix a = matmul(z2, blk.w1);
      add_row_bias(a, blk.b1);
      Matrix m = matmul(relu(a), blk.w2);
      add_row_bias(m, blk.b2);
      h[b] += m;
      if (bc) {
        bc->mlp_in[b] = std::move(z2);
        bc->mlp_pre[b] = std::move(a);
      }
    });
  }

  std::vector<Matrix> preds(batch);
  if (cache) {
    cache->ln_out.resize(batch);
    cache->features.resize(batch);
  }
  parallel_for(batch, threads, [&](std::size_t b) {
    Matrix f = layer_norm_forward(h[b], p.ln_out, cache ? &cache->ln_out[b] : nullptr);
    preds[b] = readout(f, p);
    if (cache) cache->features[b] = std::move(f);
  });
  return preds;
}

void backward_batch(const ModelParams& p, const BatchCache& cache,
                    const std::vector<const Matrix*>& d_preds, ModelParams& grads, int threads) {
  const std::size_t batch = d_preds.size();
  if (batch != cache.inputs.size())
    throw ShapeError("backward_batch: " + std::to_string(batch) + " gradients for " +
                     std::to_string(cache.inputs.size()) + " cached samples");

  // Readout and final norm.
  std::vector<Matrix> dh(batch);
  {
    const std::size_t d = p.w_out.rows();
    std::vector<LayerNormParams> ln_g(batch, {Matrix(1, d), Matrix(1, d)});
    std::vector<Matrix> dw_out(batch);
    parallel_for(batch, threads, [&](std::size_t b) {
      const Matrix& dy = *d_preds[b];
      Matrix df(p.length, d);
      for (std::size_t t = 0; t < p.length; ++t)
        for (std::size_t c = 0; c < df.cols(); ++c) df(t, c) = dy(0, t) * p.w_out(c, 0);
      dw_out[b] = matmul_tn(cache.features[b], transpose(dy));
      dh[b] = layer_norm_backward(df, cache.ln_out[b], p.ln_out, ln_g[b]);
    });
    for (std::size_t b = 0; b < batch; ++b) {
      grads.w_out += dw_out[b];
      grads.b_out(0, 0) += sum(*d_preds[b]);
      grads.ln_out.gain += ln_g[b].gain;
      grads.ln_out.bias += ln_g[b].bias;
    }
  }

  for (std::size_t l = p.blocks.size(); l-- > 0;) {
    const BlockParams& blk = p.blocks[l];
    const BlockCache& bc = cache.blocks[l];
    BlockParams& gb = grads.blocks[l];
    std::vector<BlockLocalGrads> local(batch, zero_local(blk));

    // MLP branch.
    parallel_for(batch, threads, [&](std::size_t b) {
      auto& g = local[b];
      const Matrix& dm = dh[b];
      const Matrix r = relu(bc.mlp_pre[b]);
      matmul_tn_acc(g.w2, r, dm);
      add_column_sums(g.b2, dm);
      Matrix da = matmul_nt(dm, blk.w2);
      for (std::size_t i = 0; i < da.size(); ++i)
        if (bc.mlp_pre[b].data()[i] <= 0.0) da.data()[i] = 0.0;
      matmul_tn_acc(g.w1, bc.mlp_in[b], da);
      add_column_sums(g.b1, da);
      const Matrix dz2 = matmul_nt(da, blk.w1);
      dh[b] += layer_norm_backward(dz2, bc.ln_mlp[b], blk.ln_mlp, g.ln_mlp);
    });

    // Attention branch.
    std::vector<const Matrix*> up;
    std::vector<const attention::LayerCache*> caches;
    for (std::size_t b = 0; b < batch; ++b) {
      up.push_back(&dh[b]);
      caches.push_back(&bc.attn[b]);
    }
    const auto dz = attention::backward_batch(up, caches, blk.attn, gb.attn, threads);
    parallel_for(batch, threads, [&](std::size_t b) {
      dh[b] += layer_norm_backward(dz[b], bc.ln_attn[b], blk.ln_attn, local[b].ln_attn);
    });

    for (const auto& g : local) {
      gb.ln_attn.gain += g.ln_attn.gain;
      gb.ln_attn.bias += g.ln_attn.bias;
      gb.ln_mlp.gain += g.ln_mlp.gain;
      gb.ln_mlp.bias += g.ln_mlp.bias;
      gb.w1 += g.w1;
      gb.b1 += g.b1;
      gb.w2 += g.w2;
      gb.b2 += g.b2;
    }
  }

  // Embedding: h0 = x^T w_in + b_in + PE.
  for (std::size_t b = 0; b < batch; ++b) {
    const Matrix& x = cache.inputs[b];
    matmul_acc(grads.w_in, x, dh[b]);
    add_column_sums(grads.b_in, dh[b]);
  }
}

Matrix predict(const ModelParams& p, const Matrix& x) {
  return forward_batch(p, {&x}, {}, nullptr).front();
}

nlohmann::json to_json(const ModelParams& p) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : p.blocks) {
    blocks.push_back({{"ln_attn", {{"gain", matrix_to_json(b.ln_attn.gain)},
                                   {"bias", matrix_to_json(b.ln_attn.bias)}}},
                      {"attention", attention::to_json(b.attn)},
                      {"ln_mlp", {{"gain", matrix_to_json(b.ln_mlp.gain)},
                                  {"bias", matrix_to_json(b.ln_mlp.bias)}}},
                      {"w1", matrix_to_json(b.w1)},
                      {"b1", matrix_to_json(b.b1)},
                      {"w2", matrix_to_json(b.w2)},
                      {"b2", matrix_to_json(b.b2)}});
  }
  return {{"format", "toa-model-v1"},
          {"config", to_json(p.config)},
          {"length", p.length},
          {"w_in", matrix_to_json(p.w_in)},
          {"b_in", matrix_to_json(p.b_in)},
          {"blocks", std::move(blocks)},
          {"ln_out", {{"gain", matrix_to_json(p.ln_out.gain)}, {"bias", matrix_to_json(p.ln_out.bias)}}},
          {"w_out", matrix_to_json(p.w_out)},
          {"b_out", matrix_to_json(p.b_out)}};
}

ModelParams model_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object() || j.value("format", std::string()) != "toa-model-v1")
      throw FormatError("checkpoint: unknown or missing format tag");
    ModelParams p;
    try {
      p.config = model_config_from_json(field(j, "config"));
    } catch (const ConfigError& e) {
      throw FormatError(std::string("checkpoint config: ") + e.what());
    }
    p.length = field(j, "length").get<std::size_t>();
    const std::size_t d = p.config.d_model, hidden = p.config.mlp_hidden, n = p.length;
    auto ln = [](const nlohmann::json& o) {
      return LayerNormParams{matrix_from_json(field(o, "gain")), matrix_from_json(field(o, "bias"))};
    };
    p.w_in = matrix_from_json(field(j, "w_in"));
    p.b_in = matrix_from_json(field(j, "b_in"));
    expect_shape(p.w_in, 1, d, "w_in");
    expect_shape(p.b_in, 1, d, "b_in");
    for (const auto& jb : field(j, "blocks")) {
      BlockParams b;
      b.ln_attn = ln(field(jb, "ln_attn"));
      b.ln_mlp = ln(field(jb, "ln_mlp"));
      b.attn = attention::multihead_from_json(field(jb, "attention"));
      b.w1 = matrix_from_json(field(jb, "w1"));
      b.b1 = matrix_from_json(field(jb, "b1"));
      b.w2 = matrix_from_json(field(jb, "w2"));
      b.b2 = matrix_from_json(field(jb, "b2"));
      for (const auto* m : {&b.ln_attn.gain, &b.ln_attn.bias, &b.ln_mlp.gain, &b.ln_mlp.bias, &b.b2})
        expect_shape(*m, 1, d, "block norm / bias");
      expect_shape(b.w1, d, hidden, "w1");
      expect_shape(b.b1, 1, hidden, "b1");
      expect_shape(b.w2, hidden, d, "w2");
      if (b.attn.variant != p.config.variant || b.attn.heads.size() != p.config.heads)
        throw FormatError("checkpoint: attention layout disagrees with the model config");
      const auto dims = attention::dims_of(b.attn);
      if ((attention::has_offsets(b.attn.variant) && dims.n != n) || dims.d != d)
        throw FormatError("checkpoint: attention dimensions disagree with the model config");
      p.blocks.push_back(std::move(b));
    }
    if (p.blocks.size() != p.config.layers)
      throw FormatError("checkpoint: " + std::to_string(p.blocks.size()) + " blocks for " +
                        std::to_string(p.config.layers) + " layers");
    p.ln_out = ln(field(j, "ln_out"));
    expect_shape(p.ln_out.gain, 1, d, "ln_out.gain");
    expect_shape(p.ln_out.bias, 1, d, "ln_out.bias");
    p.w_out = matrix_from_json(field(j, "w_out"));
    p.b_out = matrix_from_json(field(j, "b_out"));
    expect_shape(p.w_out, d, 1, "w_out");
    expect_shape(p.b_out, 1, 1, "b_out");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

}  // namespace toa::synthetic
