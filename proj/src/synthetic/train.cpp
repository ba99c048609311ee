#include "toa/train.hpp"

#include <chrono>
#include <cmath>
#include <algorithm>
#include <fstream>

#include "toa/adam.hpp"
#include "toa/io.hpp"
#include "toa/linalg.hpp"
#include "toa/parallel.hpp"

namespace toa::synthetic {
namespace {

// splitmix64 finalizer, used to derive unrelated seeds from one user seed.
std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double squared_error(const Matrix& pred, const Matrix& target) {
  double total = 0.0;
  const Matrix diff = pred - target;
  for (double v : diff.values()) total += v * v;
  return total;
}

// Minibatch MSE before the update, with its gradient accumulated into grads.
// Without SOR the batch runs as one pass. With SOR every sample draws its own
// masks, so its operators differ from its neighbours'; samples then run one
// at a time, each worker owning a contiguous chunk, and chunk gradients are
// summed in chunk order.
double minibatch_gradient(const ModelParams& params, const std::vector<const Sample*>& batch,
                          std::uint64_t step, int threads, ModelParams& grads) {
  const std::size_t n = batch.size();
  const double scale = 2.0 / static_cast<double>(n * params.length);
  std::vector<double> sse(n);

  const bool sor = params.config.sor.enabled && attention::has_offsets(params.config.variant);
  if (!sor) {
    std::vector<const Matrix*> xs;
    for (const Sample* s : batch) xs.push_back(&s->noisy);
    BatchCache cache;
    const auto preds = forward_batch(params, xs, {}, &cache, threads);
    std::vector<Matrix> d_preds;
    std::vector<const Matrix*> dp;
    for (std::size_t b = 0; b < n; ++b) {
      sse[b] = squared_error(preds[b], batch[b]->clean);
      d_preds.push_back((preds[b] - batch[b]->clean) * scale);
    }
    for (const auto& m : d_preds) dp.push_back(&m);
    backward_batch(params, cache, dp, grads, threads);
  } else {
    const std::size_t chunks = std::min<std::size_t>(std::max(threads, 1), n);
    std::vector<ModelParams> partial;
    for (std::size_t c = 1; c < chunks; ++c) partial.push_back(zeros_like(params));
    parallel_for(chunks, static_cast<int>(chunks), [&](std::size_t c) {
      ModelParams& g = c == 0 ? grads : partial[c - 1];
      for (std::size_t b = c * n / chunks; b < (c + 1) * n / chunks; ++b) {
        const auto masks = draw_model_masks(params, step, b);
        BatchCache cache;
        const Matrix pred = forward_batch(params, {&batch[b]->noisy}, masks, &cache, 1).front();
        sse[b] = squared_error(pred, batch[b]->clean);
        const Matrix d_pred = (pred - batch[b]->clean) * scale;
        backward_batch(params, cache, {&d_pred}, g, 1);
      }
    });
    const auto total = tensors(grads);
    for (const auto& g : partial) {
      const auto part = tensors(g);
      for (std::size_t i = 0; i < total.size(); ++i) *total[i] += *part[i];
    }
  }
  double loss = 0.0;
  for (double e : sse) loss += e;
  return loss / static_cast<double>(n * params.length);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning rate must be finite and >= 0");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (eval_samples == 0) throw ConfigError("eval sample count must be positive");
  if (threads < 1) throw ConfigError("thread count must be at least 1");
  if (!std::isfinite(grad_clip)) throw ConfigError("gradient clip must be finite");
  AdamConfig{learning_rate, beta1, beta2, epsilon}.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"grad_clip", c.grad_clip},
          {"eval_samples", c.eval_samples},
          {"eval_every", c.eval_every},
          {"train_samples", c.train_samples},
          {"seed", c.seed},
          {"threads", c.threads}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.eval_samples = j.value("eval_samples", c.eval_samples);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.train_samples = j.value("train_samples", c.train_samples);
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::uint64_t eval_seed(std::uint64_t data_seed) { return mix(data_seed ^ 0x5eed5eed5eedULL); }

std::vector<Sample> eval_set(const SyntheticSpec& data, std::size_t count) {
  SyntheticSpec spec = data;
  spec.seed = eval_seed(data.seed);
  return generate(spec, count);
}

double evaluate(const ModelParams& params, const std::vector<Sample>& samples, int threads) {
  if (samples.empty()) throw ConfigError("evaluation needs at least one sample");
  constexpr std::size_t kChunk = 32;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t end = std::min(samples.size(), start + kChunk);
    std::vector<const Matrix*> xs;
    for (std::size_t i = start; i < end; ++i) xs.push_back(&samples[i].noisy);
    const auto preds = forward_batch(params, xs, {}, nullptr, threads);
    for (std::size_t i = start; i < end; ++i) {
      const Matrix diff = preds[i - start] - samples[i].clean;
      for (double v : diff.values()) total += v * v;
      count += diff.size();
    }
  }
  return total / static_cast<double>(count);
}

TrainResult train(const ModelConfig& model, const TrainConfig& config, const SyntheticSpec& data,
                  const Progress& progress) {
  model.validate();
  config.validate();
  data.validate();
  const auto start = std::chrono::steady_clock::now();

  TrainResult result;
  result.params = init_model(model, data.length, config.seed);
  ModelParams& params = result.params;
  Adam adam({config.learning_rate, config.beta1, config.beta2, config.epsilon}, tensors(params));

  const auto held_out = eval_set(data, config.eval_samples);
  result.initial_eval_mse = evaluate(params, held_out, config.threads);

  SampleStream stream(data, mix(data.seed));
  std::vector<Sample> pool;
  for (std::size_t i = 0; i < config.train_samples; ++i) pool.push_back(stream.next());
  std::mt19937_64 pick(mix(data.seed + 1));

  double last_eval = result.initial_eval_mse;
  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<Sample> fresh;
    std::vector<const Sample*> batch;
    if (pool.empty()) {
      for (std::size_t b = 0; b < config.batch_size; ++b) fresh.push_back(stream.next());
      for (const auto& s : fresh) batch.push_back(&s);
    } else {
      std::uniform_int_distribution<std::size_t> idx(0, pool.size() - 1);
      for (std::size_t b = 0; b < config.batch_size; ++b) batch.push_back(&pool[idx(pick)]);
    }
    ModelParams grads = zeros_like(params);
    const double loss = minibatch_gradient(params, batch, step, config.threads, grads);
    if (!std::isfinite(loss)) throw TrainingDivergence(step, "loss is " + std::to_string(loss));
    const double norm = clip_global_norm(tensors(grads), config.grad_clip);
    if (!std::isfinite(norm)) throw TrainingDivergence(step, "gradient norm is not finite");
    adam.step(tensors(static_cast<const ModelParams&>(grads)));

    MetricRow row{step + 1, loss, std::nullopt};
    const bool last = step + 1 == config.steps;
    if (last || (config.eval_every && (step + 1) % config.eval_every == 0)) {
      last_eval = evaluate(params, held_out, config.threads);
      if (!std::isfinite(last_eval)) throw TrainingDivergence(step, "eval MSE is not finite");
      row.eval_mse = last_eval;
    }
    result.curve.push_back(row);
    if (progress) progress(row);
  }
  result.final_eval_mse = last_eval;
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& curve) {
  std::ofstream out = io::open_for_write(path);
  out << "step,loss,eval_mse\n";
  for (const auto& r : curve) {
    out << r.step << ',' << io::format_double(r.loss) << ',';
    if (r.eval_mse) out << io::format_double(*r.eval_mse);
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace toa::synthetic
