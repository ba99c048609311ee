#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "toa/model.hpp"
#include "toa/synthetic.hpp"

namespace toa::synthetic {

struct TrainConfig {
  std::size_t steps = 5000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_clip = 1.0;  // <= 0 disables clipping
  std::size_t eval_samples = 512;
  std::size_t eval_every = 500;  // 0: evaluate only at the start and the end
  // 0 draws fresh samples every step; otherwise minibatches come from a
  // fixed pool of this many samples.
  std::size_t train_samples = 0;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct MetricRow {
  std::size_t step = 0;
  double loss = 0.0;                // training minibatch MSE before the update
  std::optional<double> eval_mse;  // held-out MSE after the update
};

struct TrainResult {
  ModelParams params;
  std::vector<MetricRow> curve;
  double initial_eval_mse = 0.0;
  double final_eval_mse = 0.0;
  double seconds = 0.0;
};

class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(std::size_t step, const std::string& what)
      : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what),
        step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// Held-out evaluation set: same spec, seed derived from the data seed so it
// never overlaps the training stream.
std::vector<Sample> eval_set(const SyntheticSpec& data, std::size_t count);
std::uint64_t eval_seed(std::uint64_t data_seed);

// Mean squared error against the clean targets, without SOR.
double evaluate(const ModelParams& params, const std::vector<Sample>& samples, int threads = 1);

// Called after every step with the row just recorded.
using Progress = std::function<void(const MetricRow&)>;

// Adam on every parameter, SOR masks drawn per sample (training only),
// denoising MSE objective.
TrainResult train(const ModelConfig& model, const TrainConfig& config, const SyntheticSpec& data,
                  const Progress& progress = {});

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& curve);

}  // namespace toa::synthetic
