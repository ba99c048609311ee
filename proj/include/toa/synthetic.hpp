#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <vector>

#include "json.hpp"
#include "toa/matrix.hpp"
#include "toa/warp.hpp"

namespace toa::synthetic {

// x_t = sum_k a_k cos(2 pi / P_k * tau_z(t) + phi) + eps_t.
struct SyntheticSpec {
  std::size_t length = 672;
  std::vector<double> periods{24.0, 84.0, 168.0};
  std::vector<double> amplitudes;  // empty: all ones
  double noise_sigma = 0.5;
  // When set, every sample uses this regime / phase instead of drawing one.
  std::optional<int> regime;
  std::optional<double> phase;
  std::uint64_t seed = 0;

  // L = 96 with periods {8, 24}.
  static SyntheticSpec short_mode();

  void validate() const;
  double amplitude(std::size_t k) const;
};

nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec spec_from_json(const nlohmann::json& j);

struct Sample {
  Matrix noisy;  // 1 x L model input
  Matrix clean;  // 1 x L target
  int regime = 0;
  double phase = 0.0;
};

// The noise-free superposition for one regime and phase, 1 x L.
Matrix clean_signal(const SyntheticSpec& spec, int regime, double phase);

// Draws samples sequentially from one generator: regime uniform on {0,1,2},
// phase uniform on [0, 2 pi), i.i.d. Gaussian noise.
class SampleStream {
 public:
  explicit SampleStream(SyntheticSpec spec);
  SampleStream(SyntheticSpec spec, std::uint64_t seed);
  Sample next();
  const SyntheticSpec& spec() const { return spec_; }

 private:
  SyntheticSpec spec_;
  std::mt19937_64 rng_;
};

// count samples from a stream seeded with spec.seed. count == 0 is an error.
std::vector<Sample> generate(const SyntheticSpec& spec, std::size_t count);

// One sample per line: z, phi, L noisy values, L clean values.
void write_dataset_csv(const std::filesystem::path& path, const std::vector<Sample>& samples);
std::vector<Sample> read_dataset_csv(const std::filesystem::path& path);

}  // namespace toa::synthetic
