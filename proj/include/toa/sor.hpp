#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

#include "toa/matrix.hpp"

namespace toa::sor {

struct SorConfig {
  bool enabled = false;
  std::uint64_t seed = 0;
  // Upper clamp of the sampled drop rate; must stay strictly below 1.
  double p_max = 0.99;
  // One drop rate per forward pass shared by every offset (true), or an
  // independent rate per offset matrix (false).
  bool shared_p = true;
};

void validate(const SorConfig& config);

// Deterministic generator state. Streams derived with split() are
// independent of each other and of the parent.
class SorState {
 public:
  explicit SorState(SorConfig config, std::uint64_t stream = 0);

  const SorConfig& config() const { return config_; }
  bool enabled() const { return config_.enabled; }

  SorState split(std::uint64_t stream) const;

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Drop rate uniform on [0, p_max).
  double sample_rate();

 private:
  SorConfig config_;
  std::uint64_t stream_;
  std::mt19937_64 rng_;
};

struct OffsetMask {
  double p = 0.0;
  Matrix mask;
  double scale() const { return 1.0 / (1.0 - p); }
};

// Samples a fresh drop rate and a {0,1} mask with keep probability 1 - p.
OffsetMask sample_mask(SorState& state, std::size_t rows, std::size_t cols);
// Same, with the drop rate supplied by the caller.
OffsetMask sample_mask_at(SorState& state, std::size_t rows, std::size_t cols, double p);

// mask ⊙ m / (1 - p). The identity of S = I + M is never passed through here.
Matrix apply(const Matrix& m, double p, const Matrix& mask);
Matrix apply(const Matrix& m, const OffsetMask& draw);

}  // namespace toa::sor
