#include "toa/sor.hpp"

#include <cmath>
#include <string>

namespace toa::sor {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void validate(const SorConfig& config) {
  if (!(config.p_max > 0.0 && config.p_max < 1.0)) {
    throw ConfigError("SOR p_max must lie in (0, 1), got " + std::to_string(config.p_max));
  }
}

SorState::SorState(SorConfig config, std::uint64_t stream)
    : config_(config),
      stream_(stream),
      rng_(splitmix64(config.seed ^ splitmix64(stream + 0x5851f42d4c957f2dULL))) {
  validate(config_);
}

SorState SorState::split(std::uint64_t stream) const {
  return SorState(config_, splitmix64(stream_) ^ splitmix64(~stream));
}

double SorState::uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

double SorState::sample_rate() { return uniform() * config_.p_max; }

OffsetMask sample_mask(SorState& state, std::size_t rows, std::size_t cols) {
  const double p = state.sample_rate();
  return sample_mask_at(state, rows, cols, p);
}

OffsetMask sample_mask_at(SorState& state, std::size_t rows, std::size_t cols, double p) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("invalid drop rate " + std::to_string(p));
  OffsetMask draw{p, Matrix(rows, cols)};
  const double keep = 1.0 - p;
  for (double& v : draw.mask.values()) v = state.uniform() < keep ? 1.0 : 0.0;
  return draw;
}

Matrix apply(const Matrix& m, double p, const Matrix& mask) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("invalid drop rate " + std::to_string(p));
  require_same_shape(m, mask, "sor::apply");
  const double scale = 1.0 / (1.0 - p);
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = mask.data()[i] * m.data()[i] * scale;
  return out;
}

Matrix apply(const Matrix& m, const OffsetMask& draw) { return apply(m, draw.p, draw.mask); }

}  // namespace toa::sor
