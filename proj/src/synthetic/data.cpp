#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include "toa/io.hpp"
#include "toa/synthetic.hpp"

namespace toa::synthetic {

SyntheticSpec SyntheticSpec::short_mode() {
  SyntheticSpec s;
  s.length = 96;
  s.periods = {8.0, 24.0};
  return s;
}

void SyntheticSpec::validate() const {
  if (length == 0) throw ConfigError("length must be positive");
  if (periods.empty()) throw ConfigError("at least one period is required");
  for (double p : periods)
    if (!(p > 0.0) || !std::isfinite(p)) throw ConfigError("periods must be positive and finite");
  if (!amplitudes.empty() && amplitudes.size() != periods.size())
    throw ConfigError("got " + std::to_string(amplitudes.size()) + " amplitudes for " +
                      std::to_string(periods.size()) + " periods");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
    throw ConfigError("noise sigma must be a finite nonnegative number");
  if (regime && (*regime < 0 || *regime > 2)) throw ConfigError("regime must be 0, 1 or 2");
  if (phase && !std::isfinite(*phase)) throw ConfigError("phase must be finite");
}

double SyntheticSpec::amplitude(std::size_t k) const {
  return amplitudes.empty() ? 1.0 : amplitudes.at(k);
}

nlohmann::json to_json(const SyntheticSpec& spec) {
  nlohmann::json j = {{"length", spec.length},
                      {"periods", spec.periods},
                      {"amplitudes", spec.amplitudes},
                      {"noise_sigma", spec.noise_sigma},
                      {"seed", spec.seed}};
  j["regime"] = spec.regime ? nlohmann::json(*spec.regime) : nlohmann::json();
  j["phase"] = spec.phase ? nlohmann::json(*spec.phase) : nlohmann::json();
  return j;
}

SyntheticSpec spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  try {
    s.length = j.value("length", s.length);
    s.periods = j.value("periods", s.periods);
    s.amplitudes = j.value("amplitudes", s.amplitudes);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.seed = j.value("seed", s.seed);
    if (j.contains("regime") && !j["regime"].is_null()) s.regime = j["regime"].get<int>();
    if (j.contains("phase") && !j["phase"].is_null()) s.phase = j["phase"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("data spec: ") + e.what());
  }
  s.validate();
  return s;
}

Matrix clean_signal(const SyntheticSpec& spec, int regime, double phase) {
  spec.validate();
  const double len = static_cast<double>(spec.length);
  Matrix x(1, spec.length);
  for (std::size_t t = 0; t < spec.length; ++t) {
    const double tau = warp(static_cast<double>(t), regime, len);
    double v = 0.0;
    for (std::size_t k = 0; k < spec.periods.size(); ++k)
      v += spec.amplitude(k) * std::cos(2.0 * std::numbers::pi / spec.periods[k] * tau + phase);
    x(0, t) = v;
  }
  return x;
}

SampleStream::SampleStream(SyntheticSpec spec) : SampleStream(spec, spec.seed) {}

SampleStream::SampleStream(SyntheticSpec spec, std::uint64_t seed)
    : spec_(std::move(spec)), rng_(seed) {
  spec_.validate();
}

Sample SampleStream::next() {
  std::uniform_int_distribution<int> regime_dist(0, 2);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 1.0);
  Sample s;
  s.regime = regime_dist(rng_);
  s.phase = phase_dist(rng_);
  if (spec_.regime) s.regime = *spec_.regime;
  if (spec_.phase) s.phase = *spec_.phase;
  s.clean = clean_signal(spec_, s.regime, s.phase);
  s.noisy = s.clean;
  for (double& v : s.noisy.values()) v += spec_.noise_sigma * noise(rng_);
  return s;
}

std::vector<Sample> generate(const SyntheticSpec& spec, std::size_t count) {
  if (count == 0) throw ConfigError("sample count must be positive");
  SampleStream stream(spec);
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(stream.next());
  return out;
}

void write_dataset_csv(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::ofstream out = io::open_for_write(path);
  for (const auto& s : samples) {
    out << s.regime << ',' << io::format_double(s.phase);
    for (double v : s.noisy.values()) out << ',' << io::format_double(v);
    for (double v : s.clean.values()) out << ',' << io::format_double(v);
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<Sample> read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<Sample> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = io::split_csv_line(line);
    if (fields.size() < 4 || fields.size() % 2 != 0)
      throw FormatError("dataset line " + std::to_string(line_no) + " has " +
                        std::to_string(fields.size()) + " fields");
    const std::size_t len = (fields.size() - 2) / 2;
    Sample s;
    const double z = io::parse_double(fields[0]);
    if (z != 0.0 && z != 1.0 && z != 2.0)
      throw FormatError("dataset line " + std::to_string(line_no) + ": bad regime " + fields[0]);
    s.regime = static_cast<int>(z);
    s.phase = io::parse_double(fields[1]);
    s.noisy = Matrix(1, len);
    s.clean = Matrix(1, len);
    for (std::size_t t = 0; t < len; ++t) {
      s.noisy(0, t) = io::parse_double(fields[2 + t]);
      s.clean(0, t) = io::parse_double(fields[2 + len + t]);
    }
    if (!samples.empty() && samples.front().noisy.cols() != len)
      throw FormatError("dataset line " + std::to_string(line_no) + " has a different length");
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw FormatError("dataset " + path.string() + " is empty");
  return samples;
}

}  // namespace toa::synthetic
