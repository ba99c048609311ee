#include "toa/adam.hpp"

#include <cmath>
#include <string>

namespace toa {

void AdamConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning rate must be a finite nonnegative number");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
}

Adam::Adam(AdamConfig config, std::vector<Matrix*> params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  for (const Matrix* p : params_) {
    m_.emplace_back(p->rows(), p->cols());
    v_.emplace_back(p->rows(), p->cols());
  }
}

void Adam::step(const std::vector<const Matrix*>& grads) {
  if (grads.size() != params_.size())
    throw ConfigError("Adam: got " + std::to_string(grads.size()) + " gradients for " +
                      std::to_string(params_.size()) + " parameters");
  for (std::size_t i = 0; i < grads.size(); ++i)
    require_same_shape(*params_[i], *grads[i], "Adam parameter/gradient");
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = config_.learning_rate;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    double* p = params_[i]->data();
    const double* g = grads[i]->data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    for (std::size_t j = 0; j < params_[i]->size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.epsilon);
    }
  }
}

double global_norm(const std::vector<const Matrix*>& tensors) {
  double s = 0.0;
  for (const Matrix* t : tensors)
    for (double v : t->values()) s += v * v;
  return std::sqrt(s);
}

double clip_global_norm(const std::vector<Matrix*>& tensors, double max_norm) {
  const double norm = global_norm(std::vector<const Matrix*>(tensors.begin(), tensors.end()));
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (Matrix* t : tensors) *t *= scale;
  }
  return norm;
}

}  // namespace toa
