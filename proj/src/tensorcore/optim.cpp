#include "camp/tensorcore/optim.hpp"

#include <algorithm>
#include <cmath>

#include "camp/error.hpp"

namespace camp::tensor {

OptimizerState::OptimizerState(const ParameterTree& params, AdamConfig config) : config_(config) {
  if (!(config_.base_lr > 0.0)) throw InvalidArgument("base learning rate must be positive");
  if (config_.warmup_steps == 0) throw InvalidArgument("warmup_steps must be positive");
  for (const auto& e : params) {
    m_.emplace_back(e.value.size(), 0.0);
    v_.emplace_back(e.value.size(), 0.0);
  }
}

void OptimizerState::check_matches(const ParameterTree& params) const {
  if (params.size() != m_.size()) throw InvalidArgument("optimizer state does not match parameter tree");
  std::size_t i = 0;
  for (const auto& e : params) {
    if (e.value.size() != m_[i].size()) {
      throw InvalidArgument("optimizer moments do not match parameter '" + e.name + "'");
    }
    ++i;
  }
}

double lr_at_step(const OptimizerState& state) {
  const auto& cfg = state.config();
  const double frac = static_cast<double>(state.step()) / static_cast<double>(cfg.warmup_steps);
  return cfg.base_lr * std::min(1.0, frac);
}

void adam_step(ParameterTree& params, OptimizerState& state) { adam_step(params, state, lr_at_step(state)); }

void adam_step(ParameterTree& params, OptimizerState& state, double lr) {
  state.check_matches(params);
  for (const auto& e : params) {
    if (!e.value.has_grad()) throw InvalidArgument("parameter '" + e.name + "' has no gradient");
  }
  const auto& cfg = state.config();
  const double t = static_cast<double>(state.step() + 1);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  std::size_t i = 0;
  for (auto& e : params) {
    auto p = e.value.data();
    auto g = e.value.grad();
    auto& m = state.first_moments()[i];
    auto& v = state.second_moments()[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
    ++i;
  }
  state.advance();
}

double global_grad_norm(const ParameterTree& params) {
  double sq = 0.0;
  for (const auto& e : params) {
    for (double g : e.value.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_global_norm(ParameterTree& params, double max_norm) {
  if (!(max_norm > 0.0)) throw InvalidArgument("max_norm must be positive");
  for (const auto& e : params) {
    for (double g : e.value.grad()) {
      if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter '" + e.name + "'");
    }
  }
  const double norm = global_grad_norm(params);
  // Relative slack so that a freshly clipped tree is not rescaled again.
  if (norm <= max_norm * (1.0 + 1e-12)) return 1.0;
  const double factor = max_norm / norm;
  for (auto& e : params) {
    for (auto& g : e.value.grad()) g *= factor;
  }
  return factor;
}

}  // namespace camp::tensor
