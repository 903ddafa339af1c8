#pragma once

#include <cstdint>
#include <vector>

#include "camp/tensorcore/tensor.hpp"

namespace camp::tensor {

struct AdamConfig {
  double base_lr = 5e-5;
  std::uint64_t warmup_steps = 2000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam moments mirroring a ParameterTree entry-for-entry.
class OptimizerState {
 public:
  OptimizerState(const ParameterTree& params, AdamConfig config);

  const AdamConfig& config() const { return config_; }
  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t step) { step_ = step; }

  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

  // Throws InvalidArgument unless the moment shapes match `params`.
  void check_matches(const ParameterTree& params) const;
  void advance() { ++step_; }

 private:
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

// Linear warmup to base_lr over warmup_steps, constant afterwards.
double lr_at_step(const OptimizerState& state);

// One bias-corrected Adam update at lr_at_step(state); increments the step
// counter. Gradients are left in place.
void adam_step(ParameterTree& params, OptimizerState& state);
void adam_step(ParameterTree& params, OptimizerState& state, double lr);

// Rescales all gradients so their joint L2 norm is at most max_norm. Returns
// the factor applied (1 when already within bounds).
double clip_global_norm(ParameterTree& params, double max_norm);

double global_grad_norm(const ParameterTree& params);

}  // namespace camp::tensor
