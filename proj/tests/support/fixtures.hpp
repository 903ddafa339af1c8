#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "camp/camphead/model.hpp"
#include "camp/moldata/moldata.hpp"

namespace camp::testing {

// d_model 32 keeps finite-difference checks and permutation sweeps fast.
inline head::ModelConfig tiny_model_config(std::size_t feature_dim = 8) {
  head::ModelConfig cfg;
  cfg.atom_feature_dim = feature_dim;
  cfg.n_bond_types = 3;
  cfg.d_node = 16;
  cfg.mpnn_steps = 2;
  cfg.encoder.n_layers = 2;
  cfg.encoder.n_heads = 4;
  cfg.encoder.d_model = 32;
  cfg.encoder.d_mlp = 64;
  cfg.encoder.dropout_rate = 0.1;
  return cfg;
}

inline data::TaskSet synthetic_tasks(std::size_t n_tasks, std::size_t per_task, std::uint64_t seed,
                                     std::size_t feature_dim = 8) {
  data::SyntheticConfig cfg;
  cfg.n_tasks = n_tasks;
  cfg.molecules_per_task = per_task;
  cfg.atom_feature_dim = feature_dim;
  data::Rng rng(seed);
  return data::make_synthetic_tasks(cfg, rng);
}

inline std::vector<std::size_t> random_permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

// Gives randomly initialised weights a larger spread so invariance checks are
// not trivially satisfied by near-zero activations.
inline void spread_parameters(tensor::ParameterTree& params, std::uint64_t seed, double stddev = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, stddev);
  for (auto& e : params) {
    if (e.name.find(".gain") != std::string::npos) continue;
    for (auto& v : e.value.data()) v += n(rng);
  }
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace camp::testing
