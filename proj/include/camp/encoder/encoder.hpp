#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "camp/context/sequence.hpp"
#include "camp/moldata/moldata.hpp"
#include "camp/tensorcore/tape.hpp"
#include "camp/tensorcore/tensor.hpp"

namespace camp::encoder {

using tensor::ParameterTree;
using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

// Places parameters on a tape. With gradients enabled, parameter leaves feed
// their grad buffers; otherwise they are read-only constants.
class Binder {
 public:
  Binder(Tape& tape, bool track_grad) : tape_(tape), track_grad_(track_grad) {}
  Var operator()(const Tensor& param) const;
  Tape& tape() const { return tape_; }

 private:
  Tape& tape_;
  bool track_grad_;
};

enum LabelId : std::size_t { kNegative = 0, kPositive = 1, kUnknown = 2 };

struct MpnnConfig {
  std::size_t atom_feature_dim = 16;
  std::size_t n_bond_types = 3;
  std::size_t d_node = 64;
  std::size_t d_out = 112;
  std::size_t steps = 3;
  // Weights drawn with std 1/sqrt(fan_in) instead of 0.02. Four stacked 0.02
  // projections shrink molecule signals by roughly 1e-4 at initialisation.
  bool fan_in_init = true;
};

// Message passing network. Node states start as a linear projection of the
// atom features; each step sums bond-type-specific linear messages from
// in-neighbours and updates with GELU(W [h | m] + b). The readout is a linear
// map of the mean node state.
class Mpnn {
 public:
  Mpnn(ParameterTree& params, const std::string& prefix, const MpnnConfig& config, std::mt19937_64& rng);
  // Rebinds to the same-named tensors of another tree (after copying a model).
  void rebind(ParameterTree& params);

  const MpnnConfig& config() const { return config_; }

  // Embeds every graph; returns (graphs.size() x d_out).
  Var encode(const Binder& bind, std::span<const data::AtomGraph* const> graphs) const;

 private:
  MpnnConfig config_;
  std::string prefix_;
  const Tensor* input_w_ = nullptr;
  const Tensor* input_b_ = nullptr;
  std::vector<const Tensor*> message_w_;
  const Tensor* update_w_ = nullptr;
  const Tensor* update_b_ = nullptr;
  const Tensor* readout_w_ = nullptr;
  const Tensor* readout_b_ = nullptr;
};

// Three learnable label embeddings: negative, positive, unknown (query).
class LabelTable {
 public:
  LabelTable(ParameterTree& params, const std::string& name, std::size_t width, std::mt19937_64& rng,
             double init_std = 0.02);
  void rebind(ParameterTree& params);

  std::size_t width() const { return table_->cols(); }
  const Tensor& table() const { return *table_; }
  Var lookup(const Binder& bind, std::span<const std::size_t> ids) const;

 private:
  std::string name_;
  const Tensor* table_ = nullptr;
};

std::vector<double> encode_molecule(const data::AtomGraph& graph, const Mpnn& mpnn);
std::vector<double> encode_label(std::size_t label_id, const LabelTable& table);
// one_hot(label_id) x table; agrees with encode_label exactly.
std::vector<double> encode_label_one_hot(std::span<const double> one_hot, const LabelTable& table);

// CAMP layout: row 0 is [query | UNKNOWN], row i is [support_i | label_i].
context::JointSequence embed_episode(const data::Episode& episode, const Mpnn& mpnn, const LabelTable& table);
// Naive ICL layout: molecule and label tokens interleaved, query last.
context::JointSequence embed_episode_naive(const data::Episode& episode, const Mpnn& mpnn, const LabelTable& table);

}  // namespace camp::encoder
