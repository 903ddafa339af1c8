#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "camp/context/sequence.hpp"
#include "camp/encoder/encoder.hpp"
#include "camp/moldata/moldata.hpp"
#include "camp/transformer/transformer.hpp"

namespace camp::head {

using encoder::Binder;
using tensor::ParameterTree;
using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

inline constexpr double kScaledLabelStd = 0.5;

struct ModelConfig {
  std::size_t atom_feature_dim = 16;
  std::size_t n_bond_types = 3;
  std::size_t d_node = 64;
  std::size_t mpnn_steps = 3;
  // MPNN weights with std 1/sqrt(fan_in) and label rows with std
  // kScaledLabelStd. With 0.02 everywhere the stacked MPNN projections shrink
  // molecule rows to ~1e-5 next to ~0.05 label rows, and training sits at
  // chance for a long time before the molecule signal grows.
  bool scaled_init = true;
  // Zero selects d_model / 8.
  std::size_t d_label = 0;
  // Zero selects d_model.
  std::size_t d_head = 0;
  transformer::EncoderConfig encoder;
  context::Layout layout = context::Layout::kCamp;

  std::size_t d_model() const { return encoder.d_model; }
  std::size_t label_width() const;
  std::size_t molecule_width() const;
  std::size_t head_width() const { return d_head ? d_head : encoder.d_model; }
  void validate() const;
};

struct Prediction {
  std::array<double, 2> logits{};
  double probability_positive = 0.5;
};

Prediction make_prediction(std::span<const double> logits);

// Returns row `query_index` of `rows`.
std::vector<double> extract_query(const Tensor& rows, std::size_t query_index);

// -log softmax(logits)[label].
double episode_loss(const Prediction& prediction, int label);

// Everything computed for a batch of equal-size episodes on one tape.
struct BatchForward {
  Var pre_encoder;   // (n * seq_len) x d_model
  Var post_encoder;  // same shape
  Var logits;        // n x 2
  std::size_t seq_len = 0;
  std::size_t query_index = 0;
  std::vector<transformer::AttentionRecord> attention;
};

// The full in-context predictor: MPNN + label table + transformer + MLP head.
class CampModel {
 public:
  CampModel(const ModelConfig& config, std::uint64_t seed);
  CampModel(const CampModel& other);
  CampModel& operator=(const CampModel& other);

  const ModelConfig& config() const { return config_; }
  ParameterTree& parameters() { return params_; }
  const ParameterTree& parameters() const { return params_; }

  const encoder::Mpnn& mpnn() const { return mpnn_; }
  const encoder::LabelTable& labels() const { return labels_; }
  const transformer::TransformerEncoder& encoder() const { return encoder_; }

  // Batched forward over episodes that share one support size. Gradients flow
  // into the parameters only when `track_grad` is set (non-const overload).
  BatchForward forward(Tape& tape, std::span<const data::Episode> episodes, bool track_grad,
                       bool capture = false);
  BatchForward forward(Tape& tape, std::span<const data::Episode> episodes, bool capture = false) const;

  // Transformer + extraction + head on an assembled sequence (eval mode).
  Prediction predict_sequence(const context::JointSequence& seq) const;

  // Pre-encoder sequence of one episode in this model's layout.
  context::JointSequence embed(const data::Episode& episode) const;

  // Head applied to extracted query rows.
  Var classify(const Binder& bind, Var query_rows) const;

 private:
  BatchForward run(const Binder& bind, std::span<const data::Episode> episodes, bool capture) const;
  void rebind();

  ModelConfig config_;
  ParameterTree params_;
  std::mt19937_64 init_rng_;
  encoder::Mpnn mpnn_;
  encoder::LabelTable labels_;
  transformer::TransformerEncoder encoder_;
  const Tensor* hidden_w_ = nullptr;
  const Tensor* hidden_b_ = nullptr;
  const Tensor* out_w_ = nullptr;
  const Tensor* out_b_ = nullptr;
};

// Eval-mode predictions; episodes may have different support sizes.
Prediction predict(const data::Episode& episode, const CampModel& model);
std::vector<Prediction> predict_batch(std::span<const data::Episode> episodes, const CampModel& model);

}  // namespace camp::head
