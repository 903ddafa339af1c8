#pragma once

#include <cstddef>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "camp/encoder/encoder.hpp"
#include "camp/tensorcore/tape.hpp"

namespace camp::transformer {

using encoder::Binder;
using tensor::ParameterTree;
using tensor::Tensor;
using tensor::Var;

struct EncoderConfig {
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_model = 128;
  std::size_t d_mlp = 512;
  double dropout_rate = 0.1;
  bool use_positional = false;

  static EncoderConfig desk();
  // The ViT "base" sizes.
  static EncoderConfig paper();
  void validate() const;
};

// Attention weights of one head; entry (i, j) is how much element i attends to j.
struct AttentionRecord {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t sequence = 0;
  Tensor weights;
};

// Sinusoidal table: even channels sin(pos / 10000^(2i/d)), odd channels cos.
Tensor sinusoid_table(std::size_t length, std::size_t d_model);
// rows + sinusoid_table(rows.rows(), rows.cols()).
Tensor add_fixed_positional(const Tensor& rows);

// Pre-norm transformer encoder without positional information unless
// configured: x += MHSA(LN(x)); x += MLP(LN(x)); final LN.
class TransformerEncoder {
 public:
  TransformerEncoder(ParameterTree& params, const std::string& prefix, const EncoderConfig& config,
                     std::mt19937_64& rng);
  void rebind(ParameterTree& params);

  const EncoderConfig& config() const { return config_; }

  // `x` stacks n sequences of seq_len rows each. Dropout follows the tape's
  // training flag. When `capture` is set it receives one record per
  // (sequence, layer, head).
  Var forward(const Binder& bind, Var x, std::size_t seq_len, std::vector<AttentionRecord>* capture = nullptr) const;

 private:
  struct Layer {
    const Tensor *ln1_g, *ln1_b, *q_w, *q_b, *k_w, *k_b, *v_w, *v_b, *o_w, *o_b;
    const Tensor *ln2_g, *ln2_b, *fc1_w, *fc1_b, *fc2_w, *fc2_b;
  };

  EncoderConfig config_;
  std::string prefix_;
  std::vector<Layer> layers_;
  const Tensor* final_g_ = nullptr;
  const Tensor* final_b_ = nullptr;
};

// Plain-tensor convenience: single sequence in eval mode.
struct ForwardResult {
  Tensor output;
  std::vector<AttentionRecord> attention;
};
ForwardResult encoder_forward(const TransformerEncoder& encoder, const Tensor& rows, bool capture);

// One JSON object per record: {"layer", "head", "sequence", "L", "weights" (row-major)}.
void write_attention_json(const std::vector<AttentionRecord>& records, std::ostream& out);

}  // namespace camp::transformer
