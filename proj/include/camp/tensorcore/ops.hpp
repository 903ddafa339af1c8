#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "camp/tensorcore/tape.hpp"

// Differentiable primitives. Every operand is viewed as a (rows x cols) matrix.
namespace camp::tensor {

// Numerically stable softmax of a single vector (max subtraction).
std::vector<double> apply_softmax(std::span<const double> x);

Var matmul(Var a, Var b);
Var add(Var a, Var b);
// a (n x m) plus a length-m row broadcast over every row.
Var add_bias(Var a, Var bias);
Var linear(Var x, Var weight, Var bias);
Var scale(Var a, double factor);
Var gelu(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-6);
Var softmax_rows(Var a);
Var concat_cols(Var a, Var b);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(Var a, std::span<const std::size_t> indices);
// out[indices[i]] += a[i]; out has n_out rows.
Var scatter_add_rows(Var a, std::span<const std::size_t> indices, std::size_t n_out);
// Pools contiguous row segments [offsets[s], offsets[s+1]).
Var segment_mean(Var a, std::span<const std::size_t> offsets);
Var segment_sum(Var a, std::span<const std::size_t> offsets);
Var sum(Var a);
Var mean(Var a);
// Sum over rows of -log softmax(logits[r])[labels[r]].
Var cross_entropy(Var logits, std::span<const int> labels);
// Inverted dropout; identity unless the tape is in training mode.
Var dropout(Var a, double rate);

// Scaled dot-product self-attention over `q`, `k`, `v`, each holding
// (n_sequences * seq_len) rows of width d_model, split into n_heads heads.
// Attention never crosses sequence boundaries. Dropout (training mode only)
// is applied to the attention weights. If `capture` is non-null it receives
// the pre-dropout weights of every (sequence, head) pair, in that order.
Var multi_head_attention(Var q, Var k, Var v, std::size_t seq_len, std::size_t n_heads, double dropout_rate,
                         std::vector<Tensor>* capture = nullptr);

}  // namespace camp::tensor
