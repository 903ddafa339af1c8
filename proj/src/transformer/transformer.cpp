#include "camp/transformer/transformer.hpp"

#include <cmath>
#include <ostream>

#include "camp/error.hpp"
#include "camp/tensorcore/ops.hpp"
#include "json.hpp"

namespace camp::transformer {

using namespace camp::tensor;

EncoderConfig EncoderConfig::desk() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::paper() {
  EncoderConfig c;
  c.n_layers = 12;
  c.n_heads = 12;
  c.d_model = 768;
  c.d_mlp = 3072;
  c.dropout_rate = 0.2;
  return c;
}

void EncoderConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || d_model == 0 || d_mlp == 0) {
    throw InvalidArgument("encoder dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw InvalidArgument("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                          std::to_string(n_heads));
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw InvalidArgument("dropout_rate must lie in [0, 1)");
}

Tensor sinusoid_table(std::size_t length, std::size_t d_model) {
  Tensor table = Tensor::zeros(length, d_model);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t c = 0; c < d_model; ++c) {
      const double exponent = static_cast<double>(c - c % 2) / static_cast<double>(d_model);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      table(pos, c) = c % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return table;
}

Tensor add_fixed_positional(const Tensor& rows) {
  Tensor out = rows;
  const Tensor table = sinusoid_table(rows.rows(), rows.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += table[i];
  return out;
}

namespace {

void add_linear(ParameterTree& params, const std::string& name, std::size_t in, std::size_t out,
                std::mt19937_64& rng) {
  Tensor w = Tensor::zeros(in, out);
  init_truncated_normal(w, 0.02, rng);
  params.add(name + ".weight", std::move(w));
  params.add(name + ".bias", Tensor({out}, 0.0));
}

void add_norm(ParameterTree& params, const std::string& name, std::size_t d) {
  params.add(name + ".gain", Tensor({d}, 1.0));
  params.add(name + ".bias", Tensor({d}, 0.0));
}

}  // namespace

TransformerEncoder::TransformerEncoder(ParameterTree& params, const std::string& prefix, const EncoderConfig& config,
                                       std::mt19937_64& rng)
    : config_(config), prefix_(prefix) {
  config.validate();
  const auto d = config.d_model;
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const auto p = prefix + ".layer" + std::to_string(l);
    add_norm(params, p + ".ln1", d);
    add_linear(params, p + ".attn.q", d, d, rng);
    add_linear(params, p + ".attn.k", d, d, rng);
    add_linear(params, p + ".attn.v", d, d, rng);
    add_linear(params, p + ".attn.out", d, d, rng);
    add_norm(params, p + ".ln2", d);
    add_linear(params, p + ".mlp.fc1", d, config.d_mlp, rng);
    add_linear(params, p + ".mlp.fc2", config.d_mlp, d, rng);
  }
  add_norm(params, prefix + ".final_ln", d);
  rebind(params);
}

void TransformerEncoder::rebind(ParameterTree& params) {
  layers_.clear();
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const auto p = prefix_ + ".layer" + std::to_string(l);
    auto at = [&](const std::string& name) { return &params.at(p + name); };
    layers_.push_back(Layer{at(".ln1.gain"), at(".ln1.bias"), at(".attn.q.weight"), at(".attn.q.bias"),
                            at(".attn.k.weight"), at(".attn.k.bias"), at(".attn.v.weight"), at(".attn.v.bias"),
                            at(".attn.out.weight"), at(".attn.out.bias"), at(".ln2.gain"), at(".ln2.bias"),
                            at(".mlp.fc1.weight"), at(".mlp.fc1.bias"), at(".mlp.fc2.weight"), at(".mlp.fc2.bias")});
  }
  final_g_ = &params.at(prefix_ + ".final_ln.gain");
  final_b_ = &params.at(prefix_ + ".final_ln.bias");
}

Var TransformerEncoder::forward(const Binder& bind, Var x, std::size_t seq_len,
                                std::vector<AttentionRecord>* capture) const {
  if (x.cols() != config_.d_model) {
    throw InvalidArgument("sequence width " + std::to_string(x.cols()) + " does not match d_model " +
                          std::to_string(config_.d_model));
  }
  if (seq_len == 0 || x.rows() % seq_len != 0) throw InvalidArgument("row count is not a multiple of seq_len");
  const double p = config_.dropout_rate;
  if (config_.use_positional) {
    const Tensor table = sinusoid_table(seq_len, config_.d_model);
    Tensor tiled = Tensor::zeros(x.rows(), config_.d_model);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const auto src = table.row_view(r % seq_len);
      std::copy(src.begin(), src.end(), tiled.row_view(r).begin());
    }
    x = add(x, bind.tape().constant(std::move(tiled)));
  }
  if (capture) capture->clear();
  std::vector<Tensor> weights;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    auto h = layer_norm(x, bind(*L.ln1_g), bind(*L.ln1_b));
    auto q = linear(h, bind(*L.q_w), bind(*L.q_b));
    auto k = linear(h, bind(*L.k_w), bind(*L.k_b));
    auto v = linear(h, bind(*L.v_w), bind(*L.v_b));
    auto attn = multi_head_attention(q, k, v, seq_len, config_.n_heads, p, capture ? &weights : nullptr);
    if (capture) {
      for (std::size_t i = 0; i < weights.size(); ++i) {
        capture->push_back(AttentionRecord{l, i % config_.n_heads, i / config_.n_heads, std::move(weights[i])});
      }
    }
    x = add(x, dropout(linear(attn, bind(*L.o_w), bind(*L.o_b)), p));
    h = layer_norm(x, bind(*L.ln2_g), bind(*L.ln2_b));
    h = dropout(gelu(linear(h, bind(*L.fc1_w), bind(*L.fc1_b))), p);
    x = add(x, linear(h, bind(*L.fc2_w), bind(*L.fc2_b)));
  }
  return layer_norm(x, bind(*final_g_), bind(*final_b_));
}

ForwardResult encoder_forward(const TransformerEncoder& encoder, const Tensor& rows, bool capture) {
  tensor::Tape tape;
  Binder bind(tape, false);
  ForwardResult result;
  auto out = encoder.forward(bind, tape.constant(rows), rows.rows(), capture ? &result.attention : nullptr);
  result.output = out.value();
  return result;
}

void write_attention_json(const std::vector<AttentionRecord>& records, std::ostream& out) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& r : records) {
    doc.push_back({{"layer", r.layer},
                   {"head", r.head},
                   {"sequence", r.sequence},
                   {"L", r.weights.rows()},
                   {"weights", r.weights.values()}});
  }
  out << doc.dump(1) << '\n';
}

}  // namespace camp::transformer
