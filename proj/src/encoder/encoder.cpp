#include "camp/encoder/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "camp/error.hpp"
#include "camp/tensorcore/ops.hpp"

namespace camp::encoder {

using namespace camp::tensor;

Var Binder::operator()(const Tensor& param) const {
  return track_grad_ ? tape_.watch(const_cast<Tensor&>(param)) : tape_.watch(param);
}

namespace {

Tensor& add_weight(ParameterTree& params, const std::string& name, std::size_t in, std::size_t out,
                   std::mt19937_64& rng, double std) {
  Tensor w = Tensor::zeros(in, out);
  init_truncated_normal(w, std, rng);
  return params.add(name, std::move(w));
}

Tensor& add_bias(ParameterTree& params, const std::string& name, std::size_t n) {
  return params.add(name, Tensor({n}, 0.0));
}

}  // namespace

Mpnn::Mpnn(ParameterTree& params, const std::string& prefix, const MpnnConfig& config, std::mt19937_64& rng)
    : config_(config), prefix_(prefix) {
  if (config.atom_feature_dim == 0 || config.n_bond_types == 0 || config.d_node == 0 || config.d_out == 0) {
    throw InvalidArgument("MPNN dimensions must be positive");
  }
  const auto std_for = [&](std::size_t fan_in) {
    return config.fan_in_init ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 0.02;
  };
  add_weight(params, prefix + ".input.weight", config.atom_feature_dim, config.d_node, rng,
             std_for(config.atom_feature_dim));
  add_bias(params, prefix + ".input.bias", config.d_node);
  for (std::size_t t = 0; t < config.n_bond_types; ++t) {
    add_weight(params, prefix + ".message." + std::to_string(t) + ".weight", config.d_node, config.d_node, rng,
               std_for(config.d_node));
  }
  add_weight(params, prefix + ".update.weight", 2 * config.d_node, config.d_node, rng, std_for(2 * config.d_node));
  add_bias(params, prefix + ".update.bias", config.d_node);
  add_weight(params, prefix + ".readout.weight", config.d_node, config.d_out, rng, std_for(config.d_node));
  add_bias(params, prefix + ".readout.bias", config.d_out);
  rebind(params);
}

void Mpnn::rebind(ParameterTree& params) {
  input_w_ = &params.at(prefix_ + ".input.weight");
  input_b_ = &params.at(prefix_ + ".input.bias");
  message_w_.clear();
  for (std::size_t t = 0; t < config_.n_bond_types; ++t) {
    message_w_.push_back(&params.at(prefix_ + ".message." + std::to_string(t) + ".weight"));
  }
  update_w_ = &params.at(prefix_ + ".update.weight");
  update_b_ = &params.at(prefix_ + ".update.bias");
  readout_w_ = &params.at(prefix_ + ".readout.weight");
  readout_b_ = &params.at(prefix_ + ".readout.bias");
}

Var Mpnn::encode(const Binder& bind, std::span<const data::AtomGraph* const> graphs) const {
  if (graphs.empty()) throw InvalidArgument("no molecules to encode");
  const auto F = config_.atom_feature_dim;
  std::size_t n_atoms = 0;
  for (const auto* g : graphs) {
    if (g->feature_dim != F) {
      throw InvalidArgument("atom feature width " + std::to_string(g->feature_dim) + " does not match encoder width " +
                            std::to_string(F));
    }
    n_atoms += g->n_atoms();
  }
  // Disjoint union of all graphs.
  std::vector<double> features;
  features.reserve(n_atoms * F);
  std::vector<std::size_t> offsets{0};
  std::vector<std::vector<std::size_t>> src(config_.n_bond_types), dst(config_.n_bond_types);
  for (const auto* g : graphs) {
    const auto base = offsets.back();
    features.insert(features.end(), g->features.begin(), g->features.end());
    for (const auto& e : g->edges) {
      if (e.bond_type >= config_.n_bond_types) {
        throw InvalidArgument("unknown bond type " + std::to_string(e.bond_type));
      }
      if (e.src >= g->n_atoms() || e.dst >= g->n_atoms()) throw InvalidArgument("edge endpoint out of range");
      src[e.bond_type].push_back(base + e.src);
      dst[e.bond_type].push_back(base + e.dst);
    }
    offsets.push_back(base + g->n_atoms());
  }

  Tape& tape = bind.tape();
  auto x = tape.constant(Tensor::matrix(n_atoms, F, std::move(features)));
  auto h = linear(x, bind(*input_w_), bind(*input_b_));
  for (std::size_t step = 0; step < config_.steps; ++step) {
    Var message;
    for (std::size_t t = 0; t < config_.n_bond_types; ++t) {
      if (src[t].empty()) continue;
      auto projected = gather_rows(matmul(h, bind(*message_w_[t])), src[t]);
      auto part = scatter_add_rows(projected, dst[t], n_atoms);
      message = message.valid() ? add(message, part) : part;
    }
    if (!message.valid()) message = tape.constant(Tensor::zeros(n_atoms, config_.d_node));
    h = gelu(linear(concat_cols(h, message), bind(*update_w_), bind(*update_b_)));
  }
  return linear(segment_mean(h, offsets), bind(*readout_w_), bind(*readout_b_));
}

LabelTable::LabelTable(ParameterTree& params, const std::string& name, std::size_t width, std::mt19937_64& rng,
                       double init_std)
    : name_(name) {
  if (width == 0) throw InvalidArgument("label embedding width must be positive");
  if (!(init_std > 0.0)) throw InvalidArgument("label embedding init std must be positive");
  add_weight(params, name, 3, width, rng, init_std);
  rebind(params);
}

void LabelTable::rebind(ParameterTree& params) { table_ = &params.at(name_); }

Var LabelTable::lookup(const Binder& bind, std::span<const std::size_t> ids) const {
  for (auto id : ids) {
    if (id > kUnknown) throw InvalidArgument("label id " + std::to_string(id) + " out of range");
  }
  return gather_rows(bind(*table_), ids);
}

std::vector<double> encode_molecule(const data::AtomGraph& graph, const Mpnn& mpnn) {
  Tape tape;
  const data::AtomGraph* graphs[] = {&graph};
  const auto out = mpnn.encode(Binder(tape, false), graphs);
  return out.value().values();
}

std::vector<double> encode_label(std::size_t label_id, const LabelTable& table) {
  if (label_id > kUnknown) throw InvalidArgument("label id " + std::to_string(label_id) + " out of range");
  const auto row = table.table().row_view(label_id);
  return {row.begin(), row.end()};
}

std::vector<double> encode_label_one_hot(std::span<const double> one_hot, const LabelTable& table) {
  if (one_hot.size() != 3) throw InvalidArgument("label one-hot must have 3 entries");
  std::vector<double> out(table.width(), 0.0);
  for (std::size_t r = 0; r < 3; ++r) {
    const auto row = table.table().row_view(r);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += one_hot[r] * row[c];
  }
  return out;
}

namespace {

std::vector<std::vector<double>> molecule_embeddings(const data::Episode& episode, const Mpnn& mpnn,
                                                     bool query_first) {
  data::validate_episode(episode);
  std::vector<const data::AtomGraph*> graphs;
  if (query_first) graphs.push_back(&episode.query->graph);
  for (const auto& m : episode.support) graphs.push_back(&m->graph);
  if (!query_first) graphs.push_back(&episode.query->graph);
  Tape tape;
  const auto enc = mpnn.encode(Binder(tape, false), graphs);
  std::vector<std::vector<double>> out;
  for (std::size_t r = 0; r < graphs.size(); ++r) {
    const auto row = enc.value().row_view(r);
    out.emplace_back(row.begin(), row.end());
  }
  return out;
}

}  // namespace

context::JointSequence embed_episode(const data::Episode& episode, const Mpnn& mpnn, const LabelTable& table) {
  const auto mols = molecule_embeddings(episode, mpnn, true);
  std::vector<std::vector<double>> labels{encode_label(kUnknown, table)};
  for (const auto& m : episode.support) labels.push_back(encode_label(static_cast<std::size_t>(m->label), table));
  return context::assemble_camp(mols, labels);
}

context::JointSequence embed_episode_naive(const data::Episode& episode, const Mpnn& mpnn, const LabelTable& table) {
  const auto mols = molecule_embeddings(episode, mpnn, false);
  std::vector<std::vector<double>> labels;
  for (const auto& m : episode.support) labels.push_back(encode_label(static_cast<std::size_t>(m->label), table));
  return context::assemble_naive_icl(mols, labels);
}

}  // namespace camp::encoder
