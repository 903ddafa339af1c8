#include "camp/camphead/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "camp/error.hpp"
#include "camp/tensorcore/ops.hpp"

namespace camp::head {

using namespace camp::tensor;

std::size_t ModelConfig::label_width() const {
  if (layout == context::Layout::kNaiveIcl) return d_model();
  return d_label ? d_label : d_model() / 8;
}

std::size_t ModelConfig::molecule_width() const {
  if (layout == context::Layout::kNaiveIcl) return d_model();
  return d_model() - label_width();
}

void ModelConfig::validate() const {
  encoder.validate();
  if (layout == context::Layout::kCamp && (label_width() == 0 || label_width() >= d_model())) {
    throw InvalidArgument("label width must lie in [1, d_model)");
  }
  if (molecule_width() + (layout == context::Layout::kCamp ? label_width() : 0) != d_model()) {
    throw InvalidArgument("molecule and label widths must add up to d_model");
  }
  if (atom_feature_dim == 0 || n_bond_types == 0 || d_node == 0) throw InvalidArgument("MPNN sizes must be positive");
}

Prediction make_prediction(std::span<const double> logits) {
  if (logits.size() != 2) throw InvalidArgument("binary prediction needs exactly 2 logits");
  Prediction p;
  p.logits = {logits[0], logits[1]};
  p.probability_positive = apply_softmax(logits)[1];
  return p;
}

std::vector<double> extract_query(const Tensor& rows, std::size_t query_index) {
  if (query_index >= rows.rows()) {
    throw InvalidArgument("query index " + std::to_string(query_index) + " out of range for " +
                          std::to_string(rows.rows()) + " rows");
  }
  const auto r = rows.row_view(query_index);
  return {r.begin(), r.end()};
}

double episode_loss(const Prediction& prediction, int label) {
  if (label != 0 && label != 1) throw InvalidArgument("label must be 0 or 1");
  const auto& z = prediction.logits;
  const double hi = std::max(z[0], z[1]);
  const double log_z = hi + std::log(std::exp(z[0] - hi) + std::exp(z[1] - hi));
  return log_z - z[static_cast<std::size_t>(label)];
}

namespace {

encoder::MpnnConfig mpnn_config(const ModelConfig& c) {
  c.validate();
  return encoder::MpnnConfig{c.atom_feature_dim, c.n_bond_types, c.d_node, c.molecule_width(), c.mpnn_steps,
                             c.scaled_init};
}

}  // namespace

CampModel::CampModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config),
      init_rng_(seed),
      mpnn_(params_, "mpnn", mpnn_config(config), init_rng_),
      labels_(params_, "labels.table", config.label_width(), init_rng_, config.scaled_init ? kScaledLabelStd : 0.02),
      encoder_(params_, "encoder", config.encoder, init_rng_) {
  const auto d = config.d_model();
  const auto h = config.head_width();
  Tensor hidden = Tensor::zeros(d, h);
  init_truncated_normal(hidden, 0.02, init_rng_);
  params_.add("head.hidden.weight", std::move(hidden));
  params_.add("head.hidden.bias", Tensor({h}, 0.0));
  Tensor out = Tensor::zeros(h, 2);
  init_truncated_normal(out, 0.02, init_rng_);
  params_.add("head.out.weight", std::move(out));
  params_.add("head.out.bias", Tensor({2}, 0.0));
  rebind();
}

CampModel::CampModel(const CampModel& other)
    : config_(other.config_),
      params_(other.params_),
      init_rng_(other.init_rng_),
      mpnn_(other.mpnn_),
      labels_(other.labels_),
      encoder_(other.encoder_) {
  rebind();
}

CampModel& CampModel::operator=(const CampModel& other) {
  if (this != &other) {
    config_ = other.config_;
    params_ = other.params_;
    init_rng_ = other.init_rng_;
    mpnn_ = other.mpnn_;
    labels_ = other.labels_;
    encoder_ = other.encoder_;
    rebind();
  }
  return *this;
}

void CampModel::rebind() {
  mpnn_.rebind(params_);
  labels_.rebind(params_);
  encoder_.rebind(params_);
  hidden_w_ = &params_.at("head.hidden.weight");
  hidden_b_ = &params_.at("head.hidden.bias");
  out_w_ = &params_.at("head.out.weight");
  out_b_ = &params_.at("head.out.bias");
}

Var CampModel::classify(const Binder& bind, Var query_rows) const {
  auto h = gelu(linear(query_rows, bind(*hidden_w_), bind(*hidden_b_)));
  return linear(h, bind(*out_w_), bind(*out_b_));
}

BatchForward CampModel::forward(Tape& tape, std::span<const data::Episode> episodes, bool track_grad, bool capture) {
  return run(Binder(tape, track_grad), episodes, capture);
}

BatchForward CampModel::forward(Tape& tape, std::span<const data::Episode> episodes, bool capture) const {
  return run(Binder(tape, false), episodes, capture);
}

BatchForward CampModel::run(const Binder& bind, std::span<const data::Episode> episodes, bool capture) const {
  if (episodes.empty()) throw InvalidArgument("forward on an empty batch");
  const auto k = episodes.front().support_size();
  std::vector<const data::AtomGraph*> graphs;
  std::unordered_map<const data::LabeledMolecule*, std::size_t> slot;
  auto index_of = [&](const data::MoleculePtr& m) {
    const auto [it, inserted] = slot.emplace(m.get(), graphs.size());
    if (inserted) graphs.push_back(&m->graph);
    return it->second;
  };
  for (const auto& e : episodes) {
    data::validate_episode(e);
    if (e.support_size() != k) throw InvalidArgument("all episodes in a batch must share one support size");
  }

  const auto n = episodes.size();
  BatchForward out;
  std::vector<std::size_t> mol_rows, label_ids;
  if (config_.layout == context::Layout::kCamp) {
    out.seq_len = k + 1;
    out.query_index = 0;
    for (const auto& e : episodes) {
      mol_rows.push_back(index_of(e.query));
      label_ids.push_back(encoder::kUnknown);
      for (const auto& m : e.support) {
        mol_rows.push_back(index_of(m));
        label_ids.push_back(static_cast<std::size_t>(m->label));
      }
    }
    auto mols = mpnn_.encode(bind, graphs);
    out.pre_encoder = concat_cols(gather_rows(mols, mol_rows), labels_.lookup(bind, label_ids));
  } else {
    out.seq_len = 2 * k + 1;
    out.query_index = 2 * k;
    for (const auto& e : episodes) {
      for (const auto& m : e.support) {
        mol_rows.push_back(index_of(m));
        label_ids.push_back(static_cast<std::size_t>(m->label));
      }
      mol_rows.push_back(index_of(e.query));
    }
    auto mols = mpnn_.encode(bind, graphs);
    const Var parts[] = {gather_rows(mols, mol_rows), labels_.lookup(bind, label_ids)};
    auto stacked = concat_rows(parts);
    // Interleave [m_1, l_1, ..., m_k, l_k, m_q] per episode.
    std::vector<std::size_t> order;
    order.reserve(n * out.seq_len);
    const auto label_base = n * (k + 1);
    for (std::size_t e = 0; e < n; ++e) {
      for (std::size_t i = 0; i < k; ++i) {
        order.push_back(e * (k + 1) + i);
        order.push_back(label_base + e * k + i);
      }
      order.push_back(e * (k + 1) + k);
    }
    out.pre_encoder = gather_rows(stacked, order);
  }

  out.post_encoder = encoder_.forward(bind, out.pre_encoder, out.seq_len, capture ? &out.attention : nullptr);
  std::vector<std::size_t> query_rows(n);
  for (std::size_t e = 0; e < n; ++e) query_rows[e] = e * out.seq_len + out.query_index;
  out.logits = classify(bind, gather_rows(out.post_encoder, query_rows));
  return out;
}

Prediction CampModel::predict_sequence(const context::JointSequence& seq) const {
  if (seq.width() != config_.d_model()) throw InvalidArgument("sequence width does not match d_model");
  Tape tape;
  Binder bind(tape, false);
  auto post = encoder_.forward(bind, tape.constant(seq.rows), seq.length());
  const std::size_t q[] = {seq.query_index};
  if (seq.query_index >= seq.length()) throw InvalidArgument("query index out of range");
  auto logits = classify(bind, gather_rows(post, q));
  return make_prediction(logits.value().data());
}

context::JointSequence CampModel::embed(const data::Episode& episode) const {
  return config_.layout == context::Layout::kCamp ? encoder::embed_episode(episode, mpnn_, labels_)
                                                  : encoder::embed_episode_naive(episode, mpnn_, labels_);
}

Prediction predict(const data::Episode& episode, const CampModel& model) {
  return predict_batch(std::span(&episode, 1), model).front();
}

std::vector<Prediction> predict_batch(std::span<const data::Episode> episodes, const CampModel& model) {
  constexpr std::size_t kChunk = 256;
  std::vector<Prediction> out(episodes.size());
  std::map<std::size_t, std::vector<std::size_t>> by_size;
  for (std::size_t i = 0; i < episodes.size(); ++i) by_size[episodes[i].support_size()].push_back(i);
  for (const auto& [size, members] : by_size) {
    for (std::size_t start = 0; start < members.size(); start += kChunk) {
      const auto stop = std::min(members.size(), start + kChunk);
      std::vector<data::Episode> chunk;
      for (auto i = start; i < stop; ++i) chunk.push_back(episodes[members[i]]);
      Tape tape;
      const auto fwd = model.forward(tape, chunk);
      for (auto i = start; i < stop; ++i) {
        out[members[i]] = make_prediction(fwd.logits.value().row_view(i - start));
      }
    }
  }
  return out;
}

}  // namespace camp::head
