#include "camp/tensorcore/tape.hpp"

#include <algorithm>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "camp/error.hpp"

namespace camp::tensor {

const Tensor& Var::value() const {
  if (!tape_) throw InvalidArgument("use of an unbound Var");
  return tape_->value(id_);
}

namespace {

// Activations are multi-megabyte buffers allocated and freed on every pass.
// glibc serves those with fresh mmaps by default, so each one costs a round of
// page faults; keep them on the heap for reuse instead.
void keep_large_buffers_on_heap() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace

Tape::Tape(bool training, std::uint64_t dropout_seed) : training_(training), dropout_rng_(dropout_seed) {
  keep_large_buffers_on_heap();
}

Var Tape::constant(Tensor value) {
  value.ensure_finite("constant leaf");
  Node node;
  node.owned = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::watch(Tensor& tensor) {
  if (auto it = watched_.find(&tensor); it != watched_.end()) return Var(this, it->second);
  Node node;
  node.external = &tensor;
  if (tensor.requires_grad()) {
    node.grad_sink = &tensor;
    node.needs_grad = true;
  }
  nodes_.push_back(std::move(node));
  watched_.emplace(&tensor, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::watch(const Tensor& tensor) {
  if (auto it = watched_.find(&tensor); it != watched_.end()) return Var(this, it->second);
  Node node;
  node.external = &tensor;
  nodes_.push_back(std::move(node));
  watched_.emplace(&tensor, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const auto& in : inputs) {
    check_owned(in, op);
    needs = needs || nodes_[in.id_].needs_grad;
  }
  value.ensure_finite(op);
  Node node;
  node.owned = std::move(value);
  node.needs_grad = needs;
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(Var v, std::string_view op) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw InvalidArgument(std::string(op) + ": tensor was not recorded on this tape");
  }
}

const Tensor& Tape::value(std::size_t id) const {
  const auto& node = nodes_.at(id);
  return node.external ? *node.external : node.owned;
}

std::span<double> Tape::grad_target(std::size_t id) {
  auto& node = nodes_[id];
  if (!node.needs_grad) return {};
  const auto n = value(id).size();
  if (node.grad.size() != n) node.grad.assign(n, 0.0);
  return node.grad;
}

void Tape::backward(Var loss) {
  check_owned(loss, "backward");
  if (value(loss.id_).size() != 1) {
    throw InvalidArgument("backward: loss must be a scalar, got shape " + shape_string(value(loss.id_).shape()));
  }
  for (auto& node : nodes_) {
    std::fill(node.grad.begin(), node.grad.end(), 0.0);
  }
  if (!nodes_[loss.id_].needs_grad) return;
  grad_target(loss.id_)[0] = 1.0;

  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    auto& node = nodes_[id];
    if (!node.needs_grad || node.grad.empty()) continue;
    if (node.grad_sink) {
      auto sink = node.grad_sink->ensure_grad();
      for (std::size_t i = 0; i < sink.size(); ++i) sink[i] += node.grad[i];
    } else if (node.backward) {
      node.backward(*this, node.grad);
    }
  }
}

}  // namespace camp::tensor
