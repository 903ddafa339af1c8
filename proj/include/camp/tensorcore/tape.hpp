#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "camp/tensorcore/tensor.hpp"

namespace camp::tensor {

class Tape;

// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode computation tape.
//
// Every differentiable op appends one node holding its output and a closure
// that maps the output gradient onto its inputs' gradients. Nodes are stored in
// creation order, which is a topological order, and backward() walks them in
// reverse exactly once. Gradients reaching external tensors that require grad
// (parameters) are added to their grad buffers, so repeated backward passes
// accumulate.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::span<const double> out_grad)>;

  explicit Tape(bool training = false, std::uint64_t dropout_seed = 0);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf holding a copy of `value`; never receives gradient.
  Var constant(Tensor value);
  // Leaf referring to an external tensor (not copied). If the tensor requires
  // grad, backward() accumulates into its grad buffer. The tensor must outlive
  // the tape. Repeated calls with the same tensor return the same leaf.
  Var watch(Tensor& tensor);
  Var watch(const Tensor& tensor);

  // Appends an op node. `inputs` must all belong to this tape.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn backward);

  void backward(Var loss);

  const Tensor& value(std::size_t id) const;
  // Gradient buffer for node `id`, or an empty span when the node does not
  // participate in differentiation.
  std::span<double> grad_target(std::size_t id);
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  // Checks that `v` was produced by this tape.
  void check_owned(Var v, std::string_view op) const;

  bool training() const { return training_; }
  std::mt19937_64& dropout_rng() { return dropout_rng_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor* grad_sink = nullptr;
    bool needs_grad = false;
    std::vector<double> grad;
    BackwardFn backward;
  };

  bool training_;
  std::mt19937_64 dropout_rng_;
  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> watched_;
};

}  // namespace camp::tensor
