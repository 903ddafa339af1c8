#pragma once

#include <cstddef>
#include <deque>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace camp::tensor {

// Dense row-major tensor of doubles with an optional gradient buffer.
//
// Rank-0 and rank-1 tensors are viewed as a single row by the matrix
// accessors, so every kernel can treat its operands as (rows x cols).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor row(std::vector<double> data);
  static Tensor scalar(double value);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.size() < 2 ? 1 : data_.size() / shape_.back(); }
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<const double> row_view(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }
  std::span<double> row_view(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const { return !grad_.empty(); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }
  // Allocates a zeroed gradient buffer if absent; returns it.
  std::span<double> ensure_grad();
  void zero_grad();
  void clear_grad() { grad_.clear(); }

  // Throws NumericalError if any stored value is NaN or infinite.
  void ensure_finite(std::string_view context) const;

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
  bool requires_grad_ = false;
};

std::size_t shape_product(std::span<const std::size_t> shape);
std::string shape_string(std::span<const std::size_t> shape);

// Named, ordered collection of learnable tensors. Element addresses are stable
// for the lifetime of the tree, so model code may keep references into it.
class ParameterTree {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  ParameterTree() = default;
  ParameterTree(const ParameterTree&) = default;
  ParameterTree& operator=(const ParameterTree&) = default;

  Tensor& add(std::string name, Tensor value);
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();
  void clear_grad();
  // Copies values from a tree with identical names and shapes.
  void assign_values(const ParameterTree& other);
  // Exact equality of names, shapes and values.
  bool same_values(const ParameterTree& other) const;

 private:
  std::deque<Entry> entries_;
};

// Initializers. Truncation is at two standard deviations.
void init_truncated_normal(Tensor& t, double stddev, std::mt19937_64& rng);

}  // namespace camp::tensor
