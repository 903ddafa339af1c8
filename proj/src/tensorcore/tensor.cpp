#include "camp/tensorcore/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "camp/error.hpp"

namespace camp::tensor {

std::size_t shape_product(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(std::span<const std::size_t> shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ')';
  return out.str();
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw InvalidArgument("tensor dimensions must be positive, got " + shape_string(shape_));
  }
  data_.assign(shape_product(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) throw InvalidArgument("tensor dimensions must be positive, got " + shape_string(shape_));
  }
  if (shape_product(shape_) != data_.size()) {
    throw InvalidArgument("tensor shape " + shape_string(shape_) + " does not match " +
                          std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}, 0.0); }

Tensor Tensor::row(std::vector<double> data) {
  const auto n = data.size();
  return Tensor({n}, std::move(data));
}

Tensor Tensor::scalar(double value) { return Tensor(std::vector<std::size_t>{}, std::vector<double>{value}); }

std::span<double> Tensor::ensure_grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
  return grad_;
}

void Tensor::zero_grad() {
  if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), 0.0);
}

void Tensor::ensure_finite(std::string_view context) const {
  if (Eigen::Map<const Eigen::ArrayXd>(data_.data(), static_cast<Eigen::Index>(data_.size())).allFinite()) return;
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      std::ostringstream msg;
      msg << "non-finite value " << data_[i] << " at flat index " << i << " in " << context;
      throw NumericalError(msg.str());
    }
  }
}

Tensor& ParameterTree::add(std::string name, Tensor value) {
  if (contains(name)) throw InvalidArgument("duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  entries_.push_back(Entry{std::move(name), std::move(value)});
  return entries_.back().value;
}

Tensor& ParameterTree::at(std::string_view name) {
  for (auto& e : entries_) {
    if (e.name == name) return e.value;
  }
  throw InvalidArgument("unknown parameter '" + std::string(name) + "'");
}

const Tensor& ParameterTree::at(std::string_view name) const {
  return const_cast<ParameterTree*>(this)->at(name);
}

bool ParameterTree::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

std::size_t ParameterTree::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void ParameterTree::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

void ParameterTree::clear_grad() {
  for (auto& e : entries_) e.value.clear_grad();
}

void ParameterTree::assign_values(const ParameterTree& other) {
  if (other.size() != size()) throw InvalidArgument("parameter trees differ in size");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& dst = entries_[i];
    const auto& src = other.entries_[i];
    if (dst.name != src.name || dst.value.shape() != src.value.shape()) {
      throw InvalidArgument("parameter '" + src.name + "' does not match '" + dst.name + "'");
    }
    std::copy(src.value.data().begin(), src.value.data().end(), dst.value.data().begin());
  }
}

bool ParameterTree::same_values(const ParameterTree& other) const {
  if (other.size() != size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name || !(entries_[i].value == other.entries_[i].value)) {
      return false;
    }
  }
  return true;
}

void init_truncated_normal(Tensor& t, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : t.data()) {
    double z = normal(rng);
    while (std::abs(z) > 2.0) z = normal(rng);
    v = z * stddev;
  }
}

}  // namespace camp::tensor
