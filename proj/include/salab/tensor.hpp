#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "salab/error.hpp"

namespace salab::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(numel(shape), fill) {
    validate();
  }
  Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    validate();
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  /// Size of the last axis.
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  /// Product of all leading axes.
  std::size_t rows() const { return shape.empty() ? 1 : data.size() / shape.back(); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
  T& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  std::span<T> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape, std::vector<U>(data.begin(), data.end()));
  }

  void validate() const {
    for (std::size_t d : shape) {
      require(d >= 1, ErrorCode::kShape, "tensor shape " + shape_string(shape) + " has a zero axis");
    }
    require(numel(shape) == data.size(), ErrorCode::kShape,
            "tensor shape " + shape_string(shape) + " does not match " +
                std::to_string(data.size()) + " values");
  }
};

/// A named trainable tensor with its gradient accumulator.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  /// Row 0 of an embedding table is the padding row: held at zero and never
  /// updated.
  bool frozen_row0 = false;

  Parameter(std::string n, Tensor<T> v, bool freeze_row0 = false)
      : name(std::move(n)), value(std::move(v)), grad(value.shape), frozen_row0(freeze_row0) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T(0)); }
};

/// Ordered collection of parameters with stable addresses.
template <typename T>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other) { *this = other; }
  ParameterSet& operator=(const ParameterSet& other) {
    if (this == &other) return *this;
    items_.clear();
    for (const auto& p : other.items_) items_.push_back(std::make_unique<Parameter<T>>(*p));
    return *this;
  }
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter<T>& add(std::string name, Tensor<T> value, bool freeze_row0 = false) {
    require(find(name) == nullptr, ErrorCode::kInvalidArgument, "duplicate parameter '" + name + "'");
    items_.push_back(std::make_unique<Parameter<T>>(std::move(name), std::move(value), freeze_row0));
    return *items_.back();
  }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : items_) if (p->name == name) return p.get();
    return nullptr;
  }
  const Parameter<T>* find(const std::string& name) const {
    for (const auto& p : items_) if (p->name == name) return p.get();
    return nullptr;
  }
  Parameter<T>& get(const std::string& name) {
    Parameter<T>* p = find(name);
    require(p != nullptr, ErrorCode::kInvalidArgument, "missing parameter '" + name + "'");
    return *p;
  }
  const Parameter<T>& get(const std::string& name) const {
    const Parameter<T>* p = find(name);
    require(p != nullptr, ErrorCode::kInvalidArgument, "missing parameter '" + name + "'");
    return *p;
  }

  std::size_t size() const { return items_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *items_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *items_[i]; }

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : items_) p->zero_grad();
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& p : items_) out.add(p->name, p->value.template cast<U>(), p->frozen_row0);
    return out;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> items_;
};

}  // namespace salab::nn
