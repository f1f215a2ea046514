#pragma once

// Reverse-mode automatic differentiation over dense row-major tensors.
//
// A Tape records every operation as a node in creation order, which is a
// topological order of the computation graph; backward() walks it once in
// reverse. Parameters enter the tape as leaves that alias the parameter's
// storage, so gradients accumulate straight into Parameter::grad.

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "salab/rng.hpp"
#include "salab/tensor.hpp"

namespace salab::nn {

template <typename T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Shape& shape() const;
  std::span<const T> value() const;
  std::size_t size() const { return value().size(); }
  std::size_t cols() const { return shape().empty() ? 1 : shape().back(); }
  std::size_t rows() const { return size() / cols(); }
  bool needs_grad() const;
  /// Gradient accumulator; allocated on first use.
  std::span<T> grad() const;
  Tensor<T> value_tensor() const;
  Tensor<T> grad_tensor() const;

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  /// Called with the handle of the node being differentiated.
  using BackwardFn = std::function<void(Var<T> self)>;

  /// With `record = false` no backward closures are stored (inference).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var<T> constant(Tensor<T> value);
  Var<T> input(Tensor<T> value, bool requires_grad = true);
  Var<T> param(Parameter<T>& p);

  /// Appends an op node. `needs_grad` is inherited from the inputs; the
  /// closure runs during backward() only when the node needs a gradient.
  Var<T> push(Shape shape, std::vector<T> value, const std::vector<Var<T>>& inputs,
              BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold one value.
  void backward(Var<T> loss);

  /// Ops with a non-differentiable point (relu at 0, sparse support edges)
  /// report their distance to it here; gradient checks use it to reject
  /// inputs that sit on a kink.
  void note_margin(double margin) {
    if (margin < min_margin_) min_margin_ = margin;
  }
  double min_margin() const { return min_margin_; }

  std::size_t size() const { return nodes_.size(); }

  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
  std::span<const T> value(std::size_t id) const;
  std::span<T> grad(std::size_t id);
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

 private:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
    BackwardFn backward;
  };

  bool record_;
  double min_margin_ = std::numeric_limits<double>::infinity();
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitive ops. All shapes are checked; mismatches raise ErrorCode::kShape.

/// y = x W + b for x [..., in], W [in, out], b [out].
template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias);
template <typename T>
Var<T> linear(Var<T> x, Var<T> weight);

/// Gathers rows of `table` [V, d]. Id 0 is padding: its row is read as zero
/// and receives no gradient.
template <typename T>
Var<T> embedding_lookup(std::span<const std::int32_t> ids, Var<T> table);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

/// out_r = x_r + table[positions[r]].
template <typename T>
Var<T> add_indexed_rows(Var<T> x, Var<T> table, std::span<const std::size_t> positions);

template <typename T>
Var<T> scale(Var<T> x, T factor);

template <typename T>
Var<T> relu(Var<T> x);

/// Inverted dropout; identity when `training` is false or rate is 0.
template <typename T>
Var<T> dropout(Var<T> x, double rate, bool training, CounterRng& rng);

/// Normalizes the last axis to zero mean and unit variance, then applies
/// gain and bias.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, double eps = 1e-5);

struct Segment {
  std::size_t start = 0;
  std::size_t length = 0;
};

/// Mean of each contiguous row segment of x [n, d]; returns [segments, d].
template <typename T>
Var<T> segment_mean(Var<T> x, std::span<const Segment> segments);

/// Mean over rows with mask true; returns [d].
template <typename T>
Var<T> masked_mean_pool(Var<T> x, const std::vector<bool>& mask);

template <typename T>
Var<T> sum(Var<T> x);

/// Mean binary cross-entropy over a batch of logits, in the stable form
/// max(s, 0) - s*y + log(1 + exp(-|s|)).
template <typename T>
Var<T> bce_with_logits(Var<T> logits, std::span<const int> labels);

/// Scalar (double) reference used by tests and the CLI.
double bce_with_logits_value(double logit, int label);
double stable_sigmoid(double x);

}  // namespace salab::nn
