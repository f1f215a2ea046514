#pragma once

#include <cstddef>
#include <vector>

#include "salab/tensor.hpp"

namespace salab::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a ParameterSet. Moments are allocated at
/// construction, zero-filled, in parameter order.
template <typename T>
class Adam {
 public:
  Adam(ParameterSet<T>& params, AdamConfig config = {});

  /// Applies one update from the accumulated gradients. Every gradient is
  /// scanned first; a non-finite entry throws kPoisonedGradient and leaves
  /// parameters and moments untouched.
  void step();

  std::size_t step_count() const { return t_; }
  const AdamConfig& config() const { return config_; }
  const Tensor<T>& first_moment(std::size_t i) const { return m_[i]; }
  const Tensor<T>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  ParameterSet<T>* params_;
  AdamConfig config_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::size_t t_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace salab::nn
