#include "salab/optim.hpp"

#include <cmath>

namespace salab::nn {

template <typename T>
Adam<T>::Adam(ParameterSet<T>& params, AdamConfig config) : params_(&params), config_(config) {
  require(config.lr > 0.0 && config.beta1 >= 0.0 && config.beta1 < 1.0 && config.beta2 >= 0.0 &&
              config.beta2 < 1.0 && config.eps > 0.0,
          ErrorCode::kConfig, "invalid Adam hyperparameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params[i].value.shape);
    v_.emplace_back(params[i].value.shape);
  }
}

template <typename T>
void Adam<T>::step() {
  ParameterSet<T>& params = *params_;
  require(params.size() == m_.size(), ErrorCode::kShape,
          "Adam: parameter set changed since construction");
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (T g : params[i].grad.data) {
      if (!std::isfinite(g)) {
        fail(ErrorCode::kPoisonedGradient,
             "non-finite gradient in parameter '" + params[i].name + "'");
      }
    }
  }
  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = params[i];
    const std::size_t skip = p.frozen_row0 ? p.value.cols() : 0;
    auto& m = m_[i].data;
    auto& v = v_[i].data;
    for (std::size_t j = skip; j < p.value.size(); ++j) {
      const double g = p.grad.data[j];
      const double mj = b1 * m[j] + (1.0 - b1) * g;
      const double vj = b2 * v[j] + (1.0 - b2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = config_.lr * (mj / c1) / (std::sqrt(vj / c2) + config_.eps);
      p.value.data[j] = static_cast<T>(p.value.data[j] - update);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace salab::nn
