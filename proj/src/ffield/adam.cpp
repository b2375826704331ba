#include "ffield/adam.hpp"

#include <cmath>

namespace ffield {

template <typename T>
void Adam<T>::step(const std::vector<Parameter<T>*>& params) {
  for (const Parameter<T>* p : params) {
    if (p->grad.shape() != p->value.shape()) {
      Fail(ErrorCode::kShape, "adam: gradient of '" + p->name + "' has shape " +
                                  p->grad.shape_string() + ", parameter " +
                                  p->value.shape_string());
    }
    if (!p->grad.all_finite()) {
      Fail(ErrorCode::kNumeric,
           "adam: non-finite gradient for '" + p->name + "', update skipped");
    }
  }
  if (m_.empty()) {
    for (const Parameter<T>* p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }
  if (m_.size() != params.size()) {
    Fail(ErrorCode::kState, "adam: parameter list changed between steps");
  }

  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const T b1 = static_cast<T>(config_.beta1);
  const T b2 = static_cast<T>(config_.beta2);
  const T lr = static_cast<T>(config_.learning_rate);
  const T eps = static_cast<T>(config_.epsilon);
  const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(config_.beta1, t)));
  const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(config_.beta2, t)));

  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<T>& p = *params[k];
    if (m_[k].shape() != p.value.shape()) {
      Fail(ErrorCode::kShape, "adam: moment shape mismatch for '" + p.name + "'");
    }
    T* w = p.value.data();
    const T* g = p.grad.data();
    T* m = m_[k].data();
    T* v = v_[k].data();
    const std::size_t n = p.value.size();
#pragma omp parallel for simd schedule(static) if (n > 65536)
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T m_hat = m[i] * c1;
      const T v_hat = v[i] * c2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace ffield
