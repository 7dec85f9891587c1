#include "efoent/optim.hpp"

#include <cmath>

#include "efoent/errors.hpp"

namespace efoent {

double warmup_lr(double base_lr, int64_t step, int64_t warmup) {
  if (warmup <= 0 || step >= warmup) return base_lr;
  return base_lr * (double(step) / double(warmup));
}

template <class S>
Adam<S>::Adam(double base_lr, int64_t warmup, double beta1, double beta2, double eps)
    : base_lr_(base_lr), beta1_(beta1), beta2_(beta2), eps_(eps), warmup_(warmup) {}

template <class S>
void Adam<S>::step(std::vector<Tensor<S>>& params, const std::vector<std::vector<S>>& grads) {
  if (params.size() != grads.size()) {
    throw UsageError("optimizer got " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t p = 0; p < params.size(); ++p) {
      m_[p].assign(size_t(params[p].numel()), 0.0);
      v_[p].assign(size_t(params[p].numel()), 0.0);
    }
  }
  ++step_;
  const double lr = warmup_lr(base_lr_, step_, warmup_);
  last_lr_ = lr;
  const double bc1 = 1.0 - std::pow(beta1_, double(step_));
  const double bc2 = 1.0 - std::pow(beta2_, double(step_));
  for (size_t p = 0; p < params.size(); ++p) {
    auto& param = params[p];
    const auto& g = grads[p];
    if (int64_t(g.size()) != param.numel()) {
      throw UsageError("gradient size " + std::to_string(g.size()) +
                       " does not match parameter " + shape_str(param.shape));
    }
    auto& m = m_[p];
    auto& v = v_[p];
    for (size_t i = 0; i < g.size(); ++i) {
      const double gi = double(g[i]);
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      param[int64_t(i)] = S(double(param[int64_t(i)]) - lr * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace efoent
