#include "ptdet/optim.hpp"

#include <cmath>

namespace ptdet {

AdamW::AdamW(ParamStore& store, double lr, double beta1, double beta2, double weight_decay,
             double eps)
    : store_(store), lr_(lr), beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay),
      eps_(eps) {
  for (auto& [name, t] : store_.params()) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void AdamW::zero_grad() { store_.zero_grad(); }

void AdamW::step() {
  ++step_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  auto& params = store_.params();
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& [name, t] = params[pi];
    double* p = t.ptr();
    const double* g = t.gptr();
    double* m = m_[pi].data();
    double* v = v_[pi].data();
    int64_t n = t.numel();
    for (int64_t i = 0; i < n; ++i) {
      if (!std::isfinite(g[i]))
        throw NumericalError("adamw: non-finite gradient in parameter '" + name +
                             "' at element " + std::to_string(i));
      // decoupled decay, then bias-corrected moment update
      p[i] *= 1.0 - lr_ * weight_decay_;
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace ptdet
