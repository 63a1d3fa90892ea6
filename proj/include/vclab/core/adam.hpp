#pragma once

#include <cmath>
#include <vector>

#include "nn.hpp"

namespace vclab {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update. Absent gradients count as zero; non-finite
/// gradients abort the step naming the parameter.
template <typename Real>
void adam_step(std::vector<Parameter<Real>*>& params, const AdamConfig& cfg) {
  for (Parameter<Real>* p : params) {
    Tensor<Real> g = p->value.grad();
    const long n = p->value.size();
    std::vector<Real> zero;
    const std::vector<Real>* gv;
    if (g.defined()) {
      if (g.size() != n) throw std::invalid_argument("adam_step: gradient shape mismatch");
      gv = &g.values();
      for (const Real x : *gv)
        if (!std::isfinite(static_cast<double>(x)))
          throw numerical_error("adam_step: non-finite gradient for parameter '" + p->name + "'");
    } else {
      zero.assign(static_cast<std::size_t>(n), Real(0));
      gv = &zero;
    }
    p->adam_t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->adam_t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->adam_t));
    std::vector<Real>& v = p->value.values();
    for (long i = 0; i < n; ++i) {
      const double gi = static_cast<double>((*gv)[static_cast<std::size_t>(i)]);
      double m = static_cast<double>(p->adam_m[static_cast<std::size_t>(i)]);
      double s = static_cast<double>(p->adam_v[static_cast<std::size_t>(i)]);
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * gi;
      s = cfg.beta2 * s + (1.0 - cfg.beta2) * gi * gi;
      p->adam_m[static_cast<std::size_t>(i)] = static_cast<Real>(m);
      p->adam_v[static_cast<std::size_t>(i)] = static_cast<Real>(s);
      const double mhat = m / bc1;
      const double shat = s / bc2;
      v[static_cast<std::size_t>(i)] -=
          static_cast<Real>(cfg.lr * mhat / (std::sqrt(shat) + cfg.eps));
    }
  }
}

template <typename Real>
void zero_grads(std::vector<Parameter<Real>*>& params) {
  for (Parameter<Real>* p : params) p->value.zero_grad();
}

}  // namespace vclab
