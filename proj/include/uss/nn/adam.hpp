#pragma once

#include <cmath>
#include <unordered_map>
#include <vector>

#include "uss/autograd/graph.hpp"

namespace uss::nn {

// Adam with bias correction. First/second moment buffers are keyed by
// parameter and created lazily with matching shapes.
template <typename T>
class Adam {
public:
  explicit Adam(T lr = T(0.001), T beta1 = T(0.9), T beta2 = T(0.999),
                T epsilon = T(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

  void step(const std::vector<ag::Parameter<T>*>& params,
            const ag::GradMap<T>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), static_cast<double>(t_));
    for (ag::Parameter<T>* p : params) {
      auto it = grads.find(p);
      if (it == grads.end()) continue;
      const Tensor<T>& g = it->second;
      check(g.shape() == p->value.shape(),
            "adam: gradient shape " + shape_str(g.shape()) +
                " does not match parameter '" + p->name + "' " +
                shape_str(p->value.shape()));
      Slot& s = slots_[p];
      if (s.m.size() != g.size()) {
        s.m = Tensor<T>(g.shape());
        s.v = Tensor<T>(g.shape());
      }
      T* m = s.m.data();
      T* v = s.v.data();
      T* w = p->value.data();
      const T* gd = g.data();
      for (int64_t i = 0; i < g.size(); ++i) {
        m[i] = beta1_ * m[i] + (T(1) - beta1_) * gd[i];
        v[i] = beta2_ * v[i] + (T(1) - beta2_) * gd[i] * gd[i];
        const T mhat = m[i] / static_cast<T>(bc1);
        const T vhat = v[i] / static_cast<T>(bc2);
        w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  int64_t step_count() const { return t_; }
  T learning_rate() const { return lr_; }
  void set_learning_rate(T lr) { lr_ = lr; }

  // Moment buffers for checkpointing, keyed by parameter name.
  struct Slot {
    Tensor<T> m, v;
  };
  std::unordered_map<const ag::Parameter<T>*, Slot>& slots() { return slots_; }
  void set_step_count(int64_t t) { t_ = t; }

private:
  T lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::unordered_map<const ag::Parameter<T>*, Slot> slots_;
};

}  // namespace uss::nn
