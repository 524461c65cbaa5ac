#pragma once

// Layer objects own Parameters and build graph nodes on call. A layer called
// with frozen=true contributes constants instead of parameter leaves, so
// backward stops there.

#include <cmath>
#include <string>
#include <vector>

#include "uss/autograd/conv_ops.hpp"
#include "uss/autograd/ops.hpp"
#include "uss/core/rng.hpp"

namespace uss::nn {

using ag::Parameter;
using ag::Var;

template <typename T>
using ParamRefs = std::vector<Parameter<T>*>;

template <typename T>
Var<T> as_input(Parameter<T>& p, bool frozen) {
  return frozen ? ag::constant(p.value, "frozen_param") : ag::leaf(p);
}

// Kaiming-uniform for ReLU fan-in, Xavier-uniform elsewhere.
template <typename T>
void kaiming_uniform(Tensor<T>& w, int64_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < w.size(); ++i)
    w[i] = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
void xavier_uniform(Tensor<T>& w, int64_t fan_in, int64_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (int64_t i = 0; i < w.size(); ++i)
    w[i] = static_cast<T>(rng.uniform(-bound, bound));
}

enum class Init { kKaiming, kXavier, kZero };

template <typename T>
class Linear {
public:
  Linear() = default;
  Linear(const std::string& name, int64_t in, int64_t out, Rng& rng,
         Init init = Init::kKaiming)
      : w_{name + ".w", Tensor<T>({in, out})}, b_{name + ".b", Tensor<T>({out})} {
    switch (init) {
      case Init::kKaiming: kaiming_uniform(w_.value, in, rng); break;
      case Init::kXavier: xavier_uniform(w_.value, in, out, rng); break;
      case Init::kZero: break;
    }
  }

  // x: (L, in) -> (L, out)
  Var<T> operator()(const Var<T>& x, bool frozen = false) {
    return ag::add_rowvec(ag::matmul(x, as_input(w_, frozen)),
                          as_input(b_, frozen));
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
  }
  Parameter<T>& weight() { return w_; }
  Parameter<T>& bias() { return b_; }

private:
  Parameter<T> w_, b_;
};

template <typename T>
class Conv2d {
public:
  Conv2d() = default;
  Conv2d(const std::string& name, int64_t in_ch, int64_t out_ch, int64_t kernel,
         int64_t stride, int64_t pad, Rng& rng, Init init = Init::kKaiming)
      : w_{name + ".w", Tensor<T>({out_ch, in_ch, kernel, kernel})},
        b_{name + ".b", Tensor<T>({out_ch})},
        stride_(stride),
        pad_(pad) {
    const int64_t fan_in = in_ch * kernel * kernel;
    switch (init) {
      case Init::kKaiming: kaiming_uniform(w_.value, fan_in, rng); break;
      case Init::kXavier:
        xavier_uniform(w_.value, fan_in, out_ch * kernel * kernel, rng);
        break;
      case Init::kZero: break;
    }
  }

  Var<T> operator()(const Var<T>& x, bool frozen = false) {
    return ag::conv2d(x, as_input(w_, frozen), as_input(b_, frozen), stride_,
                      stride_, pad_, pad_);
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
  }
  Parameter<T>& weight() { return w_; }
  Parameter<T>& bias() { return b_; }

private:
  Parameter<T> w_, b_;
  int64_t stride_ = 1, pad_ = 0;
};

template <typename T>
class ConvTranspose2d {
public:
  ConvTranspose2d() = default;
  ConvTranspose2d(const std::string& name, int64_t in_ch, int64_t out_ch,
                  int64_t kernel, int64_t stride, Rng& rng)
      : w_{name + ".w", Tensor<T>({in_ch, out_ch, kernel, kernel})},
        b_{name + ".b", Tensor<T>({out_ch})},
        stride_(stride) {
    kaiming_uniform(w_.value, in_ch * kernel * kernel, rng);
  }

  Var<T> operator()(const Var<T>& x, bool frozen = false) {
    return ag::conv_transpose2d(x, as_input(w_, frozen), as_input(b_, frozen),
                                stride_);
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
  }

private:
  Parameter<T> w_, b_;
  int64_t stride_ = 2;
};

// Pending running-stat updates from training-mode forwards. Merged by the
// training step in deterministic order once all batch graphs are built.
template <typename T>
class BatchNorm2d;

template <typename T>
struct BnStatsSink {
  struct Entry {
    BatchNorm2d<T>* layer;
    std::vector<T> mean, var;
  };
  std::vector<Entry> entries;
};

template <typename T>
class BatchNorm2d {
public:
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int64_t channels)
      : gamma_{name + ".gamma", Tensor<T>::full({channels}, T(1))},
        beta_{name + ".beta", Tensor<T>({channels})},
        running_mean_(static_cast<size_t>(channels), T(0)),
        running_var_(static_cast<size_t>(channels), T(1)) {}

  Var<T> operator()(const Var<T>& x, bool training, BnStatsSink<T>* sink,
                    bool frozen = false) {
    const size_t C = running_mean_.size();
    std::vector<T> bm(C), bv(C);
    auto out = ag::batch_norm2d(x, as_input(gamma_, frozen),
                                as_input(beta_, frozen), running_mean_,
                                running_var_, training,
                                training ? &bm : nullptr,
                                training ? &bv : nullptr);
    if (training && sink)
      sink->entries.push_back({this, std::move(bm), std::move(bv)});
    return out;
  }

  // running <- momentum * running + (1 - momentum) * batch
  void update_running(const std::vector<T>& mean, const std::vector<T>& var,
                      T momentum = T(0.9)) {
    for (size_t c = 0; c < running_mean_.size(); ++c) {
      running_mean_[c] = momentum * running_mean_[c] + (T(1) - momentum) * mean[c];
      running_var_[c] = momentum * running_var_[c] + (T(1) - momentum) * var[c];
    }
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }
  std::vector<T>& running_mean() { return running_mean_; }
  std::vector<T>& running_var() { return running_var_; }
  const std::string& name() const { return gamma_.name; }

private:
  Parameter<T> gamma_, beta_;
  std::vector<T> running_mean_, running_var_;
};

// Averages per-sample statistics across a batch of sinks (same forward
// structure in every sample) and applies one running-stat update per layer.
template <typename T>
void merge_bn_stats(std::vector<BnStatsSink<T>>& sinks, T momentum = T(0.9)) {
  if (sinks.empty()) return;
  const size_t n_entries = sinks[0].entries.size();
  for (const auto& s : sinks)
    check(s.entries.size() == n_entries, "batch-norm sinks disagree in structure");
  const T inv = T(1) / static_cast<T>(sinks.size());
  for (size_t e = 0; e < n_entries; ++e) {
    auto& first = sinks[0].entries[e];
    std::vector<T> mean(first.mean.size(), T(0)), var(first.var.size(), T(0));
    for (const auto& s : sinks) {
      for (size_t c = 0; c < mean.size(); ++c) {
        mean[c] += s.entries[e].mean[c] * inv;
        var[c] += s.entries[e].var[c] * inv;
      }
    }
    first.layer->update_running(mean, var, momentum);
  }
}

template <typename T>
class LayerNorm {
public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, int64_t dim)
      : gain_{name + ".gain", Tensor<T>::full({dim}, T(1))},
        bias_{name + ".bias", Tensor<T>({dim})} {}

  Var<T> operator()(const Var<T>& x, bool frozen = false) {
    return ag::layer_norm(x, as_input(gain_, frozen), as_input(bias_, frozen));
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&gain_);
    out.push_back(&bias_);
  }

private:
  Parameter<T> gain_, bias_;
};

// Feature-wise linear modulation: gamma(e) * x + beta(e) per channel, with
// gamma parameterized as 1 + linear(e) and zero-initialized projections so a
// fresh block is the identity.
template <typename T>
class Film {
public:
  Film() = default;
  Film(const std::string& name, int64_t embed_dim, int64_t channels, Rng& rng)
      : to_gamma_(name + ".gamma_proj", embed_dim, channels, rng, Init::kZero),
        to_beta_(name + ".beta_proj", embed_dim, channels, rng, Init::kZero),
        channels_(channels) {}

  // x: (C,H,W), e: (1, D_e)
  Var<T> operator()(const Var<T>& x, const Var<T>& e, bool frozen = false) {
    auto gamma =
        ag::add_scalar(ag::reshape(to_gamma_(e, frozen), {channels_}), T(1));
    auto beta = ag::reshape(to_beta_(e, frozen), {channels_});
    return ag::channel_affine(x, gamma, beta);
  }

  void collect(ParamRefs<T>& out) {
    to_gamma_.collect(out);
    to_beta_.collect(out);
  }

private:
  Linear<T> to_gamma_, to_beta_;
  int64_t channels_ = 0;
};

}  // namespace uss::nn
