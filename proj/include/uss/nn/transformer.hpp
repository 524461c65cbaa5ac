#pragma once

// Pre-norm transformer encoder blocks with multi-head self-attention and a
// GELU MLP, operating on (L, D) token matrices.

#include "uss/nn/layers.hpp"

namespace uss::nn {

template <typename T>
class MultiheadSelfAttention {
public:
  MultiheadSelfAttention() = default;
  MultiheadSelfAttention(const std::string& name, int64_t dim, int64_t heads,
                         Rng& rng)
      : qkv_(name + ".qkv", dim, 3 * dim, rng, Init::kXavier),
        proj_(name + ".proj", dim, dim, rng, Init::kXavier),
        dim_(dim),
        heads_(heads) {
    check(dim % heads == 0, "attention: heads must divide embed dim");
  }

  Var<T> operator()(const Var<T>& x, bool frozen = false) {
    auto qkv = qkv_(x, frozen);
    const int64_t dh = dim_ / heads_;
    std::vector<Var<T>> outs;
    outs.reserve(static_cast<size_t>(heads_));
    for (int64_t h = 0; h < heads_; ++h) {
      auto q = ag::slice_cols(qkv, h * dh, dh);
      auto k = ag::slice_cols(qkv, dim_ + h * dh, dh);
      auto v = ag::slice_cols(qkv, 2 * dim_ + h * dh, dh);
      outs.push_back(ag::scaled_dot_attention(q, k, v));
    }
    return proj_(ag::concat_cols(outs), frozen);
  }

  void collect(ParamRefs<T>& out) {
    qkv_.collect(out);
    proj_.collect(out);
  }

private:
  Linear<T> qkv_, proj_;
  int64_t dim_ = 0, heads_ = 1;
};

template <typename T>
class TransformerBlock {
public:
  TransformerBlock() = default;
  TransformerBlock(const std::string& name, int64_t dim, int64_t heads,
                   int64_t mlp_ratio, Rng& rng)
      : ln1_(name + ".ln1", dim),
        ln2_(name + ".ln2", dim),
        attn_(name + ".attn", dim, heads, rng),
        fc1_(name + ".fc1", dim, mlp_ratio * dim, rng, Init::kKaiming),
        fc2_(name + ".fc2", mlp_ratio * dim, dim, rng, Init::kXavier) {}

  Var<T> operator()(const Var<T>& x, bool frozen = false) {
    auto h = ag::add(x, attn_(ln1_(x, frozen), frozen));
    auto mlp = fc2_(ag::gelu(fc1_(ln2_(h, frozen), frozen)), frozen);
    return ag::add(h, mlp);
  }

  void collect(ParamRefs<T>& out) {
    ln1_.collect(out);
    ln2_.collect(out);
    attn_.collect(out);
    fc1_.collect(out);
    fc2_.collect(out);
  }

private:
  LayerNorm<T> ln1_, ln2_;
  MultiheadSelfAttention<T> attn_;
  Linear<T> fc1_, fc2_;
};

}  // namespace uss::nn
