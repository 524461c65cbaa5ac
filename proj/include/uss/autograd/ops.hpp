#pragma once

// Differentiable primitives. Conventions:
//   - matrices are (rows, cols) row-major; images are (C, H, W), no batch
//     axis (batch parallelism happens one graph per example)
//   - every op validates shapes and registers an exact reverse-mode backward
//   - heavy inner products go through Eigen; everything around them is plain
//     loops the compiler can vectorize

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "uss/autograd/graph.hpp"

namespace uss::ag {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

namespace detail {

template <typename T>
MapMat<T> as_mat(Tensor<T>& t, int64_t rows, int64_t cols) {
  return MapMat<T>(t.data(), rows, cols);
}
template <typename T>
CMapMat<T> as_mat(const Tensor<T>& t, int64_t rows, int64_t cols) {
  return CMapMat<T>(t.data(), rows, cols);
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T, typename FwdFn, typename BwdFn>
Var<T> elementwise_unary(const char* op, const Var<T>& x, FwdFn f, BwdFn dfdx) {
  Tensor<T> out(x->value.shape());
  const T* src = x->value.data();
  T* dst = out.data();
  for (int64_t i = 0; i < out.size(); ++i) dst[i] = f(src[i]);
  return make_node<T>(op, std::move(out), {x},
                      [x, dfdx](Node<T>& self) {
                        Tensor<T>& gx = x->grad_buffer();
                        const T* xi = x->value.data();
                        const T* yo = self.value.data();
                        const T* g = self.grad.data();
                        for (int64_t i = 0; i < gx.size(); ++i)
                          gx[i] += g[i] * dfdx(xi[i], yo[i]);
                      });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return elementwise_unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });  // subgradient 0 at 0
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return elementwise_unary<T>(
      "sigmoid", x,
      [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh_op(const Var<T>& x) {
  return elementwise_unary<T>(
      "tanh", x, [](T v) { return std::tanh(v); },
      [](T, T y) { return T(1) - y * y; });
}

// tanh-approximated GELU with the exact derivative of the approximation.
template <typename T>
Var<T> gelu(const Var<T>& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  return elementwise_unary<T>(
      "gelu", x,
      [](T v) {
        double u = kC * (v + kA * v * v * v);
        return static_cast<T>(0.5 * v * (1.0 + std::tanh(u)));
      },
      [](T v, T) {
        double u = kC * (v + kA * v * v * v);
        double th = std::tanh(u);
        double du = kC * (1.0 + 3.0 * kA * v * v);
        return static_cast<T>(0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
      });
}

template <typename T>
Var<T> abs_op(const Var<T>& x) {
  return elementwise_unary<T>(
      "abs", x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> sqrt_op(const Var<T>& x) {
  return elementwise_unary<T>(
      "sqrt", x, [](T v) { return std::sqrt(v); },
      [](T, T y) { return T(0.5) / y; });
}

// max(x, c); subgradient 0 on the clamped side.
template <typename T>
Var<T> clamp_min(const Var<T>& x, T c) {
  return elementwise_unary<T>(
      "clamp_min", x, [c](T v) { return v > c ? v : c; },
      [c](T v, T) { return v > c ? T(1) : T(0); });
}

template <typename T>
Var<T> scale(const Var<T>& x, T c) {
  return elementwise_unary<T>(
      "scale", x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T c) {
  return elementwise_unary<T>(
      "add_scalar", x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T, typename FwdFn>
Var<T> binary_same_shape(const char* op, const Var<T>& a, const Var<T>& b,
                         FwdFn f, std::function<void(Node<T>&)> bwd) {
  check(a->value.same_shape(b->value),
        std::string(op) + ": shape mismatch " + shape_str(a->value.shape()) +
            " vs " + shape_str(b->value.shape()));
  Tensor<T> out(a->value.shape());
  const T* pa = a->value.data();
  const T* pb = b->value.data();
  T* dst = out.data();
  for (int64_t i = 0; i < out.size(); ++i) dst[i] = f(pa[i], pb[i]);
  return make_node<T>(op, std::move(out), {a, b}, std::move(bwd));
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary_same_shape<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [a, b](Node<T>& self) {
        if (a->needs_grad) a->accumulate(self.grad);
        if (b->needs_grad) b->accumulate(self.grad);
      });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary_same_shape<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [a, b](Node<T>& self) {
        if (a->needs_grad) a->accumulate(self.grad);
        if (b->needs_grad) {
          Tensor<T>& gb = b->grad_buffer();
          const T* g = self.grad.data();
          for (int64_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
        }
      });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary_same_shape<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [a, b](Node<T>& self) {
        const T* g = self.grad.data();
        if (a->needs_grad) {
          Tensor<T>& ga = a->grad_buffer();
          const T* pb = b->value.data();
          for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * pb[i];
        }
        if (b->needs_grad) {
          Tensor<T>& gb = b->grad_buffer();
          const T* pa = a->value.data();
          for (int64_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * pa[i];
        }
      });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return binary_same_shape<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [a, b](Node<T>& self) {
        const T* g = self.grad.data();
        const T* pa = a->value.data();
        const T* pb = b->value.data();
        if (a->needs_grad) {
          Tensor<T>& ga = a->grad_buffer();
          for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g[i] / pb[i];
        }
        if (b->needs_grad) {
          Tensor<T>& gb = b->grad_buffer();
          for (int64_t i = 0; i < gb.size(); ++i)
            gb[i] -= g[i] * pa[i] / (pb[i] * pb[i]);
        }
      });
}

// -------------------------------------------------------- matrix / reshaping

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  check(a->value.rank() == 2 && b->value.rank() == 2 &&
            a->value.dim(1) == b->value.dim(0),
        "matmul: incompatible shapes " + shape_str(a->value.shape()) + " x " +
            shape_str(b->value.shape()));
  const int64_t m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
  Tensor<T> out({m, n});
  detail::as_mat(out, m, n).noalias() =
      detail::as_mat(a->value, m, k) * detail::as_mat(b->value, k, n);
  return make_node<T>("matmul", std::move(out), {a, b},
                      [a, b, m, k, n](Node<T>& self) {
                        auto g = detail::as_mat(self.grad, m, n);
                        if (a->needs_grad)
                          detail::as_mat(a->grad_buffer(), m, k).noalias() +=
                              g * detail::as_mat(b->value, k, n).transpose();
                        if (b->needs_grad)
                          detail::as_mat(b->grad_buffer(), k, n).noalias() +=
                              detail::as_mat(a->value, m, k).transpose() * g;
                      });
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
  check(x->value.rank() == 2, "transpose expects rank-2");
  const int64_t r = x->value.dim(0), c = x->value.dim(1);
  Tensor<T> out({c, r});
  detail::as_mat(out, c, r) = detail::as_mat(x->value, r, c).transpose();
  return make_node<T>("transpose", std::move(out), {x},
                      [x, r, c](Node<T>& self) {
                        detail::as_mat(x->grad_buffer(), r, c) +=
                            detail::as_mat(self.grad, c, r).transpose();
                      });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x->value.reshaped(shape);
  return make_node<T>("reshape", std::move(out), {x},
                      [x](Node<T>& self) {
                        x->accumulate(self.grad.reshaped(x->value.shape()));
                      });
}

// y[r, :] = x[r, :] + v
template <typename T>
Var<T> add_rowvec(const Var<T>& x, const Var<T>& v) {
  check(x->value.rank() == 2 && v->value.rank() == 1 &&
            x->value.dim(1) == v->value.dim(0),
        "add_rowvec: shapes " + shape_str(x->value.shape()) + " + " +
            shape_str(v->value.shape()));
  const int64_t r = x->value.dim(0), c = x->value.dim(1);
  Tensor<T> out = x->value;
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out[i * c + j] += v->value[j];
  return make_node<T>("add_rowvec", std::move(out), {x, v},
                      [x, v, r, c](Node<T>& self) {
                        if (x->needs_grad) x->accumulate(self.grad);
                        if (v->needs_grad) {
                          Tensor<T>& gv = v->grad_buffer();
                          const T* g = self.grad.data();
                          for (int64_t i = 0; i < r; ++i)
                            for (int64_t j = 0; j < c; ++j) gv[j] += g[i * c + j];
                        }
                      });
}

// Per-channel affine over an image: y[c,h,w] = g[c] * x[c,h,w] + b[c].
template <typename T>
Var<T> channel_affine(const Var<T>& x, const Var<T>& g, const Var<T>& b) {
  check(x->value.rank() == 3, "channel_affine expects (C,H,W)");
  const int64_t C = x->value.dim(0), hw = x->value.dim(1) * x->value.dim(2);
  check(g->value.size() == C && b->value.size() == C,
        "channel_affine: gamma/beta must have C entries");
  Tensor<T> out(x->value.shape());
  for (int64_t c = 0; c < C; ++c) {
    const T gc = g->value[c], bc = b->value[c];
    const T* src = x->value.data() + c * hw;
    T* dst = out.data() + c * hw;
    for (int64_t i = 0; i < hw; ++i) dst[i] = gc * src[i] + bc;
  }
  return make_node<T>(
      "channel_affine", std::move(out), {x, g, b},
      [x, g, b, C, hw](Node<T>& self) {
        for (int64_t c = 0; c < C; ++c) {
          const T* gr = self.grad.data() + c * hw;
          const T* src = x->value.data() + c * hw;
          if (x->needs_grad) {
            T* gx = x->grad_buffer().data() + c * hw;
            const T gc = g->value[c];
            for (int64_t i = 0; i < hw; ++i) gx[i] += gc * gr[i];
          }
          if (g->needs_grad) {
            T s = T(0);
            for (int64_t i = 0; i < hw; ++i) s += gr[i] * src[i];
            g->accumulate_at(c, s);
          }
          if (b->needs_grad) {
            T s = T(0);
            for (int64_t i = 0; i < hw; ++i) s += gr[i];
            b->accumulate_at(c, s);
          }
        }
      });
}

// ------------------------------------------------------------ concat / slice

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  check(!parts.empty(), "concat_cols: empty input");
  const int64_t rows = parts[0]->value.dim(0);
  int64_t cols = 0;
  for (const auto& p : parts) {
    check(p->value.rank() == 2 && p->value.dim(0) == rows,
          "concat_cols: row mismatch");
    cols += p->value.dim(1);
  }
  Tensor<T> out({rows, cols});
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t pc = p->value.dim(1);
    for (int64_t r = 0; r < rows; ++r)
      std::memcpy(out.data() + r * cols + off, p->value.data() + r * pc,
                  sizeof(T) * static_cast<size_t>(pc));
    off += pc;
  }
  std::vector<Var<T>> inputs = parts;
  return make_node<T>(
      "concat_cols", std::move(out), std::move(inputs),
      [parts, rows, cols](Node<T>& self) {
        int64_t off = 0;
        for (const auto& p : parts) {
          const int64_t pc = p->value.dim(1);
          if (p->needs_grad) {
            Tensor<T>& gp = p->grad_buffer();
            for (int64_t r = 0; r < rows; ++r) {
              const T* g = self.grad.data() + r * cols + off;
              T* d = gp.data() + r * pc;
              for (int64_t j = 0; j < pc; ++j) d[j] += g[j];
            }
          }
          off += pc;
        }
      });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  check(!parts.empty(), "concat_channels: empty input");
  const int64_t H = parts[0]->value.dim(1), W = parts[0]->value.dim(2);
  int64_t C = 0;
  for (const auto& p : parts) {
    check(p->value.rank() == 3 && p->value.dim(1) == H && p->value.dim(2) == W,
          "concat_channels: spatial mismatch");
    C += p->value.dim(0);
  }
  Tensor<T> out({C, H, W});
  int64_t off = 0;
  for (const auto& p : parts) {
    std::memcpy(out.data() + off, p->value.data(),
                sizeof(T) * static_cast<size_t>(p->value.size()));
    off += p->value.size();
  }
  std::vector<Var<T>> inputs = parts;
  return make_node<T>("concat_channels", std::move(out), std::move(inputs),
                      [parts](Node<T>& self) {
                        int64_t off = 0;
                        for (const auto& p : parts) {
                          if (p->needs_grad) {
                            Tensor<T>& gp = p->grad_buffer();
                            const T* g = self.grad.data() + off;
                            for (int64_t i = 0; i < gp.size(); ++i) gp[i] += g[i];
                          }
                          off += p->value.size();
                        }
                      });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  check(!parts.empty(), "concat_rows: empty input");
  const int64_t cols = parts[0]->value.dim(1);
  int64_t rows = 0;
  for (const auto& p : parts) {
    check(p->value.rank() == 2 && p->value.dim(1) == cols,
          "concat_rows: column mismatch");
    rows += p->value.dim(0);
  }
  Tensor<T> out({rows, cols});
  int64_t off = 0;
  for (const auto& p : parts) {
    std::memcpy(out.data() + off, p->value.data(),
                sizeof(T) * static_cast<size_t>(p->value.size()));
    off += p->value.size();
  }
  std::vector<Var<T>> inputs = parts;
  return make_node<T>("concat_rows", std::move(out), std::move(inputs),
                      [parts](Node<T>& self) {
                        int64_t off = 0;
                        for (const auto& p : parts) {
                          if (p->needs_grad) {
                            Tensor<T>& gp = p->grad_buffer();
                            const T* g = self.grad.data() + off;
                            for (int64_t i = 0; i < gp.size(); ++i) gp[i] += g[i];
                          }
                          off += p->value.size();
                        }
                      });
}

// x * s where s is a single-element graph value.
template <typename T>
Var<T> mul_scalar_var(const Var<T>& x, const Var<T>& s) {
  check(s->value.size() == 1, "mul_scalar_var: scalar input must have 1 element");
  const T sv = s->value[0];
  Tensor<T> out(x->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = x->value[i] * sv;
  return make_node<T>("mul_scalar_var", std::move(out), {x, s},
                      [x, s, sv](Node<T>& self) {
                        const T* g = self.grad.data();
                        if (x->needs_grad) {
                          Tensor<T>& gx = x->grad_buffer();
                          for (int64_t i = 0; i < gx.size(); ++i)
                            gx[i] += g[i] * sv;
                        }
                        if (s->needs_grad) {
                          T acc = T(0);
                          for (int64_t i = 0; i < x->value.size(); ++i)
                            acc += g[i] * x->value[i];
                          s->accumulate_at(0, acc);
                        }
                      });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, int64_t start, int64_t len) {
  check(x->value.rank() == 2, "slice_cols expects rank-2");
  const int64_t rows = x->value.dim(0), cols = x->value.dim(1);
  check(start >= 0 && len > 0 && start + len <= cols, "slice_cols: out of range");
  Tensor<T> out({rows, len});
  for (int64_t r = 0; r < rows; ++r)
    std::memcpy(out.data() + r * len, x->value.data() + r * cols + start,
                sizeof(T) * static_cast<size_t>(len));
  return make_node<T>("slice_cols", std::move(out), {x},
                      [x, start, len, rows, cols](Node<T>& self) {
                        Tensor<T>& gx = x->grad_buffer();
                        for (int64_t r = 0; r < rows; ++r) {
                          const T* g = self.grad.data() + r * len;
                          T* d = gx.data() + r * cols + start;
                          for (int64_t j = 0; j < len; ++j) d[j] += g[j];
                        }
                      });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, int64_t start, int64_t len) {
  check(x->value.rank() == 3, "slice_channels expects (C,H,W)");
  const int64_t hw = x->value.dim(1) * x->value.dim(2);
  check(start >= 0 && len > 0 && start + len <= x->value.dim(0),
        "slice_channels: out of range");
  Tensor<T> out({len, x->value.dim(1), x->value.dim(2)});
  std::memcpy(out.data(), x->value.data() + start * hw,
              sizeof(T) * static_cast<size_t>(len * hw));
  return make_node<T>("slice_channels", std::move(out), {x},
                      [x, start, hw, len](Node<T>& self) {
                        Tensor<T>& gx = x->grad_buffer();
                        const T* g = self.grad.data();
                        T* d = gx.data() + start * hw;
                        for (int64_t i = 0; i < len * hw; ++i) d[i] += g[i];
                      });
}

// Crop a (C,H,W) image to its top-left (C, h, w) corner.
template <typename T>
Var<T> crop2d(const Var<T>& x, int64_t h, int64_t w) {
  check(x->value.rank() == 3 && h <= x->value.dim(1) && w <= x->value.dim(2),
        "crop2d: target larger than input");
  const int64_t C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  Tensor<T> out({C, h, w});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < h; ++i)
      std::memcpy(out.data() + (c * h + i) * w, x->value.data() + (c * H + i) * W,
                  sizeof(T) * static_cast<size_t>(w));
  return make_node<T>("crop2d", std::move(out), {x},
                      [x, C, H, W, h, w](Node<T>& self) {
                        Tensor<T>& gx = x->grad_buffer();
                        for (int64_t c = 0; c < C; ++c)
                          for (int64_t i = 0; i < h; ++i) {
                            const T* g = self.grad.data() + (c * h + i) * w;
                            T* d = gx.data() + (c * H + i) * W;
                            for (int64_t j = 0; j < w; ++j) d[j] += g[j];
                          }
                      });
}

// Zero-pad a (C,H,W) image at the bottom/right to (C, h, w).
template <typename T>
Var<T> pad2d(const Var<T>& x, int64_t h, int64_t w) {
  check(x->value.rank() == 3 && h >= x->value.dim(1) && w >= x->value.dim(2),
        "pad2d: target smaller than input");
  const int64_t C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  Tensor<T> out({C, h, w});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < H; ++i)
      std::memcpy(out.data() + (c * h + i) * w, x->value.data() + (c * H + i) * W,
                  sizeof(T) * static_cast<size_t>(W));
  return make_node<T>("pad2d", std::move(out), {x},
                      [x, C, H, W, h, w](Node<T>& self) {
                        Tensor<T>& gx = x->grad_buffer();
                        for (int64_t c = 0; c < C; ++c)
                          for (int64_t i = 0; i < H; ++i) {
                            const T* g = self.grad.data() + (c * h + i) * w;
                            T* d = gx.data() + (c * H + i) * W;
                            for (int64_t j = 0; j < W; ++j) d[j] += g[j];
                          }
                      });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, std::vector<int64_t> idx) {
  check(x->value.rank() == 2, "gather_rows expects rank-2");
  const int64_t cols = x->value.dim(1), rows = x->value.dim(0);
  for (int64_t i : idx) check(i >= 0 && i < rows, "gather_rows: index out of range");
  Tensor<T> out({static_cast<int64_t>(idx.size()), cols});
  for (size_t r = 0; r < idx.size(); ++r)
    std::memcpy(out.data() + r * cols, x->value.data() + idx[r] * cols,
                sizeof(T) * static_cast<size_t>(cols));
  return make_node<T>("gather_rows", std::move(out), {x},
                      [x, idx = std::move(idx), cols](Node<T>& self) {
                        Tensor<T>& gx = x->grad_buffer();
                        for (size_t r = 0; r < idx.size(); ++r) {
                          const T* g = self.grad.data() + r * cols;
                          T* d = gx.data() + idx[r] * cols;
                          for (int64_t j = 0; j < cols; ++j) d[j] += g[j];
                        }
                      });
}

// Tiles whole rows: out[r, :] = x[r mod L, :] for r in [0, out_rows).
template <typename T>
Var<T> tile_rows(const Var<T>& x, int64_t out_rows) {
  check(x->value.rank() == 2 && out_rows >= x->value.dim(0),
        "tile_rows: target must not truncate below one period");
  const int64_t L = x->value.dim(0), cols = x->value.dim(1);
  Tensor<T> out({out_rows, cols});
  for (int64_t r = 0; r < out_rows; ++r)
    std::memcpy(out.data() + r * cols, x->value.data() + (r % L) * cols,
                sizeof(T) * static_cast<size_t>(cols));
  return make_node<T>("tile_rows", std::move(out), {x},
                      [x, L, cols, out_rows](Node<T>& self) {
                        Tensor<T>& gx = x->grad_buffer();
                        for (int64_t r = 0; r < out_rows; ++r) {
                          const T* g = self.grad.data() + r * cols;
                          T* d = gx.data() + (r % L) * cols;
                          for (int64_t j = 0; j < cols; ++j) d[j] += g[j];
                        }
                      });
}

// --------------------------------------------------------------- reductions

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  T s = T(0);
  for (int64_t i = 0; i < x->value.size(); ++i) s += x->value[i];
  return make_node<T>("sum", Tensor<T>::scalar(s), {x},
                      [x](Node<T>& self) {
                        const T g = self.grad[0];
                        Tensor<T>& gx = x->grad_buffer();
                        for (int64_t i = 0; i < gx.size(); ++i) gx[i] += g;
                      });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
  check(x->value.size() > 0, "mean of empty tensor");
  T s = T(0);
  for (int64_t i = 0; i < x->value.size(); ++i) s += x->value[i];
  const T inv = T(1) / static_cast<T>(x->value.size());
  return make_node<T>("mean", Tensor<T>::scalar(s * inv), {x},
                      [x, inv](Node<T>& self) {
                        const T g = self.grad[0] * inv;
                        Tensor<T>& gx = x->grad_buffer();
                        for (int64_t i = 0; i < gx.size(); ++i) gx[i] += g;
                      });
}

// Column means of a (L, D) matrix -> (D,)
template <typename T>
Var<T> mean_rows(const Var<T>& x) {
  check(x->value.rank() == 2 && x->value.dim(0) > 0, "mean_rows expects (L,D), L>0");
  const int64_t L = x->value.dim(0), D = x->value.dim(1);
  Tensor<T> out({D});
  for (int64_t r = 0; r < L; ++r)
    for (int64_t j = 0; j < D; ++j) out[j] += x->value[r * D + j];
  const T inv = T(1) / static_cast<T>(L);
  for (int64_t j = 0; j < D; ++j) out[j] *= inv;
  return make_node<T>("mean_rows", std::move(out), {x},
                      [x, L, D, inv](Node<T>& self) {
                        Tensor<T>& gx = x->grad_buffer();
                        for (int64_t r = 0; r < L; ++r)
                          for (int64_t j = 0; j < D; ++j)
                            gx[r * D + j] += self.grad[j] * inv;
                      });
}

// Mean over the last axis of a (C,H,W) image -> (C,H)
template <typename T>
Var<T> mean_axis_last(const Var<T>& x) {
  check(x->value.rank() == 3, "mean_axis_last expects (C,H,W)");
  const int64_t C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  Tensor<T> out({C, H});
  const T inv = T(1) / static_cast<T>(W);
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < H; ++i) {
      T s = T(0);
      const T* src = x->value.data() + (c * H + i) * W;
      for (int64_t j = 0; j < W; ++j) s += src[j];
      out[c * H + i] = s * inv;
    }
  return make_node<T>("mean_axis_last", std::move(out), {x},
                      [x, C, H, W, inv](Node<T>& self) {
                        Tensor<T>& gx = x->grad_buffer();
                        for (int64_t c = 0; c < C; ++c)
                          for (int64_t i = 0; i < H; ++i) {
                            const T g = self.grad[c * H + i] * inv;
                            T* d = gx.data() + (c * H + i) * W;
                            for (int64_t j = 0; j < W; ++j) d[j] += g;
                          }
                      });
}

// ------------------------------------------------------------- normalization

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  check(x->value.rank() == 2, "softmax_rows expects rank-2");
  const int64_t L = x->value.dim(0), D = x->value.dim(1);
  Tensor<T> out(x->value.shape());
  for (int64_t r = 0; r < L; ++r) {
    const T* src = x->value.data() + r * D;
    T* dst = out.data() + r * D;
    T mx = src[0];
    for (int64_t j = 1; j < D; ++j) mx = std::max(mx, src[j]);
    T sum = T(0);
    for (int64_t j = 0; j < D; ++j) {
      dst[j] = std::exp(src[j] - mx);
      sum += dst[j];
    }
    const T inv = T(1) / sum;
    for (int64_t j = 0; j < D; ++j) dst[j] *= inv;
  }
  return make_node<T>("softmax", std::move(out), {x},
                      [x, L, D](Node<T>& self) {
                        Tensor<T>& gx = x->grad_buffer();
                        for (int64_t r = 0; r < L; ++r) {
                          const T* y = self.value.data() + r * D;
                          const T* g = self.grad.data() + r * D;
                          T dot = T(0);
                          for (int64_t j = 0; j < D; ++j) dot += y[j] * g[j];
                          T* d = gx.data() + r * D;
                          for (int64_t j = 0; j < D; ++j)
                            d[j] += y[j] * (g[j] - dot);
                        }
                      });
}

// Row-wise layer normalization with affine parameters over the feature axis.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                  T eps = T(1e-5)) {
  check(x->value.rank() == 2, "layer_norm expects (L,D)");
  const int64_t L = x->value.dim(0), D = x->value.dim(1);
  check(gain->value.size() == D && bias->value.size() == D,
        "layer_norm: affine params must have D entries");
  Tensor<T> out(x->value.shape());
  std::vector<T> inv_std(static_cast<size_t>(L));
  std::vector<T> means(static_cast<size_t>(L));
  for (int64_t r = 0; r < L; ++r) {
    const T* src = x->value.data() + r * D;
    T mu = T(0);
    for (int64_t j = 0; j < D; ++j) mu += src[j];
    mu /= static_cast<T>(D);
    T var = T(0);
    for (int64_t j = 0; j < D; ++j) var += (src[j] - mu) * (src[j] - mu);
    var /= static_cast<T>(D);
    const T inv = T(1) / std::sqrt(var + eps);
    means[r] = mu;
    inv_std[r] = inv;
    T* dst = out.data() + r * D;
    for (int64_t j = 0; j < D; ++j)
      dst[j] = gain->value[j] * (src[j] - mu) * inv + bias->value[j];
  }
  return make_node<T>(
      "layer_norm", std::move(out), {x, gain, bias},
      [x, gain, bias, L, D, means = std::move(means),
       inv_std = std::move(inv_std)](Node<T>& self) {
        for (int64_t r = 0; r < L; ++r) {
          const T* src = x->value.data() + r * D;
          const T* g = self.grad.data() + r * D;
          const T mu = means[r], inv = inv_std[r];
          if (gain->needs_grad || bias->needs_grad) {
            for (int64_t j = 0; j < D; ++j) {
              if (gain->needs_grad)
                gain->accumulate_at(j, g[j] * (src[j] - mu) * inv);
              if (bias->needs_grad) bias->accumulate_at(j, g[j]);
            }
          }
          if (x->needs_grad) {
            // dL/dxhat = g * gain; standard layernorm backward per row
            T sum_gh = T(0), sum_ghx = T(0);
            for (int64_t j = 0; j < D; ++j) {
              const T gh = g[j] * gain->value[j];
              sum_gh += gh;
              sum_ghx += gh * (src[j] - mu) * inv;
            }
            T* d = x->grad_buffer().data() + r * D;
            const T invD = T(1) / static_cast<T>(D);
            for (int64_t j = 0; j < D; ++j) {
              const T gh = g[j] * gain->value[j];
              const T xh = (src[j] - mu) * inv;
              d[j] += inv * (gh - invD * sum_gh - xh * invD * sum_ghx);
            }
          }
        }
      });
}

// Batch normalization over the spatial axes of one example (the graphs are
// per-example, so normalization statistics are per-sample). Training mode
// differentiates through the batch statistics; eval mode uses the supplied
// running statistics as constants.
template <typename T>
Var<T> batch_norm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                    const std::vector<T>& running_mean,
                    const std::vector<T>& running_var, bool training,
                    std::vector<T>* batch_mean_out,
                    std::vector<T>* batch_var_out, T eps = T(1e-5)) {
  check(x->value.rank() == 3, "batch_norm2d expects (C,H,W)");
  const int64_t C = x->value.dim(0), hw = x->value.dim(1) * x->value.dim(2);
  check(gamma->value.size() == C && beta->value.size() == C,
        "batch_norm2d: affine params must have C entries");
  std::vector<T> mean(static_cast<size_t>(C)), inv_std(static_cast<size_t>(C));
  Tensor<T> out(x->value.shape());
  for (int64_t c = 0; c < C; ++c) {
    T mu, var;
    if (training) {
      const T* src = x->value.data() + c * hw;
      mu = T(0);
      for (int64_t i = 0; i < hw; ++i) mu += src[i];
      mu /= static_cast<T>(hw);
      var = T(0);
      for (int64_t i = 0; i < hw; ++i) var += (src[i] - mu) * (src[i] - mu);
      var /= static_cast<T>(hw);
      if (batch_mean_out) (*batch_mean_out)[static_cast<size_t>(c)] = mu;
      if (batch_var_out) (*batch_var_out)[static_cast<size_t>(c)] = var;
    } else {
      mu = running_mean[static_cast<size_t>(c)];
      var = running_var[static_cast<size_t>(c)];
    }
    mean[static_cast<size_t>(c)] = mu;
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(c)] = inv;
    const T* src = x->value.data() + c * hw;
    T* dst = out.data() + c * hw;
    const T gc = gamma->value[c], bc = beta->value[c];
    for (int64_t i = 0; i < hw; ++i) dst[i] = gc * (src[i] - mu) * inv + bc;
  }
  return make_node<T>(
      "batch_norm2d", std::move(out), {x, gamma, beta},
      [x, gamma, beta, C, hw, training, mean = std::move(mean),
       inv_std = std::move(inv_std)](Node<T>& self) {
        for (int64_t c = 0; c < C; ++c) {
          const T* g = self.grad.data() + c * hw;
          const T* src = x->value.data() + c * hw;
          const T mu = mean[static_cast<size_t>(c)];
          const T inv = inv_std[static_cast<size_t>(c)];
          T sum_g = T(0), sum_gx = T(0);
          for (int64_t i = 0; i < hw; ++i) {
            sum_g += g[i];
            sum_gx += g[i] * (src[i] - mu) * inv;
          }
          if (gamma->needs_grad) gamma->accumulate_at(c, sum_gx);
          if (beta->needs_grad) beta->accumulate_at(c, sum_g);
          if (x->needs_grad) {
            T* d = x->grad_buffer().data() + c * hw;
            const T gc = gamma->value[c];
            if (training) {
              const T invN = T(1) / static_cast<T>(hw);
              for (int64_t i = 0; i < hw; ++i) {
                const T xh = (src[i] - mu) * inv;
                d[i] += gc * inv * (g[i] - invN * sum_g - xh * invN * sum_gx);
              }
            } else {
              for (int64_t i = 0; i < hw; ++i) d[i] += gc * inv * g[i];
            }
          }
        }
      });
}

// -------------------------------------------------------------------- losses

// Cross-entropy with logits for a single example: logsumexp(z) - z[label].
template <typename T>
Var<T> cross_entropy_logits(const Var<T>& logits, int64_t label) {
  check(logits->value.rank() == 1, "cross_entropy_logits expects (K,)");
  const int64_t K = logits->value.dim(0);
  check(label >= 0 && label < K, "cross_entropy_logits: label out of range");
  const T* z = logits->value.data();
  T mx = z[0];
  for (int64_t j = 1; j < K; ++j) mx = std::max(mx, z[j]);
  T sum = T(0);
  for (int64_t j = 0; j < K; ++j) sum += std::exp(z[j] - mx);
  const T loss = std::log(sum) + mx - z[label];
  return make_node<T>("cross_entropy_logits", Tensor<T>::scalar(loss), {logits},
                      [logits, label, K, mx, sum](Node<T>& self) {
                        const T g = self.grad[0];
                        Tensor<T>& gz = logits->grad_buffer();
                        const T* z = logits->value.data();
                        for (int64_t j = 0; j < K; ++j) {
                          T p = std::exp(z[j] - mx) / sum;
                          gz[j] += g * (p - (j == label ? T(1) : T(0)));
                        }
                      });
}

// Mean absolute error against a constant target.
template <typename T>
Var<T> l1_loss(const Var<T>& pred, const Tensor<T>& target) {
  return mean_all(abs_op(sub(pred, constant(target))));
}

// Mean squared error against a constant target.
template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Tensor<T>& target) {
  auto d = sub(pred, constant(target));
  return mean_all(mul(d, d));
}

// Scaled dot-product attention for one head: softmax(Q K^T / sqrt(d)) V.
template <typename T>
Var<T> scaled_dot_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v) {
  const int64_t d = q->value.dim(1);
  auto scores = scale(matmul(q, transpose(k)),
                      static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
  return matmul(softmax_rows(scores), v);
}

}  // namespace uss::ag
