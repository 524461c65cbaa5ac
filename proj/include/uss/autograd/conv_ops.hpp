#pragma once

// 2-D convolution, transposed convolution, and pooling primitives.
// Convolutions lower to im2col + GEMM; the column matrix is rebuilt in the
// backward pass instead of cached, trading ~10% time for peak memory.

#include <limits>

#include "uss/autograd/ops.hpp"

namespace uss::ag {

struct Conv2dGeom {
  int64_t C, H, W;       // input
  int64_t O, kh, kw;     // kernel
  int64_t sh, sw;        // stride
  int64_t ph, pw;        // zero padding
  int64_t oh, ow;        // output

  static Conv2dGeom make(const Shape& x, const Shape& w, int64_t sh, int64_t sw,
                         int64_t ph, int64_t pw) {
    Conv2dGeom g;
    g.C = x[0];
    g.H = x[1];
    g.W = x[2];
    g.O = w[0];
    g.kh = w[2];
    g.kw = w[3];
    g.sh = sh;
    g.sw = sw;
    g.ph = ph;
    g.pw = pw;
    check(w[1] == g.C, "conv2d: weight expects " + std::to_string(w[1]) +
                           " input channels, image has " + std::to_string(g.C));
    g.oh = (g.H + 2 * ph - g.kh) / sh + 1;
    g.ow = (g.W + 2 * pw - g.kw) / sw + 1;
    check(g.oh > 0 && g.ow > 0, "conv2d: kernel larger than padded input");
    return g;
  }
};

namespace detail {

// col is (C*kh*kw, oh*ow), one row per (c, ki, kj).
template <typename T>
void im2col(const T* x, const Conv2dGeom& g, T* col) {
  const int64_t ohw = g.oh * g.ow;
  for (int64_t c = 0; c < g.C; ++c) {
    const T* xc = x + c * g.H * g.W;
    for (int64_t ki = 0; ki < g.kh; ++ki) {
      for (int64_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * ohw;
        for (int64_t i = 0; i < g.oh; ++i) {
          const int64_t ih = i * g.sh - g.ph + ki;
          T* dst = row + i * g.ow;
          if (ih < 0 || ih >= g.H) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          const T* src_row = xc + ih * g.W;
          if (g.sw == 1) {
            // contiguous span with clipped edges
            int64_t j0 = std::max<int64_t>(0, g.pw - kj);
            int64_t j1 = std::min<int64_t>(g.ow, g.W + g.pw - kj);
            for (int64_t j = 0; j < j0; ++j) dst[j] = T(0);
            if (j1 > j0)
              std::memcpy(dst + j0, src_row + (j0 - g.pw + kj),
                          sizeof(T) * static_cast<size_t>(j1 - j0));
            for (int64_t j = std::max(j0, j1); j < g.ow; ++j) dst[j] = T(0);
          } else {
            for (int64_t j = 0; j < g.ow; ++j) {
              const int64_t iw = j * g.sw - g.pw + kj;
              dst[j] = (iw >= 0 && iw < g.W) ? src_row[iw] : T(0);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into the image.
template <typename T>
void col2im_add(const T* col, const Conv2dGeom& g, T* x) {
  const int64_t ohw = g.oh * g.ow;
  for (int64_t c = 0; c < g.C; ++c) {
    T* xc = x + c * g.H * g.W;
    for (int64_t ki = 0; ki < g.kh; ++ki) {
      for (int64_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * ohw;
        for (int64_t i = 0; i < g.oh; ++i) {
          const int64_t ih = i * g.sh - g.ph + ki;
          if (ih < 0 || ih >= g.H) continue;
          const T* src = row + i * g.ow;
          T* dst_row = xc + ih * g.W;
          for (int64_t j = 0; j < g.ow; ++j) {
            const int64_t iw = j * g.sw - g.pw + kj;
            if (iw >= 0 && iw < g.W) dst_row[iw] += src[j];
          }
        }
      }
    }
  }
}

}  // namespace detail

// x: (C,H,W), w: (O,C,kh,kw), b: (O) or null. Output (O,oh,ow).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int64_t sh,
              int64_t sw, int64_t ph, int64_t pw) {
  check(x->value.rank() == 3 && w->value.rank() == 4,
        "conv2d expects image (C,H,W) and weight (O,C,kh,kw)");
  const Conv2dGeom g =
      Conv2dGeom::make(x->value.shape(), w->value.shape(), sh, sw, ph, pw);
  const int64_t ckk = g.C * g.kh * g.kw, ohw = g.oh * g.ow;
  Tensor<T> col({ckk, ohw});
  detail::im2col(x->value.data(), g, col.data());
  Tensor<T> out({g.O, g.oh, g.ow});
  detail::as_mat(out, g.O, ohw).noalias() =
      detail::as_mat(w->value, g.O, ckk) * detail::as_mat(col, ckk, ohw);
  if (b) {
    check(b->value.size() == g.O, "conv2d: bias must have O entries");
    for (int64_t o = 0; o < g.O; ++o) {
      T* dst = out.data() + o * ohw;
      const T bo = b->value[o];
      for (int64_t i = 0; i < ohw; ++i) dst[i] += bo;
    }
  }
  std::vector<Var<T>> inputs = b ? std::vector<Var<T>>{x, w, b}
                                 : std::vector<Var<T>>{x, w};
  return make_node<T>(
      "conv2d", std::move(out), std::move(inputs),
      [x, w, b, g, ckk, ohw](Node<T>& self) {
        auto gy = detail::as_mat(self.grad, g.O, ohw);
        if (b && b->needs_grad) {
          Tensor<T>& gb = b->grad_buffer();
          for (int64_t o = 0; o < g.O; ++o) gb[o] += gy.row(o).sum();
        }
        if (w->needs_grad) {
          Tensor<T> col({ckk, ohw});
          detail::im2col(x->value.data(), g, col.data());
          detail::as_mat(w->grad_buffer(), g.O, ckk).noalias() +=
              gy * detail::as_mat(col, ckk, ohw).transpose();
        }
        if (x->needs_grad) {
          Tensor<T> gcol({ckk, ohw});
          detail::as_mat(gcol, ckk, ohw).noalias() =
              detail::as_mat(w->value, g.O, ckk).transpose() * gy;
          detail::col2im_add(gcol.data(), g, x->grad_buffer().data());
        }
      });
}

// Transposed convolution. x: (C,H,W), w: (C,O,kh,kw), stride s, no padding;
// output (O, (H-1)s+kh, (W-1)s+kw). Forward and backward-data swap the roles
// of the conv2d lowering.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b,
                        int64_t s) {
  check(x->value.rank() == 3 && w->value.rank() == 4,
        "conv_transpose2d expects image (C,H,W) and weight (C,O,kh,kw)");
  const int64_t C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  check(w->value.dim(0) == C, "conv_transpose2d: channel mismatch");
  const int64_t O = w->value.dim(1), kh = w->value.dim(2), kw = w->value.dim(3);
  const int64_t oh = (H - 1) * s + kh, ow = (W - 1) * s + kw;
  // geometry of the adjoint conv (from output back to input positions)
  Conv2dGeom g;
  g.C = O;
  g.H = oh;
  g.W = ow;
  g.O = C;
  g.kh = kh;
  g.kw = kw;
  g.sh = s;
  g.sw = s;
  g.ph = 0;
  g.pw = 0;
  g.oh = H;
  g.ow = W;
  const int64_t okk = O * kh * kw, hw = H * W;

  Tensor<T> cols({okk, hw});
  detail::as_mat(cols, okk, hw).noalias() =
      detail::as_mat(w->value, C, okk).transpose() * detail::as_mat(x->value, C, hw);
  Tensor<T> out({O, oh, ow});
  detail::col2im_add(cols.data(), g, out.data());
  if (b) {
    check(b->value.size() == O, "conv_transpose2d: bias must have O entries");
    for (int64_t o = 0; o < O; ++o) {
      T* dst = out.data() + o * oh * ow;
      const T bo = b->value[o];
      for (int64_t i = 0; i < oh * ow; ++i) dst[i] += bo;
    }
  }
  std::vector<Var<T>> inputs = b ? std::vector<Var<T>>{x, w, b}
                                 : std::vector<Var<T>>{x, w};
  return make_node<T>(
      "conv_transpose2d", std::move(out), std::move(inputs),
      [x, w, b, g, C, O, okk, hw, oh, ow](Node<T>& self) {
        if (b && b->needs_grad) {
          Tensor<T>& gb = b->grad_buffer();
          for (int64_t o = 0; o < O; ++o) {
            const T* gsrc = self.grad.data() + o * oh * ow;
            T sum = T(0);
            for (int64_t i = 0; i < oh * ow; ++i) sum += gsrc[i];
            gb[o] += sum;
          }
        }
        if (x->needs_grad || w->needs_grad) {
          Tensor<T> gcol({okk, hw});
          detail::im2col(self.grad.data(), g, gcol.data());
          if (x->needs_grad)
            detail::as_mat(x->grad_buffer(), C, hw).noalias() +=
                detail::as_mat(w->value, C, okk) * detail::as_mat(gcol, okk, hw);
          if (w->needs_grad)
            detail::as_mat(w->grad_buffer(), C, okk).noalias() +=
                detail::as_mat(x->value, C, hw) * detail::as_mat(gcol, okk, hw).transpose();
        }
      });
}

// Non-overlapping k x k mean pooling; trailing rows/cols that do not fill a
// window are dropped (floor semantics).
template <typename T>
Var<T> mean_pool2d(const Var<T>& x, int64_t k) {
  check(x->value.rank() == 3 && k >= 1, "mean_pool2d expects (C,H,W)");
  const int64_t C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  const int64_t oh = H / k, ow = W / k;
  check(oh > 0 && ow > 0, "mean_pool2d: window larger than input");
  Tensor<T> out({C, oh, ow});
  const T inv = T(1) / static_cast<T>(k * k);
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j) {
        T s = T(0);
        for (int64_t di = 0; di < k; ++di) {
          const T* src = x->value.data() + (c * H + i * k + di) * W + j * k;
          for (int64_t dj = 0; dj < k; ++dj) s += src[dj];
        }
        out[(c * oh + i) * ow + j] = s * inv;
      }
  return make_node<T>("mean_pool2d", std::move(out), {x},
                      [x, C, H, W, oh, ow, k, inv](Node<T>& self) {
                        Tensor<T>& gx = x->grad_buffer();
                        for (int64_t c = 0; c < C; ++c)
                          for (int64_t i = 0; i < oh; ++i)
                            for (int64_t j = 0; j < ow; ++j) {
                              const T g = self.grad[(c * oh + i) * ow + j] * inv;
                              for (int64_t di = 0; di < k; ++di) {
                                T* d = gx.data() + (c * H + i * k + di) * W + j * k;
                                for (int64_t dj = 0; dj < k; ++dj) d[dj] += g;
                              }
                            }
                      });
}

template <typename T>
Var<T> max_pool2d(const Var<T>& x, int64_t k) {
  check(x->value.rank() == 3 && k >= 1, "max_pool2d expects (C,H,W)");
  const int64_t C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  const int64_t oh = H / k, ow = W / k;
  check(oh > 0 && ow > 0, "max_pool2d: window larger than input");
  Tensor<T> out({C, oh, ow});
  std::vector<int64_t> argmax(static_cast<size_t>(out.size()));
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j) {
        T best = -std::numeric_limits<T>::infinity();
        int64_t arg = 0;
        for (int64_t di = 0; di < k; ++di)
          for (int64_t dj = 0; dj < k; ++dj) {
            const int64_t idx = (c * H + i * k + di) * W + j * k + dj;
            if (x->value[idx] > best) {
              best = x->value[idx];
              arg = idx;
            }
          }
        const int64_t o = (c * oh + i) * ow + j;
        out[o] = best;
        argmax[static_cast<size_t>(o)] = arg;
      }
  return make_node<T>("max_pool2d", std::move(out), {x},
                      [x, argmax = std::move(argmax)](Node<T>& self) {
                        Tensor<T>& gx = x->grad_buffer();
                        for (size_t o = 0; o < argmax.size(); ++o)
                          gx[argmax[o]] += self.grad[static_cast<int64_t>(o)];
                      });
}

// Sequence-length reduction: splits the rows of (L, D) into `out_len`
// windows (zero-padding the tail), and emits (window mean + window max) / 2.
template <typename T>
Var<T> row_pool_meanmax(const Var<T>& x, int64_t out_len) {
  check(x->value.rank() == 2, "row_pool_meanmax expects (L,D)");
  const int64_t L = x->value.dim(0), D = x->value.dim(1);
  check(out_len >= 1 && out_len <= L, "row_pool_meanmax: out_len must be in [1, L]");
  const int64_t window = (L + out_len - 1) / out_len;
  const int64_t padded = window * out_len;
  Tensor<T> out({out_len, D});
  std::vector<int64_t> argmax(static_cast<size_t>(out.size()), -1);
  for (int64_t p = 0; p < out_len; ++p)
    for (int64_t j = 0; j < D; ++j) {
      T sum = T(0);
      T best = -std::numeric_limits<T>::infinity();
      int64_t arg = -1;  // -1 marks a zero-pad row winning the max
      for (int64_t r = p * window; r < (p + 1) * window; ++r) {
        const T v = r < L ? x->value[r * D + j] : T(0);
        sum += v;
        if (v > best) {
          best = v;
          arg = r < L ? r * D + j : -1;
        }
      }
      out[p * D + j] = (sum / static_cast<T>(window) + best) / T(2);
      argmax[static_cast<size_t>(p * D + j)] = arg;
    }
  (void)padded;
  return make_node<T>(
      "row_pool_meanmax", std::move(out), {x},
      [x, L, D, out_len, window, argmax = std::move(argmax)](Node<T>& self) {
        Tensor<T>& gx = x->grad_buffer();
        const T half = T(0.5);
        const T minv = half / static_cast<T>(window);
        for (int64_t p = 0; p < out_len; ++p)
          for (int64_t j = 0; j < D; ++j) {
            const T g = self.grad[p * D + j];
            for (int64_t r = p * window; r < std::min(L, (p + 1) * window); ++r)
              gx[r * D + j] += g * minv;
            const int64_t arg = argmax[static_cast<size_t>(p * D + j)];
            if (arg >= 0) gx[arg] += g * half;
          }
      });
}

}  // namespace uss::ag
