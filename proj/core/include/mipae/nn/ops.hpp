// Copyright 2026 The MIPAE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <span>

#include "mipae/nn/autograd.hpp"

namespace mipae::nn {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
void accumulate(Node<T>& parent, const Tensor<T>& g) {
  if (!parent.requires_grad) return;
  Tensor<T>& dst = parent.grad_buffer();
  T* d = dst.data();
  const T* s = g.data();
  const std::int64_t n = dst.numel();
  for (std::int64_t i = 0; i < n; ++i) d[i] += s[i];
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) +
                     " vs " + to_string(b));
  }
}

// Elementwise op with derivative expressed via input x and output y.
template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& x, F f, DF df) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::int64_t i = 0; i < xv.numel(); ++i) out[i] = f(xv[i]);
  return make_result<T>(std::move(out), {x}, [df](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor<T>& g = p.grad_buffer();
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      g[i] += self.grad[i] * df(p.value[i], self.value[i]);
    }
  });
}

struct ConvGeometry {
  std::int64_t batch, in_c, in_h, in_w;
  std::int64_t kernel_h, kernel_w, stride, pad;
  std::int64_t out_h, out_w;
};

// cols: (C*kh*kw) x (N*out_h*out_w)
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::int64_t hw = g.out_h * g.out_w;
  const std::int64_t ncols = g.batch * hw;
  for (std::int64_t c = 0; c < g.in_c; ++c) {
    for (std::int64_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::int64_t kj = 0; kj < g.kernel_w; ++kj) {
        const std::int64_t row = (c * g.kernel_h + ki) * g.kernel_w + kj;
        T* dst = cols + row * ncols;
        for (std::int64_t n = 0; n < g.batch; ++n) {
          const T* src = x + (n * g.in_c + c) * g.in_h * g.in_w;
          for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
            const std::int64_t ih = oh * g.stride - g.pad + ki;
            T* d = dst + n * hw + oh * g.out_w;
            if (ih < 0 || ih >= g.in_h) {
              std::fill(d, d + g.out_w, T{0});
              continue;
            }
            for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
              const std::int64_t iw = ow * g.stride - g.pad + kj;
              d[ow] = (iw < 0 || iw >= g.in_w) ? T{0} : src[ih * g.in_w + iw];
            }
          }
        }
      }
    }
  }
}

// Adds cols back into an image buffer (the adjoint of im2col).
template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* x) {
  const std::int64_t hw = g.out_h * g.out_w;
  const std::int64_t ncols = g.batch * hw;
  for (std::int64_t c = 0; c < g.in_c; ++c) {
    for (std::int64_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::int64_t kj = 0; kj < g.kernel_w; ++kj) {
        const std::int64_t row = (c * g.kernel_h + ki) * g.kernel_w + kj;
        const T* src = cols + row * ncols;
        for (std::int64_t n = 0; n < g.batch; ++n) {
          T* dst = x + (n * g.in_c + c) * g.in_h * g.in_w;
          for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
            const std::int64_t ih = oh * g.stride - g.pad + ki;
            if (ih < 0 || ih >= g.in_h) continue;
            const T* s = src + n * hw + oh * g.out_w;
            for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
              const std::int64_t iw = ow * g.stride - g.pad + kj;
              if (iw >= 0 && iw < g.in_w) dst[ih * g.in_w + iw] += s[ow];
            }
          }
        }
      }
    }
  }
}

// (N, C, HW) <-> (C, N*HW)
template <typename T>
void nchw_to_cn(const T* src, std::int64_t n, std::int64_t c, std::int64_t hw,
                T* dst) {
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      std::copy_n(src + (b * c + ch) * hw, hw, dst + ch * n * hw + b * hw);
}

template <typename T>
void cn_to_nchw(const T* src, std::int64_t n, std::int64_t c, std::int64_t hw,
                T* dst) {
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      std::copy_n(src + ch * n * hw + b * hw, hw, dst + (b * c + ch) * hw);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out[i] = a.value()[i] + b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    detail::accumulate(*self.parents[0], self.grad);
    detail::accumulate(*self.parents[1], self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out[i] = a.value()[i] - b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    detail::accumulate(*self.parents[0], self.grad);
    Node<T>& p = *self.parents[1];
    if (!p.requires_grad) return;
    Tensor<T>& g = p.grad_buffer();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out[i] = a.value()[i] * b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    if (pa.requires_grad) {
      Tensor<T>& g = pa.grad_buffer();
      for (std::int64_t i = 0; i < g.numel(); ++i)
        g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor<T>& g = pb.grad_buffer();
      for (std::int64_t i = 0; i < g.numel(); ++i)
        g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  return detail::unary(
      x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T s) {
  return detail::unary(
      x, [s](T v) { return v + s; }, [](T, T) { return T{1}; });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return v * v; }, [](T v, T) { return T{2} * v; });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

// Clamps from above; gradient is zero where the ceiling is active.
template <typename T>
Var<T> clamp_max(const Var<T>& x, T ceiling) {
  return detail::unary(
      x, [ceiling](T v) { return std::min(v, ceiling); },
      [ceiling](T v, T) { return v < ceiling ? T{1} : T{0}; });
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
Var<T> relu(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return v > T{0} ? v : T{0}; },
      [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope = T(0.2)) {
  return detail::unary(
      x, [slope](T v) { return v > T{0} ? v : slope * v; },
      [slope](T v, T) { return v > T{0} ? T{1} : slope; });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return std::tanh(v); },
      [](T, T y) { return T{1} - y * y; });
}

template <typename T>
T sigmoid_scalar(T v) {
  if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
  const T e = std::exp(v);
  return e / (T{1} + e);
}

// log(sigmoid(v)) without overflow.
template <typename T>
T log_sigmoid_scalar(T v) {
  return v >= T{0} ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v));
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return sigmoid_scalar(v); },
      [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Var<T> log_sigmoid(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return log_sigmoid_scalar(v); },
      [](T v, T) { return T{1} - sigmoid_scalar(v); });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc{0};
  for (T v : x.value().values()) acc += v;
  return make_result<T>(Tensor<T>({1}, std::vector<T>{acc}), {x},
                        [](Node<T>& self) {
                          Node<T>& p = *self.parents[0];
                          if (!p.requires_grad) return;
                          Tensor<T>& g = p.grad_buffer();
                          const T d = self.grad[0];
                          for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += d;
                        });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  const auto n = x.value().numel();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), T{1} / static_cast<T>(n));
}

// Sums each row of a (N, D) tensor into (N, 1).
template <typename T>
Var<T> row_sum(const Var<T>& x) {
  const std::int64_t n = x.dim(0);
  const std::int64_t d = x.value().row_stride();
  Tensor<T> out({n, 1});
  for (std::int64_t i = 0; i < n; ++i) {
    T acc{0};
    for (std::int64_t j = 0; j < d; ++j) acc += x.value()[i * d + j];
    out[i] = acc;
  }
  return make_result<T>(std::move(out), {x}, [n, d](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor<T>& g = p.grad_buffer();
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < d; ++j) g[i * d + j] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor<T>& g = p.grad_buffer();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

// Concatenates along axis 0 (rows) or axis 1 (features / channels).
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  if (axis > 1) throw ShapeError("concat supports axis 0 or 1");
  const Shape& ref = parts.front().shape();
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != ref.size()) throw ShapeError("concat rank");
    for (std::size_t d = 0; d < ref.size(); ++d) {
      if (d != axis && p.shape()[d] != ref[d]) {
        throw ShapeError("concat: mismatched shapes " + to_string(p.shape()) +
                         " vs " + to_string(ref));
      }
    }
    out_shape[axis] += p.shape()[axis];
  }
  Tensor<T> out(out_shape);
  // Rows of the outer loop and inner block sizes per part.
  const std::int64_t outer = axis == 0 ? 1 : ref[0];
  std::vector<std::int64_t> blocks;
  for (const auto& p : parts) blocks.push_back(p.value().numel() / outer);
  const std::int64_t out_block = out.numel() / outer;
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].value().data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(src + o * blocks[k], blocks[k],
                  out.data() + o * out_block + offset);
    }
    offset += blocks[k];
  }
  return make_result<T>(
      std::move(out), parts, [outer, blocks, out_block](Node<T>& self) {
        std::int64_t off = 0;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
          Node<T>& p = *self.parents[k];
          if (p.requires_grad) {
            Tensor<T>& g = p.grad_buffer();
            for (std::int64_t o = 0; o < outer; ++o) {
              const T* s = self.grad.data() + o * out_block + off;
              T* d = g.data() + o * blocks[k];
              for (std::int64_t i = 0; i < blocks[k]; ++i) d[i] += s[i];
            }
          }
          off += blocks[k];
        }
      });
}

// Gathers rows along axis 0; indices may repeat.
template <typename T>
Var<T> gather_rows(const Var<T>& x, std::vector<std::int64_t> indices) {
  const std::int64_t stride = x.value().row_stride();
  Shape s = x.shape();
  s[0] = static_cast<std::int64_t>(indices.size());
  Tensor<T> out(s);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] < 0 || indices[r] >= x.dim(0))
      throw ShapeError("gather_rows: index out of range");
    std::copy_n(x.value().data() + indices[r] * stride, stride,
                out.data() + static_cast<std::int64_t>(r) * stride);
  }
  return make_result<T>(std::move(out), {x},
                        [idx = std::move(indices), stride](Node<T>& self) {
                          Node<T>& p = *self.parents[0];
                          if (!p.requires_grad) return;
                          Tensor<T>& g = p.grad_buffer();
                          for (std::size_t r = 0; r < idx.size(); ++r) {
                            const T* s = self.grad.data() +
                                         static_cast<std::int64_t>(r) * stride;
                            T* d = g.data() + idx[r] * stride;
                            for (std::int64_t i = 0; i < stride; ++i) d[i] += s[i];
                          }
                        });
}

template <typename T>
Var<T> slice_rows(const Var<T>& x, std::int64_t begin, std::int64_t end) {
  std::vector<std::int64_t> idx;
  for (std::int64_t i = begin; i < end; ++i) idx.push_back(i);
  return gather_rows(x, std::move(idx));
}

// Columns [begin, end) of a (N, D) tensor.
template <typename T>
Var<T> slice_cols(const Var<T>& x, std::int64_t begin, std::int64_t end) {
  const std::int64_t n = x.dim(0);
  const std::int64_t d = x.value().row_stride();
  if (begin < 0 || end > d || begin >= end) throw ShapeError("slice_cols range");
  const std::int64_t w = end - begin;
  Tensor<T> out({n, w});
  for (std::int64_t i = 0; i < n; ++i)
    std::copy_n(x.value().data() + i * d + begin, w, out.data() + i * w);
  return make_result<T>(std::move(out), {x}, [n, d, w, begin](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor<T>& g = p.grad_buffer();
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < w; ++j)
        g[i * d + begin + j] += self.grad[i * w + j];
  });
}

// ---------------------------------------------------------------------------
// Dense layers

// y = x W^T + b with x: (N, in), W: (out, in), b: (out) or undefined.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  using detail::ConstMatMap;
  using detail::MatMap;
  const std::int64_t n = x.dim(0);
  const std::int64_t in = x.value().row_stride();
  const std::int64_t out_f = w.dim(0);
  if (w.dim(1) != in) {
    throw ShapeError("linear: input features " + std::to_string(in) +
                     " vs weight " + to_string(w.shape()));
  }
  Tensor<T> out({n, out_f});
  MatMap<T> y(out.data(), n, out_f);
  ConstMatMap<T> xm(x.value().data(), n, in);
  ConstMatMap<T> wm(w.value().data(), out_f, in);
  y.noalias() = xm * wm.transpose();
  const bool has_bias = b.defined();
  if (has_bias) {
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < out_f; ++j) y(i, j) += b.value()[j];
  }
  std::vector<Var<T>> parents{x, w};
  if (has_bias) parents.push_back(b);
  return make_result<T>(
      std::move(out), parents, [n, in, out_f, has_bias](Node<T>& self) {
        ConstMatMap<T> gy(self.grad.data(), n, out_f);
        Node<T>& px = *self.parents[0];
        Node<T>& pw = *self.parents[1];
        if (px.requires_grad) {
          MatMap<T> gx(px.grad_buffer().data(), n, in);
          gx.noalias() += gy * ConstMatMap<T>(pw.value.data(), out_f, in);
        }
        if (pw.requires_grad) {
          MatMap<T> gw(pw.grad_buffer().data(), out_f, in);
          gw.noalias() += gy.transpose() * ConstMatMap<T>(px.value.data(), n, in);
        }
        if (has_bias && self.parents[2]->requires_grad) {
          Tensor<T>& gb = self.parents[2]->grad_buffer();
          for (std::int64_t j = 0; j < out_f; ++j) gb[j] += gy.col(j).sum();
        }
      });
}

// ---------------------------------------------------------------------------
// Convolutions

struct ConvParams {
  std::int64_t stride = 1;
  std::int64_t pad = 0;
};

// x: (N, Cin, H, W); w: (Cout, Cin, kh, kw); b: (Cout) or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b,
              ConvParams p) {
  using detail::ConstMatMap;
  using detail::MatMap;
  if (x.shape().size() != 4 || w.shape().size() != 4 || w.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " weight " +
                     to_string(w.shape()));
  }
  detail::ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3),
                         w.dim(2), w.dim(3), p.stride, p.pad, 0, 0};
  g.out_h = (g.in_h + 2 * p.pad - g.kernel_h) / p.stride + 1;
  g.out_w = (g.in_w + 2 * p.pad - g.kernel_w) / p.stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0) throw ShapeError("conv2d: empty output");
  const std::int64_t cout = w.dim(0);
  const std::int64_t k = g.in_c * g.kernel_h * g.kernel_w;
  const std::int64_t hw = g.out_h * g.out_w;
  const std::int64_t ncols = g.batch * hw;

  Tensor<T> cols({k, ncols});
  detail::im2col(x.value().data(), g, cols.data());
  Tensor<T> ycn({cout, ncols});
  MatMap<T>(ycn.data(), cout, ncols).noalias() =
      ConstMatMap<T>(w.value().data(), cout, k) *
      ConstMatMap<T>(cols.data(), k, ncols);
  const bool has_bias = b.defined();
  if (has_bias) {
    for (std::int64_t c = 0; c < cout; ++c) {
      T* row = ycn.data() + c * ncols;
      const T bias = b.value()[c];
      for (std::int64_t i = 0; i < ncols; ++i) row[i] += bias;
    }
  }
  Tensor<T> out({g.batch, cout, g.out_h, g.out_w});
  detail::cn_to_nchw(ycn.data(), g.batch, cout, hw, out.data());

  std::vector<Var<T>> parents{x, w};
  if (has_bias) parents.push_back(b);
  return make_result<T>(
      std::move(out), parents,
      [g, cout, k, hw, ncols, has_bias,
       cols = std::move(cols)](Node<T>& self) {
        Tensor<T> gcn({cout, ncols});
        detail::nchw_to_cn(self.grad.data(), g.batch, cout, hw, gcn.data());
        ConstMatMap<T> gy(gcn.data(), cout, ncols);
        Node<T>& px = *self.parents[0];
        Node<T>& pw = *self.parents[1];
        if (pw.requires_grad) {
          MatMap<T>(pw.grad_buffer().data(), cout, k).noalias() +=
              gy * ConstMatMap<T>(cols.data(), k, ncols).transpose();
        }
        if (px.requires_grad) {
          Tensor<T> gcols({k, ncols});
          MatMap<T>(gcols.data(), k, ncols).noalias() =
              ConstMatMap<T>(pw.value.data(), cout, k).transpose() * gy;
          detail::col2im(gcols.data(), g, px.grad_buffer().data());
        }
        if (has_bias && self.parents[2]->requires_grad) {
          Tensor<T>& gb = self.parents[2]->grad_buffer();
          for (std::int64_t c = 0; c < cout; ++c) gb[c] += gy.row(c).sum();
        }
      });
}

// x: (N, Cin, H, W); w: (Cin, Cout, kh, kw); output spatial size
// (H - 1) * stride - 2 * pad + kh.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b,
                        ConvParams p) {
  using detail::ConstMatMap;
  using detail::MatMap;
  if (x.shape().size() != 4 || w.shape().size() != 4 || w.dim(0) != x.dim(1)) {
    throw ShapeError("conv_transpose2d: input " + to_string(x.shape()) +
                     " weight " + to_string(w.shape()));
  }
  const std::int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::int64_t cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::int64_t oh = (h - 1) * p.stride - 2 * p.pad + kh;
  const std::int64_t ow = (wd - 1) * p.stride - 2 * p.pad + kw;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv_transpose2d: empty output");
  // Geometry of the equivalent forward convolution on the output image.
  detail::ConvGeometry g{n, cout, oh, ow, kh, kw, p.stride, p.pad, h, wd};
  const std::int64_t k = cout * kh * kw;
  const std::int64_t hw = h * wd;
  const std::int64_t ncols = n * hw;

  Tensor<T> xcn({cin, ncols});
  detail::nchw_to_cn(x.value().data(), n, cin, hw, xcn.data());
  Tensor<T> cols({k, ncols});
  MatMap<T>(cols.data(), k, ncols).noalias() =
      ConstMatMap<T>(w.value().data(), cin, k).transpose() *
      ConstMatMap<T>(xcn.data(), cin, ncols);
  Tensor<T> out({n, cout, oh, ow});
  detail::col2im(cols.data(), g, out.data());
  const bool has_bias = b.defined();
  if (has_bias) {
    for (std::int64_t bi = 0; bi < n; ++bi)
      for (std::int64_t c = 0; c < cout; ++c) {
        T* plane = out.data() + (bi * cout + c) * oh * ow;
        for (std::int64_t i = 0; i < oh * ow; ++i) plane[i] += b.value()[c];
      }
  }
  std::vector<Var<T>> parents{x, w};
  if (has_bias) parents.push_back(b);
  return make_result<T>(
      std::move(out), parents,
      [g, cin, cout, k, hw, ncols, n, oh, ow, has_bias,
       xcn = std::move(xcn)](Node<T>& self) {
        Tensor<T> gcols({k, ncols});
        detail::im2col(self.grad.data(), g, gcols.data());
        ConstMatMap<T> gc(gcols.data(), k, ncols);
        Node<T>& px = *self.parents[0];
        Node<T>& pw = *self.parents[1];
        if (pw.requires_grad) {
          MatMap<T>(pw.grad_buffer().data(), cin, k).noalias() +=
              ConstMatMap<T>(xcn.data(), cin, ncols) * gc.transpose();
        }
        if (px.requires_grad) {
          Tensor<T> gx({cin, ncols});
          MatMap<T>(gx.data(), cin, ncols).noalias() =
              ConstMatMap<T>(pw.value.data(), cin, k) * gc;
          Tensor<T> gx_nchw({n, cin, g.out_h, g.out_w});
          detail::cn_to_nchw(gx.data(), n, cin, hw, gx_nchw.data());
          detail::accumulate(px, gx_nchw);
        }
        if (has_bias && self.parents[2]->requires_grad) {
          Tensor<T>& gb = self.parents[2]->grad_buffer();
          for (std::int64_t bi = 0; bi < n; ++bi)
            for (std::int64_t c = 0; c < cout; ++c) {
              const T* plane = self.grad.data() + (bi * cout + c) * oh * ow;
              T acc{0};
              for (std::int64_t i = 0; i < oh * ow; ++i) acc += plane[i];
              gb[c] += acc;
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Batch normalization over every axis except 1. Works for (N, C) and
// (N, C, H, W). In training mode the running statistics are updated in place.

template <typename T>
struct BatchNormState {
  Tensor<T>* running_mean = nullptr;
  Tensor<T>* running_var = nullptr;
  bool training = true;
  T momentum = T(0.1);
  T eps = T(1e-5);
};

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  BatchNormState<T> st) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError("batch_norm needs rank >= 2");
  const std::int64_t n = s[0], c = s[1];
  const std::int64_t inner = x.value().numel() / (n * c);
  const std::int64_t m = n * inner;
  std::vector<T> mu(static_cast<std::size_t>(c)), inv_std(mu.size());
  const T* xv = x.value().data();
  if (st.training) {
    if (m < 2) throw ShapeError("batch_norm in training mode needs >1 value");
    for (std::int64_t ch = 0; ch < c; ++ch) {
      T acc{0};
      for (std::int64_t b = 0; b < n; ++b) {
        const T* p = xv + (b * c + ch) * inner;
        for (std::int64_t i = 0; i < inner; ++i) acc += p[i];
      }
      const T mean_c = acc / static_cast<T>(m);
      T var{0};
      for (std::int64_t b = 0; b < n; ++b) {
        const T* p = xv + (b * c + ch) * inner;
        for (std::int64_t i = 0; i < inner; ++i) {
          const T d = p[i] - mean_c;
          var += d * d;
        }
      }
      var /= static_cast<T>(m);
      mu[ch] = mean_c;
      inv_std[ch] = T{1} / std::sqrt(var + st.eps);
      if (st.running_mean) {
        auto& rm = (*st.running_mean)[ch];
        auto& rv = (*st.running_var)[ch];
        rm = (T{1} - st.momentum) * rm + st.momentum * mean_c;
        rv = (T{1} - st.momentum) * rv +
             st.momentum * var * static_cast<T>(m) / static_cast<T>(m - 1);
      }
    }
  } else {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      mu[ch] = (*st.running_mean)[ch];
      inv_std[ch] = T{1} / std::sqrt((*st.running_var)[ch] + st.eps);
    }
  }
  Tensor<T> xhat(s), out(s);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const std::int64_t base = (b * c + ch) * inner;
      const T ga = gamma.value()[ch], be = beta.value()[ch];
      for (std::int64_t i = 0; i < inner; ++i) {
        const T h = (xv[base + i] - mu[ch]) * inv_std[ch];
        xhat[base + i] = h;
        out[base + i] = ga * h + be;
      }
    }
  const bool training = st.training;
  return make_result<T>(
      std::move(out), {x, gamma, beta},
      [n, c, inner, m, training, inv_std = std::move(inv_std),
       xhat = std::move(xhat)](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        Node<T>& pg = *self.parents[1];
        Node<T>& pb = *self.parents[2];
        const T* gy = self.grad.data();
        for (std::int64_t ch = 0; ch < c; ++ch) {
          T sum_g{0}, sum_gh{0};
          for (std::int64_t b = 0; b < n; ++b) {
            const std::int64_t base = (b * c + ch) * inner;
            for (std::int64_t i = 0; i < inner; ++i) {
              sum_g += gy[base + i];
              sum_gh += gy[base + i] * xhat[base + i];
            }
          }
          if (pg.requires_grad) pg.grad_buffer()[ch] += sum_gh;
          if (pb.requires_grad) pb.grad_buffer()[ch] += sum_g;
          if (!px.requires_grad) continue;
          Tensor<T>& gx = px.grad_buffer();
          const T ga = pg.value[ch];
          const T is = inv_std[ch];
          for (std::int64_t b = 0; b < n; ++b) {
            const std::int64_t base = (b * c + ch) * inner;
            for (std::int64_t i = 0; i < inner; ++i) {
              if (training) {
                const T mf = static_cast<T>(m);
                gx[base + i] += ga * is / mf *
                                (mf * gy[base + i] - sum_g -
                                 xhat[base + i] * sum_gh);
              } else {
                gx[base + i] += ga * is * gy[base + i];
              }
            }
          }
        }
      });
}

}  // namespace mipae::nn
