#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "slw/numerics/tape.hpp"
#include "slw/numerics/tensor.hpp"

// Differentiable operations recorded on a Tape. Every op validates shapes
// eagerly and throws ShapeError naming the dimension that disagrees.

namespace slw {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

[[noreturn]] inline void shape_fail(const std::string& op, const std::string& what) {
  throw ShapeError(op + ": " + what);
}

inline void require_rank(const std::string& op, const std::string& arg, const Shape& s,
                         std::size_t rank) {
  if (s.size() != rank) {
    shape_fail(op, arg + " must have rank " + std::to_string(rank) + ", got " + shape_string(s));
  }
}

inline void require_same(const std::string& op, const Shape& a, const Shape& b) {
  if (a.size() != b.size()) {
    shape_fail(op, "rank mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) {
      shape_fail(op, "dimension " + std::to_string(i) + " differs: " + std::to_string(a[i]) +
                         " vs " + std::to_string(b[i]));
    }
  }
}

template <class T>
void im2col(const T* in, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* cols) {
  const std::size_t plane = ho * wo;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = cols + ((c * k + ky) * k + kx) * plane;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(pad);
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + wo, T{0});
            continue;
          }
          const T* src = in + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                      static_cast<std::ptrdiff_t>(pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
                std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* out) {
  const std::size_t plane = ho * wo;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = cols + ((c * k + ky) * k + kx) * plane;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = out + (c * h + static_cast<std::size_t>(iy)) * w;
          const T* src = row + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

}  // namespace detail

/// Cross-correlation of input [C_in,H,W] with kernel [C_out,C_in,k,k] plus bias.
template <class T>
Var conv2d(Tape<T>& tape, Var input, Var kernel, Var bias, std::size_t stride, std::size_t pad) {
  const auto& x = tape.value(input);
  const auto& kw = tape.value(kernel);
  const auto& b = tape.value(bias);
  detail::require_rank("conv2d", "input", x.shape(), 3);
  detail::require_rank("conv2d", "kernel", kw.shape(), 4);
  detail::require_rank("conv2d", "bias", b.shape(), 1);
  if (stride < 1) detail::shape_fail("conv2d", "stride must be >= 1");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = kw.dim(0), k = kw.dim(2);
  if (kw.dim(1) != cin) {
    detail::shape_fail("conv2d", "kernel dimension 1 (input channels) is " +
                                     std::to_string(kw.dim(1)) + " but input dimension 0 is " +
                                     std::to_string(cin));
  }
  if (kw.dim(3) != k) {
    detail::shape_fail("conv2d", "kernel dimension 3 (" + std::to_string(kw.dim(3)) +
                                     ") must equal dimension 2 (" + std::to_string(k) + ")");
  }
  if (b.dim(0) != cout) {
    detail::shape_fail("conv2d", "bias dimension 0 is " + std::to_string(b.dim(0)) +
                                     " but kernel dimension 0 is " + std::to_string(cout));
  }
  if (k > h + 2 * pad) detail::shape_fail("conv2d", "kernel exceeds padded input height (dimension 1)");
  if (k > w + 2 * pad) detail::shape_fail("conv2d", "kernel exceeds padded input width (dimension 2)");
  const std::size_t ho = (h + 2 * pad - k) / stride + 1;
  const std::size_t wo = (w + 2 * pad - k) / stride + 1;
  const std::size_t patch = cin * k * k, plane = ho * wo;

  const bool direct = (k == 1 && stride == 1 && pad == 0);
  std::vector<T> cols;
  if (!direct) {
    cols.resize(patch * plane);
    detail::im2col(x.data().data(), cin, h, w, k, stride, pad, ho, wo, cols.data());
  }
  Tensor<T> out(Shape{cout, ho, wo});
  {
    detail::ConstMatMap<T> km(kw.data().data(), cout, patch);
    detail::ConstMatMap<T> cm(direct ? x.data().data() : cols.data(), patch, plane);
    detail::MatMap<T> om(out.data().data(), cout, plane);
    om.noalias() = km * cm;
    for (std::size_t o = 0; o < cout; ++o) om.row(o).array() += b[o];
  }
  const bool need = tape.any_requires_grad({input, kernel, bias});
  return tape.push(
      OpKind::Conv2d, {input.id, kernel.id, bias.id}, std::move(out),
      need ? typename Tape<T>::BackwardFn(
                 [cols = std::move(cols), cin, h, w, k, stride, pad, ho, wo, cout, patch, plane,
                  direct](Tape<T>& t, std::size_t self) {
                   const auto& node = t.node(self);
                   const std::size_t in_id = node.inputs[0], k_id = node.inputs[1],
                                     b_id = node.inputs[2];
                   detail::ConstMatMap<T> dout(t.out_grad(self).data(), cout, plane);
                   const T* col_src = direct ? t.value(in_id).data().data() : cols.data();
                   detail::ConstMatMap<T> cm(col_src, patch, plane);
                   if (T* dk = t.in_grad(k_id)) {
                     detail::MatMap<T> dkm(dk, cout, patch);
                     dkm.noalias() += dout * cm.transpose();
                   }
                   if (T* db = t.in_grad(b_id)) {
                     const T* dptr = t.out_grad(self).data();
                     for (std::size_t o = 0; o < cout; ++o) {
                       T acc{0};
                       for (std::size_t p = 0; p < plane; ++p) acc += dptr[o * plane + p];
                       db[o] += acc;
                     }
                   }
                   if (T* dx = t.in_grad(in_id)) {
                     detail::ConstMatMap<T> km(t.value(k_id).data().data(), cout, patch);
                     if (direct) {
                       detail::MatMap<T> dxm(dx, patch, plane);
                       dxm.noalias() += km.transpose() * dout;
                     } else {
                       detail::RowMat<T> dcols = km.transpose() * dout;
                       detail::col2im_add(dcols.data(), cin, h, w, k, stride, pad, ho, wo, dx);
                     }
                   }
                 })
           : nullptr);
}

/// 2x2 max pooling with stride 2. Gradient goes to the first maximal element.
template <class T>
Var maxpool2(Tape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  detail::require_rank("maxpool2", "input", x.shape(), 3);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 != 0) detail::shape_fail("maxpool2", "input height (dimension 1) is odd: " + std::to_string(h));
  if (w % 2 != 0) detail::shape_fail("maxpool2", "input width (dimension 2) is odd: " + std::to_string(w));
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor<T> out(Shape{c, ho, wo});
  std::vector<std::uint32_t> argmax(out.size());
  const T* src = x.data().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (ch * h + 2 * oy) * w + 2 * ox;
        const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
        for (std::size_t idx : cand) {
          if (src[idx] > src[best]) best = idx;
        }
        const std::size_t o = (ch * ho + oy) * wo + ox;
        out[o] = src[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return tape.push(OpKind::MaxPool2, {input.id}, std::move(out),
                   [argmax = std::move(argmax)](Tape<T>& t, std::size_t self) {
                     const auto g = t.out_grad(self);
                     if (T* dx = t.in_grad(t.node(self).inputs[0])) {
                       for (std::size_t o = 0; o < g.size(); ++o) dx[argmax[o]] += g[o];
                     }
                   });
}

/// weight [m,n] * input [n] + bias [m].
template <class T>
Var dense(Tape<T>& tape, Var input, Var weight, Var bias) {
  const auto& x = tape.value(input);
  const auto& wt = tape.value(weight);
  const auto& b = tape.value(bias);
  detail::require_rank("dense", "input", x.shape(), 1);
  detail::require_rank("dense", "weight", wt.shape(), 2);
  detail::require_rank("dense", "bias", b.shape(), 1);
  const std::size_t m = wt.dim(0), n = wt.dim(1);
  if (x.dim(0) != n) {
    detail::shape_fail("dense", "weight dimension 1 is " + std::to_string(n) +
                                    " but input dimension 0 is " + std::to_string(x.dim(0)));
  }
  if (b.dim(0) != m) {
    detail::shape_fail("dense", "bias dimension 0 is " + std::to_string(b.dim(0)) +
                                    " but weight dimension 0 is " + std::to_string(m));
  }
  Tensor<T> out(Shape{m});
  // plain loops: fixed summation order regardless of buffer alignment
  for (std::size_t i = 0; i < m; ++i) {
    T acc = b[i];
    const T* row = wt.data().data() + i * n;
    for (std::size_t j = 0; j < n; ++j) acc += row[j] * x[j];
    out[i] = acc;
  }
  return tape.push(OpKind::Dense, {input.id, weight.id, bias.id}, std::move(out),
                   [m, n](Tape<T>& t, std::size_t self) {
                     const auto& node = t.node(self);
                     const T* g = t.out_grad(self).data();
                     if (T* dw = t.in_grad(node.inputs[1])) {
                       const T* xv = t.value(node.inputs[0]).data().data();
                       for (std::size_t i = 0; i < m; ++i) {
                         for (std::size_t j = 0; j < n; ++j) dw[i * n + j] += g[i] * xv[j];
                       }
                     }
                     if (T* db = t.in_grad(node.inputs[2])) {
                       for (std::size_t i = 0; i < m; ++i) db[i] += g[i];
                     }
                     if (T* dx = t.in_grad(node.inputs[0])) {
                       const T* wv = t.value(node.inputs[1]).data().data();
                       for (std::size_t i = 0; i < m; ++i) {
                         for (std::size_t j = 0; j < n; ++j) dx[j] += wv[i * n + j] * g[i];
                       }
                     }
                   });
}

template <class T>
Var leaky_relu(Tape<T>& tape, Var input, T slope = T(0.1)) {
  const auto& x = tape.value(input);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : slope * x[i];
  return tape.push(OpKind::LeakyRelu, {input.id}, std::move(out),
                   [slope](Tape<T>& t, std::size_t self) {
                     const std::size_t in = t.node(self).inputs[0];
                     const auto g = t.out_grad(self);
                     const auto& xv = t.value(in);
                     if (T* dx = t.in_grad(in)) {
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         dx[i] += xv[i] > T{0} ? g[i] : slope * g[i];
                       }
                     }
                   });
}

template <class T>
Var sigmoid(Tape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = detail::stable_sigmoid(x[i]);
  return tape.push(OpKind::Sigmoid, {input.id}, std::move(out), [](Tape<T>& t, std::size_t self) {
    const auto g = t.out_grad(self);
    const auto& y = t.value(self);
    if (T* dx = t.in_grad(t.node(self).inputs[0])) {
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i] * (T{1} - y[i]);
    }
  });
}

/// Softmax over the leading axis. A vector [n] is normalised as a whole; for
/// [n, rest...] every position in `rest` gets its own distribution over n.
template <class T>
Var softmax(Tape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  if (x.rank() < 1) detail::shape_fail("softmax", "input must have rank >= 1");
  const std::size_t n = x.dim(0), stride = x.size() / n;
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < stride; ++r) {
    T mx = x[r];
    for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, x[c * stride + r]);
    T total{0};
    for (std::size_t c = 0; c < n; ++c) {
      const T e = std::exp(x[c * stride + r] - mx);
      out[c * stride + r] = e;
      total += e;
    }
    for (std::size_t c = 0; c < n; ++c) out[c * stride + r] /= total;
  }
  return tape.push(OpKind::Softmax, {input.id}, std::move(out),
                   [n, stride](Tape<T>& t, std::size_t self) {
                     const auto g = t.out_grad(self);
                     const auto& y = t.value(self);
                     T* dx = t.in_grad(t.node(self).inputs[0]);
                     if (!dx) return;
                     for (std::size_t r = 0; r < stride; ++r) {
                       T dot{0};
                       for (std::size_t c = 0; c < n; ++c) dot += g[c * stride + r] * y[c * stride + r];
                       for (std::size_t c = 0; c < n; ++c) {
                         const std::size_t i = c * stride + r;
                         dx[i] += y[i] * (g[i] - dot);
                       }
                     }
                   });
}

namespace detail {

template <class T, class F, class G>
Var binary(Tape<T>& tape, OpKind kind, const char* name, Var a, Var b, F fwd, G bwd) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require_same(name, av.shape(), bv.shape());
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  return tape.push(kind, {a.id, b.id}, std::move(out), [bwd](Tape<T>& t, std::size_t self) {
    const auto& node = t.node(self);
    const auto g = t.out_grad(self);
    const auto& x = t.value(node.inputs[0]);
    const auto& y = t.value(node.inputs[1]);
    T* dx = t.in_grad(node.inputs[0]);
    T* dy = t.in_grad(node.inputs[1]);
    for (std::size_t i = 0; i < g.size(); ++i) bwd(g[i], x[i], y[i], dx ? dx + i : nullptr, dy ? dy + i : nullptr);
  });
}

}  // namespace detail

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  return detail::binary<T>(
      tape, OpKind::Add, "add", a, b, [](T x, T y) { return x + y; },
      [](T g, T, T, T* dx, T* dy) {
        if (dx) *dx += g;
        if (dy) *dy += g;
      });
}

template <class T>
Var sub(Tape<T>& tape, Var a, Var b) {
  return detail::binary<T>(
      tape, OpKind::Sub, "sub", a, b, [](T x, T y) { return x - y; },
      [](T g, T, T, T* dx, T* dy) {
        if (dx) *dx += g;
        if (dy) *dy -= g;
      });
}

template <class T>
Var mul(Tape<T>& tape, Var a, Var b) {
  return detail::binary<T>(
      tape, OpKind::Mul, "mul", a, b, [](T x, T y) { return x * y; },
      [](T g, T x, T y, T* dx, T* dy) {
        if (dx) *dx += g * y;
        if (dy) *dy += g * x;
      });
}

template <class T>
Var scale(Tape<T>& tape, Var a, T factor) {
  const auto& x = tape.value(a);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  return tape.push(OpKind::Scale, {a.id}, std::move(out), [factor](Tape<T>& t, std::size_t self) {
    const auto g = t.out_grad(self);
    if (T* dx = t.in_grad(t.node(self).inputs[0])) {
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * factor;
    }
  });
}

template <class T>
Var square(Tape<T>& tape, Var a) {
  const auto& x = tape.value(a);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * x[i];
  return tape.push(OpKind::Square, {a.id}, std::move(out), [](Tape<T>& t, std::size_t self) {
    const std::size_t in = t.node(self).inputs[0];
    const auto g = t.out_grad(self);
    const auto& xv = t.value(in);
    if (T* dx = t.in_grad(in)) {
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += T{2} * xv[i] * g[i];
    }
  });
}

/// Square root; the backward pass clamps its input at 1e-8 so that boxes
/// collapsing to zero width still produce a finite gradient.
template <class T>
Var sqrt(Tape<T>& tape, Var a) {
  const auto& x = tape.value(a);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::sqrt(std::max(x[i], T{0}));
  return tape.push(OpKind::Sqrt, {a.id}, std::move(out), [](Tape<T>& t, std::size_t self) {
    const std::size_t in = t.node(self).inputs[0];
    const auto g = t.out_grad(self);
    const auto& xv = t.value(in);
    if (T* dx = t.in_grad(in)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        dx[i] += g[i] * T(0.5) / std::sqrt(std::max(xv[i], T(1e-8)));
      }
    }
  });
}

template <class T>
Var sum(Tape<T>& tape, Var a) {
  const auto& x = tape.value(a);
  T total{0};
  for (std::size_t i = 0; i < x.size(); ++i) total += x[i];
  return tape.push(OpKind::Sum, {a.id}, Tensor<T>::scalar(total), [](Tape<T>& t, std::size_t self) {
    const T g = t.out_grad(self)[0];
    const std::size_t in = t.node(self).inputs[0];
    if (T* dx = t.in_grad(in)) {
      const std::size_t n = t.value(in).size();
      for (std::size_t i = 0; i < n; ++i) dx[i] += g;
    }
  });
}

template <class T>
Var mean(Tape<T>& tape, Var a) {
  const auto& x = tape.value(a);
  T total{0};
  for (std::size_t i = 0; i < x.size(); ++i) total += x[i];
  const T inv = T{1} / static_cast<T>(x.size());
  return tape.push(OpKind::Mean, {a.id}, Tensor<T>::scalar(total * inv),
                   [inv](Tape<T>& t, std::size_t self) {
                     const T g = t.out_grad(self)[0] * inv;
                     const std::size_t in = t.node(self).inputs[0];
                     if (T* dx = t.in_grad(in)) {
                       const std::size_t n = t.value(in).size();
                       for (std::size_t i = 0; i < n; ++i) dx[i] += g;
                     }
                   });
}

/// Concatenation along axis 0; trailing extents must agree.
template <class T>
Var concat(Tape<T>& tape, const std::vector<Var>& parts) {
  if (parts.empty()) detail::shape_fail("concat", "no inputs");
  Shape shape = tape.value(parts[0]).shape();
  std::size_t lead = 0;
  std::vector<std::size_t> ids;
  for (Var p : parts) {
    const Shape& s = tape.value(p).shape();
    if (s.size() != shape.size()) detail::shape_fail("concat", "rank mismatch " + shape_string(s));
    for (std::size_t d = 1; d < s.size(); ++d) {
      if (s[d] != shape[d]) {
        detail::shape_fail("concat", "dimension " + std::to_string(d) + " differs: " +
                                         std::to_string(s[d]) + " vs " + std::to_string(shape[d]));
      }
    }
    lead += s[0];
    ids.push_back(p.id);
  }
  shape[0] = lead;
  Tensor<T> out(shape);
  std::size_t off = 0;
  for (Var p : parts) {
    const auto& v = tape.value(p);
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += v.size();
  }
  return tape.push(OpKind::Concat, std::move(ids), std::move(out), [](Tape<T>& t, std::size_t self) {
    const auto g = t.out_grad(self);
    std::size_t off = 0;
    for (std::size_t in : t.node(self).inputs) {
      const std::size_t n = t.value(in).size();
      if (T* dx = t.in_grad(in)) {
        for (std::size_t i = 0; i < n; ++i) dx[i] += g[off + i];
      }
      off += n;
    }
  });
}

/// Rows [begin, end) along axis 0.
template <class T>
Var slice(Tape<T>& tape, Var a, std::size_t begin, std::size_t end) {
  const auto& x = tape.value(a);
  if (x.rank() < 1 || begin >= end || end > x.dim(0)) {
    detail::shape_fail("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                                    ") invalid for dimension 0 of " + shape_string(x.shape()));
  }
  Shape shape = x.shape();
  const std::size_t inner = x.size() / shape[0];
  shape[0] = end - begin;
  std::vector<T> data(x.data().begin() + static_cast<std::ptrdiff_t>(begin * inner),
                      x.data().begin() + static_cast<std::ptrdiff_t>(end * inner));
  const std::size_t off = begin * inner;
  return tape.push(OpKind::Slice, {a.id}, Tensor<T>(shape, std::move(data)),
                   [off](Tape<T>& t, std::size_t self) {
                     const auto g = t.out_grad(self);
                     if (T* dx = t.in_grad(t.node(self).inputs[0])) {
                       for (std::size_t i = 0; i < g.size(); ++i) dx[off + i] += g[i];
                     }
                   });
}

template <class T>
Var reshape(Tape<T>& tape, Var a, Shape shape) {
  Tensor<T> out = tape.value(a);
  out.disable_grad();
  out.reshape(std::move(shape));
  return tape.push(OpKind::Reshape, {a.id}, std::move(out), [](Tape<T>& t, std::size_t self) {
    const auto g = t.out_grad(self);
    if (T* dx = t.in_grad(t.node(self).inputs[0])) {
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    }
  });
}

/// -log softmax(logits)[label], computed with the log-sum-exp shift.
template <class T>
Var cross_entropy(Tape<T>& tape, Var logits, std::size_t label) {
  const auto& x = tape.value(logits);
  detail::require_rank("cross_entropy", "logits", x.shape(), 1);
  if (label >= x.dim(0)) {
    detail::shape_fail("cross_entropy", "label " + std::to_string(label) +
                                            " outside dimension 0 extent " + std::to_string(x.dim(0)));
  }
  const T mx = *std::max_element(x.data().begin(), x.data().end());
  T total{0};
  for (std::size_t i = 0; i < x.size(); ++i) total += std::exp(x[i] - mx);
  const T lse = mx + std::log(total);
  return tape.push(OpKind::CrossEntropy, {logits.id}, Tensor<T>::scalar(lse - x[label]),
                   [label, lse](Tape<T>& t, std::size_t self) {
                     const T g = t.out_grad(self)[0];
                     const std::size_t in = t.node(self).inputs[0];
                     const auto& xv = t.value(in);
                     if (T* dx = t.in_grad(in)) {
                       for (std::size_t i = 0; i < xv.size(); ++i) {
                         const T p = std::exp(xv[i] - lse);
                         dx[i] += g * (p - (i == label ? T{1} : T{0}));
                       }
                     }
                   });
}

}  // namespace slw
