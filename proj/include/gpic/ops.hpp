// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations over TensorT. Convolutions are lowered to GEMM
// via im2col/col2im with Eigen doing the matrix products; everything runs
// single-threaded so results are reproducible bit for bit.

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "gpic/tensor.hpp"

namespace gpic {

namespace detail {

template <class S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class S>
using CMatMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class S>
using ArrMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
template <class S>
using CArrMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;

template <class S>
S stable_softplus(S x) {
  // max(x,0) + log1p(exp(-|x|)); never overflows.
  return std::max(x, S(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <class S>
S sigmoid(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  S e = std::exp(x);
  return e / (S(1) + e);
}

struct ConvGeom {
  int n, cin, h, w;      // input
  int cout, kh, kw;      // kernel
  int stride, pad;
  int ho, wo;            // output spatial size

  int khw() const { return kh * kw; }
  int cols_rows() const { return cin * kh * kw; }
  int cols_len() const { return ho * wo; }
};

inline ConvGeom conv_geometry(const Shape& x, const Shape& w, const Shape& b,
                              int stride, int pad, const char* op) {
  auto fail = [&](const std::string& m) { tensor_fail(std::string(op) + ": " + m); };
  if (x.size() != 4) fail("input must be rank 4 (N,C,H,W), got " + shape_str(x));
  if (w.size() != 4) fail("weight must be rank 4, got " + shape_str(w));
  if (b.size() != 1) fail("bias must be rank 1, got " + shape_str(b));
  if (stride < 1) fail("stride must be >= 1");
  if (pad < 0) fail("padding must be >= 0");
  ConvGeom g{};
  g.n = x[0];
  g.cin = x[1];
  g.h = x[2];
  g.w = x[3];
  g.kh = w[2];
  g.kw = w[3];
  g.stride = stride;
  g.pad = pad;
  return g;
}

// im2col for row-major CHW input: cols is (cin*kh*kw) x (ho*wo), row-major.
template <class S>
void im2col(const S* src, const ConvGeom& g, S* cols) {
  const int L = g.cols_len();
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        S* dst = cols + (static_cast<std::ptrdiff_t>((c * g.kh + ky) * g.kw + kx)) * L;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          S* row = dst + static_cast<std::ptrdiff_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(row, row + g.wo, S(0));
            continue;
          }
          const S* srow = src + (static_cast<std::ptrdiff_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            row[ox] = (ix >= 0 && ix < g.w) ? srow[ix] : S(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters cols back into the CHW image, accumulating.
template <class S>
void col2im_add(const S* cols, const ConvGeom& g, S* dst) {
  const int L = g.cols_len();
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        const S* srcrow = cols + (static_cast<std::ptrdiff_t>((c * g.kh + ky) * g.kw + kx)) * L;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          S* drow = dst + (static_cast<std::ptrdiff_t>(c) * g.h + iy) * g.w;
          const S* s = srcrow + static_cast<std::ptrdiff_t>(oy) * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            if (ix >= 0 && ix < g.w) drow[ix] += s[ox];
          }
        }
      }
    }
  }
}

// Elementwise op plumbing shared by the unary activations.
template <class S, class Fwd, class Bwd>
TensorT<S> unary_elementwise(const TensorT<S>& x, Fwd fwd, Bwd dfun) {
  auto xs = x.values();
  std::vector<S> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = fwd(xs[i]);
  auto* xn = x.node().get();
  return make_op_result<S>(
      x.shape(), std::move(out), {x}, [xn, dfun](NodeT<S>& node) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < node.grad.size(); ++i)
          xn->grad[i] += node.grad[i] * dfun(xn->data[i]);
      });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (same-shape only; broadcasting is limited to the
// bias additions inside conv2d/conv_transpose2d/linear).

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape())
    tensor_fail("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<S> out(a.values().begin(), a.values().end());
  detail::ArrMap<S>(out.data(), out.size()) += detail::CArrMap<S>(b.values().data(), out.size());
  auto* an = a.node().get();
  auto* bn = b.node().get();
  return detail::make_op_result<S>(a.shape(), std::move(out), {a, b},
                                   [an, bn](detail::NodeT<S>& node) {
                                     for (auto* p : {an, bn}) {
                                       if (!p->requires_grad) continue;
                                       p->ensure_grad();
                                       detail::ArrMap<S>(p->grad.data(), p->grad.size()) +=
                                           detail::CArrMap<S>(node.grad.data(), node.grad.size());
                                     }
                                   });
}

template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape())
    tensor_fail("sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<S> out(a.values().begin(), a.values().end());
  detail::ArrMap<S>(out.data(), out.size()) -= detail::CArrMap<S>(b.values().data(), out.size());
  auto* an = a.node().get();
  auto* bn = b.node().get();
  return detail::make_op_result<S>(a.shape(), std::move(out), {a, b},
                                   [an, bn](detail::NodeT<S>& node) {
                                     detail::CArrMap<S> g(node.grad.data(), node.grad.size());
                                     if (an->requires_grad) {
                                       an->ensure_grad();
                                       detail::ArrMap<S>(an->grad.data(), an->grad.size()) += g;
                                     }
                                     if (bn->requires_grad) {
                                       bn->ensure_grad();
                                       detail::ArrMap<S>(bn->grad.data(), bn->grad.size()) -= g;
                                     }
                                   });
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape())
    tensor_fail("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto as = a.values();
  auto bs = b.values();
  std::vector<S> out(as.size());
  for (std::size_t i = 0; i < as.size(); ++i) out[i] = as[i] * bs[i];
  auto* an = a.node().get();
  auto* bn = b.node().get();
  return detail::make_op_result<S>(
      a.shape(), std::move(out), {a, b}, [an, bn](detail::NodeT<S>& node) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < node.grad.size(); ++i)
            an->grad[i] += node.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < node.grad.size(); ++i)
            bn->grad[i] += node.grad[i] * an->data[i];
        }
      });
}

template <class S>
TensorT<S> scale(const TensorT<S>& x, double c) {
  auto xs = x.values();
  std::vector<S> out(xs.size());
  const S cs = static_cast<S>(c);
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] * cs;
  auto* xn = x.node().get();
  return detail::make_op_result<S>(x.shape(), std::move(out), {x},
                                   [xn, cs](detail::NodeT<S>& node) {
                                     if (!xn->requires_grad) return;
                                     xn->ensure_grad();
                                     for (std::size_t i = 0; i < node.grad.size(); ++i)
                                       xn->grad[i] += node.grad[i] * cs;
                                   });
}

template <class S>
TensorT<S> add_scalar(const TensorT<S>& x, double c) {
  auto xs = x.values();
  std::vector<S> out(xs.size());
  const S cs = static_cast<S>(c);
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] + cs;
  auto* xn = x.node().get();
  return detail::make_op_result<S>(x.shape(), std::move(out), {x},
                                   [xn](detail::NodeT<S>& node) {
                                     if (!xn->requires_grad) return;
                                     xn->ensure_grad();
                                     for (std::size_t i = 0; i < node.grad.size(); ++i)
                                       xn->grad[i] += node.grad[i];
                                   });
}

// ---------------------------------------------------------------------------
// Activations.

template <class S>
TensorT<S> tanh(const TensorT<S>& x) {
  return detail::unary_elementwise(
      x, [](S v) { return std::tanh(v); },
      [](S v) {
        S t = std::tanh(v);
        return S(1) - t * t;
      });
}

template <class S>
TensorT<S> softplus(const TensorT<S>& x) {
  return detail::unary_elementwise(
      x, [](S v) { return detail::stable_softplus(v); },
      [](S v) { return detail::sigmoid(v); });
}

// mish(x) = x * tanh(softplus(x))
template <class S>
TensorT<S> mish(const TensorT<S>& x) {
  return detail::unary_elementwise(
      x,
      [](S v) { return v * std::tanh(detail::stable_softplus(v)); },
      [](S v) {
        S t = std::tanh(detail::stable_softplus(v));
        return t + v * (S(1) - t * t) * detail::sigmoid(v);
      });
}

// ---------------------------------------------------------------------------
// Layout ops.

template <class S>
TensorT<S> reshape(const TensorT<S>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    tensor_fail("reshape: element count mismatch, " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<S> out(x.values().begin(), x.values().end());
  auto* xn = x.node().get();
  return detail::make_op_result<S>(std::move(shape), std::move(out), {x},
                                   [xn](detail::NodeT<S>& node) {
                                     if (!xn->requires_grad) return;
                                     xn->ensure_grad();
                                     for (std::size_t i = 0; i < node.grad.size(); ++i)
                                       xn->grad[i] += node.grad[i];
                                   });
}

// Contiguous slice along one axis.
template <class S>
TensorT<S> slice(const TensorT<S>& x, int axis, int start, int len) {
  const Shape& xs = x.shape();
  if (axis < 0 || axis >= x.rank())
    tensor_fail("slice: axis " + std::to_string(axis) + " out of range for " + shape_str(xs));
  if (start < 0 || len <= 0 || start + len > xs[static_cast<std::size_t>(axis)])
    tensor_fail("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                ") invalid for axis " + std::to_string(axis) + " of " + shape_str(xs));
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= xs[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= xs[static_cast<std::size_t>(i)];
  const std::int64_t d = xs[static_cast<std::size_t>(axis)];
  Shape oshape = xs;
  oshape[static_cast<std::size_t>(axis)] = len;
  std::vector<S> out(static_cast<std::size_t>(outer * len * inner));
  auto src = x.values();
  for (std::int64_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * len * inner, src.data() + (o * d + start) * inner,
                static_cast<std::size_t>(len * inner) * sizeof(S));
  auto* xn = x.node().get();
  return detail::make_op_result<S>(
      std::move(oshape), std::move(out), {x},
      [xn, outer, inner, d, start, len](detail::NodeT<S>& node) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o) {
          const S* g = node.grad.data() + o * len * inner;
          S* dst = xn->grad.data() + (o * d + start) * inner;
          for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
        }
      });
}

// Concatenation along the channel axis of NCHW tensors.
template <class S>
TensorT<S> concat_channels(const TensorT<S>& a, const TensorT<S>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 4 || bs.size() != 4)
    tensor_fail("concat_channels: inputs must be rank 4, got " + shape_str(as) + " and " + shape_str(bs));
  if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3])
    tensor_fail("concat_channels: non-channel axes differ, " + shape_str(as) + " vs " + shape_str(bs));
  const int n = as[0], ca = as[1], cb = bs[1], hw = as[2] * as[3];
  std::vector<S> out(static_cast<std::size_t>(n) * (ca + cb) * hw);
  auto av = a.values();
  auto bv = b.values();
  for (int i = 0; i < n; ++i) {
    std::memcpy(out.data() + static_cast<std::ptrdiff_t>(i) * (ca + cb) * hw,
                av.data() + static_cast<std::ptrdiff_t>(i) * ca * hw,
                static_cast<std::size_t>(ca * hw) * sizeof(S));
    std::memcpy(out.data() + static_cast<std::ptrdiff_t>(i) * (ca + cb) * hw + static_cast<std::ptrdiff_t>(ca) * hw,
                bv.data() + static_cast<std::ptrdiff_t>(i) * cb * hw,
                static_cast<std::size_t>(cb * hw) * sizeof(S));
  }
  auto* an = a.node().get();
  auto* bn = b.node().get();
  return detail::make_op_result<S>(
      Shape{n, ca + cb, as[2], as[3]}, std::move(out), {a, b},
      [an, bn, n, ca, cb, hw](detail::NodeT<S>& node) {
        for (int i = 0; i < n; ++i) {
          const S* g = node.grad.data() + static_cast<std::ptrdiff_t>(i) * (ca + cb) * hw;
          if (an->requires_grad) {
            an->ensure_grad();
            S* dst = an->grad.data() + static_cast<std::ptrdiff_t>(i) * ca * hw;
            for (int j = 0; j < ca * hw; ++j) dst[j] += g[j];
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            S* dst = bn->grad.data() + static_cast<std::ptrdiff_t>(i) * cb * hw;
            const S* gb = g + static_cast<std::ptrdiff_t>(ca) * hw;
            for (int j = 0; j < cb * hw; ++j) dst[j] += gb[j];
          }
        }
      });
}

// Nearest-neighbor (strided) spatial downsampling of an NCHW tensor.
template <class S>
TensorT<S> downsample(const TensorT<S>& x, int stride) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) tensor_fail("downsample: input must be rank 4, got " + shape_str(xs));
  if (stride < 1) tensor_fail("downsample: stride must be >= 1");
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const int ho = (h + stride - 1) / stride, wo = (w + stride - 1) / stride;
  std::vector<S> out(static_cast<std::size_t>(n) * c * ho * wo);
  auto src = x.values();
  for (int ic = 0; ic < n * c; ++ic)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox)
        out[(static_cast<std::ptrdiff_t>(ic) * ho + oy) * wo + ox] =
            src[(static_cast<std::ptrdiff_t>(ic) * h + oy * stride) * w + ox * stride];
  auto* xn = x.node().get();
  return detail::make_op_result<S>(
      Shape{n, c, ho, wo}, std::move(out), {x},
      [xn, n, c, h, w, ho, wo, stride](detail::NodeT<S>& node) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int ic = 0; ic < n * c; ++ic)
          for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox)
              xn->grad[(static_cast<std::ptrdiff_t>(ic) * h + oy * stride) * w + ox * stride] +=
                  node.grad[(static_cast<std::ptrdiff_t>(ic) * ho + oy) * wo + ox];
      });
}

// ---------------------------------------------------------------------------
// Affine maps.

// y[n, :] = W x[n, :] + b, with x (N,Din), W (Dout,Din), b (Dout).
template <class S>
TensorT<S> linear(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 2) tensor_fail("linear: input must be rank 2 (N,Din), got " + shape_str(xs));
  if (ws.size() != 2) tensor_fail("linear: weight must be rank 2 (Dout,Din), got " + shape_str(ws));
  if (xs[1] != ws[1])
    tensor_fail("linear: input feature axis (dim 1 = " + std::to_string(xs[1]) +
                ") does not match weight Din (dim 1 = " + std::to_string(ws[1]) + ")");
  if (b.shape() != Shape{ws[0]})
    tensor_fail("linear: bias shape " + shape_str(b.shape()) + " must be [" + std::to_string(ws[0]) + "]");
  const int n = xs[0], din = xs[1], dout = ws[0];
  std::vector<S> out(static_cast<std::size_t>(n) * dout);
  {
    detail::CMatMap<S> xm(x.values().data(), n, din);
    detail::CMatMap<S> wm(w.values().data(), dout, din);
    detail::MatMap<S> ym(out.data(), n, dout);
    ym.noalias() = xm * wm.transpose();
    Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> bm(b.values().data(), dout);
    ym.rowwise() += bm;
  }
  auto* xn = x.node().get();
  auto* wn = w.node().get();
  auto* bn = b.node().get();
  return detail::make_op_result<S>(
      Shape{n, dout}, std::move(out), {x, w, b},
      [xn, wn, bn, n, din, dout](detail::NodeT<S>& node) {
        detail::CMatMap<S> gm(node.grad.data(), n, dout);
        detail::CMatMap<S> xm(xn->data.data(), n, din);
        detail::CMatMap<S> wm(wn->data.data(), dout, din);
        if (xn->requires_grad) {
          xn->ensure_grad();
          detail::MatMap<S>(xn->grad.data(), n, din).noalias() += gm * wm;
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          detail::MatMap<S>(wn->grad.data(), dout, din).noalias() += gm.transpose() * xm;
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(bn->grad.data(), dout) +=
              gm.colwise().sum();
        }
      });
}

// Per-sample, per-channel scale and shift of an NCHW tensor: the FiLM
// application step. scale and bias are (N,C).
template <class S>
TensorT<S> channel_affine(const TensorT<S>& x, const TensorT<S>& s, const TensorT<S>& b) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) tensor_fail("channel_affine: input must be rank 4, got " + shape_str(xs));
  const int n = xs[0], c = xs[1], hw = xs[2] * xs[3];
  if (s.shape() != Shape{n, c} || b.shape() != Shape{n, c})
    tensor_fail("channel_affine: scale/bias must be [" + std::to_string(n) + "," + std::to_string(c) +
                "], got " + shape_str(s.shape()) + " and " + shape_str(b.shape()));
  std::vector<S> out(x.values().begin(), x.values().end());
  auto sv = s.values();
  auto bv = b.values();
  for (int i = 0; i < n * c; ++i) {
    detail::ArrMap<S> block(out.data() + static_cast<std::ptrdiff_t>(i) * hw, hw);
    block = block * sv[static_cast<std::size_t>(i)] + bv[static_cast<std::size_t>(i)];
  }
  auto* xn = x.node().get();
  auto* sn = s.node().get();
  auto* bn = b.node().get();
  return detail::make_op_result<S>(
      xs, std::move(out), {x, s, b}, [xn, sn, bn, n, c, hw](detail::NodeT<S>& node) {
        for (int i = 0; i < n * c; ++i) {
          detail::CArrMap<S> g(node.grad.data() + static_cast<std::ptrdiff_t>(i) * hw, hw);
          if (xn->requires_grad) {
            xn->ensure_grad();
            detail::ArrMap<S>(xn->grad.data() + static_cast<std::ptrdiff_t>(i) * hw, hw) +=
                g * sn->data[static_cast<std::size_t>(i)];
          }
          if (sn->requires_grad) {
            sn->ensure_grad();
            detail::CArrMap<S> xv(xn->data.data() + static_cast<std::ptrdiff_t>(i) * hw, hw);
            sn->grad[static_cast<std::size_t>(i)] += (g * xv).sum();
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            bn->grad[static_cast<std::size_t>(i)] += g.sum();
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Convolutions.

// Cross-correlation with weight (Cout,Cin,kh,kw); output (N,Cout,Ho,Wo) with
// Ho = (H + 2*pad - kh)/stride + 1.
template <class S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b,
                  int stride = 1, int pad = 0) {
  detail::ConvGeom g = detail::conv_geometry(x.shape(), w.shape(), b.shape(), stride, pad, "conv2d");
  if (w.shape()[1] != g.cin)
    tensor_fail("conv2d: input channels (x dim 1 = " + std::to_string(g.cin) +
                ") do not match weight Cin (dim 1 = " + std::to_string(w.shape()[1]) + ")");
  g.cout = w.shape()[0];
  if (b.shape()[0] != g.cout)
    tensor_fail("conv2d: bias length " + std::to_string(b.shape()[0]) + " != Cout " + std::to_string(g.cout));
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw)
    tensor_fail("conv2d: kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                " does not fit padded input " + shape_str(x.shape()));
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

  const int rows = g.cols_rows(), L = g.cols_len();
  const std::ptrdiff_t in_sz = static_cast<std::ptrdiff_t>(g.cin) * g.h * g.w;
  const std::ptrdiff_t out_sz = static_cast<std::ptrdiff_t>(g.cout) * L;
  std::vector<S> out(static_cast<std::size_t>(g.n) * out_sz);
  {
    std::vector<S> cols(static_cast<std::size_t>(rows) * L);
    detail::CMatMap<S> wm(w.values().data(), g.cout, rows);
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> bm(b.values().data(), g.cout);
    for (int i = 0; i < g.n; ++i) {
      detail::im2col(x.values().data() + i * in_sz, g, cols.data());
      detail::CMatMap<S> cm(cols.data(), rows, L);
      detail::MatMap<S> ym(out.data() + i * out_sz, g.cout, L);
      ym.noalias() = wm * cm;
      ym.colwise() += bm;
    }
  }
  auto* xn = x.node().get();
  auto* wn = w.node().get();
  auto* bn = b.node().get();
  return detail::make_op_result<S>(
      Shape{g.n, g.cout, g.ho, g.wo}, std::move(out), {x, w, b},
      [xn, wn, bn, g, rows, L, in_sz, out_sz](detail::NodeT<S>& node) {
        detail::CMatMap<S> wm(wn->data.data(), g.cout, rows);
        std::vector<S> cols(static_cast<std::size_t>(rows) * L);
        if (xn->requires_grad) xn->ensure_grad();
        if (wn->requires_grad) wn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (int i = 0; i < g.n; ++i) {
          detail::CMatMap<S> gm(node.grad.data() + i * out_sz, g.cout, L);
          if (xn->requires_grad) {
            detail::MatMap<S> cm(cols.data(), rows, L);
            cm.noalias() = wm.transpose() * gm;
            detail::col2im_add(cols.data(), g, xn->grad.data() + i * in_sz);
          }
          if (wn->requires_grad) {
            detail::im2col(xn->data.data() + i * in_sz, g, cols.data());
            detail::CMatMap<S> cm(cols.data(), rows, L);
            detail::MatMap<S>(wn->grad.data(), g.cout, rows).noalias() += gm * cm.transpose();
          }
          if (bn->requires_grad)
            Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>(bn->grad.data(), g.cout) +=
                gm.rowwise().sum();
        }
      });
}

// Transposed convolution (the adjoint of conv2d over the spatial map).
// Weight layout (Cin,Cout,kh,kw); output (N,Cout,Ho,Wo) with
// Ho = (H-1)*stride - 2*pad + kh.
template <class S>
TensorT<S> conv_transpose2d(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b,
                            int stride = 1, int pad = 0) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4) tensor_fail("conv_transpose2d: input must be rank 4, got " + shape_str(xs));
  if (ws.size() != 4) tensor_fail("conv_transpose2d: weight must be rank 4, got " + shape_str(ws));
  if (xs[1] != ws[0])
    tensor_fail("conv_transpose2d: input channels (x dim 1 = " + std::to_string(xs[1]) +
                ") do not match weight Cin (dim 0 = " + std::to_string(ws[0]) + ")");
  if (stride < 1) tensor_fail("conv_transpose2d: stride must be >= 1");
  const int cout = ws[1];
  if (b.shape() != Shape{cout})
    tensor_fail("conv_transpose2d: bias shape " + shape_str(b.shape()) + " must be [" + std::to_string(cout) + "]");
  const int ho = (xs[2] - 1) * stride - 2 * pad + ws[2];
  const int wo = (xs[3] - 1) * stride - 2 * pad + ws[3];
  if (ho < 1 || wo < 1)
    tensor_fail("conv_transpose2d: computed output size " + std::to_string(ho) + "x" + std::to_string(wo) + " is empty");

  // The output plays the role of the conv2d input in the shared geometry.
  detail::ConvGeom g{};
  g.n = xs[0];
  g.cin = cout;
  g.h = ho;
  g.w = wo;
  g.cout = xs[1];
  g.kh = ws[2];
  g.kw = ws[3];
  g.stride = stride;
  g.pad = pad;
  g.ho = xs[2];
  g.wo = xs[3];

  const int rows = g.cols_rows();           // cout*kh*kw
  const int L = g.cols_len();               // input spatial size
  const std::ptrdiff_t in_sz = static_cast<std::ptrdiff_t>(xs[1]) * L;
  const std::ptrdiff_t out_sz = static_cast<std::ptrdiff_t>(cout) * ho * wo;
  std::vector<S> out(static_cast<std::size_t>(g.n) * out_sz, S(0));
  {
    std::vector<S> cols(static_cast<std::size_t>(rows) * L);
    detail::CMatMap<S> wm(w.values().data(), xs[1], rows);
    auto bv = b.values();
    for (int i = 0; i < g.n; ++i) {
      detail::CMatMap<S> xm(x.values().data() + i * in_sz, xs[1], L);
      detail::MatMap<S> cm(cols.data(), rows, L);
      cm.noalias() = wm.transpose() * xm;
      detail::col2im_add(cols.data(), g, out.data() + i * out_sz);
      for (int c = 0; c < cout; ++c) {
        detail::ArrMap<S> ch(out.data() + i * out_sz + static_cast<std::ptrdiff_t>(c) * ho * wo, ho * wo);
        ch += bv[static_cast<std::size_t>(c)];
      }
    }
  }
  auto* xn = x.node().get();
  auto* wn = w.node().get();
  auto* bn = b.node().get();
  const int cin = xs[1];
  return detail::make_op_result<S>(
      Shape{g.n, cout, ho, wo}, std::move(out), {x, w, b},
      [xn, wn, bn, g, rows, L, in_sz, out_sz, cin, cout, ho, wo](detail::NodeT<S>& node) {
        std::vector<S> cols(static_cast<std::size_t>(rows) * L);
        if (xn->requires_grad) xn->ensure_grad();
        if (wn->requires_grad) wn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        detail::CMatMap<S> wm(wn->data.data(), cin, rows);
        for (int i = 0; i < g.n; ++i) {
          // Upstream gradient lives in the "image" space of the geometry.
          detail::im2col(node.grad.data() + i * out_sz, g, cols.data());
          detail::CMatMap<S> cm(cols.data(), rows, L);
          if (xn->requires_grad)
            detail::MatMap<S>(xn->grad.data() + i * in_sz, cin, L).noalias() += wm * cm;
          if (wn->requires_grad) {
            detail::CMatMap<S> xm(xn->data.data() + i * in_sz, cin, L);
            detail::MatMap<S>(wn->grad.data(), cin, rows).noalias() += xm * cm.transpose();
          }
          if (bn->requires_grad) {
            for (int c = 0; c < cout; ++c) {
              detail::CArrMap<S> gch(node.grad.data() + i * out_sz + static_cast<std::ptrdiff_t>(c) * ho * wo,
                                     ho * wo);
              bn->grad[static_cast<std::size_t>(c)] += gch.sum();
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions and losses. Accumulation runs in double so that batch order and
// sample permutation do not disturb low-order bits more than necessary.

template <class S>
TensorT<S> sum(const TensorT<S>& x) {
  double acc = 0;
  for (S v : x.values()) acc += static_cast<double>(v);
  auto* xn = x.node().get();
  return detail::make_op_result<S>(Shape{1}, {static_cast<S>(acc)}, {x},
                                   [xn](detail::NodeT<S>& node) {
                                     if (!xn->requires_grad) return;
                                     xn->ensure_grad();
                                     const S g = node.grad[0];
                                     for (auto& v : xn->grad) v += g;
                                   });
}

template <class S>
TensorT<S> mean(const TensorT<S>& x) {
  double acc = 0;
  for (S v : x.values()) acc += static_cast<double>(v);
  const double inv = 1.0 / static_cast<double>(x.numel());
  auto* xn = x.node().get();
  return detail::make_op_result<S>(Shape{1}, {static_cast<S>(acc * inv)}, {x},
                                   [xn, inv](detail::NodeT<S>& node) {
                                     if (!xn->requires_grad) return;
                                     xn->ensure_grad();
                                     const S g = static_cast<S>(node.grad[0] * inv);
                                     for (auto& v : xn->grad) v += g;
                                   });
}

// Mean absolute difference. The subgradient at a zero residual is 0.
template <class S>
TensorT<S> l1_loss(const TensorT<S>& pred, const TensorT<S>& target) {
  if (pred.shape() != target.shape())
    tensor_fail("l1_loss: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  auto pv = pred.values();
  auto tv = target.values();
  double acc = 0;
  for (std::size_t i = 0; i < pv.size(); ++i)
    acc += std::abs(static_cast<double>(pv[i]) - static_cast<double>(tv[i]));
  const double inv = 1.0 / static_cast<double>(pred.numel());
  auto* pn = pred.node().get();
  auto* tn = target.node().get();
  return detail::make_op_result<S>(
      Shape{1}, {static_cast<S>(acc * inv)}, {pred, target},
      [pn, tn, inv](detail::NodeT<S>& node) {
        const S g = static_cast<S>(node.grad[0] * inv);
        for (auto* p : {pn, tn}) {
          if (!p->requires_grad) continue;
          p->ensure_grad();
        }
        for (std::size_t i = 0; i < pn->data.size(); ++i) {
          S r = pn->data[i] - tn->data[i];
          S s = (r > S(0)) ? g : (r < S(0)) ? -g : S(0);
          if (pn->requires_grad) pn->grad[i] += s;
          if (tn->requires_grad) tn->grad[i] -= s;
        }
      });
}

}  // namespace gpic
