#include "odssd/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <limits>
#include <vector>

#include "odssd/error.hpp"

namespace odssd::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

void require_rank4(const Shape& s, const char* op) {
  if (s.size() != 4) throw ShapeError(std::string(op) + " expects an (N,C,H,W) tensor, got " + shape_str(s));
}

struct ConvGeometry {
  std::int64_t n, c, h, w;
  std::int64_t o, kh, kw;
  std::int64_t oh, ow;
  int stride, pad, groups;
  std::int64_t cg() const { return c / groups; }
  std::int64_t og() const { return o / groups; }
  std::int64_t col_rows() const { return cg() * kh * kw; }
  std::int64_t out_hw() const { return oh * ow; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
  bool depthwise() const { return groups == c && o == c && groups > 1; }
};

ConvGeometry conv_geometry(const Shape& xs, const Shape& ws, const Shape& bs, Conv2dOptions opt) {
  require_rank4(xs, "conv2d");
  if (ws.size() != 4) throw ShapeError("conv2d weight must be (O,C/g,kh,kw), got " + shape_str(ws));
  if (opt.groups < 1 || opt.stride < 1 || opt.padding < 0) throw InvalidInput("conv2d: bad stride/padding/groups");
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], 0, 0, opt.stride, opt.padding, opt.groups};
  if (g.c % opt.groups != 0 || g.o % opt.groups != 0) {
    throw ShapeError("conv2d: channels " + std::to_string(g.c) + "->" + std::to_string(g.o) +
                     " not divisible by groups " + std::to_string(opt.groups));
  }
  if (ws[1] != g.cg()) {
    throw ShapeError("conv2d: input " + shape_str(xs) + " does not match weight " + shape_str(ws) + " with groups " +
                     std::to_string(opt.groups));
  }
  if (bs.size() != 1 || bs[0] != g.o) {
    throw ShapeError("conv2d: bias " + shape_str(bs) + " does not match weight " + shape_str(ws));
  }
  g.oh = conv_output_size(g.h, g.kh, opt.stride, opt.padding);
  g.ow = conv_output_size(g.w, g.kw, opt.stride, opt.padding);
  if (g.oh < 1 || g.ow < 1) {
    throw ShapeError("conv2d: kernel " + shape_str(ws) + " does not fit padded input " + shape_str(xs));
  }
  return g;
}

// Unrolls one group of one image into a (Cg*kh*kw) x (oh*ow) matrix.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const auto cg = g.cg();
  for (std::int64_t c = 0; c < cg; ++c) {
    const T* plane = img + c * g.h * g.w;
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        T* dst = col + ((c * g.kh + ki) * g.kw + kj) * g.out_hw();
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst + oy * g.ow, dst + (oy + 1) * g.ow, T(0));
            continue;
          }
          const T* row = plane + iy * g.w;
          for (std::int64_t ox = 0; ox < g.ow; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kj;
            dst[oy * g.ow + ox] = (ix >= 0 && ix < g.w) ? row[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* img) {
  const auto cg = g.cg();
  for (std::int64_t c = 0; c < cg; ++c) {
    T* plane = img + c * g.h * g.w;
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        const T* src = col + ((c * g.kh + ki) * g.kw + kj) * g.out_hw();
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) continue;
          T* row = plane + iy * g.w;
          for (std::int64_t ox = 0; ox < g.ow; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.w) row[ix] += src[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

template <typename T>
void depthwise_forward(const T* x, const T* w, const T* b, const ConvGeometry& g, T* y) {
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t c = 0; c < g.c; ++c) {
      const T* plane = x + (n * g.c + c) * g.h * g.w;
      const T* k = w + c * g.kh * g.kw;
      T* out = y + (n * g.c + c) * g.out_hw();
      for (std::int64_t oy = 0; oy < g.oh; ++oy) {
        for (std::int64_t ox = 0; ox < g.ow; ++ox) {
          T acc = b[c];
          for (std::int64_t ki = 0; ki < g.kh; ++ki) {
            const std::int64_t iy = oy * g.stride - g.pad + ki;
            if (iy < 0 || iy >= g.h) continue;
            for (std::int64_t kj = 0; kj < g.kw; ++kj) {
              const std::int64_t ix = ox * g.stride - g.pad + kj;
              if (ix < 0 || ix >= g.w) continue;
              acc += k[ki * g.kw + kj] * plane[iy * g.w + ix];
            }
          }
          out[oy * g.ow + ox] = acc;
        }
      }
    }
  }
}

template <typename T>
void depthwise_backward(const T* x, const T* w, const T* dy, const ConvGeometry& g, T* dx, T* dw, T* db) {
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t c = 0; c < g.c; ++c) {
      const T* plane = x + (n * g.c + c) * g.h * g.w;
      T* dplane = dx ? dx + (n * g.c + c) * g.h * g.w : nullptr;
      const T* k = w + c * g.kh * g.kw;
      T* dk = dw ? dw + c * g.kh * g.kw : nullptr;
      const T* grad = dy + (n * g.c + c) * g.out_hw();
      T bias_acc = T(0);
      for (std::int64_t oy = 0; oy < g.oh; ++oy) {
        for (std::int64_t ox = 0; ox < g.ow; ++ox) {
          const T go = grad[oy * g.ow + ox];
          bias_acc += go;
          for (std::int64_t ki = 0; ki < g.kh; ++ki) {
            const std::int64_t iy = oy * g.stride - g.pad + ki;
            if (iy < 0 || iy >= g.h) continue;
            for (std::int64_t kj = 0; kj < g.kw; ++kj) {
              const std::int64_t ix = ox * g.stride - g.pad + kj;
              if (ix < 0 || ix >= g.w) continue;
              if (dk) dk[ki * g.kw + kj] += go * plane[iy * g.w + ix];
              if (dplane) dplane[iy * g.w + ix] += go * k[ki * g.kw + kj];
            }
          }
        }
      }
      if (db) db[c] += bias_acc;
    }
  }
}

template <typename T>
void gemm_forward(const T* x, const T* w, const T* b, const ConvGeometry& g, T* y) {
  AlignedVector<T> col;
  if (!g.pointwise()) col.resize(static_cast<std::size_t>(g.col_rows() * g.out_hw()));
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t grp = 0; grp < g.groups; ++grp) {
      const T* img = x + (n * g.c + grp * g.cg()) * g.h * g.w;
      const T* src = img;
      if (!g.pointwise()) {
        im2col(img, g, col.data());
        src = col.data();
      }
      ConstMatMap<T> cm(src, g.col_rows(), g.out_hw());
      ConstMatMap<T> wm(w + grp * g.og() * g.col_rows(), g.og(), g.col_rows());
      MatMap<T> ym(y + (n * g.o + grp * g.og()) * g.out_hw(), g.og(), g.out_hw());
      ym.noalias() = wm * cm;
      for (std::int64_t o = 0; o < g.og(); ++o) ym.row(o).array() += b[grp * g.og() + o];
    }
  }
}

template <typename T>
void gemm_backward(const T* x, const T* w, const T* dy, const ConvGeometry& g, T* dx, T* dw, T* db) {
  AlignedVector<T> col;
  AlignedVector<T> dcol;
  const bool direct = g.pointwise();
  if (!direct && dw) col.resize(static_cast<std::size_t>(g.col_rows() * g.out_hw()));
  if (!direct && dx) dcol.resize(static_cast<std::size_t>(g.col_rows() * g.out_hw()));
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t grp = 0; grp < g.groups; ++grp) {
      const std::int64_t img_off = (n * g.c + grp * g.cg()) * g.h * g.w;
      ConstMatMap<T> dym(dy + (n * g.o + grp * g.og()) * g.out_hw(), g.og(), g.out_hw());
      ConstMatMap<T> wm(w + grp * g.og() * g.col_rows(), g.og(), g.col_rows());
      if (db) {
        for (std::int64_t o = 0; o < g.og(); ++o) db[grp * g.og() + o] += dym.row(o).sum();
      }
      if (dw) {
        const T* src = x + img_off;
        if (!direct) {
          im2col(src, g, col.data());
          src = col.data();
        }
        ConstMatMap<T> cm(src, g.col_rows(), g.out_hw());
        MatMap<T> dwm(dw + grp * g.og() * g.col_rows(), g.og(), g.col_rows());
        dwm.noalias() += dym * cm.transpose();
      }
      if (dx) {
        if (direct) {
          MatMap<T> dxm(dx + img_off, g.col_rows(), g.out_hw());
          dxm.noalias() += wm.transpose() * dym;
        } else {
          MatMap<T> dcm(dcol.data(), g.col_rows(), g.out_hw());
          dcm.noalias() = wm.transpose() * dym;
          col2im_add(dcol.data(), g, dx + img_off);
        }
      }
    }
  }
}

}  // namespace

std::int64_t conv_output_size(std::int64_t in, std::int64_t kernel, int stride, int padding) {
  const std::int64_t span = in + 2 * padding - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

std::int64_t pool_ceil_output_size(std::int64_t in, std::int64_t kernel, int stride) {
  const std::int64_t span = in - kernel;
  std::int64_t out = (span >= 0 ? (span + stride - 1) / stride : -((-span) / stride)) + 1;
  if (out > 0 && (out - 1) * stride >= in) --out;
  return out;
}

template <typename T>
Tensor<T> conv2d(Graph<T>* graph, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dOptions options) {
  const ConvGeometry g = conv_geometry(x.shape(), weight.shape(), bias.shape(), options);
  Tensor<T> y(Shape{g.n, g.o, g.oh, g.ow});
  if (g.depthwise()) {
    depthwise_forward(x.data(), weight.data(), bias.data(), g, y.data());
  } else {
    gemm_forward(x.data(), weight.data(), bias.data(), g, y.data());
  }
  if (needs_grad(graph, {&x, &weight, &bias})) {
    y.set_requires_grad(true);
    graph->record([x, weight, bias, y, g]() mutable {
      if (!y.has_grad()) return;
      T* dx = x.requires_grad() ? x.grad().data() : nullptr;
      T* dw = weight.requires_grad() ? weight.grad().data() : nullptr;
      T* db = bias.requires_grad() ? bias.grad().data() : nullptr;
      if (g.depthwise()) {
        depthwise_backward(x.data(), weight.data(), y.grad().data(), g, dx, dw, db);
      } else {
        gemm_backward(x.data(), weight.data(), y.grad().data(), g, dx, dw, db);
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> relu(Graph<T>* graph, const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  auto xv = x.values();
  auto yv = y.values();
  for (std::size_t i = 0; i < xv.size(); ++i) yv[i] = xv[i] > T(0) ? xv[i] : T(0);
  if (needs_grad(graph, {&x})) {
    y.set_requires_grad(true);
    graph->record([x, y]() mutable {
      if (!y.has_grad()) return;
      auto dx = x.grad();
      auto dy = y.grad();
      auto yv = y.values();
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (yv[i] > T(0)) dx[i] += dy[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> max_pool2d_ceil(Graph<T>* graph, const Tensor<T>& x, int kernel, int stride) {
  require_rank4(x.shape(), "max_pool2d_ceil");
  if (kernel < 1 || stride < 1) throw InvalidInput("max_pool2d_ceil: kernel and stride must be positive");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto oh = pool_ceil_output_size(h, kernel, stride);
  const auto ow = pool_ceil_output_size(w, kernel, stride);
  if (oh < 1 || ow < 1) throw ShapeError("max_pool2d_ceil: input " + shape_str(x.shape()) + " smaller than window");
  Tensor<T> y(Shape{n, c, oh, ow});
  const bool record = needs_grad(graph, {&x});
  std::vector<std::int64_t> argmax;
  if (record) argmax.resize(static_cast<std::size_t>(y.numel()));
  const T* xd = x.data();
  T* yd = y.data();
  for (std::int64_t p = 0; p < n * c; ++p) {
    const T* plane = xd + p * h * w;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      const std::int64_t y0 = oy * stride, y1 = std::min(y0 + kernel, h);
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const std::int64_t x0 = ox * stride, x1 = std::min(x0 + kernel, w);
        std::int64_t best = y0 * w + x0;
        for (std::int64_t iy = y0; iy < y1; ++iy) {
          for (std::int64_t ix = x0; ix < x1; ++ix) {
            if (plane[iy * w + ix] > plane[best]) best = iy * w + ix;
          }
        }
        const std::int64_t o = (p * oh + oy) * ow + ox;
        yd[o] = plane[best];
        if (record) argmax[static_cast<std::size_t>(o)] = p * h * w + best;
      }
    }
  }
  if (record) {
    y.set_requires_grad(true);
    graph->record([x, y, argmax = std::move(argmax)]() mutable {
      if (!y.has_grad()) return;
      auto dx = x.grad();
      auto dy = y.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[static_cast<std::size_t>(argmax[i])] += dy[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> channel_concat(Graph<T>* graph, const Tensor<T>& a, const Tensor<T>& b) {
  require_rank4(a.shape(), "channel_concat");
  require_rank4(b.shape(), "channel_concat");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("channel_concat: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const auto n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor<T> y(Shape{n, ca + cb, a.dim(2), a.dim(3)});
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * ca * hw, ca * hw, y.data() + i * (ca + cb) * hw);
    std::copy_n(b.data() + i * cb * hw, cb * hw, y.data() + (i * (ca + cb) + ca) * hw);
  }
  if (needs_grad(graph, {&a, &b})) {
    y.set_requires_grad(true);
    graph->record([a, b, y, n, ca, cb, hw]() mutable {
      if (!y.has_grad()) return;
      const T* dy = y.grad().data();
      for (std::int64_t i = 0; i < n; ++i) {
        if (a.requires_grad()) {
          T* da = a.grad().data() + i * ca * hw;
          const T* src = dy + i * (ca + cb) * hw;
          for (std::int64_t k = 0; k < ca * hw; ++k) da[k] += src[k];
        }
        if (b.requires_grad()) {
          T* db = b.grad().data() + i * cb * hw;
          const T* src = dy + (i * (ca + cb) + ca) * hw;
          for (std::int64_t k = 0; k < cb * hw; ++k) db[k] += src[k];
        }
      }
    });
  }
  return y;
}

namespace {

// Maps element offsets of the stacked (N,C,H,W) layout to the folded
// (N,2C,H/2,W) layout. Both are contiguous runs of one half-plane.
template <typename T, bool Fold>
void permute_halves(const T* src, T* dst, std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w,
                    bool accumulate) {
  const std::int64_t half = (h / 2) * w;
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      for (std::int64_t side = 0; side < 2; ++side) {
        const std::int64_t stacked = ((i * c + ch) * h) * w + side * half;
        const std::int64_t folded = ((i * 2 * c + side * c + ch) * (h / 2)) * w;
        const T* s = src + (Fold ? stacked : folded);
        T* d = dst + (Fold ? folded : stacked);
        if (accumulate) {
          for (std::int64_t k = 0; k < half; ++k) d[k] += s[k];
        } else {
          std::copy_n(s, half, d);
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> fold_stacked(Graph<T>* graph, const Tensor<T>& x) {
  require_rank4(x.shape(), "fold_stacked");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0) throw ShapeError("fold_stacked: height must be even, got " + shape_str(x.shape()));
  Tensor<T> y(Shape{n, 2 * c, h / 2, w});
  permute_halves<T, true>(x.data(), y.data(), n, c, h, w, false);
  if (needs_grad(graph, {&x})) {
    y.set_requires_grad(true);
    graph->record([x, y, n, c, h, w]() mutable {
      if (!y.has_grad()) return;
      permute_halves<T, false>(y.grad().data(), x.grad().data(), n, c, h, w, true);
    });
  }
  return y;
}

template <typename T>
Tensor<T> unfold_stacked(Graph<T>* graph, const Tensor<T>& x) {
  require_rank4(x.shape(), "unfold_stacked");
  const auto n = x.dim(0), c2 = x.dim(1), hh = x.dim(2), w = x.dim(3);
  if (c2 % 2 != 0) throw ShapeError("unfold_stacked: channel count must be even, got " + shape_str(x.shape()));
  const auto c = c2 / 2, h = 2 * hh;
  Tensor<T> y(Shape{n, c, h, w});
  permute_halves<T, false>(x.data(), y.data(), n, c, h, w, false);
  if (needs_grad(graph, {&x})) {
    y.set_requires_grad(true);
    graph->record([x, y, n, c, h, w]() mutable {
      if (!y.has_grad()) return;
      permute_halves<T, true>(y.grad().data(), x.grad().data(), n, c, h, w, true);
    });
  }
  return y;
}

template <typename T>
Tensor<T> separable_conv2d(Graph<T>* graph, const Tensor<T>& x, const Tensor<T>& depthwise_weight,
                           const Tensor<T>& depthwise_bias, const Tensor<T>& pointwise_weight,
                           const Tensor<T>& pointwise_bias, int stride, int padding) {
  require_rank4(x.shape(), "separable_conv2d");
  const auto channels = static_cast<int>(x.dim(1));
  if (depthwise_weight.rank() != 4 || depthwise_weight.dim(0) != channels || depthwise_weight.dim(1) != 1) {
    throw ShapeError("separable_conv2d: depthwise weight " + shape_str(depthwise_weight.shape()) +
                     " does not match input " + shape_str(x.shape()));
  }
  auto dw = conv2d(graph, x, depthwise_weight, depthwise_bias, {stride, padding, channels});
  auto act = relu(graph, dw);
  return conv2d(graph, act, pointwise_weight, pointwise_bias, {1, 0, 1});
}

template <typename T>
Tensor<T> flatten_heads(Graph<T>* graph, std::span<const Tensor<T>> heads, std::int64_t per_prior) {
  if (heads.empty()) throw ShapeError("flatten_heads: no heads");
  if (per_prior < 1) throw InvalidInput("flatten_heads: per_prior must be positive");
  const auto n = heads.front().dim(0);
  std::int64_t total = 0;
  std::vector<std::int64_t> offsets;
  for (const auto& h : heads) {
    require_rank4(h.shape(), "flatten_heads");
    if (h.dim(0) != n || h.dim(1) % per_prior != 0) {
      throw ShapeError("flatten_heads: head " + shape_str(h.shape()) + " incompatible with per_prior " +
                       std::to_string(per_prior));
    }
    offsets.push_back(total);
    total += h.dim(2) * h.dim(3) * (h.dim(1) / per_prior);
  }
  Tensor<T> y(Shape{n, total, per_prior});
  // out[i, off + (r*W + q)*A + a, d] = head[i, a*D + d, r, q]
  auto scatter = [&](auto&& visit) {
    for (std::size_t k = 0; k < heads.size(); ++k) {
      const auto& h = heads[k];
      const auto ch = h.dim(1), hh = h.dim(2), ww = h.dim(3), anchors = ch / per_prior;
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t c = 0; c < ch; ++c) {
          const auto a = c / per_prior, d = c % per_prior;
          for (std::int64_t r = 0; r < hh; ++r) {
            for (std::int64_t q = 0; q < ww; ++q) {
              const auto src = ((i * ch + c) * hh + r) * ww + q;
              const auto dst = (i * total + offsets[k] + (r * ww + q) * anchors + a) * per_prior + d;
              visit(k, src, dst);
            }
          }
        }
      }
    }
  };
  scatter([&](std::size_t k, std::int64_t src, std::int64_t dst) { y.data()[dst] = heads[k].data()[src]; });
  bool any = false;
  if (graph != nullptr) {
    for (const auto& h : heads) any = any || h.requires_grad();
  }
  if (any) {
    y.set_requires_grad(true);
    std::vector<Tensor<T>> inputs(heads.begin(), heads.end());
    graph->record([inputs, y, scatter_offsets = offsets, total, per_prior, n]() mutable {
      if (!y.has_grad()) return;
      const T* dy = y.grad().data();
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto& h = inputs[k];
        if (!h.requires_grad()) continue;
        T* dh = h.grad().data();
        const auto ch = h.dim(1), hh = h.dim(2), ww = h.dim(3), anchors = ch / per_prior;
        for (std::int64_t i = 0; i < n; ++i) {
          for (std::int64_t c = 0; c < ch; ++c) {
            const auto a = c / per_prior, d = c % per_prior;
            for (std::int64_t r = 0; r < hh; ++r) {
              for (std::int64_t q = 0; q < ww; ++q) {
                const auto src = ((i * ch + c) * hh + r) * ww + q;
                const auto dst = (i * total + scatter_offsets[k] + (r * ww + q) * anchors + a) * per_prior + d;
                dh[src] += dy[dst];
              }
            }
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> sum(Graph<T>* graph, const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.values()) acc += v;
  auto y = Tensor<T>::scalar(acc);
  if (needs_grad(graph, {&x})) {
    y.set_requires_grad(true);
    graph->record([x, y]() mutable {
      if (!y.has_grad()) return;
      const T g = y.grad()[0];
      for (auto& d : x.grad()) d += g;
    });
  }
  return y;
}

template <typename T>
Tensor<T> weighted_sum(Graph<T>* graph, const Tensor<T>& x, std::span<const T> coeffs) {
  if (static_cast<std::int64_t>(coeffs.size()) != x.numel()) {
    throw ShapeError("weighted_sum: " + std::to_string(coeffs.size()) + " coefficients for tensor " +
                     shape_str(x.shape()));
  }
  T acc = T(0);
  auto xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i] * coeffs[i];
  auto y = Tensor<T>::scalar(acc);
  if (needs_grad(graph, {&x})) {
    y.set_requires_grad(true);
    std::vector<T> c(coeffs.begin(), coeffs.end());
    graph->record([x, y, c = std::move(c)]() mutable {
      if (!y.has_grad()) return;
      const T g = y.grad()[0];
      auto dx = x.grad();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * c[i];
    });
  }
  return y;
}

#define ODSSD_INSTANTIATE_OPS(T)                                                                                    \
  template Tensor<T> conv2d(Graph<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dOptions);       \
  template Tensor<T> relu(Graph<T>*, const Tensor<T>&);                                                             \
  template Tensor<T> max_pool2d_ceil(Graph<T>*, const Tensor<T>&, int, int);                                        \
  template Tensor<T> channel_concat(Graph<T>*, const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> fold_stacked(Graph<T>*, const Tensor<T>&);                                                     \
  template Tensor<T> unfold_stacked(Graph<T>*, const Tensor<T>&);                                                   \
  template Tensor<T> separable_conv2d(Graph<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,              \
                                      const Tensor<T>&, const Tensor<T>&, int, int);                                \
  template Tensor<T> flatten_heads(Graph<T>*, std::span<const Tensor<T>>, std::int64_t);                            \
  template Tensor<T> sum(Graph<T>*, const Tensor<T>&);                                                              \
  template Tensor<T> weighted_sum(Graph<T>*, const Tensor<T>&, std::span<const T>);

ODSSD_INSTANTIATE_OPS(float)
ODSSD_INSTANTIATE_OPS(double)

}  // namespace odssd::ops
