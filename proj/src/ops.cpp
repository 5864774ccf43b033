#include "hyperace/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hyperace/parallel.hpp"

namespace hyperace {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

using ImplPtr = std::shared_ptr<TensorImpl>;

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!active_tape()) return false;
  for (auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

Tensor result(Shape shape, bool track) {
  Tensor t(std::move(shape));
  if (track) t.set_requires_grad(true);
  return t;
}

void record(const Tensor& out, std::function<void()> fn) { active_tape()->record(out.impl(), std::move(fn)); }

// Gradient sink for an input, or nullptr when the input needs none.
double* grad_of(const ImplPtr& p) {
  if (!p || !p->requires_grad) return nullptr;
  p->ensure_grad();
  return p->grad.data();
}

std::uint64_t u64(std::int64_t v) { return static_cast<std::uint64_t>(v); }

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}
std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return -floor_div(-a, b); }

// Output positions o in [0, out) whose input index o*s - p + k lies in [0, in).
struct Range {
  std::int64_t lo, hi;  // inclusive lo, exclusive hi
};
Range valid_range(std::int64_t in, std::int64_t out, std::int64_t s, std::int64_t p, std::int64_t k) {
  std::int64_t lo = std::max<std::int64_t>(0, ceil_div(p - k, s));
  std::int64_t hi = std::min<std::int64_t>(out, floor_div(in - 1 + p - k, s) + 1);
  return {lo, std::max(lo, hi)};
}

struct ConvGeom {
  std::int64_t n, c, h, w, cout, cin_g, kh, kw, oh, ow, s, p, groups, cout_g;
};

// Scatter-free im2col: col[(c*kh+ky)*kw+kx, oy*ow+ox].
void im2col(const double* x, const ConvGeom& g, double* col) {
  const std::int64_t ohw = g.oh * g.ow;
  for (std::int64_t c = 0; c < g.cin_g; ++c) {
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      Range ry = valid_range(g.h, g.oh, g.s, g.p, ky);
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        Range rx = valid_range(g.w, g.ow, g.s, g.p, kx);
        double* row = col + ((c * g.kh + ky) * g.kw + kx) * ohw;
        std::fill(row, row + ohw, 0.0);
        for (std::int64_t oy = ry.lo; oy < ry.hi; ++oy) {
          const double* src = x + (c * g.h + oy * g.s - g.p + ky) * g.w - g.p + kx;
          double* dst = row + oy * g.ow;
          for (std::int64_t ox = rx.lo; ox < rx.hi; ++ox) dst[ox] = src[ox * g.s];
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeom& g, double* dx) {
  const std::int64_t ohw = g.oh * g.ow;
  for (std::int64_t c = 0; c < g.cin_g; ++c) {
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      Range ry = valid_range(g.h, g.oh, g.s, g.p, ky);
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        Range rx = valid_range(g.w, g.ow, g.s, g.p, kx);
        const double* row = col + ((c * g.kh + ky) * g.kw + kx) * ohw;
        for (std::int64_t oy = ry.lo; oy < ry.hi; ++oy) {
          double* dst = dx + (c * g.h + oy * g.s - g.p + ky) * g.w - g.p + kx;
          const double* src = row + oy * g.ow;
          for (std::int64_t ox = rx.lo; ox < rx.hi; ++ox) dst[ox * g.s] += src[ox];
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeom& g) { return g.kh == 1 && g.kw == 1 && g.s == 1 && g.p == 0; }
bool is_depthwise(const ConvGeom& g) { return g.cin_g == 1 && g.cout_g == 1; }

void depthwise_forward(const double* x, const double* w, double* y, const ConvGeom& g, std::int64_t n) {
  for (std::int64_t c = 0; c < g.c; ++c) {
    const double* xp = x + (n * g.c + c) * g.h * g.w;
    const double* wp = w + c * g.kh * g.kw;
    double* yp = y + (n * g.c + c) * g.oh * g.ow;
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      Range ry = valid_range(g.h, g.oh, g.s, g.p, ky);
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        Range rx = valid_range(g.w, g.ow, g.s, g.p, kx);
        const double wv = wp[ky * g.kw + kx];
        for (std::int64_t oy = ry.lo; oy < ry.hi; ++oy) {
          const double* src = xp + (oy * g.s - g.p + ky) * g.w - g.p + kx;
          double* dst = yp + oy * g.ow;
          for (std::int64_t ox = rx.lo; ox < rx.hi; ++ox) dst[ox] += wv * src[ox * g.s];
        }
      }
    }
  }
}

void depthwise_backward(const double* x, const double* w, const double* dy, double* dx, double* dw,
                        const ConvGeom& g) {
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t c = 0; c < g.c; ++c) {
      const double* xp = x + (n * g.c + c) * g.h * g.w;
      const double* wp = w + c * g.kh * g.kw;
      const double* gp = dy + (n * g.c + c) * g.oh * g.ow;
      double* dxp = dx ? dx + (n * g.c + c) * g.h * g.w : nullptr;
      for (std::int64_t ky = 0; ky < g.kh; ++ky) {
        Range ry = valid_range(g.h, g.oh, g.s, g.p, ky);
        for (std::int64_t kx = 0; kx < g.kw; ++kx) {
          Range rx = valid_range(g.w, g.ow, g.s, g.p, kx);
          const double wv = wp[ky * g.kw + kx];
          double acc = 0.0;
          for (std::int64_t oy = ry.lo; oy < ry.hi; ++oy) {
            const std::int64_t off = (oy * g.s - g.p + ky) * g.w - g.p + kx;
            const double* src = xp + off;
            const double* gr = gp + oy * g.ow;
            for (std::int64_t ox = rx.lo; ox < rx.hi; ++ox) acc += gr[ox] * src[ox * g.s];
            if (dxp) {
              double* d = dxp + off;
              for (std::int64_t ox = rx.lo; ox < rx.hi; ++ox) d[ox * g.s] += wv * gr[ox];
            }
          }
          if (dw) dw[c * g.kh * g.kw + ky * g.kw + kx] += acc;
        }
      }
    }
  }
}

void axis_split(const Shape& s, int axis, std::int64_t& outer, std::int64_t& len, std::int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

int normalize_axis(const char* op, int axis, std::size_t rank) {
  int r = static_cast<int>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError(op, "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(r));
  }
  return axis;
}

void require_rank(const char* op, const Tensor& t, std::size_t rank, const char* name) {
  if (!t.defined()) throw ShapeError(op, std::string(name) + " is undefined");
  if (t.rank() != rank) {
    throw ShapeError(op, std::string(name) + " must have rank " + std::to_string(rank) + ", got " +
                             to_string(t.shape()));
  }
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(op, "shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, Conv2dOptions opt, const Tensor& bias) {
  require_rank("conv2d", x, 4, "input");
  require_rank("conv2d", w, 4, "weight");
  if (opt.groups < 1) throw ShapeError("conv2d", "groups must be >= 1");
  if (opt.stride < 1) throw ShapeError("conv2d", "stride must be >= 1");
  if (opt.padding < 0) throw ShapeError("conv2d", "padding must be >= 0");
  ConvGeom g{};
  g.n = x.dim(0);
  g.c = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = w.dim(0);
  g.cin_g = w.dim(1);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.s = opt.stride;
  g.p = opt.padding;
  g.groups = opt.groups;
  if (g.kh < 1 || g.kw < 1) throw ShapeError("conv2d", "kernel extent must be >= 1");
  if (g.cin_g * g.groups != g.c) {
    throw ShapeError("conv2d", "channel dimension (axis 1) of input is " + std::to_string(g.c) +
                                   " but weight expects " + std::to_string(g.cin_g) + " x groups " +
                                   std::to_string(g.groups) + " = " + std::to_string(g.cin_g * g.groups));
  }
  if (g.cout % g.groups != 0) {
    throw ShapeError("conv2d", "output channels " + std::to_string(g.cout) + " not divisible by groups " +
                                   std::to_string(g.groups));
  }
  if (g.h + 2 * g.p < g.kh) throw ShapeError("conv2d", "height (axis 2) smaller than kernel");
  if (g.w + 2 * g.p < g.kw) throw ShapeError("conv2d", "width (axis 3) smaller than kernel");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
    throw ShapeError("conv2d", "bias must have shape [" + std::to_string(g.cout) + "], got " +
                                   to_string(bias.shape()));
  }
  g.cout_g = g.cout / g.groups;
  g.oh = (g.h + 2 * g.p - g.kh) / g.s + 1;
  g.ow = (g.w + 2 * g.p - g.kw) / g.s + 1;

  const bool track = tracking({&x, &w, &bias});
  Tensor out = result({g.n, g.cout, g.oh, g.ow}, track);
  const std::int64_t ohw = g.oh * g.ow;
  const std::int64_t krows = g.cin_g * g.kh * g.kw;
  add_flops(2 * u64(g.n) * u64(g.cout) * u64(krows) * u64(ohw) + (bias.defined() ? u64(g.n * g.cout * ohw) : 0));

  const double* xd = x.data().data();
  const double* wd = w.data().data();
  double* yd = out.mutable_data().data();

  parallel_for(g.n, [&](std::int64_t n) {
    if (is_depthwise(g)) {
      depthwise_forward(xd, wd, yd, g, n);
    } else {
      std::vector<double> col;
      if (!is_pointwise(g)) col.resize(static_cast<std::size_t>(krows * ohw));
      for (std::int64_t gi = 0; gi < g.groups; ++gi) {
        const double* xin = xd + (n * g.c + gi * g.cin_g) * g.h * g.w;
        const double* colp = xin;
        if (!is_pointwise(g)) {
          im2col(xin, g, col.data());
          colp = col.data();
        }
        ConstMap wm(wd + gi * g.cout_g * krows, g.cout_g, krows);
        ConstMap cm(colp, krows, ohw);
        MutMap ym(yd + (n * g.cout + gi * g.cout_g) * ohw, g.cout_g, ohw);
        ym.noalias() = wm * cm;
      }
    }
    if (bias.defined()) {
      const double* bd = bias.data().data();
      for (std::int64_t co = 0; co < g.cout; ++co) {
        double* yp = yd + (n * g.cout + co) * ohw;
        for (std::int64_t i = 0; i < ohw; ++i) yp[i] += bd[co];
      }
    }
  });

  if (track) {
    record(out, [xi = x.impl(), wi = w.impl(), bi = bias.impl(), oi = out.impl().get(), g]() {
      const double* dy = oi->grad.data();
      double* dx = grad_of(xi);
      double* dw = grad_of(wi);
      double* db = grad_of(bi);
      const std::int64_t ohw = g.oh * g.ow;
      const std::int64_t krows = g.cin_g * g.kh * g.kw;
      if (db) {
        for (std::int64_t n = 0; n < g.n; ++n)
          for (std::int64_t co = 0; co < g.cout; ++co) {
            const double* gp = dy + (n * g.cout + co) * ohw;
            db[co] += std::accumulate(gp, gp + ohw, 0.0);
          }
      }
      if (!dx && !dw) return;
      if (is_depthwise(g)) {
        depthwise_backward(xi->data.data(), wi->data.data(), dy, dx, dw, g);
        return;
      }
      std::vector<double> col(static_cast<std::size_t>(krows * ohw));
      for (std::int64_t n = 0; n < g.n; ++n) {
        for (std::int64_t gi = 0; gi < g.groups; ++gi) {
          const double* xin = xi->data.data() + (n * g.c + gi * g.cin_g) * g.h * g.w;
          ConstMap gm(dy + (n * g.cout + gi * g.cout_g) * ohw, g.cout_g, ohw);
          if (dw) {
            const double* colp = xin;
            if (!is_pointwise(g)) {
              im2col(xin, g, col.data());
              colp = col.data();
            }
            MutMap dwm(dw + gi * g.cout_g * krows, g.cout_g, krows);
            dwm.noalias() += gm * ConstMap(colp, krows, ohw).transpose();
          }
          if (dx) {
            ConstMap wm(wi->data.data() + gi * g.cout_g * krows, g.cout_g, krows);
            double* dxin = dx + (n * g.c + gi * g.cin_g) * g.h * g.w;
            if (is_pointwise(g)) {
              MutMap(dxin, krows, ohw).noalias() += wm.transpose() * gm;
            } else {
              MutMap(col.data(), krows, ohw).noalias() = wm.transpose() * gm;
              col2im(col.data(), g, dxin);
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2, "left operand");
  require_rank("matmul", b, 2, "right operand");
  const std::int64_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
  if (b.dim(0) != q) {
    throw ShapeError("matmul", "inner dimension mismatch: left has " + std::to_string(q) + " columns, right has " +
                                   std::to_string(b.dim(0)) + " rows");
  }
  const bool track = tracking({&a, &b});
  Tensor out = result({p, r}, track);
  add_flops(2 * u64(p) * u64(q) * u64(r));
  MutMap(out.mutable_data().data(), p, r).noalias() =
      ConstMap(a.data().data(), p, q) * ConstMap(b.data().data(), q, r);
  if (track) {
    record(out, [ai = a.impl(), bi = b.impl(), oi = out.impl().get(), p, q, r]() {
      ConstMap gm(oi->grad.data(), p, r);
      if (double* da = grad_of(ai)) MutMap(da, p, q).noalias() += gm * ConstMap(bi->data.data(), q, r).transpose();
      if (double* db = grad_of(bi)) MutMap(db, q, r).noalias() += ConstMap(ai->data.data(), p, q).transpose() * gm;
    });
  }
  return out;
}

namespace {
// dst[j, i] (+)= src[i, j] for src [p, q], in tiles so both sides stay in cache
void transpose_into(const double* src, double* dst, std::int64_t p, std::int64_t q, bool accumulate) {
  constexpr std::int64_t T = 32;
  for (std::int64_t i0 = 0; i0 < p; i0 += T) {
    const std::int64_t i1 = std::min(p, i0 + T);
    for (std::int64_t j0 = 0; j0 < q; j0 += T) {
      const std::int64_t j1 = std::min(q, j0 + T);
      for (std::int64_t j = j0; j < j1; ++j) {
        double* row = dst + j * p;
        if (accumulate) {
          for (std::int64_t i = i0; i < i1; ++i) row[i] += src[i * q + j];
        } else {
          for (std::int64_t i = i0; i < i1; ++i) row[i] = src[i * q + j];
        }
      }
    }
  }
}
}  // namespace

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2, "operand");
  const std::int64_t p = a.dim(0), q = a.dim(1);
  const bool track = tracking({&a});
  Tensor out = result({q, p}, track);
  transpose_into(a.data().data(), out.mutable_data().data(), p, q, false);
  if (track) {
    record(out, [ai = a.impl(), oi = out.impl().get(), p, q]() {
      if (double* da = grad_of(ai)) transpose_into(oi->grad.data(), da, q, p, true);
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  axis = normalize_axis("softmax", axis, x.rank());
  std::int64_t outer, len, inner;
  axis_split(x.shape(), axis, outer, len, inner);
  const bool track = tracking({&x});
  Tensor out = result(x.shape(), track);
  add_flops(u64(x.numel()));
  const double* xd = x.data().data();
  double* yd = out.mutable_data().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * len * inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t j = 0; j < len; ++j) mx = std::max(mx, xd[base + j * inner]);
      double total = 0.0;
      for (std::int64_t j = 0; j < len; ++j) {
        double e = std::exp(xd[base + j * inner] - mx);
        yd[base + j * inner] = e;
        total += e;
      }
      for (std::int64_t j = 0; j < len; ++j) yd[base + j * inner] /= total;
    }
  }
  if (track) {
    record(out, [xi = x.impl(), oi = out.impl().get(), outer, len, inner]() {
      double* dx = grad_of(xi);
      if (!dx) return;
      const double* y = oi->data.data();
      const double* dy = oi->grad.data();
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::int64_t base = o * len * inner + i;
          double dot = 0.0;
          for (std::int64_t j = 0; j < len; ++j) dot += dy[base + j * inner] * y[base + j * inner];
          for (std::int64_t j = 0; j < len; ++j) {
            const std::int64_t k = base + j * inner;
            dx[k] += y[k] * (dy[k] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor silu(const Tensor& x) {
  const bool track = tracking({&x});
  Tensor out = result(x.shape(), track);
  add_flops(u64(x.numel()));
  const double* xd = x.data().data();
  double* yd = out.mutable_data().data();
  for (std::int64_t i = 0; i < x.numel(); ++i) yd[i] = xd[i] * stable_sigmoid(xd[i]);
  if (track) {
    record(out, [xi = x.impl(), oi = out.impl().get()]() {
      double* dx = grad_of(xi);
      if (!dx) return;
      const double* xv = xi->data.data();
      const double* dy = oi->grad.data();
      for (std::size_t i = 0; i < xi->data.size(); ++i) {
        const double s = stable_sigmoid(xv[i]);
        dx[i] += dy[i] * s * (1.0 + xv[i] * (1.0 - s));
      }
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  const bool track = tracking({&x});
  Tensor out = result(x.shape(), track);
  add_flops(u64(x.numel()));
  const double* xd = x.data().data();
  double* yd = out.mutable_data().data();
  for (std::int64_t i = 0; i < x.numel(); ++i) yd[i] = stable_sigmoid(xd[i]);
  if (track) {
    record(out, [xi = x.impl(), oi = out.impl().get()]() {
      double* dx = grad_of(xi);
      if (!dx) return;
      const double* y = oi->data.data();
      const double* dy = oi->grad.data();
      for (std::size_t i = 0; i < oi->data.size(); ++i) dx[i] += dy[i] * y[i] * (1.0 - y[i]);
    });
  }
  return out;
}

namespace {
void check_bn(const char* op, const Tensor& x, const Tensor& p, const char* name) {
  if (x.rank() < 2) throw ShapeError(op, "input needs a channel axis, got " + to_string(x.shape()));
  if (!p.defined() || p.numel() != x.dim(1)) {
    throw ShapeError(op, std::string(name) + " must have " + std::to_string(x.dim(1)) + " entries (channel axis 1)");
  }
}
}  // namespace

Tensor batchnorm(const Tensor& x, const Tensor& scale, const Tensor& shift, const Tensor& running_mean,
                 const Tensor& running_var, double eps) {
  check_bn("batchnorm", x, scale, "scale");
  check_bn("batchnorm", x, shift, "shift");
  check_bn("batchnorm", x, running_mean, "running_mean");
  check_bn("batchnorm", x, running_var, "running_var");
  if (!(eps > 0)) throw std::invalid_argument("batchnorm: eps must be positive");
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.numel() / (n * c);
  const bool track = tracking({&x, &scale, &shift});
  Tensor out = result(x.shape(), track);
  add_flops(u64(x.numel()));
  std::vector<double> mult(c), offs(c);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    mult[ch] = scale.data()[ch] / std::sqrt(running_var.data()[ch] + eps);
    offs[ch] = shift.data()[ch] - mult[ch] * running_mean.data()[ch];
  }
  const double* xd = x.data().data();
  double* yd = out.mutable_data().data();
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const std::int64_t base = (b * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) yd[base + i] = mult[ch] * xd[base + i] + offs[ch];
    }
  if (track) {
    std::vector<double> inv_std(c);
    for (std::int64_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(running_var.data()[ch] + eps);
    record(out, [xi = x.impl(), si = scale.impl(), hi = shift.impl(), mi = running_mean.impl(), oi = out.impl().get(),
                 inv_std = std::move(inv_std), n, c, hw]() {
      double* dx = grad_of(xi);
      double* ds = grad_of(si);
      double* dh = grad_of(hi);
      const double* dy = oi->grad.data();
      const double* xv = xi->data.data();
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const std::int64_t base = (b * c + ch) * hw;
          const double m = si->data[ch] * inv_std[ch];
          double sdy = 0.0, sdyx = 0.0;
          for (std::int64_t i = 0; i < hw; ++i) {
            sdy += dy[base + i];
            sdyx += dy[base + i] * (xv[base + i] - mi->data[ch]) * inv_std[ch];
            if (dx) dx[base + i] += m * dy[base + i];
          }
          if (dh) dh[ch] += sdy;
          if (ds) ds[ch] += sdyx;
        }
    });
  }
  return out;
}

Tensor batchnorm_train(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps,
                       std::vector<double>& batch_mean, std::vector<double>& batch_var) {
  check_bn("batchnorm_train", x, scale, "scale");
  check_bn("batchnorm_train", x, shift, "shift");
  if (!(eps > 0)) throw std::invalid_argument("batchnorm_train: eps must be positive");
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.numel() / (n * c);
  const std::int64_t m = n * hw;
  if (m < 2) throw ShapeError("batchnorm_train", "needs at least two values per channel");
  const bool track = tracking({&x, &scale, &shift});
  Tensor out = result(x.shape(), track);
  add_flops(u64(x.numel()));
  batch_mean.assign(c, 0.0);
  batch_var.assign(c, 0.0);
  std::vector<double> inv_std(c);
  const double* xd = x.data().data();
  double* yd = out.mutable_data().data();
  std::vector<double> xhat(x.numel());
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::int64_t b = 0; b < n; ++b) {
      const double* p = xd + (b * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) s += p[i];
    }
    const double mu = s / static_cast<double>(m);
    double v = 0.0;
    for (std::int64_t b = 0; b < n; ++b) {
      const double* p = xd + (b * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) v += (p[i] - mu) * (p[i] - mu);
    }
    const double var = v / static_cast<double>(m);
    batch_mean[ch] = mu;
    batch_var[ch] = v / static_cast<double>(m - 1);
    inv_std[ch] = 1.0 / std::sqrt(var + eps);
    for (std::int64_t b = 0; b < n; ++b) {
      const std::int64_t base = (b * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        xhat[base + i] = (xd[base + i] - mu) * inv_std[ch];
        yd[base + i] = scale.data()[ch] * xhat[base + i] + shift.data()[ch];
      }
    }
  }
  if (track) {
    record(out, [xi = x.impl(), si = scale.impl(), hi = shift.impl(), oi = out.impl().get(), xhat = std::move(xhat),
                 inv_std = std::move(inv_std), n, c, hw, m]() {
      double* dx = grad_of(xi);
      double* ds = grad_of(si);
      double* dh = grad_of(hi);
      const double* dy = oi->grad.data();
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double sdy = 0.0, sdyx = 0.0;
        for (std::int64_t b = 0; b < n; ++b) {
          const std::int64_t base = (b * c + ch) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            sdy += dy[base + i];
            sdyx += dy[base + i] * xhat[base + i];
          }
        }
        if (dh) dh[ch] += sdy;
        if (ds) ds[ch] += sdyx;
        if (dx) {
          const double k = si->data[ch] * inv_std[ch] / static_cast<double>(m);
          for (std::int64_t b = 0; b < n; ++b) {
            const std::int64_t base = (b * c + ch) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
              dx[base + i] += k * (static_cast<double>(m) * dy[base + i] - sdy - xhat[base + i] * sdyx);
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank("global_avg_pool", x, 4, "input");
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (hw == 0) throw ShapeError("global_avg_pool", "empty spatial extent");
  const bool track = tracking({&x});
  Tensor out = result({n, c}, track);
  add_flops(u64(n * c));
  const double* xd = x.data().data();
  double* yd = out.mutable_data().data();
  for (std::int64_t k = 0; k < n * c; ++k) {
    yd[k] = std::accumulate(xd + k * hw, xd + (k + 1) * hw, 0.0) / static_cast<double>(hw);
  }
  if (track) {
    record(out, [xi = x.impl(), oi = out.impl().get(), n, c, hw]() {
      double* dx = grad_of(xi);
      if (!dx) return;
      for (std::int64_t k = 0; k < n * c; ++k) {
        const double g = oi->grad[k] / static_cast<double>(hw);
        for (std::int64_t i = 0; i < hw; ++i) dx[k * hw + i] += g;
      }
    });
  }
  return out;
}

Tensor global_max_pool(const Tensor& x) {
  require_rank("global_max_pool", x, 4, "input");
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (hw == 0) throw ShapeError("global_max_pool", "empty spatial extent");
  const bool track = tracking({&x});
  Tensor out = result({n, c}, track);
  add_flops(u64(n * c));
  const double* xd = x.data().data();
  double* yd = out.mutable_data().data();
  std::vector<std::int64_t> arg(n * c);
  for (std::int64_t k = 0; k < n * c; ++k) {
    const double* p = xd + k * hw;
    arg[k] = k * hw + (std::max_element(p, p + hw) - p);
    yd[k] = xd[arg[k]];
  }
  if (track) {
    record(out, [xi = x.impl(), oi = out.impl().get(), arg = std::move(arg)]() {
      double* dx = grad_of(xi);
      if (!dx) return;
      for (std::size_t k = 0; k < arg.size(); ++k) dx[arg[k]] += oi->grad[k];
    });
  }
  return out;
}

Tensor max_pool2d(const Tensor& x, int kernel, int stride, int padding) {
  require_rank("max_pool2d", x, 4, "input");
  if (kernel < 1 || stride < 1 || padding < 0 || 2 * padding >= kernel + 1) {
    throw ShapeError("max_pool2d", "invalid kernel/stride/padding");
  }
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h + 2 * padding < kernel || w + 2 * padding < kernel) throw ShapeError("max_pool2d", "input smaller than kernel");
  const std::int64_t oh = (h + 2 * padding - kernel) / stride + 1;
  const std::int64_t ow = (w + 2 * padding - kernel) / stride + 1;
  const bool track = tracking({&x});
  Tensor out = result({n, c, oh, ow}, track);
  add_flops(u64(out.numel()));
  const double* xd = x.data().data();
  double* yd = out.mutable_data().data();
  std::vector<std::int64_t> arg(out.numel());
  for (std::int64_t k = 0; k < n * c; ++k) {
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::int64_t bi = -1;
        for (std::int64_t ky = 0; ky < kernel; ++ky) {
          const std::int64_t iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t kx = 0; kx < kernel; ++kx) {
            const std::int64_t ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= w) continue;
            const std::int64_t idx = (k * h + iy) * w + ix;
            if (xd[idx] > best) {
              best = xd[idx];
              bi = idx;
            }
          }
        }
        const std::int64_t o = (k * oh + oy) * ow + ox;
        yd[o] = best;
        arg[o] = bi;
      }
    }
  }
  if (track) {
    record(out, [xi = x.impl(), oi = out.impl().get(), arg = std::move(arg)]() {
      double* dx = grad_of(xi);
      if (!dx) return;
      for (std::size_t o = 0; o < arg.size(); ++o) dx[arg[o]] += oi->grad[o];
    });
  }
  return out;
}

Tensor resize(const Tensor& x, std::int64_t height, std::int64_t width, ResizeMode mode) {
  require_rank("resize", x, 4, "input");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (height == h && width == w) return x;
  if (height < 1 || width < 1) throw ShapeError("resize", "target size must be positive");
  const bool track = tracking({&x});
  Tensor out = result({n, c, height, width}, track);
  add_flops(u64(out.numel()));
  const double* xd = x.data().data();
  double* yd = out.mutable_data().data();
  if (mode == ResizeMode::Nearest) {
    if (height % h != 0 || width % w != 0) {
      throw ShapeError("resize", "nearest upsampling needs integer factors: " + to_string(x.shape()) + " -> " +
                                     std::to_string(height) + "x" + std::to_string(width));
    }
    const std::int64_t fy = height / h, fx = width / w;
    for (std::int64_t k = 0; k < n * c; ++k)
      for (std::int64_t oy = 0; oy < height; ++oy)
        for (std::int64_t ox = 0; ox < width; ++ox)
          yd[(k * height + oy) * width + ox] = xd[(k * h + oy / fy) * w + ox / fx];
    if (track) {
      record(out, [xi = x.impl(), oi = out.impl().get(), n, c, h, w, height, width, fy, fx]() {
        double* dx = grad_of(xi);
        if (!dx) return;
        for (std::int64_t k = 0; k < n * c; ++k)
          for (std::int64_t oy = 0; oy < height; ++oy)
            for (std::int64_t ox = 0; ox < width; ++ox)
              dx[(k * h + oy / fy) * w + ox / fx] += oi->grad[(k * height + oy) * width + ox];
      });
    }
  } else {
    if (h % height != 0 || w % width != 0) {
      throw ShapeError("resize", "area downsampling needs integer factors: " + to_string(x.shape()) + " -> " +
                                     std::to_string(height) + "x" + std::to_string(width));
    }
    const std::int64_t fy = h / height, fx = w / width;
    const double inv = 1.0 / static_cast<double>(fy * fx);
    for (std::int64_t k = 0; k < n * c; ++k)
      for (std::int64_t oy = 0; oy < height; ++oy)
        for (std::int64_t ox = 0; ox < width; ++ox) {
          double s = 0.0;
          for (std::int64_t dy = 0; dy < fy; ++dy)
            for (std::int64_t dx = 0; dx < fx; ++dx) s += xd[(k * h + oy * fy + dy) * w + ox * fx + dx];
          yd[(k * height + oy) * width + ox] = s * inv;
        }
    if (track) {
      record(out, [xi = x.impl(), oi = out.impl().get(), n, c, h, w, height, width, fy, fx, inv]() {
        double* dxp = grad_of(xi);
        if (!dxp) return;
        for (std::int64_t k = 0; k < n * c; ++k)
          for (std::int64_t oy = 0; oy < height; ++oy)
            for (std::int64_t ox = 0; ox < width; ++ox) {
              const double g = oi->grad[(k * height + oy) * width + ox] * inv;
              for (std::int64_t dy = 0; dy < fy; ++dy)
                for (std::int64_t dx = 0; dx < fx; ++dx) dxp[(k * h + oy * fy + dy) * w + ox * fx + dx] += g;
            }
      });
    }
  }
  return out;
}

Tensor resize(const Tensor& x, std::int64_t height, std::int64_t width) {
  require_rank("resize", x, 4, "input");
  const bool up = height >= x.dim(2) && width >= x.dim(3);
  return resize(x, height, width, up ? ResizeMode::Nearest : ResizeMode::Area);
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat", "no inputs");
  axis = normalize_axis("concat", axis, xs[0].rank());
  Shape shape = xs[0].shape();
  std::int64_t total = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto& s = xs[i].shape();
    if (s.size() != shape.size()) throw ShapeError("concat", "rank mismatch at input " + std::to_string(i));
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (static_cast<int>(d) != axis && s[d] != shape[d]) {
        throw ShapeError("concat", "input " + std::to_string(i) + " has extent " + std::to_string(s[d]) +
                                       " on axis " + std::to_string(d) + ", expected " + std::to_string(shape[d]));
      }
    }
    total += s[axis];
  }
  shape[axis] = total;
  bool track = false;
  if (active_tape())
    for (const auto& t : xs) track = track || t.requires_grad();
  Tensor out = result(shape, track);
  std::int64_t outer, len, inner;
  axis_split(shape, axis, outer, len, inner);
  double* yd = out.mutable_data().data();
  std::int64_t offset = 0;
  std::vector<std::int64_t> offsets;
  for (const auto& t : xs) {
    const std::int64_t l = t.dim(axis);
    offsets.push_back(offset);
    const double* src = t.data().data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(src + o * l * inner, l * inner, yd + (o * len + offset) * inner);
    offset += l;
  }
  if (track) {
    std::vector<ImplPtr> ins;
    for (const auto& t : xs) ins.push_back(t.impl());
    record(out, [ins = std::move(ins), offsets = std::move(offsets), oi = out.impl().get(), outer, len, inner, axis]() {
      for (std::size_t i = 0; i < ins.size(); ++i) {
        double* dx = grad_of(ins[i]);
        if (!dx) continue;
        const std::int64_t l = ins[i]->shape[axis];
        for (std::int64_t o = 0; o < outer; ++o) {
          const double* g = oi->grad.data() + (o * len + offsets[i]) * inner;
          double* d = dx + o * l * inner;
          for (std::int64_t k = 0; k < l * inner; ++k) d[k] += g[k];
        }
      }
    });
  }
  return out;
}

std::vector<Tensor> split(const Tensor& x, const std::vector<std::int64_t>& sizes, int axis) {
  axis = normalize_axis("split", axis, x.rank());
  std::int64_t total = 0;
  for (auto s : sizes) {
    if (s < 0) throw ShapeError("split", "negative section size");
    total += s;
  }
  if (total != x.dim(axis)) {
    throw ShapeError("split", "section sizes sum to " + std::to_string(total) + " but axis " + std::to_string(axis) +
                                  " has extent " + std::to_string(x.dim(axis)));
  }
  std::int64_t outer, len, inner;
  axis_split(x.shape(), axis, outer, len, inner);
  const bool track = tracking({&x});
  std::vector<Tensor> outs;
  std::int64_t offset = 0;
  for (auto l : sizes) {
    Shape s = x.shape();
    s[axis] = l;
    Tensor out = result(s, track);
    double* yd = out.mutable_data().data();
    const double* xd = x.data().data();
    for (std::int64_t o = 0; o < outer; ++o) std::copy_n(xd + (o * len + offset) * inner, l * inner, yd + o * l * inner);
    if (track) {
      record(out, [xi = x.impl(), oi = out.impl().get(), outer, len, inner, offset, l]() {
        double* dx = grad_of(xi);
        if (!dx) return;
        for (std::int64_t o = 0; o < outer; ++o) {
          const double* g = oi->grad.data() + o * l * inner;
          double* d = dx + (o * len + offset) * inner;
          for (std::int64_t k = 0; k < l * inner; ++k) d[k] += g[k];
        }
      });
    }
    outs.push_back(std::move(out));
    offset += l;
  }
  return outs;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  const bool track = tracking({&a, &b});
  Tensor out = result(a.shape(), track);
  add_flops(u64(a.numel()));
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* yd = out.mutable_data().data();
  for (std::int64_t i = 0; i < a.numel(); ++i) yd[i] = ad[i] + bd[i];
  if (track) {
    record(out, [ai = a.impl(), bi = b.impl(), oi = out.impl().get()]() {
      const std::size_t n = oi->grad.size();
      if (double* da = grad_of(ai))
        for (std::size_t i = 0; i < n; ++i) da[i] += oi->grad[i];
      if (double* db = grad_of(bi))
        for (std::size_t i = 0; i < n; ++i) db[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  const bool track = tracking({&a, &b});
  Tensor out = result(a.shape(), track);
  add_flops(u64(a.numel()));
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* yd = out.mutable_data().data();
  for (std::int64_t i = 0; i < a.numel(); ++i) yd[i] = ad[i] * bd[i];
  if (track) {
    record(out, [ai = a.impl(), bi = b.impl(), oi = out.impl().get()]() {
      const std::size_t n = oi->grad.size();
      if (double* da = grad_of(ai))
        for (std::size_t i = 0; i < n; ++i) da[i] += oi->grad[i] * bi->data[i];
      if (double* db = grad_of(bi))
        for (std::size_t i = 0; i < n; ++i) db[i] += oi->grad[i] * ai->data[i];
    });
  }
  return out;
}

Tensor scale(const Tensor& x, const Tensor& gamma) {
  if (!gamma.defined() || gamma.numel() != 1) throw ShapeError("scale", "gamma must hold exactly one element");
  const bool track = tracking({&x, &gamma});
  Tensor out = result(x.shape(), track);
  add_flops(u64(x.numel()));
  const double gv = gamma.data()[0];
  const double* xd = x.data().data();
  double* yd = out.mutable_data().data();
  for (std::int64_t i = 0; i < x.numel(); ++i) yd[i] = gv * xd[i];
  if (track) {
    record(out, [xi = x.impl(), gi = gamma.impl(), oi = out.impl().get()]() {
      const std::size_t n = oi->grad.size();
      if (double* dx = grad_of(xi))
        for (std::size_t i = 0; i < n; ++i) dx[i] += gi->data[0] * oi->grad[i];
      if (double* dg = grad_of(gi)) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += oi->grad[i] * xi->data[i];
        dg[0] += s;
      }
    });
  }
  return out;
}

Tensor mul_const(const Tensor& x, double c) {
  const bool track = tracking({&x});
  Tensor out = result(x.shape(), track);
  add_flops(u64(x.numel()));
  const double* xd = x.data().data();
  double* yd = out.mutable_data().data();
  for (std::int64_t i = 0; i < x.numel(); ++i) yd[i] = c * xd[i];
  if (track) {
    record(out, [xi = x.impl(), oi = out.impl().get(), c]() {
      if (double* dx = grad_of(xi))
        for (std::size_t i = 0; i < oi->grad.size(); ++i) dx[i] += c * oi->grad[i];
    });
  }
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 1 || bias.rank() != 1 || bias.dim(0) != x.shape().back()) {
    throw ShapeError("add_rowvec", "bias " + to_string(bias.shape()) + " does not match last axis of " +
                                       to_string(x.shape()));
  }
  const std::int64_t q = bias.dim(0), rows = x.numel() / std::max<std::int64_t>(q, 1);
  const bool track = tracking({&x, &bias});
  Tensor out = result(x.shape(), track);
  add_flops(u64(x.numel()));
  const double* xd = x.data().data();
  const double* bd = bias.data().data();
  double* yd = out.mutable_data().data();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < q; ++j) yd[r * q + j] = xd[r * q + j] + bd[j];
  if (track) {
    record(out, [xi = x.impl(), bi = bias.impl(), oi = out.impl().get(), rows, q]() {
      if (double* dx = grad_of(xi))
        for (std::int64_t i = 0; i < rows * q; ++i) dx[i] += oi->grad[i];
      if (double* db = grad_of(bi))
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t j = 0; j < q; ++j) db[j] += oi->grad[r * q + j];
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape", "cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  const bool track = tracking({&x});
  Tensor out(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  if (track) {
    out.set_requires_grad(true);
    record(out, [xi = x.impl(), oi = out.impl().get()]() {
      if (double* dx = grad_of(xi))
        for (std::size_t i = 0; i < oi->grad.size(); ++i) dx[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  const bool track = tracking({&x});
  Tensor out = result({1}, track);
  add_flops(u64(x.numel()));
  out.mutable_data()[0] = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  if (track) {
    record(out, [xi = x.impl(), oi = out.impl().get()]() {
      if (double* dx = grad_of(xi))
        for (std::size_t i = 0; i < xi->data.size(); ++i) dx[i] += oi->grad[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean", "empty tensor");
  return mul_const(sum(x), 1.0 / static_cast<double>(x.numel()));
}

}  // namespace hyperace
