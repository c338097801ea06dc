#include "translk/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "translk/flops.hpp"

namespace translk {

namespace {

Index floor_div(Index a, Index b) { return (a >= 0) ? a / b : -((-a + b - 1) / b); }
Index ceil_div(Index a, Index b) { return -floor_div(-a, b); }

struct ConvDims {
  Index n, cin, d, h, w;
  Index cout, cin_g, cout_g, k;
  Index od, oh, ow;
  Index s, p, groups;
};

ConvDims conv_dims(const Shape& x, const Shape& wt, const ConvGeometry& g) {
  if (g.stride < 1) throw ShapeError("conv3d: stride must be >= 1");
  if (g.padding < 0) throw ShapeError("conv3d: padding must be >= 0");
  if (g.groups < 1) throw ShapeError("conv3d: groups must be >= 1");
  ConvDims c{};
  c.n = x.n();
  c.cin = x.c();
  c.d = x.d();
  c.h = x.h();
  c.w = x.w();
  c.cout = wt.n();
  c.cin_g = wt.c();
  c.k = wt.d();
  c.s = g.stride;
  c.p = g.padding;
  c.groups = g.groups;
  if (wt.h() != c.k || wt.w() != c.k) {
    throw ShapeError("conv3d: kernel must be cubic, weight shape " + wt.str());
  }
  if (c.cin % g.groups != 0) {
    throw ShapeError("conv3d: groups " + std::to_string(g.groups) + " do not divide c_in " +
                     std::to_string(c.cin));
  }
  if (c.cout % g.groups != 0) {
    throw ShapeError("conv3d: groups " + std::to_string(g.groups) + " do not divide c_out " +
                     std::to_string(c.cout));
  }
  if (c.cin_g * g.groups != c.cin) {
    throw ShapeError("conv3d: weight expects " + std::to_string(c.cin_g * g.groups) +
                     " input channels (c_in / groups = " + std::to_string(c.cin_g) +
                     "), input has c_in = " + std::to_string(c.cin));
  }
  c.cout_g = c.cout / g.groups;
  c.od = kernels::conv_out_dim(c.d, c.k, g);
  c.oh = kernels::conv_out_dim(c.h, c.k, g);
  c.ow = kernels::conv_out_dim(c.w, c.k, g);
  return c;
}

bool is_pointwise(const ConvDims& c) { return c.k == 1 && c.s == 1 && c.p == 0; }

// Visits every (output row, input row, kernel tap) triple of a direct
// convolution. fn(out_row_offset, in_row_offset, tap, ow_lo, ow_hi, in_col0)
// is called with input column = in_col0 + ow * stride.
template <class Fn>
void for_each_row(const ConvDims& c, Fn&& fn) {
  for (Index kd = 0; kd < c.k; ++kd) {
    for (Index kh = 0; kh < c.k; ++kh) {
      for (Index kw = 0; kw < c.k; ++kw) {
        const Index tap = (kd * c.k + kh) * c.k + kw;
        const Index lo = std::max<Index>(0, ceil_div(c.p - kw, c.s));
        const Index hi = std::min<Index>(c.ow - 1, floor_div(c.w - 1 + c.p - kw, c.s));
        if (lo > hi) continue;
        const Index col0 = kw - c.p;
        for (Index od = 0; od < c.od; ++od) {
          const Index id = od * c.s - c.p + kd;
          if (id < 0 || id >= c.d) continue;
          for (Index oh = 0; oh < c.oh; ++oh) {
            const Index ih = oh * c.s - c.p + kh;
            if (ih < 0 || ih >= c.h) continue;
            fn((od * c.oh + oh) * c.ow, (id * c.h + ih) * c.w, tap, lo, hi, col0);
          }
        }
      }
    }
  }
}

template <class T>
void check_vector(const Tensor<T>& v, Index len, const char* what) {
  if (v.shape() != Shape::vec(len)) {
    throw ShapeError(std::string(what) + ": expected shape " + Shape::vec(len).str() + ", got " +
                     v.shape().str());
  }
}

}  // namespace

namespace kernels {

Index conv_out_dim(Index in, Index kernel, const ConvGeometry& g) {
  Index span = in + 2 * g.padding - kernel;
  if (span < 0) {
    throw ShapeError("conv3d: kernel " + std::to_string(kernel) + " exceeds padded input extent " +
                     std::to_string(in + 2 * g.padding));
  }
  return span / g.stride + 1;
}

template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                 const ConvGeometry& g) {
  const ConvDims c = conv_dims(x.shape(), weight.shape(), g);
  if (bias) check_vector(*bias, c.cout, "conv3d bias");
  Tensor<T> out(Shape(c.n, c.cout, c.od, c.oh, c.ow));
  const Index out_s = c.od * c.oh * c.ow;
  const Index in_s = c.d * c.h * c.w;
  const Index taps = c.k * c.k * c.k;
  for (Index n = 0; n < c.n; ++n) {
    for (Index oc = 0; oc < c.cout; ++oc) {
      T* op = out.plane(n, oc);
      if (bias) std::fill(op, op + out_s, (*bias)[oc]);
      const Index grp = oc / c.cout_g;
      for (Index icg = 0; icg < c.cin_g; ++icg) {
        const T* xp = x.plane(n, grp * c.cin_g + icg);
        const T* wp = weight.raw() + (oc * c.cin_g + icg) * taps;
        if (is_pointwise(c)) {
          const T wv = wp[0];
          for (Index i = 0; i < in_s; ++i) op[i] += wv * xp[i];
          continue;
        }
        for_each_row(c, [&](Index orow, Index irow, Index tap, Index lo, Index hi, Index col0) {
          const T wv = wp[tap];
          T* o = op + orow;
          const T* xi = xp + irow + col0;
          if (c.s == 1) {
            for (Index ow = lo; ow <= hi; ++ow) o[ow] += wv * xi[ow];
          } else {
            for (Index ow = lo; ow <= hi; ++ow) o[ow] += wv * xi[ow * c.s];
          }
        });
      }
    }
  }
  return out;
}

template <class T>
void conv3d_grad_input(const Tensor<T>& grad_out, const Tensor<T>& weight, const ConvGeometry& g,
                       Tensor<T>& grad_x) {
  const ConvDims c = conv_dims(grad_x.shape(), weight.shape(), g);
  const Index in_s = c.d * c.h * c.w;
  const Index taps = c.k * c.k * c.k;
  for (Index n = 0; n < c.n; ++n) {
    for (Index oc = 0; oc < c.cout; ++oc) {
      const T* gp = grad_out.plane(n, oc);
      const Index grp = oc / c.cout_g;
      for (Index icg = 0; icg < c.cin_g; ++icg) {
        T* gx = grad_x.plane(n, grp * c.cin_g + icg);
        const T* wp = weight.raw() + (oc * c.cin_g + icg) * taps;
        if (is_pointwise(c)) {
          const T wv = wp[0];
          for (Index i = 0; i < in_s; ++i) gx[i] += wv * gp[i];
          continue;
        }
        for_each_row(c, [&](Index orow, Index irow, Index tap, Index lo, Index hi, Index col0) {
          const T wv = wp[tap];
          const T* go = gp + orow;
          T* gi = gx + irow + col0;
          for (Index ow = lo; ow <= hi; ++ow) gi[ow * c.s] += wv * go[ow];
        });
      }
    }
  }
}

template <class T>
void conv3d_grad_weight(const Tensor<T>& grad_out, const Tensor<T>& x, const ConvGeometry& g,
                        Tensor<T>& grad_w) {
  const ConvDims c = conv_dims(x.shape(), grad_w.shape(), g);
  const Index in_s = c.d * c.h * c.w;
  const Index taps = c.k * c.k * c.k;
  for (Index n = 0; n < c.n; ++n) {
    for (Index oc = 0; oc < c.cout; ++oc) {
      const T* gp = grad_out.plane(n, oc);
      const Index grp = oc / c.cout_g;
      for (Index icg = 0; icg < c.cin_g; ++icg) {
        const T* xp = x.plane(n, grp * c.cin_g + icg);
        T* gw = grad_w.raw() + (oc * c.cin_g + icg) * taps;
        if (is_pointwise(c)) {
          T acc = 0;
          for (Index i = 0; i < in_s; ++i) acc += gp[i] * xp[i];
          gw[0] += acc;
          continue;
        }
        for_each_row(c, [&](Index orow, Index irow, Index tap, Index lo, Index hi, Index col0) {
          const T* go = gp + orow;
          const T* xi = xp + irow + col0;
          T acc = 0;
          for (Index ow = lo; ow <= hi; ++ow) acc += go[ow] * xi[ow * c.s];
          gw[tap] += acc;
        });
      }
    }
  }
}

namespace {

struct TransposedDims {
  Index n, cin, d, h, w, cout, k, s, od, oh, ow;
};

TransposedDims transposed_dims(const Shape& x, const Shape& wt, int stride) {
  if (stride < 1) throw ShapeError("conv3d_transposed: stride must be >= 1");
  if (wt.n() != x.c()) {
    throw ShapeError("conv3d_transposed: weight expects c_in = " + std::to_string(wt.n()) +
                     ", input has c_in = " + std::to_string(x.c()));
  }
  if (wt.h() != wt.d() || wt.w() != wt.d()) {
    throw ShapeError("conv3d_transposed: kernel must be cubic, weight shape " + wt.str());
  }
  TransposedDims t{x.n(), x.c(), x.d(), x.h(), x.w(), wt.c(), wt.d(), stride, 0, 0, 0};
  t.od = (t.d - 1) * t.s + t.k;
  t.oh = (t.h - 1) * t.s + t.k;
  t.ow = (t.w - 1) * t.s + t.k;
  return t;
}

// fn(in_row_offset, out_row_offset, tap) for every input row and kernel tap;
// input column iw maps to output column iw * stride + kw.
template <class Fn>
void for_each_transposed_row(const TransposedDims& t, Fn&& fn) {
  for (Index kd = 0; kd < t.k; ++kd)
    for (Index kh = 0; kh < t.k; ++kh)
      for (Index kw = 0; kw < t.k; ++kw) {
        const Index tap = (kd * t.k + kh) * t.k + kw;
        for (Index id = 0; id < t.d; ++id)
          for (Index ih = 0; ih < t.h; ++ih) {
            fn((id * t.h + ih) * t.w, ((id * t.s + kd) * t.oh + (ih * t.s + kh)) * t.ow + kw, tap);
          }
      }
}

template <class T>
void transposed_grad_input(const Tensor<T>& grad_out, const Tensor<T>& weight,
                           const TransposedDims& t, Tensor<T>& grad_x) {
  const Index taps = t.k * t.k * t.k;
  for (Index n = 0; n < t.n; ++n)
    for (Index ic = 0; ic < t.cin; ++ic) {
      T* gx = grad_x.plane(n, ic);
      for (Index oc = 0; oc < t.cout; ++oc) {
        const T* gp = grad_out.plane(n, oc);
        const T* wp = weight.raw() + (ic * t.cout + oc) * taps;
        for_each_transposed_row(t, [&](Index irow, Index orow, Index tap) {
          const T wv = wp[tap];
          T* gi = gx + irow;
          const T* go = gp + orow;
          for (Index iw = 0; iw < t.w; ++iw) gi[iw] += wv * go[iw * t.s];
        });
      }
    }
}

template <class T>
void transposed_grad_weight(const Tensor<T>& grad_out, const Tensor<T>& x,
                            const TransposedDims& t, Tensor<T>& grad_w) {
  const Index taps = t.k * t.k * t.k;
  for (Index n = 0; n < t.n; ++n)
    for (Index ic = 0; ic < t.cin; ++ic) {
      const T* xp = x.plane(n, ic);
      for (Index oc = 0; oc < t.cout; ++oc) {
        const T* gp = grad_out.plane(n, oc);
        T* gw = grad_w.raw() + (ic * t.cout + oc) * taps;
        for_each_transposed_row(t, [&](Index irow, Index orow, Index tap) {
          const T* xi = xp + irow;
          const T* go = gp + orow;
          T acc = 0;
          for (Index iw = 0; iw < t.w; ++iw) acc += xi[iw] * go[iw * t.s];
          gw[tap] += acc;
        });
      }
    }
}

}  // namespace

template <class T>
Tensor<T> conv3d_transposed(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                            int stride) {
  const TransposedDims t = transposed_dims(x.shape(), weight.shape(), stride);
  if (bias) check_vector(*bias, t.cout, "conv3d_transposed bias");
  Tensor<T> out(Shape(t.n, t.cout, t.od, t.oh, t.ow));
  const Index out_s = t.od * t.oh * t.ow;
  const Index taps = t.k * t.k * t.k;
  for (Index n = 0; n < t.n; ++n)
    for (Index oc = 0; oc < t.cout; ++oc) {
      T* op = out.plane(n, oc);
      if (bias) std::fill(op, op + out_s, (*bias)[oc]);
      for (Index ic = 0; ic < t.cin; ++ic) {
        const T* xp = x.plane(n, ic);
        const T* wp = weight.raw() + (ic * t.cout + oc) * taps;
        for_each_transposed_row(t, [&](Index irow, Index orow, Index tap) {
          const T wv = wp[tap];
          const T* xi = xp + irow;
          T* o = op + orow;
          for (Index iw = 0; iw < t.w; ++iw) o[iw * t.s] += wv * xi[iw];
        });
      }
    }
  return out;
}

}  // namespace kernels

namespace {

template <class T>
void accumulate_bias_grad(const Tensor<T>& grad_out, Tensor<T>& grad_b) {
  const Shape& s = grad_out.shape();
  for (Index n = 0; n < s.n(); ++n)
    for (Index c = 0; c < s.c(); ++c) {
      const T* gp = grad_out.plane(n, c);
      T acc = 0;
      for (Index i = 0; i < s.spatial(); ++i) acc += gp[i];
      grad_b[c] += acc;
    }
}

}  // namespace

template <class T>
Var<T> conv3d(Tape<T>& tape, const Var<T>& x, const Var<T>& weight,
              const std::optional<Var<T>>& bias, const ConvGeometry& g) {
  Tensor<T> out = kernels::conv3d(x.value(), weight.value(), bias ? &bias->value() : nullptr, g);
  const auto f = flops::conv3d(out.shape(), weight.shape().c(), weight.shape().d(), bias.has_value());
  std::vector<Var<T>> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  auto xv = x.value_ptr();
  auto wv = weight.value_ptr();
  return tape.record(
      "conv3d", std::move(out), inputs,
      [xv, wv, g](const Tensor<T>& go, typename Tape<T>::GradRefs gi) {
        if (gi[0]) kernels::conv3d_grad_input(go, *wv, g, *gi[0]);
        if (gi[1]) kernels::conv3d_grad_weight(go, *xv, g, *gi[1]);
        if (gi.size() > 2 && gi[2]) accumulate_bias_grad(go, *gi[2]);
      },
      f);
}

template <class T>
Var<T> conv3d_transposed(Tape<T>& tape, const Var<T>& x, const Var<T>& weight,
                         const std::optional<Var<T>>& bias, int stride) {
  Tensor<T> out =
      kernels::conv3d_transposed(x.value(), weight.value(), bias ? &bias->value() : nullptr, stride);
  const auto f = flops::conv3d_transposed(x.shape(), weight.shape().c(), weight.shape().d(),
                                          bias.has_value(), out.shape());
  std::vector<Var<T>> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  auto xv = x.value_ptr();
  auto wv = weight.value_ptr();
  return tape.record(
      "conv3d_transposed", std::move(out), inputs,
      [xv, wv, stride](const Tensor<T>& go, typename Tape<T>::GradRefs gi) {
        const auto t = kernels::transposed_dims(xv->shape(), wv->shape(), stride);
        if (gi[0]) kernels::transposed_grad_input(go, *wv, t, *gi[0]);
        if (gi[1]) kernels::transposed_grad_weight(go, *xv, t, *gi[1]);
        if (gi.size() > 2 && gi[2]) accumulate_bias_grad(go, *gi[2]);
      },
      f);
}

template <class T>
Var<T> layer_norm(Tape<T>& tape, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  double eps) {
  const Shape& s = x.shape();
  check_vector(gamma.value(), s.c(), "layer_norm gamma");
  check_vector(beta.value(), s.c(), "layer_norm beta");
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be > 0");
  const Index C = s.c();
  const Index S = s.spatial();
  auto xhat = std::make_shared<Tensor<T>>(s);
  auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(s.n() * S));
  Tensor<T> out(s);
  const Tensor<T>& xv = x.value();
  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& bv = beta.value();
  std::vector<T> mean(static_cast<std::size_t>(S));
  std::vector<T> var(static_cast<std::size_t>(S));
  for (Index n = 0; n < s.n(); ++n) {
    std::fill(mean.begin(), mean.end(), T(0));
    std::fill(var.begin(), var.end(), T(0));
    for (Index c = 0; c < C; ++c) {
      const T* xp = xv.plane(n, c);
      for (Index i = 0; i < S; ++i) mean[i] += xp[i];
    }
    for (auto& m : mean) m /= static_cast<T>(C);
    for (Index c = 0; c < C; ++c) {
      const T* xp = xv.plane(n, c);
      for (Index i = 0; i < S; ++i) {
        const T dlt = xp[i] - mean[i];
        var[i] += dlt * dlt;
      }
    }
    T* rs = rstd->data() + n * S;
    for (Index i = 0; i < S; ++i) {
      rs[i] = T(1) / std::sqrt(var[i] / static_cast<T>(C) + static_cast<T>(eps));
    }
    for (Index c = 0; c < C; ++c) {
      const T* xp = xv.plane(n, c);
      T* hp = xhat->plane(n, c);
      T* op = out.plane(n, c);
      for (Index i = 0; i < S; ++i) {
        hp[i] = (xp[i] - mean[i]) * rs[i];
        op[i] = hp[i] * gv[c] + bv[c];
      }
    }
  }
  auto gam = gamma.value_ptr();
  return tape.record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [xhat, rstd, gam](const Tensor<T>& go, typename Tape<T>::GradRefs gi) {
        const Shape& s = go.shape();
        const Index C = s.c();
        const Index S = s.spatial();
        for (Index n = 0; n < s.n(); ++n) {
          if (gi[1] || gi[2]) {
            for (Index c = 0; c < C; ++c) {
              const T* gp = go.plane(n, c);
              const T* hp = xhat->plane(n, c);
              T gsum = 0;
              T hsum = 0;
              for (Index i = 0; i < S; ++i) {
                gsum += gp[i];
                hsum += gp[i] * hp[i];
              }
              if (gi[1]) (*gi[1])[c] += hsum;
              if (gi[2]) (*gi[2])[c] += gsum;
            }
          }
          if (!gi[0]) continue;
          std::vector<T> mg(static_cast<std::size_t>(S), T(0));
          std::vector<T> mgh(static_cast<std::size_t>(S), T(0));
          for (Index c = 0; c < C; ++c) {
            const T* gp = go.plane(n, c);
            const T* hp = xhat->plane(n, c);
            const T gc = (*gam)[c];
            for (Index i = 0; i < S; ++i) {
              const T gy = gp[i] * gc;
              mg[i] += gy;
              mgh[i] += gy * hp[i];
            }
          }
          const T invc = T(1) / static_cast<T>(C);
          const T* rs = rstd->data() + n * S;
          for (Index c = 0; c < C; ++c) {
            const T* gp = go.plane(n, c);
            const T* hp = xhat->plane(n, c);
            T* gx = gi[0]->plane(n, c);
            const T gc = (*gam)[c];
            for (Index i = 0; i < S; ++i) {
              gx[i] += rs[i] * (gp[i] * gc - mg[i] * invc - hp[i] * mgh[i] * invc);
            }
          }
        }
      },
      flops::kLayerNorm * flops::elems(s));
}

template <class T>
Var<T> softmax(Tape<T>& tape, const Var<T>& x) {
  const Shape& s = x.shape();
  const Index L = s.w();
  const Index rows = s.numel() / L;
  auto y = std::make_shared<Tensor<T>>(s);
  const T* xp = x.value().raw();
  T* yp = y->raw();
  for (Index r = 0; r < rows; ++r) {
    const T* xr = xp + r * L;
    T* yr = yp + r * L;
    const T m = *std::max_element(xr, xr + L);
    T z = 0;
    for (Index i = 0; i < L; ++i) {
      yr[i] = std::exp(xr[i] - m);
      z += yr[i];
    }
    for (Index i = 0; i < L; ++i) yr[i] /= z;
  }
  Tensor<T> out = *y;
  return tape.record(
      "softmax", std::move(out), {x},
      [y, L, rows](const Tensor<T>& go, typename Tape<T>::GradRefs gi) {
        const T* yp = y->raw();
        const T* gp = go.raw();
        T* gx = gi[0]->raw();
        for (Index r = 0; r < rows; ++r) {
          T dotp = 0;
          for (Index i = 0; i < L; ++i) dotp += yp[r * L + i] * gp[r * L + i];
          for (Index i = 0; i < L; ++i) gx[r * L + i] += yp[r * L + i] * (gp[r * L + i] - dotp);
        }
      },
      flops::kSoftmax * flops::elems(s));
}

template <class T>
Var<T> activation(Tape<T>& tape, const Var<T>& x, Activation kind) {
  const Shape& s = x.shape();
  Tensor<T> out(s);
  const T* xp = x.value().raw();
  T* op = out.raw();
  const Index N = s.numel();
  if (kind == Activation::sigmoid) {
    for (Index i = 0; i < N; ++i) {
      const T v = xp[i];
      if (v >= 0) {
        op[i] = T(1) / (T(1) + std::exp(-v));
      } else {
        const T e = std::exp(v);
        op[i] = e / (T(1) + e);
      }
    }
    auto y = std::make_shared<Tensor<T>>(out);
    return tape.record(
        "sigmoid", std::move(out), {x},
        [y](const Tensor<T>& go, typename Tape<T>::GradRefs gi) {
          for (Index i = 0; i < go.numel(); ++i) {
            (*gi[0])[i] += go[i] * (*y)[i] * (T(1) - (*y)[i]);
          }
        },
        flops::kActivation * flops::elems(s));
  }
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  for (Index i = 0; i < N; ++i) op[i] = T(0.5) * xp[i] * (T(1) + std::erf(xp[i] * inv_sqrt2));
  auto xv = x.value_ptr();
  return tape.record(
      "gelu", std::move(out), {x},
      [xv, inv_sqrt2](const Tensor<T>& go, typename Tape<T>::GradRefs gi) {
        const T inv_sqrt_2pi = T(0.5) * std::numbers::inv_sqrtpi_v<T> * std::numbers::sqrt2_v<T>;
        for (Index i = 0; i < go.numel(); ++i) {
          const T v = (*xv)[i];
          const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
          const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
          (*gi[0])[i] += go[i] * (cdf + v * pdf);
        }
      },
      flops::kActivation * flops::elems(s));
}

template <class T>
Var<T> global_avg_pool(Tape<T>& tape, const Var<T>& x) {
  const Shape& s = x.shape();
  const Index S = s.spatial();
  Tensor<T> out(Shape(s.n(), s.c(), 1, 1, 1));
  for (Index n = 0; n < s.n(); ++n)
    for (Index c = 0; c < s.c(); ++c) {
      const T* xp = x.value().plane(n, c);
      T acc = 0;
      for (Index i = 0; i < S; ++i) acc += xp[i];
      out.at(n, c, 0, 0, 0) = acc / static_cast<T>(S);
    }
  return tape.record(
      "global_avg_pool", std::move(out), {x},
      [s](const Tensor<T>& go, typename Tape<T>::GradRefs gi) {
        const Index S = s.spatial();
        for (Index n = 0; n < s.n(); ++n)
          for (Index c = 0; c < s.c(); ++c) {
            const T g = go.at(n, c, 0, 0, 0) / static_cast<T>(S);
            T* gx = gi[0]->plane(n, c);
            for (Index i = 0; i < S; ++i) gx[i] += g;
          }
      },
      flops::elems(s));
}

template <class T>
Var<T> channel_pool(Tape<T>& tape, const Var<T>& x) {
  const Shape& s = x.shape();
  const Index S = s.spatial();
  const Index C = s.c();
  Tensor<T> out(s.with_channels(2));
  auto argmax = std::make_shared<std::vector<std::int32_t>>(static_cast<std::size_t>(s.n() * S), 0);
  for (Index n = 0; n < s.n(); ++n) {
    T* mean = out.plane(n, 0);
    T* mx = out.plane(n, 1);
    std::int32_t* am = argmax->data() + n * S;
    const T* x0 = x.value().plane(n, 0);
    for (Index i = 0; i < S; ++i) {
      mean[i] = x0[i];
      mx[i] = x0[i];
    }
    for (Index c = 1; c < C; ++c) {
      const T* xp = x.value().plane(n, c);
      for (Index i = 0; i < S; ++i) {
        mean[i] += xp[i];
        if (xp[i] > mx[i]) {
          mx[i] = xp[i];
          am[i] = static_cast<std::int32_t>(c);
        }
      }
    }
    for (Index i = 0; i < S; ++i) mean[i] /= static_cast<T>(C);
  }
  return tape.record(
      "channel_pool", std::move(out), {x},
      [argmax, s](const Tensor<T>& go, typename Tape<T>::GradRefs gi) {
        const Index S = s.spatial();
        const T invc = T(1) / static_cast<T>(s.c());
        for (Index n = 0; n < s.n(); ++n) {
          const T* gm = go.plane(n, 0);
          const T* gx_max = go.plane(n, 1);
          const std::int32_t* am = argmax->data() + n * S;
          for (Index c = 0; c < s.c(); ++c) {
            T* gx = gi[0]->plane(n, c);
            for (Index i = 0; i < S; ++i) gx[i] += gm[i] * invc;
          }
          for (Index i = 0; i < S; ++i) gi[0]->plane(n, am[i])[i] += gx_max[i];
        }
      },
      flops::kChannelPool * flops::elems(s));
}

namespace {

struct Broadcast {
  Shape out;
  std::array<Index, 5> sa{}, sb{};
};

Broadcast broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast r;
  std::array<Index, 5> ea{}, eb{};
  for (std::size_t i = 0; i < 5; ++i) {
    if (a[i] != b[i] && a[i] != 1 && b[i] != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + a.str() + " with " + b.str() +
                       " (dim " + std::to_string(i) + ")");
    }
    r.out.dims[i] = std::max(a[i], b[i]);
  }
  Index ma = 1, mb = 1;
  for (int i = 4; i >= 0; --i) {
    ea[static_cast<std::size_t>(i)] = ma;
    eb[static_cast<std::size_t>(i)] = mb;
    ma *= a[static_cast<std::size_t>(i)];
    mb *= b[static_cast<std::size_t>(i)];
  }
  for (std::size_t i = 0; i < 5; ++i) {
    r.sa[i] = a[i] == 1 ? 0 : ea[i];
    r.sb[i] = b[i] == 1 ? 0 : eb[i];
  }
  return r;
}

// fn(out_index, a_index, b_index) over the broadcast output.
template <class Fn>
void for_each_broadcast(const Broadcast& bc, Fn&& fn) {
  const auto& o = bc.out.dims;
  Index oi = 0;
  for (Index n = 0; n < o[0]; ++n)
    for (Index c = 0; c < o[1]; ++c)
      for (Index d = 0; d < o[2]; ++d)
        for (Index h = 0; h < o[3]; ++h) {
          Index ai = n * bc.sa[0] + c * bc.sa[1] + d * bc.sa[2] + h * bc.sa[3];
          Index bi = n * bc.sb[0] + c * bc.sb[1] + d * bc.sb[2] + h * bc.sb[3];
          for (Index w = 0; w < o[4]; ++w, ++oi) fn(oi, ai + w * bc.sa[4], bi + w * bc.sb[4]);
        }
}

}  // namespace

template <class T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  const Broadcast bc = broadcast(a.shape(), b.shape(), "add");
  Tensor<T> out(bc.out);
  const T* ap = a.value().raw();
  const T* bp = b.value().raw();
  T* op = out.raw();
  if (a.shape() == b.shape()) {
    for (Index i = 0; i < out.numel(); ++i) op[i] = ap[i] + bp[i];
  } else {
    for_each_broadcast(bc, [&](Index o, Index ia, Index ib) { op[o] = ap[ia] + bp[ib]; });
  }
  return tape.record(
      "add", std::move(out), {a, b},
      [bc](const Tensor<T>& go, typename Tape<T>::GradRefs gi) {
        const T* gp = go.raw();
        T* ga = gi[0] ? gi[0]->raw() : nullptr;
        T* gb = gi[1] ? gi[1]->raw() : nullptr;
        for_each_broadcast(bc, [&](Index o, Index ia, Index ib) {
          if (ga) ga[ia] += gp[o];
          if (gb) gb[ib] += gp[o];
        });
      },
      flops::elems(bc.out));
}

template <class T>
Var<T> mul(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  const Broadcast bc = broadcast(a.shape(), b.shape(), "mul");
  Tensor<T> out(bc.out);
  const T* ap = a.value().raw();
  const T* bp = b.value().raw();
  T* op = out.raw();
  if (a.shape() == b.shape()) {
    for (Index i = 0; i < out.numel(); ++i) op[i] = ap[i] * bp[i];
  } else {
    for_each_broadcast(bc, [&](Index o, Index ia, Index ib) { op[o] = ap[ia] * bp[ib]; });
  }
  auto av = a.value_ptr();
  auto bv = b.value_ptr();
  return tape.record(
      "mul", std::move(out), {a, b},
      [bc, av, bv](const Tensor<T>& go, typename Tape<T>::GradRefs gi) {
        const T* gp = go.raw();
        const T* ap = av->raw();
        const T* bp = bv->raw();
        T* ga = gi[0] ? gi[0]->raw() : nullptr;
        T* gb = gi[1] ? gi[1]->raw() : nullptr;
        for_each_broadcast(bc, [&](Index o, Index ia, Index ib) {
          if (ga) ga[ia] += gp[o] * bp[ib];
          if (gb) gb[ib] += gp[o] * ap[ia];
        });
      },
      flops::elems(bc.out));
}

template <class T>
Var<T> scale(Tape<T>& tape, const Var<T>& x, double s) {
  Tensor<T> out(x.shape());
  const T sv = static_cast<T>(s);
  for (Index i = 0; i < out.numel(); ++i) out[i] = x.value()[i] * sv;
  return tape.record(
      "scale", std::move(out), {x},
      [sv](const Tensor<T>& go, typename Tape<T>::GradRefs gi) {
        for (Index i = 0; i < go.numel(); ++i) (*gi[0])[i] += go[i] * sv;
      },
      flops::elems(x.shape()));
}

template <class T>
Var<T> sum(Tape<T>& tape, const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  Tensor<T> out(Shape(1, 1, 1, 1, 1), acc);
  return tape.record(
      "sum", std::move(out), {x},
      [](const Tensor<T>& go, typename Tape<T>::GradRefs gi) {
        const T g = go[0];
        for (auto& v : gi[0]->data()) v += g;
      },
      flops::elems(x.shape()));
}

template <class T>
Var<T> slice_channels(Tape<T>& tape, const Var<T>& x, Index begin, Index count) {
  const Shape& s = x.shape();
  if (begin < 0 || count < 1 || begin + count > s.c()) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + std::to_string(s.c()) +
                     " channels");
  }
  Tensor<T> out(s.with_channels(count));
  const Index S = s.spatial();
  for (Index n = 0; n < s.n(); ++n) {
    std::copy_n(x.value().plane(n, begin), count * S, out.plane(n, 0));
  }
  return tape.record(
      "slice_channels", std::move(out), {x},
      [begin, count, S](const Tensor<T>& go, typename Tape<T>::GradRefs gi) {
        for (Index n = 0; n < go.shape().n(); ++n) {
          const T* gp = go.plane(n, 0);
          T* gx = gi[0]->plane(n, begin);
          for (Index i = 0; i < count * S; ++i) gx[i] += gp[i];
        }
      },
      0);
}

template <class T>
Var<T> concat_channels(Tape<T>& tape, const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = parts.front().shape();
  Index total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.n() != s0.n() || s.d() != s0.d() || s.h() != s0.h() || s.w() != s0.w()) {
      throw ShapeError("concat_channels: " + s.str() + " does not match " + s0.str() +
                       " outside the channel dim");
    }
    total += s.c();
  }
  Tensor<T> out(s0.with_channels(total));
  const Index S = s0.spatial();
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    for (Index n = 0; n < s0.n(); ++n) {
      std::copy_n(p.value().plane(n, 0), p.shape().c() * S, out.plane(n, off));
    }
    off += p.shape().c();
  }
  return tape.record(
      "concat_channels", std::move(out), parts,
      [offsets, S](const Tensor<T>& go, typename Tape<T>::GradRefs gi) {
        for (std::size_t k = 0; k < gi.size(); ++k) {
          if (!gi[k]) continue;
          const Index ck = gi[k]->shape().c();
          for (Index n = 0; n < go.shape().n(); ++n) {
            const T* gp = go.plane(n, offsets[k]);
            T* gx = gi[k]->plane(n, 0);
            for (Index i = 0; i < ck * S; ++i) gx[i] += gp[i];
          }
        }
      },
      0);
}

template <class T>
Var<T> dropout(Tape<T>& tape, const Var<T>& x, double p, std::mt19937_64* rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: probability must be in [0, 1)");
  if (p == 0.0 || rng == nullptr) return x;
  auto mask = std::make_shared<Tensor<T>>(x.shape());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (auto& m : mask->data()) m = u(*rng) >= p ? keep : T(0);
  Tensor<T> out(x.shape());
  for (Index i = 0; i < out.numel(); ++i) out[i] = x.value()[i] * (*mask)[i];
  return tape.record(
      "dropout", std::move(out), {x},
      [mask](const Tensor<T>& go, typename Tape<T>::GradRefs gi) {
        for (Index i = 0; i < go.numel(); ++i) (*gi[0])[i] += go[i] * (*mask)[i];
      },
      flops::elems(x.shape()));
}

#define TRANSLK_INSTANTIATE_OPS(T)                                                                 \
  template Tensor<T> kernels::conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,         \
                                     const ConvGeometry&);                                         \
  template void kernels::conv3d_grad_input(const Tensor<T>&, const Tensor<T>&,                     \
                                           const ConvGeometry&, Tensor<T>&);                       \
  template void kernels::conv3d_grad_weight(const Tensor<T>&, const Tensor<T>&,                    \
                                            const ConvGeometry&, Tensor<T>&);                      \
  template Tensor<T> kernels::conv3d_transposed(const Tensor<T>&, const Tensor<T>&,                \
                                                const Tensor<T>*, int);                            \
  template Var<T> conv3d(Tape<T>&, const Var<T>&, const Var<T>&, const std::optional<Var<T>>&,     \
                         const ConvGeometry&);                                                     \
  template Var<T> conv3d_transposed(Tape<T>&, const Var<T>&, const Var<T>&,                        \
                                    const std::optional<Var<T>>&, int);                            \
  template Var<T> layer_norm(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&, double);       \
  template Var<T> softmax(Tape<T>&, const Var<T>&);                                                \
  template Var<T> activation(Tape<T>&, const Var<T>&, Activation);                                 \
  template Var<T> global_avg_pool(Tape<T>&, const Var<T>&);                                        \
  template Var<T> channel_pool(Tape<T>&, const Var<T>&);                                           \
  template Var<T> add(Tape<T>&, const Var<T>&, const Var<T>&);                                     \
  template Var<T> mul(Tape<T>&, const Var<T>&, const Var<T>&);                                     \
  template Var<T> scale(Tape<T>&, const Var<T>&, double);                                          \
  template Var<T> sum(Tape<T>&, const Var<T>&);                                                    \
  template Var<T> slice_channels(Tape<T>&, const Var<T>&, Index, Index);                           \
  template Var<T> concat_channels(Tape<T>&, const std::vector<Var<T>>&);                           \
  template Var<T> dropout(Tape<T>&, const Var<T>&, double, std::mt19937_64*);

TRANSLK_INSTANTIATE_OPS(float)
TRANSLK_INSTANTIATE_OPS(double)
TRANSLK_INSTANTIATE_OPS(long double)

}  // namespace translk
