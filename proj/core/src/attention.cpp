#include "translk/attention.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "translk/flops.hpp"

namespace translk {

const char* axis_name(Axis axis) {
  switch (axis) {
    case Axis::D:
      return "D";
    case Axis::H:
      return "H";
    case Axis::W:
      return "W";
  }
  return "?";
}

void check_heads(Index channels, Index heads) {
  if (heads < 1 || channels % heads != 0) {
    throw ShapeError("head count N = " + std::to_string(heads) + " must divide C = " +
                     std::to_string(channels));
  }
}

namespace {

// Sequence geometry inside one spatial volume: `bases` are the flat offsets
// of the first element of each sequence, elements are `stride` apart.
struct AxisLayout {
  Index length = 1;
  Index stride = 1;
  std::vector<Index> bases;
};

AxisLayout axis_layout(const Shape& s, Axis axis) {
  AxisLayout a;
  const Index d = s.d(), h = s.h(), w = s.w();
  switch (axis) {
    case Axis::D:
      a.length = d;
      a.stride = h * w;
      for (Index i = 0; i < h * w; ++i) a.bases.push_back(i);
      break;
    case Axis::H:
      a.length = h;
      a.stride = w;
      for (Index z = 0; z < d; ++z)
        for (Index x = 0; x < w; ++x) a.bases.push_back(z * h * w + x);
      break;
    case Axis::W:
      a.length = w;
      a.stride = 1;
      for (Index z = 0; z < d; ++z)
        for (Index y = 0; y < h; ++y) a.bases.push_back((z * h + y) * w);
      break;
  }
  return a;
}

template <class T>
void gather(const T* src, Index ch, Index S, Index base, Index stride, Index L, T* dst) {
  for (Index c = 0; c < ch; ++c)
    for (Index i = 0; i < L; ++i) dst[c * L + i] = src[c * S + base + i * stride];
}

// Row-wise softmax(scale * Q^T K) for Q, K stored (ch x L).
template <class T>
void attention_probs(const T* q, const T* k, Index ch, Index L, T scale, T* probs) {
  std::fill(probs, probs + L * L, T(0));
  for (Index c = 0; c < ch; ++c) {
    const T* qc = q + c * L;
    const T* kc = k + c * L;
    for (Index i = 0; i < L; ++i) {
      const T qi = qc[i];
      T* row = probs + i * L;
      for (Index j = 0; j < L; ++j) row[j] += qi * kc[j];
    }
  }
  for (Index i = 0; i < L; ++i) {
    T* row = probs + i * L;
    T m = row[0] * scale;
    for (Index j = 0; j < L; ++j) {
      row[j] *= scale;
      m = std::max(m, row[j]);
    }
    T z = 0;
    for (Index j = 0; j < L; ++j) {
      row[j] = std::exp(row[j] - m);
      z += row[j];
    }
    for (Index j = 0; j < L; ++j) row[j] /= z;
  }
}

}  // namespace

template <class T>
HeadView<T> axial_attention(Tape<T>& tape, const HeadView<T>& q, const HeadView<T>& k,
                            const HeadView<T>& v, Axis axis) {
  const Shape& s = q.data.shape();
  if (k.data.shape() != s || v.data.shape() != s) {
    throw ShapeError(std::string("axial_attention: q ") + s.str() + ", k " + k.data.shape().str() +
                     ", v " + v.data.shape().str() + " must match");
  }
  if (q.heads != k.heads || q.heads != v.heads) {
    throw ShapeError("axial_attention: head counts differ");
  }
  check_heads(s.c(), q.heads);
  const Index N = q.heads;
  const Index ch = s.c() / N;
  const Index S = s.spatial();
  const auto layout = std::make_shared<AxisLayout>(axis_layout(s, axis));
  const Index L = layout->length;
  const T scale = T(1) / std::sqrt(static_cast<T>(ch));

  Tensor<T> out(s);
  std::vector<T> qb(ch * L), kb(ch * L), vb(ch * L), probs(L * L);
  for (Index n = 0; n < s.n(); ++n)
    for (Index hd = 0; hd < N; ++hd) {
      const Index c0 = hd * ch;
      const T* qp = q.data.value().plane(n, c0);
      const T* kp = k.data.value().plane(n, c0);
      const T* vp = v.data.value().plane(n, c0);
      T* op = out.plane(n, c0);
      for (Index base : layout->bases) {
        gather(qp, ch, S, base, layout->stride, L, qb.data());
        gather(kp, ch, S, base, layout->stride, L, kb.data());
        gather(vp, ch, S, base, layout->stride, L, vb.data());
        attention_probs(qb.data(), kb.data(), ch, L, scale, probs.data());
        for (Index c = 0; c < ch; ++c) {
          const T* vc = vb.data() + c * L;
          for (Index i = 0; i < L; ++i) {
            const T* row = probs.data() + i * L;
            T acc = 0;
            for (Index j = 0; j < L; ++j) acc += row[j] * vc[j];
            op[c * S + base + i * layout->stride] = acc;
          }
        }
      }
    }

  auto qv = q.data.value_ptr();
  auto kv = k.data.value_ptr();
  auto vv = v.data.value_ptr();
  Var<T> result = tape.record(
      "axial_attention", std::move(out), {q.data, k.data, v.data},
      [qv, kv, vv, layout, N, ch, scale](const Tensor<T>& go, typename Tape<T>::GradRefs gi) {
        const Shape& s = go.shape();
        const Index S = s.spatial();
        const Index L = layout->length;
        const Index st = layout->stride;
        std::vector<T> qb(ch * L), kb(ch * L), vb(ch * L), gb(ch * L), probs(L * L), dp(L * L);
        for (Index n = 0; n < s.n(); ++n)
          for (Index hd = 0; hd < N; ++hd) {
            const Index c0 = hd * ch;
            for (Index base : layout->bases) {
              gather(qv->plane(n, c0), ch, S, base, st, L, qb.data());
              gather(kv->plane(n, c0), ch, S, base, st, L, kb.data());
              gather(vv->plane(n, c0), ch, S, base, st, L, vb.data());
              gather(go.plane(n, c0), ch, S, base, st, L, gb.data());
              attention_probs(qb.data(), kb.data(), ch, L, scale, probs.data());
              // dV[c][j] = sum_i P[i][j] gO[c][i]; dP[i][j] = sum_c gO[c][i] V[c][j]
              std::fill(dp.begin(), dp.end(), T(0));
              for (Index c = 0; c < ch; ++c) {
                const T* gc = gb.data() + c * L;
                const T* vc = vb.data() + c * L;
                T* gv = gi[2] ? gi[2]->plane(n, c0 + c) + base : nullptr;
                for (Index i = 0; i < L; ++i) {
                  const T g = gc[i];
                  const T* prow = probs.data() + i * L;
                  T* drow = dp.data() + i * L;
                  for (Index j = 0; j < L; ++j) drow[j] += g * vc[j];
                  if (gv) {
                    for (Index j = 0; j < L; ++j) gv[j * st] += prow[j] * g;
                  }
                }
              }
              if (!gi[0] && !gi[1]) continue;
              // dS = P * (dP - rowsum(P * dP)), stored in place in dp.
              for (Index i = 0; i < L; ++i) {
                const T* prow = probs.data() + i * L;
                T* drow = dp.data() + i * L;
                T rs = 0;
                for (Index j = 0; j < L; ++j) rs += prow[j] * drow[j];
                for (Index j = 0; j < L; ++j) drow[j] = prow[j] * (drow[j] - rs) * scale;
              }
              for (Index c = 0; c < ch; ++c) {
                const T* qc = qb.data() + c * L;
                const T* kc = kb.data() + c * L;
                T* gq = gi[0] ? gi[0]->plane(n, c0 + c) + base : nullptr;
                T* gk = gi[1] ? gi[1]->plane(n, c0 + c) + base : nullptr;
                for (Index i = 0; i < L; ++i) {
                  const T* drow = dp.data() + i * L;
                  if (gq) {
                    T acc = 0;
                    for (Index j = 0; j < L; ++j) acc += drow[j] * kc[j];
                    gq[i * st] += acc;
                  }
                  if (gk) {
                    const T qi = qc[i];
                    for (Index j = 0; j < L; ++j) gk[j * st] += drow[j] * qi;
                  }
                }
              }
            }
          }
      },
      flops::axial_attention(s, N, L));
  return {result, N};
}

DesaParams make_desa(ParamLayout& layout, const std::string& prefix, Index channels, Index heads,
                     double dropout, DesaAxisMode mode) {
  check_heads(channels, heads);
  DesaParams p;
  p.q = make_pointwise(layout, prefix + ".q", channels, channels);
  p.k = make_pointwise(layout, prefix + ".k", channels, channels);
  p.v = make_pointwise(layout, prefix + ".v", channels, channels);
  p.out = make_pointwise(layout, prefix + ".out", channels, channels);
  p.heads = heads;
  p.dropout = dropout;
  p.mode = mode;
  return p;
}

template <class T>
Var<T> desa(Ctx<T>& ctx, const Var<T>& q_src, const Var<T>& k_src, const Var<T>& v_src,
            const DesaParams& p) {
  if (k_src.shape() != q_src.shape() || v_src.shape() != q_src.shape()) {
    throw ShapeError("desa: q/k/v sources " + q_src.shape().str() + ", " + k_src.shape().str() +
                     ", " + v_src.shape().str() + " must match");
  }
  const auto q = split_heads(apply(ctx, p.q, q_src), p.heads);
  const auto k = split_heads(apply(ctx, p.k, k_src), p.heads);
  auto x = split_heads(apply(ctx, p.v, v_src), p.heads);
  if (p.mode == DesaAxisMode::chained) {
    for (Axis axis : {Axis::H, Axis::W, Axis::D}) x = axial_attention(ctx.tape, q, k, x, axis);
  } else {
    x = axial_attention(ctx.tape, q, k, x, Axis::D);
  }
  Var<T> y = apply(ctx, p.out, merge_heads(x));
  return dropout(ctx.tape, y, p.dropout, ctx.dropout_rng);
}

template HeadView<float> axial_attention(Tape<float>&, const HeadView<float>&,
                                         const HeadView<float>&, const HeadView<float>&, Axis);
template HeadView<double> axial_attention(Tape<double>&, const HeadView<double>&,
                                          const HeadView<double>&, const HeadView<double>&, Axis);
template HeadView<long double> axial_attention(Tape<long double>&, const HeadView<long double>&,
                                               const HeadView<long double>&,
                                               const HeadView<long double>&, Axis);
template Var<long double> desa(Ctx<long double>&, const Var<long double>&,
                               const Var<long double>&, const Var<long double>&,
                               const DesaParams&);
template Var<float> desa(Ctx<float>&, const Var<float>&, const Var<float>&, const Var<float>&,
                         const DesaParams&);
template Var<double> desa(Ctx<double>&, const Var<double>&, const Var<double>&,
                          const Var<double>&, const DesaParams&);

}  // namespace translk
