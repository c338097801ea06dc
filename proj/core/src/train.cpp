#include "translk/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <ostream>
#include <random>

#include "translk/flops.hpp"

namespace translk {

namespace {

void check_labels(const Shape& logits, const LabelVolume& labels) {
  const Shape expect(logits.n(), 1, logits.d(), logits.h(), logits.w());
  if (labels.shape != expect || labels.data.size() != static_cast<std::size_t>(expect.numel())) {
    throw ShapeError("labels " + labels.shape.str() + " do not match logits " + logits.str());
  }
  const Index k = logits.c();
  for (std::int32_t y : labels.data) {
    if (y < 0 || y >= k) {
      throw std::out_of_range("label " + std::to_string(y) + " outside [0, " + std::to_string(k) +
                              ")");
    }
  }
}

}  // namespace

template <class T>
Var<T> dice_ce_loss(Tape<T>& tape, const Var<T>& logits, const LabelVolume& labels, double eps) {
  const Shape& s = logits.shape();
  check_labels(s, labels);
  const Index K = s.c();
  const Index S = s.spatial();
  const Index M = s.n() * S;
  // Softmax probabilities, laid out like the logits.
  auto probs = std::make_shared<Tensor<T>>(s);
  double ce = 0.0;
  std::vector<double> inter(static_cast<std::size_t>(K), 0.0), psum(inter), gsum(inter);
  const Tensor<T>& z = logits.value();
  for (Index n = 0; n < s.n(); ++n)
    for (Index v = 0; v < S; ++v) {
      T m = z.plane(n, 0)[v];
      for (Index k = 1; k < K; ++k) m = std::max(m, z.plane(n, k)[v]);
      T zsum = 0;
      for (Index k = 0; k < K; ++k) zsum += std::exp(z.plane(n, k)[v] - m);
      const std::int32_t y = labels.data[static_cast<std::size_t>(n * S + v)];
      for (Index k = 0; k < K; ++k) {
        const T p = std::exp(z.plane(n, k)[v] - m) / zsum;
        probs->plane(n, k)[v] = p;
        psum[static_cast<std::size_t>(k)] += p;
      }
      ce -= static_cast<double>(z.plane(n, y)[v] - m - std::log(zsum));
      inter[static_cast<std::size_t>(y)] += probs->plane(n, y)[v];
      gsum[static_cast<std::size_t>(y)] += 1.0;
    }
  ce /= static_cast<double>(M);
  double dice = 0.0;
  for (Index k = 0; k < K; ++k) {
    const auto i = static_cast<std::size_t>(k);
    dice += (2.0 * inter[i] + eps) / (psum[i] + gsum[i] + eps);
  }
  const double loss = ce + 1.0 - dice / static_cast<double>(K);

  auto label_data = std::make_shared<std::vector<std::int32_t>>(labels.data);
  auto backward = [probs, label_data, inter, psum, gsum, eps, K, S, M](
                      const Tensor<T>& go, typename Tape<T>::GradRefs gi) {
    if (!gi[0]) return;
    const Shape& s = probs->shape();
    const double g = static_cast<double>(go[0]);
    // dDice/dp_k(v) = -(1/K) * (2 y_k (P + G + eps) - (2 I + eps)) / (P + G + eps)^2
    std::vector<double> a(static_cast<std::size_t>(K)), b(static_cast<std::size_t>(K));
    for (Index k = 0; k < K; ++k) {
      const auto i = static_cast<std::size_t>(k);
      const double den = psum[i] + gsum[i] + eps;
      a[i] = -2.0 / (static_cast<double>(K) * den);
      b[i] = (2.0 * inter[i] + eps) / (static_cast<double>(K) * den * den);
    }
    std::vector<double> gp(static_cast<std::size_t>(K));
    for (Index n = 0; n < s.n(); ++n)
      for (Index v = 0; v < S; ++v) {
        const std::int32_t y = (*label_data)[static_cast<std::size_t>(n * S + v)];
        double dot = 0.0;
        for (Index k = 0; k < K; ++k) {
          const auto i = static_cast<std::size_t>(k);
          gp[i] = b[i] + (k == y ? a[i] : 0.0);
          dot += gp[i] * probs->plane(n, k)[v];
        }
        for (Index k = 0; k < K; ++k) {
          const double p = probs->plane(n, k)[v];
          const double dce = (p - (k == y ? 1.0 : 0.0)) / static_cast<double>(M);
          const double ddice = p * (gp[static_cast<std::size_t>(k)] - dot);
          gi[0]->plane(n, k)[v] += static_cast<T>(g * (dce + ddice));
        }
      }
  };
  // Softmax plus the per-voxel log and the three class reductions.
  const flops::Count f = flops::elems(s) * (flops::kSoftmax + 3) + static_cast<flops::Count>(M);
  return tape.record("dice_ce_loss", Tensor<T>(Shape(), static_cast<T>(loss)), {logits},
                     std::move(backward), f);
}

template <class T>
LabelVolume argmax_labels(const Tensor<T>& logits) {
  const Shape& s = logits.shape();
  LabelVolume out(Shape(s.n(), 1, s.d(), s.h(), s.w()));
  const Index S = s.spatial();
  for (Index n = 0; n < s.n(); ++n)
    for (Index v = 0; v < S; ++v) {
      Index best = 0;
      for (Index k = 1; k < s.c(); ++k) {
        if (logits.plane(n, k)[v] > logits.plane(n, best)[v]) best = k;
      }
      out.data[static_cast<std::size_t>(n * S + v)] = static_cast<std::int32_t>(best);
    }
  return out;
}

double dsc(const LabelVolume& pred, const LabelVolume& truth, std::int32_t class_id) {
  if (pred.shape != truth.shape) {
    throw ShapeError("dsc: " + pred.shape.str() + " vs " + truth.shape.str());
  }
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool pa = pred.data[i] == class_id;
    const bool pb = truth.data[i] == class_id;
    a += pa;
    b += pb;
    both += pa && pb;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

SyntheticVolume gen_synthetic(std::uint64_t seed, std::uint64_t index, Index size,
                              Index in_channels, Index num_classes) {
  if (size < 1 || size % 32 != 0) {
    throw ShapeError("synthetic volume size " + std::to_string(size) + " must be a multiple of 32");
  }
  if (num_classes < 2) throw std::invalid_argument("synthetic data needs at least 2 classes");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  const Shape ls(1, 1, size, size, size);
  const double D = static_cast<double>(size);
  const Index voxels = ls.numel();
  const Index min_voxels = (voxels + 99) / 100;

  SyntheticVolume vol;
  for (int attempt = 0;; ++attempt) {
    if (attempt == 1000) throw std::runtime_error("synthetic generator failed to place classes");
    vol.ellipsoids.clear();
    vol.labels = LabelVolume(ls);
    std::uniform_real_distribution<double> radius(0.15 * D, 0.32 * D);
    for (std::int32_t c = 1; c < num_classes; ++c) {
      Ellipsoid e;
      e.label = c;
      for (int a = 0; a < 3; ++a) {
        e.radii[static_cast<std::size_t>(a)] = radius(rng);
        const double r = e.radii[static_cast<std::size_t>(a)];
        e.center[static_cast<std::size_t>(a)] = std::uniform_real_distribution<double>(r, D - r)(rng);
      }
      vol.ellipsoids.push_back(e);
    }
    for (const Ellipsoid& e : vol.ellipsoids) {
      for (Index z = 0; z < size; ++z)
        for (Index y = 0; y < size; ++y)
          for (Index x = 0; x < size; ++x) {
            const double dz = (static_cast<double>(z) + 0.5 - e.center[0]) / e.radii[0];
            const double dy = (static_cast<double>(y) + 0.5 - e.center[1]) / e.radii[1];
            const double dx = (static_cast<double>(x) + 0.5 - e.center[2]) / e.radii[2];
            if (dz * dz + dy * dy + dx * dx <= 1.0) {
              vol.labels.data[static_cast<std::size_t>((z * size + y) * size + x)] = e.label;
            }
          }
    }
    std::vector<Index> counts(static_cast<std::size_t>(num_classes), 0);
    for (std::int32_t l : vol.labels.data) ++counts[static_cast<std::size_t>(l)];
    bool ok = true;
    for (Index c = 1; c < num_classes; ++c) ok = ok && counts[static_cast<std::size_t>(c)] >= min_voxels;
    if (ok) break;
  }
  vol.image = Tensor<float>(Shape(1, in_channels, size, size, size));
  std::normal_distribution<double> noise(0.0, 0.1);
  const double scale = 1.0 / static_cast<double>(num_classes - 1);
  for (Index ch = 0; ch < in_channels; ++ch) {
    float* p = vol.image.plane(0, ch);
    for (Index v = 0; v < voxels; ++v) {
      p[v] = static_cast<float>(vol.labels.data[static_cast<std::size_t>(v)] * scale + noise(rng));
    }
  }
  return vol;
}

SegBatch make_batch(std::uint64_t seed, std::uint64_t first, Index n, Index size,
                    Index in_channels, Index num_classes) {
  SegBatch b;
  b.images = Tensor<float>(Shape(n, in_channels, size, size, size));
  b.labels = LabelVolume(Shape(n, 1, size, size, size));
  const Index vox = size * size * size;
  for (Index i = 0; i < n; ++i) {
    SyntheticVolume v = gen_synthetic(seed, first + static_cast<std::uint64_t>(i), size,
                                      in_channels, num_classes);
    std::copy(v.image.data().begin(), v.image.data().end(), b.images.plane(i, 0));
    std::copy(v.labels.data.begin(), v.labels.data.end(),
              b.labels.data.begin() + static_cast<std::ptrdiff_t>(i * vox));
  }
  return b;
}

AdamW::AdamW(const ParamStore<float>& store, double weight_decay) : wd_(weight_decay) {
  for (ParamId i = 0; i < store.size(); ++i) {
    m_.emplace_back(static_cast<std::size_t>(store.value(i).numel()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(store.value(i).numel()), 0.0);
  }
}

void AdamW::step(ParamStore<float>& store, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++t_;
  if (lr == 0.0) return;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (ParamId i = 0; i < store.size(); ++i) {
    auto w = store.value(i).data();
    auto g = store.grad(i).data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      m[j] = b1 * m[j] + (1 - b1) * gj;
      v[j] = b2 * v[j] + (1 - b2) * gj * gj;
      const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + eps) + wd_ * w[j];
      w[j] = static_cast<float>(w[j] - lr * update);
    }
  }
}

double cosine_lr(double peak, int step, int total) {
  if (total <= 0) return peak;
  return 0.5 * peak * (1.0 + std::cos(std::numbers::pi * step / total));
}

LabelVolume predict_labels(const Network& net, ParamStore<float>& params,
                           const Tensor<float>& images) {
  const Shape& s = images.shape();
  LabelVolume out(Shape(s.n(), 1, s.d(), s.h(), s.w()));
  const Index per = s.c() * s.spatial();
  for (Index n = 0; n < s.n(); ++n) {
    std::vector<float> one(images.raw() + n * per, images.raw() + (n + 1) * per);
    Tape<float> tape(false);
    Ctx<float> ctx{tape, params, nullptr};
    auto logits = forward(ctx, net, Var<float>::constant(
                                         Tensor<float>(Shape(1, s.c(), s.d(), s.h(), s.w()), one)));
    LabelVolume l = argmax_labels(logits.value());
    std::copy(l.data.begin(), l.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(n * s.spatial()));
  }
  return out;
}

double clip_grad_norm(ParamStore<float>& store, double max_norm) {
  double sq = 0.0;
  for (ParamId i = 0; i < store.size(); ++i)
    for (float g : store.grad(i).data()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const auto scale = static_cast<float>(max_norm / norm);
    for (ParamId i = 0; i < store.size(); ++i)
      for (float& g : store.grad(i).data()) g *= scale;
  }
  return norm;
}

TrainResult train_toy(const Config& cfg, const StepCallback& on_step) {
  const auto start = std::chrono::steady_clock::now();
  TrainResult res;
  res.net = build_network(cfg.model);
  res.params = std::make_unique<ParamStore<float>>(res.net->layout, cfg.seed);
  TrainReport& rep = res.report;
  rep.seed = cfg.seed;
  rep.config_hash = config_hash(cfg);
  const auto& m = cfg.model;
  const auto& t = cfg.train;
  AdamW opt(*res.params, t.weight_decay);
  std::mt19937_64 drop_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  for (int step = 0; step < t.steps; ++step) {
    SegBatch b = make_batch(cfg.seed, static_cast<std::uint64_t>(step) * t.batch_size,
                            t.batch_size, t.volume, m.in_channels, m.num_classes);
    res.params->zero_grad();
    Tape<float> tape;
    Ctx<float> ctx{tape, *res.params, &drop_rng};
    Var<float> logits = forward(ctx, *res.net, Var<float>::constant(std::move(b.images)));
    Var<float> loss = dice_ce_loss(tape, logits, b.labels);
    const double lv = loss.value()[0];
    rep.losses.push_back(lv);
    if (on_step) on_step(step, lv);
    if (!std::isfinite(lv)) {
      rep.diverged = true;
      break;
    }
    tape.backward(loss);
    if (t.grad_clip > 0.0) clip_grad_norm(*res.params, t.grad_clip);
    opt.step(*res.params, cosine_lr(t.lr, step, t.steps));
  }
  SegBatch eval = make_batch(cfg.seed, kEvalIndexBase, t.eval_batch, t.volume, m.in_channels,
                             m.num_classes);
  LabelVolume pred = predict_labels(*res.net, *res.params, eval.images);
  double fg = 0.0;
  for (std::int32_t c = 0; c < m.num_classes; ++c) {
    rep.dsc.push_back(dsc(pred, eval.labels, c));
    if (c > 0) fg += rep.dsc.back();
  }
  rep.mean_foreground_dsc = fg / static_cast<double>(m.num_classes - 1);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

void write_report_csv(std::ostream& os, const TrainReport& r) {
  os.precision(10);
  os << "step,loss\n";
  for (std::size_t i = 0; i < r.losses.size(); ++i) os << i << "," << r.losses[i] << "\n";
  os << "# dsc,class,value\n";
  for (std::size_t c = 0; c < r.dsc.size(); ++c) os << "# dsc," << c << "," << r.dsc[c] << "\n";
  os << "# mean_foreground_dsc," << r.mean_foreground_dsc << "\n"
     << "# seconds," << r.seconds << "\n"
     << "# seed," << r.seed << "\n"
     << "# config_hash," << std::hex << r.config_hash << std::dec << "\n"
     << "# diverged," << (r.diverged ? 1 : 0) << "\n";
}

void write_report(const std::filesystem::path& dir, const TrainReport& r, const Config& cfg) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "report.csv");
  write_report_csv(csv, r);
  std::ofstream snap(dir / "config.txt");
  snap << to_text(cfg);
  if (!csv || !snap) throw std::runtime_error("failed writing report to " + dir.string());
}

template Var<float> dice_ce_loss(Tape<float>&, const Var<float>&, const LabelVolume&, double);
template Var<double> dice_ce_loss(Tape<double>&, const Var<double>&, const LabelVolume&, double);
template Var<long double> dice_ce_loss(Tape<long double>&, const Var<long double>&,
                                       const LabelVolume&, double);
template LabelVolume argmax_labels(const Tensor<float>&);
template LabelVolume argmax_labels(const Tensor<double>&);

}  // namespace translk
