#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "translk/autograd.hpp"
#include "translk/ops.hpp"
#include "translk/params.hpp"

namespace translk {

/// Precision of the finite-difference evaluations. Gradients are checked in
/// double; the central differences run in extended precision so that
/// coordinates with gradients near 1e-8 are not swamped by double roundoff.
using FdReal = long double;

struct GradCheckOptions {
  double eps = 1e-4;
  /// Check at most this many coordinates, sampled without replacement; 0 checks all.
  std::size_t max_coords = 0;
  std::uint64_t sample_seed = 0;
  /// Whether module input coordinates take part (parameters always do).
  bool include_input = true;
  /// Parameters for which this returns true are not checked.
  std::function<bool(const std::string& name)> skip_param;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords = 0;
  std::string worst;  // coordinate with the largest error
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Relative error |a - b| / max(|a|, |b|, 1e-8).
double relative_error(double analytic, double numeric);

namespace detail {

/// (tensor index, element index) pairs over tensors first.., optionally subsampled.
std::vector<std::pair<std::size_t, Index>> coordinates(const std::vector<Index>& sizes,
                                                       std::size_t first, std::size_t max_coords,
                                                       std::uint64_t seed);
/// Returns the value of a scalar Var, throwing on non-scalar or non-finite.
double finite_scalar(double value, Index numel);

void record(GradCheckResult& r, const std::string& where, double analytic, double numeric);

}  // namespace detail

/// sum(out * R) with R uniform in [-1, 1] drawn from seed (in double, so
/// every precision sees the same R).
template <class T>
Var<T> random_projection(Tape<T>& tape, const Var<T>& out, std::uint64_t seed) {
  Tensor<T> r(out.shape());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : r.data()) v = static_cast<T>(u(rng));
  return sum(tape, mul(tape, out, Var<T>::constant(std::move(r))));
}

/// Compares reverse-mode gradients of a scalar objective against central
/// differences over every input coordinate. `f` is called as
/// f(Tape<T>&, std::span<const Var<T>>) with T = double and T = FdReal.
/// Throws std::runtime_error on non-finite values.
template <class F>
GradCheckResult grad_check(F&& f, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& opts = {}) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& in : inputs) vars.push_back(tape.leaf(in));
    Var<double> y = f(tape, std::span<const Var<double>>(vars));
    detail::finite_scalar(y.value()[0], y.shape().numel());
    if (y.requires_grad()) {
      tape.backward(y);
      for (const auto& v : vars) analytic.push_back(tape.grad(v));
    } else {
      for (const auto& in : inputs) analytic.emplace_back(in.shape());
    }
  }
  std::vector<Tensor<FdReal>> wide;
  for (const auto& in : inputs) wide.push_back(in.cast<FdReal>());
  auto eval = [&]() -> FdReal {
    Tape<FdReal> tape(false);
    std::vector<Var<FdReal>> vars;
    for (const auto& in : wide) vars.push_back(Var<FdReal>::constant(in));
    Var<FdReal> y = f(tape, std::span<const Var<FdReal>>(vars));
    detail::finite_scalar(static_cast<double>(y.value()[0]), y.shape().numel());
    return y.value()[0];
  };
  std::vector<Index> sizes;
  for (const auto& in : inputs) sizes.push_back(in.numel());
  GradCheckResult r;
  const FdReal eps = opts.eps;
  for (auto [t, i] : detail::coordinates(sizes, 0, opts.max_coords, opts.sample_seed)) {
    const FdReal orig = wide[t][i];
    wide[t][i] = orig + eps;
    const FdReal fp = eval();
    wide[t][i] = orig - eps;
    const FdReal fm = eval();
    wide[t][i] = orig;
    const double fd = static_cast<double>((fp - fm) / (2 * eps));
    detail::record(r, "input " + std::to_string(t) + "[" + std::to_string(i) + "]",
                   analytic[t][i], fd);
  }
  return r;
}

/// Checks a module with respect to its input and its parameters. `f` is
/// called as f(Tape<T>&, ParamStore<T>&, const Var<T>&) with T = double and
/// T = FdReal and returns a tensor, reduced to a scalar by a fixed
/// pseudo-random projection.
template <class F>
GradCheckResult grad_check_module(F&& f, ParamStore<double>& store, Tensor<double> x,
                                  const GradCheckOptions& opts = {}) {
  constexpr std::uint64_t kProjectionSeed = 0x5eed;
  store.zero_grad();
  Tensor<double> grad_x(x.shape());
  {
    Tape<double> tape;
    Var<double> xv = tape.leaf(x);
    Var<double> y = random_projection(tape, f(tape, store, xv), kProjectionSeed);
    detail::finite_scalar(y.value()[0], 1);
    tape.backward(y);
    grad_x = tape.grad(xv);
  }
  ParamStore<FdReal> wide(store.layout(), store.seed());
  wide.copy_values_from(store);
  Tensor<FdReal> wide_x = x.cast<FdReal>();
  auto eval = [&]() -> FdReal {
    Tape<FdReal> tape(false);
    Var<FdReal> xv = Var<FdReal>::constant(wide_x);
    Var<FdReal> y = random_projection(tape, f(tape, wide, xv), kProjectionSeed);
    detail::finite_scalar(static_cast<double>(y.value()[0]), 1);
    return y.value()[0];
  };
  // Tensor 0 is the input, tensor p + 1 is parameter p.
  std::vector<Index> sizes{x.numel()};
  for (ParamId p = 0; p < store.size(); ++p) {
    const bool skip = opts.skip_param && opts.skip_param(store.name(p));
    sizes.push_back(skip ? 0 : store.value(p).numel());
  }
  GradCheckResult r;
  const std::size_t first = opts.include_input ? 0 : 1;
  const FdReal eps = opts.eps;
  for (auto [t, i] : detail::coordinates(sizes, first, opts.max_coords, opts.sample_seed)) {
    FdReal& slot = t == 0 ? wide_x[i] : wide.value(t - 1)[i];
    const double analytic = t == 0 ? grad_x[i] : store.grad(t - 1)[i];
    const FdReal orig = slot;
    slot = orig + eps;
    const FdReal fp = eval();
    slot = orig - eps;
    const FdReal fm = eval();
    slot = orig;
    const double fd = static_cast<double>((fp - fm) / (2 * eps));
    detail::record(r,
                   (t == 0 ? std::string("input") : store.name(t - 1)) + "[" +
                       std::to_string(i) + "]",
                   analytic, fd);
  }
  return r;
}

}  // namespace translk
