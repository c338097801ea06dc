#include "translk/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace translk {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace detail {

double finite_scalar(double value, Index numel) {
  if (numel != 1) throw ShapeError("grad_check: objective must be scalar");
  if (!std::isfinite(value)) throw std::runtime_error("grad_check: objective is not finite");
  return value;
}

std::vector<std::pair<std::size_t, Index>> coordinates(const std::vector<Index>& sizes,
                                                       std::size_t first, std::size_t max_coords,
                                                       std::uint64_t seed) {
  std::vector<std::pair<std::size_t, Index>> all;
  for (std::size_t t = first; t < sizes.size(); ++t)
    for (Index i = 0; i < sizes[t]; ++i) all.emplace_back(t, i);
  if (max_coords == 0 || max_coords >= all.size()) return all;
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(max_coords);
  std::sort(all.begin(), all.end());
  return all;
}

void record(GradCheckResult& r, const std::string& where, double analytic, double numeric) {
  if (!std::isfinite(analytic)) throw std::runtime_error("grad_check: non-finite gradient at " + where);
  const double err = relative_error(analytic, numeric);
  ++r.coords;
  if (err > r.max_rel_error || r.coords == 1) {
    r.max_rel_error = std::max(r.max_rel_error, err);
    r.worst = where;
    r.worst_analytic = analytic;
    r.worst_numeric = numeric;
  }
}

}  // namespace detail

}  // namespace translk
