#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "translk/config.hpp"

namespace translk {

struct CostEntry {
  std::string module;
  Index params = 0;
  std::uint64_t flops = 0;
};

/// Per-module parameter and forward FLOP tallies. FLOPs follow the
/// conventions in flops.hpp and assume evaluation mode (dropout is identity).
struct CostReport {
  std::vector<CostEntry> entries;  // stem, enc0..enc3, bottleneck, dec3..dec0, head
  Index total_params = 0;
  std::uint64_t total_flops = 0;
  Shape input{};      // batch-1 input, or all ones when FLOPs were not counted
  double desa_ratio = 0.0;  // full / decomposed attention FLOPs at stage-1 resolution
};

/// Exact parameter tally from the configuration alone, by formula.
CostReport count_params(const ModelConfig& cfg);

/// Parameters plus forward FLOPs for a (1, in_channels, d, h, w) input.
CostReport count_flops(const ModelConfig& cfg, Index d, Index h, Index w);

/// full_attention / sum over axes of axial_attention for a (n, C, d, h, w) map.
double desa_vs_full_ratio(const Shape& s, Index heads);

void print_cost_report(std::ostream& os, const CostReport& r);

}  // namespace translk
