#pragma once

#include <iosfwd>
#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "translk/config.hpp"
#include "translk/cost.hpp"

namespace translk::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `translk` tool. Usage errors print help to `err` and
/// return kExitUsage; runtime failures print one line to `err` and return
/// kExitFailure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct AblationRow {
  std::string variant;
  Index params = 0;
  std::uint64_t flops = 0;
  double dsc = -1.0;  // negative when not trained
};

enum class AblationKind { heads, mlp, decoder };

/// The model variants swept by `ablate`, keyed by their CSV label.
std::vector<std::pair<std::string, Config>> ablation_variants(AblationKind kind,
                                                               const Config& base);

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);

/// Parses "DxHxW".
std::array<Index, 3> parse_shape(const std::string& text);

}  // namespace translk::cli
