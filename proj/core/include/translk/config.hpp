#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "translk/blocks.hpp"

namespace translk {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DecoderVariant { ced, plain_concat };

/// Where the stage widths come from.
///  downsample_expand: stem emits base channels, stage blocks run at
///    [base, s0, s1, s2] and each downsampler widens to s[i], so the
///    bottleneck sits at s3.
///  stem_expand: a pointwise layer after the stem widens base to s0, stage
///    blocks run at s[i], and the last downsampler keeps s3.
enum class ScheduleVariant { downsample_expand, stem_expand };

struct ModelConfig {
  Index in_channels = 1;
  Index num_classes = 16;
  Index base_channels = 48;
  std::array<Index, 4> stage_channels{96, 192, 384, 768};
  Index heads = 3;
  MlpVariant mlp_variant = MlpVariant::ag_mlp;
  GateKind mlp_gate = GateKind::depthwise;
  DecoderVariant decoder_variant = DecoderVariant::ced;
  ScheduleVariant schedule_variant = ScheduleVariant::downsample_expand;
  DesaAxisMode desa_axes = DesaAxisMode::chained;
  double dropout = 0.0;

  /// Widths at which the four encoder stages (and matching decoder
  /// fusions) run.
  std::array<Index, 4> stage_widths() const;
  /// Output width of the downsampler after stage i.
  Index down_width(std::size_t i) const;
  BlockOptions block_options() const;

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;
};

struct TrainConfig {
  int steps = 200;
  int batch_size = 2;
  double lr = 1e-3;
  double weight_decay = 3e-5;
  double grad_clip = 0.0;  // global gradient L2 norm cap, 0 disables
  Index volume = 32;
  int eval_batch = 2;
};

struct Config {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 0;
};

/// Parses `key = value` lines; `#` starts a comment. Unknown keys, repeated
/// keys and malformed values are errors. Keys not given keep their defaults.
Config parse_config(std::istream& is);
Config parse_config_string(const std::string& text);
Config load_config(const std::filesystem::path& path);

/// Canonical text form listing every key; parse_config(to_text(c)) == c.
std::string to_text(const Config& c);
/// FNV-1a over the canonical text.
std::uint64_t config_hash(const Config& c);

const char* to_string(MlpVariant v);
const char* to_string(GateKind v);
const char* to_string(DecoderVariant v);
const char* to_string(ScheduleVariant v);
const char* to_string(DesaAxisMode v);

}  // namespace translk
