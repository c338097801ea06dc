#include "translk/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace translk {

std::array<Index, 4> ModelConfig::stage_widths() const {
  if (schedule_variant == ScheduleVariant::stem_expand) return stage_channels;
  return {base_channels, stage_channels[0], stage_channels[1], stage_channels[2]};
}

Index ModelConfig::down_width(std::size_t i) const {
  if (schedule_variant == ScheduleVariant::downsample_expand) return stage_channels.at(i);
  return i < 3 ? stage_channels[i + 1] : stage_channels[3];
}

BlockOptions ModelConfig::block_options() const {
  BlockOptions o;
  o.heads = heads;
  o.mlp = mlp_variant;
  o.gate = mlp_gate;
  o.dropout = dropout;
  o.desa_mode = desa_axes;
  return o;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (in_channels < 1) fail("model.in_channels must be >= 1");
  if (num_classes < 2) fail("model.num_classes must be >= 2");
  if (base_channels < 1) fail("model.base_channels must be >= 1");
  if (heads < 1) fail("model.heads must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) fail("model.dropout must be in [0, 1)");
  for (std::size_t i = 0; i < 4; ++i) {
    if (stage_channels[i] % heads != 0) {
      fail("model.stage_channels[" + std::to_string(i) + "] = " +
           std::to_string(stage_channels[i]) + " is not divisible by model.heads = " +
           std::to_string(heads));
    }
    if (i > 0 && stage_channels[i] <= stage_channels[i - 1]) {
      fail("model.stage_channels must be strictly increasing");
    }
  }
  for (Index w : stage_widths()) {
    if (w % heads != 0) {
      fail("stage width " + std::to_string(w) + " is not divisible by model.heads = " +
           std::to_string(heads));
    }
    if (w % 2 != 0) fail("stage width " + std::to_string(w) + " must be even for cross-grouping");
  }
}

const char* to_string(MlpVariant v) {
  switch (v) {
    case MlpVariant::ffn:
      return "ffn";
    case MlpVariant::mlp:
      return "mlp";
    case MlpVariant::ag_mlp:
      return "ag_mlp";
  }
  return "?";
}

const char* to_string(GateKind v) { return v == GateKind::depthwise ? "depthwise" : "dense"; }

const char* to_string(DecoderVariant v) {
  return v == DecoderVariant::ced ? "ced" : "plain_concat";
}

const char* to_string(ScheduleVariant v) {
  return v == ScheduleVariant::downsample_expand ? "downsample_expand" : "stem_expand";
}

const char* to_string(DesaAxisMode v) {
  return v == DesaAxisMode::chained ? "chained" : "independent";
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class I>
I parse_int(const std::string& key, const std::string& v) {
  I out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

// "[96, 192, 384, 768]" or "96,192,384,768".
std::array<Index, 4> parse_widths(const std::string& key, std::string v) {
  if (!v.empty() && v.front() == '[') {
    if (v.back() != ']') throw ConfigError(key + ": unbalanced brackets");
    v = v.substr(1, v.size() - 2);
  }
  std::array<Index, 4> out{};
  std::stringstream ss(v);
  std::string item;
  std::size_t n = 0;
  while (std::getline(ss, item, ',')) {
    if (n == 4) throw ConfigError(key + ": expected exactly 4 values");
    out[n++] = parse_int<Index>(key, trim(item));
  }
  if (n != 4) throw ConfigError(key + ": expected exactly 4 values");
  return out;
}

template <class E>
E parse_enum(const std::string& key, const std::string& v, std::initializer_list<E> options) {
  std::string allowed;
  for (E e : options) {
    if (v == to_string(e)) return e;
    allowed += allowed.empty() ? "" : ", ";
    allowed += to_string(e);
  }
  throw ConfigError(key + ": '" + v + "' is not one of {" + allowed + "}");
}

using Setter = std::function<void(Config&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"model.in_channels",
       [](Config& c, auto& k, auto& v) { c.model.in_channels = parse_int<Index>(k, v); }},
      {"model.num_classes",
       [](Config& c, auto& k, auto& v) { c.model.num_classes = parse_int<Index>(k, v); }},
      {"model.base_channels",
       [](Config& c, auto& k, auto& v) { c.model.base_channels = parse_int<Index>(k, v); }},
      {"model.stage_channels",
       [](Config& c, auto& k, auto& v) { c.model.stage_channels = parse_widths(k, v); }},
      {"model.heads", [](Config& c, auto& k, auto& v) { c.model.heads = parse_int<Index>(k, v); }},
      {"model.mlp_variant",
       [](Config& c, auto& k, auto& v) {
         c.model.mlp_variant =
             parse_enum(k, v, {MlpVariant::ffn, MlpVariant::mlp, MlpVariant::ag_mlp});
       }},
      {"model.mlp_gate",
       [](Config& c, auto& k, auto& v) {
         c.model.mlp_gate = parse_enum(k, v, {GateKind::depthwise, GateKind::dense});
       }},
      {"model.decoder_variant",
       [](Config& c, auto& k, auto& v) {
         c.model.decoder_variant =
             parse_enum(k, v, {DecoderVariant::ced, DecoderVariant::plain_concat});
       }},
      {"model.schedule_variant",
       [](Config& c, auto& k, auto& v) {
         c.model.schedule_variant = parse_enum(
             k, v, {ScheduleVariant::downsample_expand, ScheduleVariant::stem_expand});
       }},
      {"model.desa_axes",
       [](Config& c, auto& k, auto& v) {
         c.model.desa_axes =
             parse_enum(k, v, {DesaAxisMode::chained, DesaAxisMode::independent});
       }},
      {"model.dropout", [](Config& c, auto& k, auto& v) { c.model.dropout = parse_double(k, v); }},
      {"train.steps", [](Config& c, auto& k, auto& v) { c.train.steps = parse_int<int>(k, v); }},
      {"train.batch_size",
       [](Config& c, auto& k, auto& v) { c.train.batch_size = parse_int<int>(k, v); }},
      {"train.lr", [](Config& c, auto& k, auto& v) { c.train.lr = parse_double(k, v); }},
      {"train.weight_decay",
       [](Config& c, auto& k, auto& v) { c.train.weight_decay = parse_double(k, v); }},
      {"train.grad_clip",
       [](Config& c, auto& k, auto& v) { c.train.grad_clip = parse_double(k, v); }},
      {"train.volume",
       [](Config& c, auto& k, auto& v) { c.train.volume = parse_int<Index>(k, v); }},
      {"train.eval_batch",
       [](Config& c, auto& k, auto& v) { c.train.eval_batch = parse_int<int>(k, v); }},
      {"seed", [](Config& c, auto& k, auto& v) { c.seed = parse_int<std::uint64_t>(k, v); }},
  };
  return table;
}

void validate_train(const TrainConfig& t) {
  if (t.steps < 0) throw ConfigError("train.steps must be >= 0");
  if (t.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (t.eval_batch < 1) throw ConfigError("train.eval_batch must be >= 1");
  if (t.lr < 0.0) throw ConfigError("train.lr must be >= 0");
  if (t.weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
  if (t.grad_clip < 0.0) throw ConfigError("train.grad_clip must be >= 0");
  if (t.volume < 32 || t.volume % 32 != 0) {
    throw ConfigError("train.volume must be a positive multiple of 32");
  }
}

}  // namespace

Config parse_config(std::istream& is) {
  Config c;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    if (value.empty()) throw ConfigError(where + key + " has no value");
    try {
      it->second(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  c.model.validate();
  validate_train(c.train);
  return c;
}

Config parse_config_string(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  try {
    return parse_config(is);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string to_text(const Config& c) {
  std::ostringstream os;
  os.precision(17);
  const auto& m = c.model;
  const auto& t = c.train;
  os << "model.in_channels = " << m.in_channels << "\n"
     << "model.num_classes = " << m.num_classes << "\n"
     << "model.base_channels = " << m.base_channels << "\n"
     << "model.stage_channels = [" << m.stage_channels[0] << ", " << m.stage_channels[1] << ", "
     << m.stage_channels[2] << ", " << m.stage_channels[3] << "]\n"
     << "model.heads = " << m.heads << "\n"
     << "model.mlp_variant = " << to_string(m.mlp_variant) << "\n"
     << "model.mlp_gate = " << to_string(m.mlp_gate) << "\n"
     << "model.decoder_variant = " << to_string(m.decoder_variant) << "\n"
     << "model.schedule_variant = " << to_string(m.schedule_variant) << "\n"
     << "model.desa_axes = " << to_string(m.desa_axes) << "\n"
     << "model.dropout = " << m.dropout << "\n"
     << "train.steps = " << t.steps << "\n"
     << "train.batch_size = " << t.batch_size << "\n"
     << "train.lr = " << t.lr << "\n"
     << "train.weight_decay = " << t.weight_decay << "\n"
     << "train.grad_clip = " << t.grad_clip << "\n"
     << "train.volume = " << t.volume << "\n"
     << "train.eval_batch = " << t.eval_batch << "\n"
     << "seed = " << c.seed << "\n";
  return os.str();
}

std::uint64_t config_hash(const Config& c) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : to_text(c)) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace translk
