#include "translk/network.hpp"

#include <fstream>
#include <sstream>

#include "translk/io.hpp"

namespace translk {

namespace {

CedParams make_ced(ParamLayout& layout, const std::string& prefix, Index channels,
                   const BlockOptions& opts) {
  CedParams p;
  p.pfi = make_mixer(layout, prefix + ".pfi", channels, MixerKind::ptlk, opts);
  p.cfi = make_mixer(layout, prefix + ".cfi", channels, MixerKind::ctlk, opts);
  p.path1 = make_block(layout, prefix + ".path1", channels, MixerKind::ctlk, opts);
  p.path2 = make_block(layout, prefix + ".path2", channels, MixerKind::ptlk, opts);
  return p;
}

}  // namespace

std::unique_ptr<Network> build_network(const ModelConfig& cfg) {
  cfg.validate();
  auto net = std::make_unique<Network>();
  net->cfg = cfg;
  ParamLayout& L = net->layout;
  const BlockOptions opts = cfg.block_options();
  const auto widths = cfg.stage_widths();

  net->stem = make_conv(L, "stem.conv", cfg.in_channels, cfg.base_channels, 7, 2, 3);
  if (cfg.schedule_variant == ScheduleVariant::stem_expand) {
    net->stem_expand = make_pointwise(L, "stem.expand", cfg.base_channels, widths[0]);
  }
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string s = "enc" + std::to_string(i);
    net->stages[i] = make_mixed_block(L, s, widths[i], opts);
    net->down[i] = make_conv(L, s + ".down", widths[i], cfg.down_width(i), 3, 2, 1);
  }
  net->bottleneck = make_mixed_block(L, "bottleneck", cfg.down_width(3), opts);
  for (std::size_t k = 4; k-- > 0;) {
    const std::string s = "dec" + std::to_string(k);
    DecoderStage& st = net->decoder[k];
    const Index up_in = k < 3 ? widths[k + 1] : cfg.down_width(3);
    st.up = make_transposed(L, s + ".up", up_in, widths[k], 2, 2);
    if (cfg.decoder_variant == DecoderVariant::ced) {
      st.ced = make_ced(L, s + ".ced", widths[k], opts);
    } else {
      st.plain.fuse = make_pointwise(L, s + ".fuse", 2 * widths[k], widths[k]);
      st.plain.block = make_mixed_block(L, s + ".block", widths[k], opts);
    }
  }
  net->head_up = make_transposed(L, "head.up", widths[0], cfg.base_channels, 2, 2);
  net->head_out = make_pointwise(L, "head.out", cfg.base_channels, cfg.num_classes);
  return net;
}

template <class T>
Var<T> stem_encode(Ctx<T>& ctx, const Network& net, const Var<T>& img) {
  const Shape& s = img.shape();
  if (s.d() % kSpatialMultiple || s.h() % kSpatialMultiple || s.w() % kSpatialMultiple) {
    throw ShapeError("input spatial dims " + s.str() + " must be divisible by " +
                     std::to_string(kSpatialMultiple));
  }
  Var<T> x = apply(ctx, net.stem, img);
  if (net.stem_expand) x = apply(ctx, *net.stem_expand, x);
  return x;
}

template <class T>
EncoderOutput<T> encoder_forward(Ctx<T>& ctx, const Network& net, const Var<T>& x) {
  EncoderOutput<T> out;
  Var<T> h = x;
  for (std::size_t i = 0; i < 4; ++i) {
    h = mixed_block(ctx, h, net.stages[i]);
    out.skips[i] = h;
    h = apply(ctx, net.down[i], h);
  }
  out.bottom = h;
  return out;
}

template <class T>
Var<T> bottleneck(Ctx<T>& ctx, const Network& net, const Var<T>& x) {
  return mixed_block(ctx, x, net.bottleneck);
}

template <class T>
std::pair<Var<T>, Var<T>> cross_group(Tape<T>& tape, const Var<T>& skip, const Var<T>& up) {
  if (skip.shape() != up.shape()) {
    throw ShapeError("cross_group: skip " + skip.shape().str() + " vs up " + up.shape().str());
  }
  const Index c = skip.shape().c();
  if (c % 2 != 0) {
    throw ShapeError("cross_group: channel count " + std::to_string(c) + " must be even");
  }
  const Index h = c / 2;
  Var<T> x1 = concat_channels(tape, {slice_channels(tape, skip, 0, h), slice_channels(tape, up, 0, h)});
  Var<T> x2 = concat_channels(tape, {slice_channels(tape, skip, h, h), slice_channels(tape, up, h, h)});
  return {x1, x2};
}

template <class T>
Var<T> pfi(Ctx<T>& ctx, const Var<T>& skip, const Var<T>& up, const TokenMixerParams& p) {
  auto [x1, x2] = cross_group(ctx.tape, skip, up);
  Var<T> x1p = progressive_entangle(ctx, mhlk(ctx, x1, p.mhlk), p.ch, p.sp);
  return desa(ctx, x2, x2, x1p, p.desa);
}

template <class T>
Var<T> cfi(Ctx<T>& ctx, const Var<T>& skip, const Var<T>& up, const TokenMixerParams& p) {
  auto [x1, x2] = cross_group(ctx.tape, skip, up);
  Var<T> x1p = mhlk(ctx, x1, p.mhlk);
  Var<T> x2p = desa(ctx, x2, x2, x2, p.desa);
  return collaborative_entangle(ctx, x1p, x2p, p.ch, p.sp);
}

template <class T>
Var<T> ced(Ctx<T>& ctx, const Var<T>& skip, const Var<T>& up, const CedParams& p) {
  Var<T> a = transformer_block(ctx, pfi(ctx, skip, up, p.pfi), p.path1);
  Var<T> b = transformer_block(ctx, cfi(ctx, skip, up, p.cfi), p.path2);
  return add(ctx.tape, a, b);
}

template <class T>
Var<T> plain_fusion(Ctx<T>& ctx, const Var<T>& skip, const Var<T>& up,
                    const PlainFusionParams& p) {
  if (skip.shape() != up.shape()) {
    throw ShapeError("plain_fusion: skip " + skip.shape().str() + " vs up " + up.shape().str());
  }
  Var<T> fused = apply(ctx, p.fuse, concat_channels(ctx.tape, {skip, up}));
  return mixed_block(ctx, fused, p.block);
}

template <class T>
Var<T> decoder_forward(Ctx<T>& ctx, const Network& net, const Var<T>& x, const SkipSet<T>& skips) {
  Var<T> h = x;
  for (std::size_t k = 4; k-- > 0;) {
    const DecoderStage& st = net.decoder[k];
    h = apply(ctx, st.up, h);
    if (h.shape() != skips[k].shape()) {
      throw ShapeError("decoder stage " + std::to_string(k + 1) + ": upsampled " +
                       h.shape().str() + " does not match encoder stage " +
                       std::to_string(k + 1) + " skip " + skips[k].shape().str());
    }
    h = net.cfg.decoder_variant == DecoderVariant::ced ? ced(ctx, skips[k], h, st.ced)
                                                       : plain_fusion(ctx, skips[k], h, st.plain);
  }
  return h;
}

template <class T>
Var<T> predict_head(Ctx<T>& ctx, const Network& net, const Var<T>& x) {
  return apply(ctx, net.head_out, apply(ctx, net.head_up, x));
}

template <class T>
Var<T> forward(Ctx<T>& ctx, const Network& net, const Var<T>& img) {
  if (img.shape().c() != net.cfg.in_channels) {
    throw ShapeError("forward: expected " + std::to_string(net.cfg.in_channels) +
                     " input channels, got " + img.shape().str());
  }
  auto enc = encoder_forward(ctx, net, stem_encode(ctx, net, img));
  Var<T> h = bottleneck(ctx, net, enc.bottom);
  return predict_head(ctx, net, decoder_forward(ctx, net, h, enc.skips));
}

namespace {
constexpr const char* kCheckpointMagic = "TLK-CHECKPOINT v1";
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore<float>& store) {
  std::ostringstream manifest;
  manifest << kCheckpointMagic << "\n" << store.size() << "\n";
  std::size_t offset = 0;
  for (ParamId i = 0; i < store.size(); ++i) {
    const std::size_t len = tlk1_size(store.value(i).shape());
    manifest << store.name(i) << " " << offset << " " << len << "\n";
    offset += len;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os << manifest.str();
  for (ParamId i = 0; i < store.size(); ++i) write_tlk1(os, store.value(i));
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, ParamStore<float>& store) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic) {
    throw FormatError(path.string() + ": not a checkpoint (bad header)");
  }
  std::size_t count = 0;
  if (!std::getline(is, line) || (std::istringstream(line) >> count, count != store.size())) {
    throw FormatError(path.string() + ": checkpoint holds a different parameter count");
  }
  struct Entry {
    std::string name;
    std::size_t offset, length;
  };
  std::vector<Entry> entries(count);
  for (auto& e : entries) {
    if (!std::getline(is, line) || !(std::istringstream(line) >> e.name >> e.offset >> e.length)) {
      throw FormatError(path.string() + ": malformed manifest line");
    }
  }
  const auto blob = is.tellg();
  for (ParamId i = 0; i < count; ++i) {
    const Entry& e = entries[i];
    if (e.name != store.name(i)) {
      throw FormatError(path.string() + ": expected parameter " + store.name(i) + ", found " +
                        e.name);
    }
    is.seekg(blob + static_cast<std::streamoff>(e.offset));
    Tensor<float> t = read_tlk1(is);
    if (t.shape() != store.value(i).shape()) {
      throw FormatError(path.string() + ": shape mismatch for " + e.name + ": " + t.shape().str() +
                        " vs " + store.value(i).shape().str());
    }
    store.value(i) = std::move(t);
  }
}

#define TRANSLK_INSTANTIATE_NETWORK(T)                                                         \
  template Var<T> stem_encode(Ctx<T>&, const Network&, const Var<T>&);                         \
  template EncoderOutput<T> encoder_forward(Ctx<T>&, const Network&, const Var<T>&);           \
  template Var<T> bottleneck(Ctx<T>&, const Network&, const Var<T>&);                          \
  template std::pair<Var<T>, Var<T>> cross_group(Tape<T>&, const Var<T>&, const Var<T>&);      \
  template Var<T> pfi(Ctx<T>&, const Var<T>&, const Var<T>&, const TokenMixerParams&);         \
  template Var<T> cfi(Ctx<T>&, const Var<T>&, const Var<T>&, const TokenMixerParams&);         \
  template Var<T> ced(Ctx<T>&, const Var<T>&, const Var<T>&, const CedParams&);                \
  template Var<T> plain_fusion(Ctx<T>&, const Var<T>&, const Var<T>&, const PlainFusionParams&); \
  template Var<T> decoder_forward(Ctx<T>&, const Network&, const Var<T>&, const SkipSet<T>&);  \
  template Var<T> predict_head(Ctx<T>&, const Network&, const Var<T>&);                        \
  template Var<T> forward(Ctx<T>&, const Network&, const Var<T>&);

TRANSLK_INSTANTIATE_NETWORK(float)
TRANSLK_INSTANTIATE_NETWORK(double)
TRANSLK_INSTANTIATE_NETWORK(long double)

}  // namespace translk
