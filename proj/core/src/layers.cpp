#include "translk/layers.hpp"

namespace translk {

Index ConvLayer::param_count() const {
  const Index k3 = kernel * kernel * kernel;
  const Index w = transposed ? in * out * k3 : out * (in / geom.groups) * k3;
  return w + out;
}

ConvLayer make_conv(ParamLayout& layout, const std::string& name, Index in, Index out,
                    Index kernel, int stride, int padding, int groups) {
  if (in % groups != 0 || out % groups != 0) {
    throw ShapeError(name + ": groups " + std::to_string(groups) + " must divide " +
                     std::to_string(in) + " -> " + std::to_string(out));
  }
  ConvLayer c;
  c.in = in;
  c.out = out;
  c.kernel = kernel;
  c.geom = {stride, padding, groups};
  const Index fan_in = (in / groups) * kernel * kernel * kernel;
  const Init init = kernel == 1 ? Init::trunc_normal : Init::kaiming;
  c.weight = layout.add(name + ".weight", Shape(out, in / groups, kernel, kernel, kernel), init, fan_in);
  c.bias = layout.add(name + ".bias", Shape::vec(out), Init::zeros);
  return c;
}

ConvLayer make_pointwise(ParamLayout& layout, const std::string& name, Index in, Index out) {
  return make_conv(layout, name, in, out, 1, 1, 0, 1);
}

ConvLayer make_depthwise(ParamLayout& layout, const std::string& name, Index channels,
                         Index kernel) {
  return make_conv(layout, name, channels, channels, kernel, 1, static_cast<int>((kernel - 1) / 2),
                   static_cast<int>(channels));
}

ConvLayer make_transposed(ParamLayout& layout, const std::string& name, Index in, Index out,
                          Index kernel, int stride) {
  ConvLayer c;
  c.in = in;
  c.out = out;
  c.kernel = kernel;
  c.geom = {stride, 0, 1};
  c.transposed = true;
  // Each output voxel sees in * (kernel / stride)^3 inputs.
  Index per_axis = std::max<Index>(1, kernel / stride);
  c.weight = layout.add(name + ".weight", Shape(in, out, kernel, kernel, kernel), Init::kaiming,
                        in * per_axis * per_axis * per_axis);
  c.bias = layout.add(name + ".bias", Shape::vec(out), Init::zeros);
  return c;
}

template <class T>
Var<T> apply(Ctx<T>& ctx, const ConvLayer& layer, const Var<T>& x) {
  if (x.shape().c() != layer.in) {
    throw ShapeError("layer expects " + std::to_string(layer.in) + " input channels, got " +
                     x.shape().str());
  }
  if (layer.transposed) {
    return conv3d_transposed(ctx.tape, x, ctx.p(layer.weight), std::optional<Var<T>>(ctx.p(layer.bias)),
                             layer.geom.stride);
  }
  return conv3d(ctx.tape, x, ctx.p(layer.weight), std::optional<Var<T>>(ctx.p(layer.bias)), layer.geom);
}

NormLayer make_norm(ParamLayout& layout, const std::string& name, Index channels) {
  NormLayer n;
  n.channels = channels;
  n.gamma = layout.add(name + ".gamma", Shape::vec(channels), Init::ones);
  n.beta = layout.add(name + ".beta", Shape::vec(channels), Init::zeros);
  return n;
}

template <class T>
Var<T> apply(Ctx<T>& ctx, const NormLayer& norm, const Var<T>& x) {
  return layer_norm(ctx.tape, x, ctx.p(norm.gamma), ctx.p(norm.beta), 1e-5);
}

template Var<float> apply(Ctx<float>&, const ConvLayer&, const Var<float>&);
template Var<double> apply(Ctx<double>&, const ConvLayer&, const Var<double>&);
template Var<float> apply(Ctx<float>&, const NormLayer&, const Var<float>&);
template Var<double> apply(Ctx<double>&, const NormLayer&, const Var<double>&);
template Var<long double> apply(Ctx<long double>&, const ConvLayer&, const Var<long double>&);
template Var<long double> apply(Ctx<long double>&, const NormLayer&, const Var<long double>&);

}  // namespace translk
