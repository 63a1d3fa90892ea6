#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ops.hpp"
#include "random.hpp"

namespace vclab {

/// Trainable tensor plus its Adam state.
template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  std::vector<Real> adam_m;
  std::vector<Real> adam_v;
  long adam_t = 0;

  Parameter() = default;
  Parameter(std::string n, Tensor<Real> v) : name(std::move(n)), value(std::move(v)) {
    value.set_requires_grad(true);
    adam_m.assign(static_cast<std::size_t>(value.size()), Real(0));
    adam_v.assign(static_cast<std::size_t>(value.size()), Real(0));
  }
};

/// Scaled-uniform init: std = gain / sqrt(fan_in).
template <typename Real>
Tensor<Real> init_weight(Rng& rng, Shape shape, long fan_in, double gain = 0.02) {
  const double limit = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  std::vector<Real> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<Real>(rng.uniform(-limit, limit));
  return Tensor<Real>::from_values(std::move(shape), std::move(v));
}

/// 2D conv layer (1D stacks use kh = 1). Optional per-channel bias.
template <typename Real>
struct Conv2dLayer {
  Parameter<Real> weight;  // [O, C, kh, kw]
  std::optional<Parameter<Real>> bias;
  ConvGeom geom;

  Conv2dLayer() = default;
  Conv2dLayer(const std::string& name, Rng& rng, long in_ch, long out_ch, ConvGeom g,
              bool with_bias, double gain = 0.02)
      : geom(g) {
    const long fan_in = in_ch * g.kh * g.kw;
    weight = Parameter<Real>(name + "/weight",
                             init_weight<Real>(rng, {out_ch, in_ch, g.kh, g.kw}, fan_in, gain));
    if (with_bias) bias = Parameter<Real>(name + "/bias", Tensor<Real>::zeros({out_ch}));
  }

  Tensor<Real> forward(const Tensor<Real>& x) const {
    Tensor<Real> y = conv2d(x, weight.value, geom);
    if (bias) y = add_channel_bias(y, bias->value);
    return y;
  }
};

/// 2D transposed conv layer; weight layout [C_in, C_out, kh, kw].
template <typename Real>
struct Deconv2dLayer {
  Parameter<Real> weight;
  std::optional<Parameter<Real>> bias;
  ConvGeom geom;

  Deconv2dLayer() = default;
  Deconv2dLayer(const std::string& name, Rng& rng, long in_ch, long out_ch, ConvGeom g,
                bool with_bias, double gain = 0.02)
      : geom(g) {
    const long fan_in = in_ch * g.kh * g.kw;
    weight = Parameter<Real>(name + "/weight",
                             init_weight<Real>(rng, {in_ch, out_ch, g.kh, g.kw}, fan_in, gain));
    if (with_bias) bias = Parameter<Real>(name + "/bias", Tensor<Real>::zeros({out_ch}));
  }

  Tensor<Real> forward(const Tensor<Real>& x) const {
    Tensor<Real> y = conv_transpose2d(x, weight.value, geom);
    if (bias) y = add_channel_bias(y, bias->value);
    return y;
  }
};

enum class NormGroups {
  PerChannel,        // stats over (batch, H, W) per channel
  PerChannelHeight,  // stats over (batch, W) per (channel, height) pair
};

/// Batch-statistics normalization followed by a learned affine map per group.
template <typename Real>
struct BatchNormLayer {
  Parameter<Real> scale;
  Parameter<Real> shift;
  NormGroups mode = NormGroups::PerChannel;
  long channels = 0;
  long height = 0;  // PerChannelHeight only

  BatchNormLayer() = default;
  BatchNormLayer(const std::string& name, long ch, NormGroups m, long h = 0)
      : mode(m), channels(ch), height(h) {
    const long groups = (m == NormGroups::PerChannelHeight) ? ch * h : ch;
    scale = Parameter<Real>(name + "/scale", Tensor<Real>::full({groups}, Real(1)));
    shift = Parameter<Real>(name + "/shift", Tensor<Real>::zeros({groups}));
  }

  Tensor<Real> forward(const Tensor<Real>& x) const {
    std::vector<int> axes = (mode == NormGroups::PerChannelHeight) ? std::vector<int>{0, 3}
                                                                   : std::vector<int>{0, 2, 3};
    return batch_norm(x, scale.value, shift.value, axes);
  }
};

/// Conv -> (BatchNorm) -> GLU. The conv emits 2x the nominal channel count and
/// the gate halves it back.
template <typename Real>
struct GluConvBlock {
  Conv2dLayer<Real> conv;
  std::optional<BatchNormLayer<Real>> norm;
  bool transposed = false;
  Deconv2dLayer<Real> deconv;

  GluConvBlock() = default;

  static GluConvBlock down(const std::string& name, Rng& rng, long in_ch, long out_ch, ConvGeom g,
                           bool with_norm, NormGroups groups, long out_h) {
    GluConvBlock b;
    b.conv = Conv2dLayer<Real>(name + "/conv", rng, in_ch, 2 * out_ch, g, !with_norm);
    if (with_norm) b.norm = BatchNormLayer<Real>(name + "/norm", 2 * out_ch, groups, out_h);
    return b;
  }

  static GluConvBlock up(const std::string& name, Rng& rng, long in_ch, long out_ch, ConvGeom g,
                         bool with_norm, NormGroups groups, long out_h) {
    GluConvBlock b;
    b.transposed = true;
    b.deconv = Deconv2dLayer<Real>(name + "/conv", rng, in_ch, 2 * out_ch, g, !with_norm);
    if (with_norm) b.norm = BatchNormLayer<Real>(name + "/norm", 2 * out_ch, groups, out_h);
    return b;
  }

  Tensor<Real> forward(const Tensor<Real>& x) const {
    Tensor<Real> y = transposed ? deconv.forward(x) : conv.forward(x);
    if (norm) y = norm->forward(y);
    return glu(y, 1);
  }

  void collect(std::vector<Parameter<Real>*>& out) {
    if (transposed) {
      out.push_back(&deconv.weight);
      if (deconv.bias) out.push_back(&*deconv.bias);
    } else {
      out.push_back(&conv.weight);
      if (conv.bias) out.push_back(&*conv.bias);
    }
    if (norm) {
      out.push_back(&norm->scale);
      out.push_back(&norm->shift);
    }
  }
};

/// Inverted dropout; identity in eval mode. Draws its mask from the step RNG.
template <typename Real>
Tensor<Real> dropout(const Tensor<Real>& x, double ratio, Rng& rng, bool training) {
  if (!training || ratio <= 0.0) return x;
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - ratio));
  std::vector<Real> mask(static_cast<std::size_t>(x.size()));
  for (auto& m : mask) m = (rng.uniform() < ratio) ? Real(0) : keep_scale;
  return mul(x, Tensor<Real>::from_values(x.shape(), std::move(mask)));
}

}  // namespace vclab
