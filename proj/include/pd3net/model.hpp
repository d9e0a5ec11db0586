// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "pd3net/cost_model.hpp"
#include "pd3net/layers.hpp"

namespace pd3net {

inline constexpr double kLeakySlope = 0.1;

/// Channel-width multiplier num/den; 1/1 reproduces the published widths.
struct Scale {
  std::uint32_t num = 1;
  std::uint32_t den = 1;

  friend bool operator==(const Scale&, const Scale&) = default;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }

  std::size_t channels(std::size_t c) const {
    const auto scaled = static_cast<std::size_t>(std::llround(static_cast<double>(c) * value()));
    return scaled < 1 ? 1 : scaled;
  }

  std::string to_string() const { return std::to_string(num) + "/" + std::to_string(den); }

  // Accepts "1/4", "0.25" or "1".
  static Scale parse(const std::string& text) {
    Scale s;
    try {
      const auto slash = text.find('/');
      if (slash != std::string::npos) {
        s.num = static_cast<std::uint32_t>(std::stoul(text.substr(0, slash)));
        s.den = static_cast<std::uint32_t>(std::stoul(text.substr(slash + 1)));
      } else {
        const double v = std::stod(text);
        if (!(v > 0)) throw ParameterError("scale must be positive");
        s.den = 1;
        while (std::abs(v * s.den - std::round(v * s.den)) > 1e-9 && s.den < 1000000) s.den *= 10;
        s.num = static_cast<std::uint32_t>(std::llround(v * s.den));
      }
    } catch (const std::logic_error&) {
      throw ParameterError("cannot parse scale '" + text + "'");
    }
    if (s.num == 0 || s.den == 0) throw ParameterError("scale must be a positive ratio");
    return s;
  }
};

template <class T>
using NamedParam = std::pair<std::string, Var<T>>;
template <class T>
using NamedBatchNorm = std::pair<std::string, std::shared_ptr<BatchNormState<T>>>;

template <class T>
struct Registry {
  std::vector<NamedParam<T>> params;
  std::vector<NamedBatchNorm<T>> batchnorms;
};

// The shape-error message names the layer that rejected its input.
template <class F>
auto with_stage(const std::string& stage, F&& f) {
  try {
    return f();
  } catch (const ShapeError& e) {
    throw ShapeError(stage + ": " + e.what());
  }
}

// ---------------------------------------------------------------- layers --

template <class T>
struct ConvLayer {
  std::string name;
  Var<T> weight;
  Var<T> bias;
  ConvGeometry geom;

  static ConvLayer make(std::string name, std::size_t in, std::size_t out, std::size_t kh,
                        std::size_t kw, ConvGeometry geom, Rng& rng) {
    ConvLayer l;
    l.name = std::move(name);
    l.weight = make_var(tensor_new<T>(Shape{out, in, kh, kw}, fill::HeNormal{in * kh * kw}, rng));
    l.bias = make_var(Tensor<T>(Shape{1, out, 1, 1}));
    l.geom = geom;
    return l;
  }

  Shape out_shape(const Shape& in) const {
    const auto win = detail::conv_window(in, weight->shape(), geom);
    return Shape{in.n, weight->shape().n, win.out_h(), win.out_w()};
  }
  Var<T> forward(Tape<T>* tape, const Var<T>& x) const { return conv2d(tape, x, weight, bias, geom); }
  void collect(Registry<T>& r) const {
    r.params.emplace_back(name + ".weight", weight);
    r.params.emplace_back(name + ".bias", bias);
  }
};

template <class T>
struct SepConvLayer {
  std::string name;
  Var<T> w_row;
  Var<T> w_col;
  Var<T> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  static SepConvLayer make(std::string name, const ConvSpec& spec, Rng& rng) {
    spec.validate();
    SepConvLayer l;
    l.name = std::move(name);
    const std::size_t k = spec.kernel, d = spec.in_channels, dd = spec.out_channels;
    l.w_row = make_var(tensor_new<T>(Shape{dd, d, 1, k}, fill::HeNormal{d * k}, rng));
    l.w_col = make_var(tensor_new<T>(Shape{dd, dd, k, 1}, fill::HeNormal{dd * k}, rng));
    l.bias = make_var(Tensor<T>(Shape{1, dd, 1, 1}));
    l.stride = spec.stride;
    l.padding = spec.padding;
    return l;
  }

  Shape out_shape(const Shape& in) const {
    const Shape& r = w_row->shape();
    if (in.c != r.c) throw ShapeError("sepconv2d: channel mismatch");
    ConvSpec spec{r.w, r.c, r.n, stride, padding, true};
    return Shape{in.n, r.n, spec.out_size(in.h), spec.out_size(in.w)};
  }
  Var<T> forward(Tape<T>* tape, const Var<T>& x) const {
    return sepconv2d(tape, x, w_row, w_col, bias, stride, padding);
  }
  void collect(Registry<T>& r) const {
    r.params.emplace_back(name + ".w_row", w_row);
    r.params.emplace_back(name + ".w_col", w_col);
    r.params.emplace_back(name + ".bias", bias);
  }
};

template <class T>
struct ResizedConvLayer {
  std::string name;
  std::size_t factor = 1;
  Var<T> weight;
  Var<T> bias;

  static ResizedConvLayer make(std::string name, std::size_t factor, std::size_t in,
                               std::size_t out, std::size_t k, Rng& rng) {
    if (factor < 1) throw ParameterError("resized convolution factor must be >= 1");
    ResizedConvLayer l;
    l.name = std::move(name);
    l.factor = factor;
    l.weight = make_var(tensor_new<T>(Shape{out, in, k, k}, fill::HeNormal{in * k * k}, rng));
    l.bias = make_var(Tensor<T>(Shape{1, out, 1, 1}));
    return l;
  }

  Shape out_shape(const Shape& in) const {
    if (in.c != weight->shape().c) throw ShapeError("resized_conv: channel mismatch");
    return Shape{in.n, weight->shape().n, in.h * factor, in.w * factor};
  }
  Var<T> forward(Tape<T>* tape, const Var<T>& x) const {
    return resized_conv(tape, x, factor, weight, bias);
  }
  void collect(Registry<T>& r) const {
    r.params.emplace_back(name + ".weight", weight);
    r.params.emplace_back(name + ".bias", bias);
  }
};

template <class T>
struct BatchNormLayer {
  std::string name;
  std::shared_ptr<BatchNormState<T>> state;

  static BatchNormLayer make(std::string name, std::size_t channels) {
    return BatchNormLayer{std::move(name),
                          std::make_shared<BatchNormState<T>>(BatchNormState<T>::make(channels))};
  }

  Shape out_shape(const Shape& in) const {
    if (in.c != state->channels()) throw ShapeError("batchnorm: channel mismatch");
    return in;
  }
  Var<T> forward(Tape<T>* tape, const Var<T>& x) const { return batchnorm(tape, x, *state); }
  void collect(Registry<T>& r) const {
    r.params.emplace_back(name + ".gamma", state->gamma);
    r.params.emplace_back(name + ".beta", state->beta);
    r.batchnorms.emplace_back(name, state);
  }
};

struct LeakyReluLayer {
  std::string name;
  double alpha = kLeakySlope;
  Shape out_shape(const Shape& in) const { return in; }
  template <class T>
  Var<T> forward(Tape<T>* tape, const Var<T>& x) const {
    return leaky_relu(tape, x, static_cast<T>(alpha));
  }
};

struct SigmoidLayer {
  std::string name;
  Shape out_shape(const Shape& in) const { return in; }
  template <class T>
  Var<T> forward(Tape<T>* tape, const Var<T>& x) const {
    return sigmoid(tape, x);
  }
};

struct MaxPoolLayer {
  std::string name;
  std::size_t window = 3;
  std::size_t stride = 3;
  Shape out_shape(const Shape& in) const {
    if (window > in.h || window > in.w) throw ShapeError("maxpool window larger than input");
    return Shape{in.n, in.c, (in.h - window) / stride + 1, (in.w - window) / stride + 1};
  }
  template <class T>
  Var<T> forward(Tape<T>* tape, const Var<T>& x) const {
    return maxpool(tape, x, window, stride);
  }
};

struct UpsampleLayer {
  std::string name;
  std::size_t factor = 1;
  Shape out_shape(const Shape& in) const { return Shape{in.n, in.c, in.h * factor, in.w * factor}; }
  template <class T>
  Var<T> forward(Tape<T>* tape, const Var<T>& x) const {
    return upsample_nearest(tape, x, factor);
  }
};

struct CropLayer {
  std::string name;
  Crop crop;
  Shape out_shape(const Shape& in) const { return cropped_shape(in, crop); }
  template <class T>
  Var<T> forward(Tape<T>* tape, const Var<T>& x) const {
    return crop2d(tape, x, crop);
  }
};

// ---------------------------------------------------------------- blocks --

enum class BlockKind { kEncoder, kDecoder, kIdentity };

inline const char* to_string(BlockKind k) {
  switch (k) {
    case BlockKind::kEncoder:
      return "ECB";
    case BlockKind::kDecoder:
      return "DCB";
    case BlockKind::kIdentity:
      return "IB";
  }
  return "?";
}

/// Filters (a, b, c) of the three main-path convolutions, the mid-stage kernel
/// and the block stride (downsampling for ECB, upsampling factor for DCB).
struct BlockSpec {
  BlockKind kind = BlockKind::kIdentity;
  std::size_t a = 1;
  std::size_t b = 1;
  std::size_t c = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
};

// The KxK mid stage is factorized only where the cost model predicts a win in
// both parameters and operations.
inline bool mid_stage_separable(std::size_t kernel, std::size_t in, std::size_t out) {
  if (kernel < 3) return false;
  return cost::separable_decision(cost::ConvConfig{kernel, in, out, 1, 1}).separable_wins_both;
}

/// Two-link residual block.
///
/// Main link: 1x1 (a) -> BN -> act -> KxK (b) -> BN -> act -> 1x1 (c) -> BN.
/// ECB strides the first 1x1 and its 1x1 shortcut; DCB upsamples inside the
/// KxK stage and the shortcut (resized convolutions); IB adds its input
/// unchanged. The output is act(main + shortcut).
template <class T>
struct ResidualBlock {
  using Mid = std::variant<ConvLayer<T>, SepConvLayer<T>, ResizedConvLayer<T>>;
  using Shortcut = std::variant<ConvLayer<T>, ResizedConvLayer<T>>;

  std::string name;
  BlockSpec spec;
  std::size_t in_channels = 0;
  ConvLayer<T> conv_a;
  BatchNormLayer<T> bn_a;
  Mid mid;
  BatchNormLayer<T> bn_b;
  ConvLayer<T> conv_c;
  BatchNormLayer<T> bn_c;
  std::optional<Shortcut> shortcut;
  std::optional<BatchNormLayer<T>> bn_s;
  double alpha = kLeakySlope;

  bool mid_is_separable() const { return std::holds_alternative<SepConvLayer<T>>(mid); }

  Shape out_shape(const Shape& in) const {
    if (in.c != in_channels) {
      throw ShapeError(std::string(to_string(spec.kind)) + " expects " +
                       std::to_string(in_channels) + " input channels, got " +
                       std::to_string(in.c));
    }
    Shape s = conv_a.out_shape(in);
    s = std::visit([&](const auto& m) { return m.out_shape(s); }, mid);
    s = conv_c.out_shape(s);
    if (shortcut) {
      const Shape t = std::visit([&](const auto& m) { return m.out_shape(in); }, *shortcut);
      if (t != s) throw ShapeError("residual links disagree: " + s.to_string() + " vs " + t.to_string());
    } else if (s != in) {
      throw ShapeError("identity block must preserve its input shape");
    }
    return s;
  }

  Var<T> forward(Tape<T>* tape, const Var<T>& x) const {
    if (x->shape().c != in_channels) out_shape(x->shape());
    const T slope = static_cast<T>(alpha);
    auto h = conv_a.forward(tape, x);
    h = leaky_relu(tape, bn_a.forward(tape, h), slope);
    h = std::visit([&](const auto& m) { return m.forward(tape, h); }, mid);
    h = leaky_relu(tape, bn_b.forward(tape, h), slope);
    h = bn_c.forward(tape, conv_c.forward(tape, h));
    Var<T> skip = x;
    if (shortcut) {
      skip = std::visit([&](const auto& m) { return m.forward(tape, x); }, *shortcut);
      skip = bn_s->forward(tape, skip);
    }
    return leaky_relu(tape, add(tape, h, skip), slope);
  }

  void collect(Registry<T>& r) const {
    conv_a.collect(r);
    bn_a.collect(r);
    std::visit([&](const auto& m) { m.collect(r); }, mid);
    bn_b.collect(r);
    conv_c.collect(r);
    bn_c.collect(r);
    if (shortcut) {
      std::visit([&](const auto& m) { m.collect(r); }, *shortcut);
      bn_s->collect(r);
    }
  }
};

template <class T>
ResidualBlock<T> build_block(const std::string& name, const BlockSpec& spec,
                             std::size_t in_channels, Rng& rng) {
  if (spec.kernel == 0 || spec.kernel % 2 == 0) throw ParameterError("block kernel must be odd");
  if (spec.stride < 1) throw ParameterError("block stride must be >= 1");
  if (spec.kind == BlockKind::kIdentity && in_channels != spec.c) {
    throw ShapeError(name + ": identity block needs input channels " + std::to_string(spec.c) +
                     ", got " + std::to_string(in_channels));
  }
  ResidualBlock<T> b;
  b.name = name;
  b.spec = spec;
  b.in_channels = in_channels;
  const std::size_t k = spec.kernel, pad = k / 2;
  const std::size_t first_stride = spec.kind == BlockKind::kEncoder ? spec.stride : 1;
  b.conv_a = ConvLayer<T>::make(name + ".conv_a", in_channels, spec.a, 1, 1,
                                ConvGeometry{first_stride, first_stride, 0, 0}, rng);
  b.bn_a = BatchNormLayer<T>::make(name + ".bn_a", spec.a);
  if (spec.kind == BlockKind::kDecoder) {
    b.mid = ResizedConvLayer<T>::make(name + ".mid", spec.stride, spec.a, spec.b, k, rng);
  } else if (mid_stage_separable(k, spec.a, spec.b)) {
    b.mid = SepConvLayer<T>::make(name + ".mid", ConvSpec{k, spec.a, spec.b, 1, pad, true}, rng);
  } else {
    b.mid = ConvLayer<T>::make(name + ".mid", spec.a, spec.b, k, k, ConvGeometry{1, 1, pad, pad},
                               rng);
  }
  b.bn_b = BatchNormLayer<T>::make(name + ".bn_b", spec.b);
  b.conv_c = ConvLayer<T>::make(name + ".conv_c", spec.b, spec.c, 1, 1, ConvGeometry{}, rng);
  b.bn_c = BatchNormLayer<T>::make(name + ".bn_c", spec.c);
  if (spec.kind == BlockKind::kEncoder) {
    b.shortcut = ConvLayer<T>::make(name + ".shortcut", in_channels, spec.c, 1, 1,
                                    ConvGeometry{spec.stride, spec.stride, 0, 0}, rng);
  } else if (spec.kind == BlockKind::kDecoder) {
    b.shortcut =
        ResizedConvLayer<T>::make(name + ".shortcut", spec.stride, in_channels, spec.c, 1, rng);
  }
  if (b.shortcut) b.bn_s = BatchNormLayer<T>::make(name + ".bn_s", spec.c);
  return b;
}

// -------------------------------------------------------------- subgraph --

template <class T>
using Layer = std::variant<ConvLayer<T>, SepConvLayer<T>, ResizedConvLayer<T>, BatchNormLayer<T>,
                           LeakyReluLayer, SigmoidLayer, MaxPoolLayer, UpsampleLayer, CropLayer,
                           ResidualBlock<T>>;

template <class T>
const std::string& layer_name(const Layer<T>& l) {
  return std::visit([](const auto& x) -> const std::string& { return x.name; }, l);
}

struct TraceEntry {
  std::string layer;
  Shape shape;
};

/// Ordered layer list evaluated front to back.
template <class T>
struct Subgraph {
  std::string name;
  std::vector<Layer<T>> layers;

  Shape out_shape(Shape s, std::vector<TraceEntry>* trace = nullptr) const {
    for (const auto& l : layers) {
      s = with_stage(name + "/" + layer_name<T>(l),
                     [&] { return std::visit([&](const auto& x) { return x.out_shape(s); }, l); });
      if (trace) trace->push_back({layer_name<T>(l), s});
    }
    return s;
  }

  Var<T> forward(Tape<T>* tape, Var<T> x, std::vector<TraceEntry>* trace = nullptr) const {
    for (const auto& l : layers) {
      x = with_stage(name + "/" + layer_name<T>(l), [&] {
        return std::visit([&](const auto& m) { return m.forward(tape, x); }, l);
      });
      if (trace) trace->push_back({layer_name<T>(l), x->shape()});
    }
    return x;
  }

  void collect(Registry<T>& r) const {
    for (const auto& l : layers) {
      std::visit(
          [&](const auto& m) {
            if constexpr (requires { m.collect(r); }) m.collect(r);
          },
          l);
    }
  }
};

}  // namespace pd3net
