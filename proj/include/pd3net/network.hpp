// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pd3net/model.hpp"

namespace pd3net {

namespace detail {

// Splits `excess` rows/columns between the two borders, extra one at the end.
inline std::pair<std::size_t, std::size_t> split_crop(std::size_t excess) {
  return {excess / 2, excess - excess / 2};
}

inline Crop crop_to(const Shape& from, std::size_t h, std::size_t w, const std::string& stage) {
  if (from.h < h || from.w < w) {
    throw ShapeError(stage + ": decoder produced " + std::to_string(from.h) + "x" +
                     std::to_string(from.w) + ", needs at least " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  const auto [top, bottom] = split_crop(from.h - h);
  const auto [left, right] = split_crop(from.w - w);
  return Crop{top, bottom, left, right};
}

template <class T>
Shape append(Subgraph<T>& g, Layer<T> layer, const Shape& in) {
  g.layers.push_back(std::move(layer));
  return with_stage(g.name + "/" + layer_name<T>(g.layers.back()), [&] {
    return std::visit([&](const auto& x) { return x.out_shape(in); }, g.layers.back());
  });
}

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

template <class T>
Shape append_stem(Subgraph<T>& g, std::size_t in_channels, std::size_t width, Shape s, Rng& rng) {
  s = append<T>(g,
                ConvLayer<T>::make(g.name + ".stem.conv", in_channels, width, 7, 7,
                                   ConvGeometry{2, 2, 3, 3}, rng),
                s);
  s = append<T>(g, BatchNormLayer<T>::make(g.name + ".stem.bn", width), s);
  s = append<T>(g, LeakyReluLayer{g.name + ".stem.act"}, s);
  s = append<T>(g, MaxPoolLayer{g.name + ".stem.pool", 3, 3}, s);
  return s;
}

template <class T>
Shape append_block_pair(Subgraph<T>& g, const std::string& name, BlockSpec spec, Shape s,
                        Rng& rng) {
  s = append<T>(g, build_block<T>(g.name + "." + name, spec, s.c, rng), s);
  BlockSpec ib{BlockKind::kIdentity, spec.a, spec.b, spec.c, spec.kernel, 1};
  s = append<T>(g, build_block<T>(g.name + "." + name + "_ib", ib, s.c, rng), s);
  return s;
}

}  // namespace detail

// Output-conv bias at initialization. Most label pixels are near zero, so the
// maps start low (sigmoid(-4) ~ 0.018) and the refinement starts near zero.
inline constexpr double kMainPriorLogit = -4.0;
inline constexpr double kRefinePriorLogit = -6.0;

/// Main block: likelihood map C from a single-channel depth image.
///
/// Stem (7x7/2 conv, BN, act, 3/3 max pool), three ECB+IB pairs, three DCB+IB
/// pairs, a crop to ceil(h/6) x ceil(w/6), x3 nearest upsampling, a 7x7
/// resized convolution (x2), a crop to h x w, BN, act, 3x3 conv and sigmoid.
template <class T>
Subgraph<T> build_main_block(std::size_t h, std::size_t w, Scale scale, Rng& rng) {
  Subgraph<T> g;
  g.name = "mb";
  const auto ch = [&](std::size_t c) { return scale.channels(c); };
  Shape s{1, 1, h, w};
  s = detail::append_stem(g, 1, ch(64), s, rng);
  constexpr std::array<std::array<std::size_t, 4>, 3> kEncoders{
      {{64, 64, 256, 1}, {128, 128, 512, 2}, {256, 256, 1024, 2}}};
  constexpr std::array<std::array<std::size_t, 4>, 3> kDecoders{
      {{1024, 1024, 256, 1}, {512, 512, 128, 2}, {256, 256, 64, 2}}};
  for (std::size_t i = 0; i < kEncoders.size(); ++i) {
    const auto& e = kEncoders[i];
    s = detail::append_block_pair(
        g, "ecb" + std::to_string(i + 1),
        BlockSpec{BlockKind::kEncoder, ch(e[0]), ch(e[1]), ch(e[2]), 3, e[3]}, s, rng);
  }
  for (std::size_t i = 0; i < kDecoders.size(); ++i) {
    const auto& d = kDecoders[i];
    s = detail::append_block_pair(
        g, "dcb" + std::to_string(i + 1),
        BlockSpec{BlockKind::kDecoder, ch(d[0]), ch(d[1]), ch(d[2]), 3, d[3]}, s, rng);
  }
  const std::size_t th = detail::ceil_div(h, 6), tw = detail::ceil_div(w, 6);
  s = detail::append<T>(g, CropLayer{"mb.tail.crop1", detail::crop_to(s, th, tw, "mb.tail.crop1")},
                        s);
  s = detail::append<T>(g, UpsampleLayer{"mb.tail.upsample", 3}, s);
  s = detail::append<T>(
      g, ResizedConvLayer<T>::make("mb.tail.resized_conv", 2, s.c, ch(64), 7, rng), s);
  s = detail::append<T>(g, CropLayer{"mb.tail.crop2", detail::crop_to(s, h, w, "mb.tail.crop2")},
                        s);
  s = detail::append<T>(g, BatchNormLayer<T>::make("mb.tail.bn", s.c), s);
  s = detail::append<T>(g, LeakyReluLayer{"mb.tail.act"}, s);
  auto head = ConvLayer<T>::make("mb.tail.conv", s.c, 1, 3, 3, ConvGeometry{1, 1, 1, 1}, rng);
  std::fill(head.bias->data().begin(), head.bias->data().end(), T(kMainPriorLogit));
  s = detail::append<T>(g, std::move(head), s);
  detail::append<T>(g, SigmoidLayer{"mb.tail.sigmoid"}, s);
  return g;
}

/// Hypothesis reinforcement block: refines C from concat(image, C).
///
/// Same stem, two ECB+IB and two DCB+IB pairs, x3 upsampling, crop to h x w,
/// 3x3 conv, BN, act, 3x3 conv to one channel and sigmoid.
template <class T>
Subgraph<T> build_hrb(std::size_t h, std::size_t w, Scale scale, Rng& rng) {
  Subgraph<T> g;
  g.name = "hrb";
  const auto ch = [&](std::size_t c) { return scale.channels(c); };
  Shape s{1, 2, h, w};
  s = detail::append_stem(g, 2, ch(64), s, rng);
  s = detail::append_block_pair(g, "ecb1",
                                BlockSpec{BlockKind::kEncoder, ch(64), ch(64), ch(256), 3, 1}, s,
                                rng);
  s = detail::append_block_pair(g, "ecb2",
                                BlockSpec{BlockKind::kEncoder, ch(128), ch(128), ch(512), 3, 2}, s,
                                rng);
  s = detail::append_block_pair(g, "dcb1",
                                BlockSpec{BlockKind::kDecoder, ch(512), ch(512), ch(128), 3, 2}, s,
                                rng);
  s = detail::append_block_pair(g, "dcb2",
                                BlockSpec{BlockKind::kDecoder, ch(256), ch(256), ch(64), 3, 2}, s,
                                rng);
  s = detail::append<T>(g, UpsampleLayer{"hrb.tail.upsample", 3}, s);
  s = detail::append<T>(g, CropLayer{"hrb.tail.crop", detail::crop_to(s, h, w, "hrb.tail.crop")},
                        s);
  s = detail::append<T>(
      g, ConvLayer<T>::make("hrb.tail.conv1", s.c, ch(64), 3, 3, ConvGeometry{1, 1, 1, 1}, rng),
      s);
  s = detail::append<T>(g, BatchNormLayer<T>::make("hrb.tail.bn", s.c), s);
  s = detail::append<T>(g, LeakyReluLayer{"hrb.tail.act"}, s);
  auto head = ConvLayer<T>::make("hrb.tail.conv2", s.c, 1, 3, 3, ConvGeometry{1, 1, 1, 1}, rng);
  std::fill(head.bias->data().begin(), head.bias->data().end(), T(kRefinePriorLogit));
  s = detail::append<T>(g, std::move(head), s);
  detail::append<T>(g, SigmoidLayer{"hrb.tail.sigmoid"}, s);
  return g;
}

template <class T>
struct NetworkOutput {
  Var<T> initial;   // C
  Var<T> polished;  // C_polished
};

/// MB and HRB wired with the input concatenation and the output adder:
/// C = MB(I), C_polished = clamp01(HRB(concat(I, C)) + C).
template <class T>
class NetworkGraph {
 public:
  NetworkGraph(std::size_t height, std::size_t width, Scale scale, std::uint64_t seed = 0)
      : height_(height), width_(width), scale_(scale) {
    if (height == 0 || width == 0) throw ShapeError("network input must be non-empty");
    Rng rng(seed);
    main_ = build_main_block<T>(height, width, scale, rng);
    hrb_ = build_hrb<T>(height, width, scale, rng);
    main_.collect(registry_);
    hrb_.collect(registry_);
  }

  // Copies would alias parameter storage.
  NetworkGraph(const NetworkGraph&) = delete;
  NetworkGraph& operator=(const NetworkGraph&) = delete;
  NetworkGraph(NetworkGraph&&) noexcept = default;
  NetworkGraph& operator=(NetworkGraph&&) noexcept = default;

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  const Scale& scale() const noexcept { return scale_; }

  const Subgraph<T>& main_block() const noexcept { return main_; }
  const Subgraph<T>& hrb() const noexcept { return hrb_; }

  const std::vector<NamedParam<T>>& parameters() const noexcept { return registry_.params; }
  const std::vector<NamedBatchNorm<T>>& batchnorms() const noexcept { return registry_.batchnorms; }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& [name, p] : registry_.params) total += p->size();
    return total;
  }

  void set_mode(BnMode mode) {
    for (auto& [name, bn] : registry_.batchnorms) bn->mode = mode;
  }

  void zero_grad() {
    for (auto& [name, p] : registry_.params) p->zero_grad();
  }

  /// Per-layer output shapes without evaluating the network.
  std::vector<TraceEntry> geometry(std::size_t batch = 1) const {
    std::vector<TraceEntry> trace;
    main_.out_shape(Shape{batch, 1, height_, width_}, &trace);
    hrb_.out_shape(Shape{batch, 2, height_, width_}, &trace);
    return trace;
  }

  NetworkOutput<T> forward(Tape<T>* tape, const Var<T>& image,
                           std::vector<TraceEntry>* trace = nullptr) const {
    const Shape& s = image->shape();
    if (s.c != 1 || s.h != height_ || s.w != width_) {
      throw ShapeError("network expects (n,1," + std::to_string(height_) + "," +
                       std::to_string(width_) + ") input, got " + s.to_string());
    }
    for (T v : image->data()) {
      if (!(v >= T(0) && v <= T(1))) {
        throw ValidationError("network input must be normalized to [0, 1]");
      }
    }
    auto initial = main_.forward(tape, image, trace);
    auto refined = hrb_.forward(tape, concat_channels(tape, image, initial), trace);
    auto polished = clamp01(tape, add(tape, refined, initial));
    return NetworkOutput<T>{initial, polished};
  }

  NetworkOutput<T> forward(const Tensor<T>& image) const {
    return forward(nullptr, make_var(Tensor<T>(image)));
  }

  // Parameters and batchnorm running statistics, in registry order.
  std::vector<Tensor<T>> snapshot() const {
    std::vector<Tensor<T>> out;
    for (const auto& [name, p] : registry_.params) {
      out.emplace_back(p->shape(), std::vector<T>(p->data().begin(), p->data().end()));
    }
    for (const auto& [name, bn] : registry_.batchnorms) {
      out.push_back(bn->running_mean);
      out.push_back(bn->running_var);
    }
    return out;
  }

  void restore(const std::vector<Tensor<T>>& snap) {
    const std::size_t np = registry_.params.size();
    if (snap.size() != np + 2 * registry_.batchnorms.size()) {
      throw StateError("snapshot does not match network layout");
    }
    for (std::size_t i = 0; i < np; ++i) {
      auto dst = registry_.params[i].second->data();
      std::copy(snap[i].data().begin(), snap[i].data().end(), dst.begin());
    }
    for (std::size_t i = 0; i < registry_.batchnorms.size(); ++i) {
      registry_.batchnorms[i].second->running_mean = snap[np + 2 * i];
      registry_.batchnorms[i].second->running_var = snap[np + 2 * i + 1];
    }
  }

 private:
  std::size_t height_;
  std::size_t width_;
  Scale scale_;
  Subgraph<T> main_;
  Subgraph<T> hrb_;
  Registry<T> registry_;
};

}  // namespace pd3net
