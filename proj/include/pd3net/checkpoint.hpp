// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

// Binary checkpoint (all integers little-endian):
//   "PD3N" | u32 version | u32 h | u32 w | u32 scale_num | u32 scale_den
//   | u32 epoch | u32 stage | f64 best_val_loss | u32 tensor_count
//   then per tensor: u32 name_len | UTF-8 name | 4 x u32 shape | f32 values

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "pd3net/error.hpp"
#include "pd3net/network.hpp"

namespace pd3net {

inline constexpr char kCheckpointMagic[4] = {'P', 'D', '3', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainingMeta {
  std::uint32_t epoch = 0;
  std::uint32_t stage = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

struct Checkpoint {
  std::size_t height = 0;
  std::size_t width = 0;
  Scale scale;
  TrainingMeta meta;
  std::vector<std::pair<std::string, TensorF>> tensors;
};

/// Parameters followed by every batchnorm's running mean and variance.
template <class T>
Checkpoint capture(const NetworkGraph<T>& net, const TrainingMeta& meta = {}) {
  Checkpoint c;
  c.height = net.height();
  c.width = net.width();
  c.scale = net.scale();
  c.meta = meta;
  for (const auto& [name, p] : net.parameters()) c.tensors.emplace_back(name, p->template cast<float>());
  for (const auto& [name, bn] : net.batchnorms()) {
    c.tensors.emplace_back(name + ".running_mean", bn->running_mean.template cast<float>());
    c.tensors.emplace_back(name + ".running_var", bn->running_var.template cast<float>());
  }
  return c;
}

/// Copies checkpoint values into a graph with an identical layout.
template <class T>
void apply(const Checkpoint& c, NetworkGraph<T>& net) {
  std::map<std::string, const TensorF*> by_name;
  for (const auto& [name, t] : c.tensors) by_name[name] = &t;
  const auto fetch = [&](const std::string& name, const Shape& want) -> const TensorF& {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ShapeMismatchError("checkpoint has no tensor '" + name + "'");
    if (it->second->shape() != want) {
      throw ShapeMismatchError("checkpoint tensor '" + name + "' has shape " +
                               it->second->shape().to_string() + ", graph expects " + want.to_string());
    }
    return *it->second;
  };
  const std::size_t expected = net.parameters().size() + 2 * net.batchnorms().size();
  if (c.tensors.size() != expected) {
    throw ShapeMismatchError("checkpoint holds " + std::to_string(c.tensors.size()) +
                             " tensors, graph needs " + std::to_string(expected));
  }
  // Validate everything before mutating the graph.
  for (const auto& [name, p] : net.parameters()) fetch(name, p->shape());
  for (const auto& [name, bn] : net.batchnorms()) {
    fetch(name + ".running_mean", bn->running_mean.shape());
    fetch(name + ".running_var", bn->running_var.shape());
  }
  for (const auto& [name, p] : net.parameters()) {
    const auto src = fetch(name, p->shape()).template cast<T>();
    std::copy(src.data().begin(), src.data().end(), p->data().begin());
  }
  for (const auto& [name, bn] : net.batchnorms()) {
    bn->running_mean = fetch(name + ".running_mean", bn->running_mean.shape()).template cast<T>();
    bn->running_var = fetch(name + ".running_var", bn->running_var.shape()).template cast<T>();
  }
}

namespace detail {

class LeWriter {
 public:
  explicit LeWriter(std::vector<unsigned char>& out) : out_(out) {}
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    out_.insert(out_.end(), b, b + n);
  }

 private:
  std::vector<unsigned char>& out_;
};

class LeReader {
 public:
  LeReader(const std::vector<unsigned char>& in, std::string origin) : in_(in), origin_(std::move(origin)) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw TruncatedError(origin_ + ": checkpoint is truncated");
  }
  const std::vector<unsigned char>& in_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> serialize(const Checkpoint& c) {
  std::vector<unsigned char> out;
  detail::LeWriter w(out);
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.height));
  w.u32(static_cast<std::uint32_t>(c.width));
  w.u32(c.scale.num);
  w.u32(c.scale.den);
  w.u32(c.meta.epoch);
  w.u32(c.meta.stage);
  w.f64(c.meta.best_val_loss);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    const Shape& s = t.shape();
    for (std::size_t d : {s.n, s.c, s.h, s.w}) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data()) w.f32(v);
  }
  return out;
}

inline Checkpoint deserialize(const std::vector<unsigned char>& bytes, const std::string& origin = "<memory>") {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError(origin + ": not a checkpoint (bad magic)");
  }
  detail::LeReader r(bytes, origin);
  r.str(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionError(origin + ": checkpoint version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  }
  Checkpoint c;
  c.height = r.u32();
  c.width = r.u32();
  c.scale.num = r.u32();
  c.scale.den = r.u32();
  c.meta.epoch = r.u32();
  c.meta.stage = r.u32();
  c.meta.best_val_loss = r.f64();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32();
    std::string name = r.str(len);
    Shape s;
    s.n = r.u32();
    s.c = r.u32();
    s.h = r.u32();
    s.w = r.u32();
    const std::uint64_t count_values = std::uint64_t{s.n} * s.c * s.h * s.w;
    if (count_values > r.remaining() / 4) throw TruncatedError(origin + ": checkpoint is truncated");
    TensorF t(s);
    for (auto& v : t.data()) v = r.f32();
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.at_end()) throw FormatError(origin + ": trailing bytes after checkpoint");
  if (c.scale.num == 0 || c.scale.den == 0) throw FormatError(origin + ": invalid scale");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  const auto bytes = serialize(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes, path);
}

/// Builds the graph a checkpoint describes and fills it.
template <class T = float>
NetworkGraph<T> network_from(const Checkpoint& c) {
  NetworkGraph<T> net(c.height, c.width, c.scale, 0);
  apply(c, net);
  return net;
}

}  // namespace pd3net
