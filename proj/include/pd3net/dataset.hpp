// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

// On-disk datasets: raw little-endian u16 frames plus a JSON-lines manifest.

#pragma once

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "pd3net/error.hpp"
#include "pd3net/label_codec.hpp"
#include "pd3net/synthgen.hpp"

namespace pd3net {

struct FrameRecord {
  std::string path;  // relative to the dataset directory
  std::size_t height = 0;
  std::size_t width = 0;
  double depth_min = 0.5;
  double depth_max = 8.0;
  std::vector<Annotation> annotations;
};

/// Loaded frame: normalized depth plus ground truth.
struct Sample {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> depth;
  std::vector<Annotation> annotations;
};

struct Dataset {
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

inline constexpr const char* kManifestName = "manifest.jsonl";

namespace detail {

inline void write_u16_le(const std::filesystem::path& path, std::span<const float> values) {
  std::vector<unsigned char> bytes(values.size() * 2);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint16_t r = synth::to_raw(values[i]);
    bytes[2 * i] = static_cast<unsigned char>(r & 0xff);
    bytes[2 * i + 1] = static_cast<unsigned char>(r >> 8);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline std::vector<float> read_u16_le(const std::filesystem::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open frame " + path.string());
  std::vector<unsigned char> bytes(count * 2);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
    throw TruncatedError("frame " + path.string() + " is shorter than " + std::to_string(count) +
                         " u16 values");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("frame " + path.string() + " has trailing bytes");
  }
  std::vector<float> v(count);
  for (std::size_t i = 0; i < count; ++i) {
    v[i] = synth::from_raw(static_cast<std::uint16_t>(bytes[2 * i] | (bytes[2 * i + 1] << 8)));
  }
  return v;
}

}  // namespace detail

inline nlohmann::json to_json(const FrameRecord& r) {
  nlohmann::json anns = nlohmann::json::array();
  for (const auto& a : r.annotations) anns.push_back({a.u, a.v, a.occlusion});
  return {{"path", r.path},           {"h", r.height},
          {"w", r.width},             {"depth_min_m", r.depth_min},
          {"depth_max_m", r.depth_max}, {"annotations", anns}};
}

inline FrameRecord record_from_json(const nlohmann::json& j) {
  try {
    FrameRecord r;
    r.path = j.at("path").get<std::string>();
    r.height = j.at("h").get<std::size_t>();
    r.width = j.at("w").get<std::size_t>();
    r.depth_min = j.at("depth_min_m").get<double>();
    r.depth_max = j.at("depth_max_m").get<double>();
    for (const auto& a : j.at("annotations")) {
      if (a.size() != 3) throw FormatError("annotation must be [u, v, occlusion]");
      r.annotations.push_back(Annotation{a[0].get<double>(), a[1].get<double>(), a[2].get<double>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad manifest record: ") + e.what());
  }
}

/// Renders `n_frames` frames with `jobs` worker threads and writes them under
/// `dir`. Output bytes depend only on (cfg, n_frames).
inline std::vector<FrameRecord> generate_dataset(const synth::SceneConfig& cfg,
                                                 std::size_t n_frames,
                                                 const std::filesystem::path& dir,
                                                 std::size_t jobs = 1) {
  cfg.validate();
  if (n_frames == 0) throw ParameterError("n_frames must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(dir / "frames", ec);
  if (ec) throw IoError("cannot create " + (dir / "frames").string() + ": " + ec.message());

  std::vector<FrameRecord> records(n_frames);
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(std::max<std::size_t>(1, jobs));
  const auto worker = [&](std::size_t slot) {
    try {
      for (std::size_t i = next++; i < n_frames; i = next++) {
        const synth::DepthFrame f = synth::dataset_frame(cfg, i);
        char name[32];
        std::snprintf(name, sizeof(name), "frames/%06zu.u16", i);
        detail::write_u16_le(dir / name, f.values);
        records[i] = FrameRecord{name, f.height, f.width, f.depth_min, f.depth_max, f.annotations};
      }
    } catch (...) {
      errors[slot] = std::current_exception();
    }
  };
  const std::size_t nthreads = std::clamp<std::size_t>(jobs, 1, n_frames);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < nthreads; ++t) pool.emplace_back(worker, t);
  worker(0);
  for (auto& th : pool) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::ofstream manifest(dir / kManifestName, std::ios::trunc);
  if (!manifest) throw IoError("cannot write manifest in " + dir.string());
  for (const auto& r : records) manifest << to_json(r).dump() << '\n';
  if (!manifest) throw IoError("short write to manifest in " + dir.string());
  return records;
}

inline std::vector<FrameRecord> read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifestName);
  if (!in) throw IoError("cannot open " + (dir / kManifestName).string());
  std::vector<FrameRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("manifest line " + std::to_string(out.size() + 1) + ": " + e.what());
    }
    out.push_back(record_from_json(j));
  }
  return out;
}

inline Sample load_sample(const std::filesystem::path& dir, const FrameRecord& r) {
  Sample s;
  s.height = r.height;
  s.width = r.width;
  s.depth = detail::read_u16_le(dir / r.path, r.height * r.width);
  s.annotations = r.annotations;
  return s;
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  for (const auto& r : read_manifest(dir)) d.samples.push_back(load_sample(dir, r));
  if (d.empty()) throw ValidationError("dataset " + dir.string() + " has no frames");
  const std::size_t h = d.samples.front().height, w = d.samples.front().width;
  for (const auto& s : d.samples) {
    if (s.height != h || s.width != w) throw ValidationError("dataset mixes frame sizes");
  }
  return d;
}

/// Same frames as generate_dataset, quantized identically, without disk I/O.
inline Dataset synthesize_dataset(const synth::SceneConfig& cfg, std::size_t n_frames) {
  cfg.validate();
  if (n_frames == 0) throw ParameterError("n_frames must be >= 1");
  Dataset d;
  for (std::size_t i = 0; i < n_frames; ++i) {
    synth::DepthFrame f = synth::dataset_frame(cfg, i);
    for (auto& v : f.values) v = synth::from_raw(synth::to_raw(v));
    d.samples.push_back(Sample{f.height, f.width, std::move(f.values), std::move(f.annotations)});
  }
  return d;
}

/// Deterministic split: the first round(fraction * n) frames train, the rest
/// validate.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& all, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ParameterError("split fraction must be in (0, 1)");
  }
  const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(all.size())));
  Dataset a, b;
  a.samples.assign(all.samples.begin(), all.samples.begin() + static_cast<long>(n_train));
  b.samples.assign(all.samples.begin() + static_cast<long>(n_train), all.samples.end());
  return {std::move(a), std::move(b)};
}

}  // namespace pd3net
