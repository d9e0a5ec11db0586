// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

// Procedural depth scenes: an axis-aligned room with optional furniture
// boxes and walking people (sphere head on capsule body and legs), rendered by
// analytic ray casting under a pinhole camera.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pd3net/error.hpp"
#include "pd3net/kv_config.hpp"
#include "pd3net/label_codec.hpp"
#include "pd3net/random.hpp"

namespace pd3net::synth {

struct Vec3 {
  double x = 0, y = 0, z = 0;
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double k) const { return {x * k, y * k, z * k}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const { return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x}; }
};

struct Range {
  double lo = 0;
  double hi = 0;
  double sample(Rng& rng) const { return lo == hi ? lo : rng.uniform(lo, hi); }
  bool valid() const { return lo <= hi; }
};

/// World frame: x across the room, y away from the camera wall, z up.
struct SceneConfig {
  double room_width = 6.0;
  double room_depth = 8.0;
  double room_height = 3.0;
  Range camera_height{2.2, 2.7};
  Range camera_tilt_deg{26.0, 41.0};
  double camera_yaw_jitter_deg = 10.0;
  double camera_x_jitter = 0.6;
  double horizontal_fov_deg = 58.0;
  std::size_t persons_min = 1;
  std::size_t persons_max = 4;
  Range walk_speed{0.4, 1.4};
  Range person_head_height{1.50, 1.85};
  double head_diameter = 0.18;
  std::size_t furniture_max = 2;
  double depth_noise = 0.01;
  std::size_t height = 60;
  std::size_t width = 80;
  double depth_min = 0.5;
  double depth_max = 8.0;
  std::size_t episode_length = 8;
  double frame_interval_s = 0.25;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(room_width > 1.0 && room_depth > 2.0 && room_height > 2.0)) {
      throw ParameterError("room must be at least 1 x 2 x 2 m");
    }
    for (const Range* r : {&camera_height, &camera_tilt_deg, &walk_speed, &person_head_height}) {
      if (!r->valid()) throw ParameterError("scene range is empty (lo > hi)");
    }
    if (persons_min > persons_max) throw ParameterError("persons_min > persons_max");
    if (height == 0 || width == 0) throw ParameterError("frame size must be positive");
    if (!(depth_min >= 0 && depth_max > depth_min)) throw ParameterError("depth window is empty");
    if (!(horizontal_fov_deg > 1 && horizontal_fov_deg < 179)) throw ParameterError("bad field of view");
    if (episode_length == 0) throw ParameterError("episode_length must be >= 1");
    if (depth_noise < 0) throw ParameterError("depth_noise must be >= 0");
  }

  static SceneConfig from(const KeyValueConfig& kv) {
    SceneConfig c;
    kv.read("room_width", c.room_width);
    kv.read("room_depth", c.room_depth);
    kv.read("room_height", c.room_height);
    kv.read("camera_height_min", c.camera_height.lo);
    kv.read("camera_height_max", c.camera_height.hi);
    kv.read("camera_tilt_min_deg", c.camera_tilt_deg.lo);
    kv.read("camera_tilt_max_deg", c.camera_tilt_deg.hi);
    kv.read("camera_yaw_jitter_deg", c.camera_yaw_jitter_deg);
    kv.read("camera_x_jitter", c.camera_x_jitter);
    kv.read("horizontal_fov_deg", c.horizontal_fov_deg);
    kv.read("persons_min", c.persons_min);
    kv.read("persons_max", c.persons_max);
    kv.read("walk_speed_min", c.walk_speed.lo);
    kv.read("walk_speed_max", c.walk_speed.hi);
    kv.read("head_height_min", c.person_head_height.lo);
    kv.read("head_height_max", c.person_head_height.hi);
    kv.read("head_diameter", c.head_diameter);
    kv.read("furniture_max", c.furniture_max);
    kv.read("depth_noise", c.depth_noise);
    kv.read("height", c.height);
    kv.read("width", c.width);
    kv.read("depth_min", c.depth_min);
    kv.read("depth_max", c.depth_max);
    kv.read("episode_length", c.episode_length);
    kv.read("frame_interval_s", c.frame_interval_s);
    kv.read("seed", c.seed);
    c.validate();
    return c;
  }
};

struct Box {
  Vec3 lo;
  Vec3 hi;
};

struct Person {
  double x = 0;
  double y = 0;
  double head_z = 1.7;
  double head_radius = 0.09;
  double heading = 0;
  double speed = 0;
  double turn_in_s = 0;

  Vec3 head() const { return {x, y, head_z}; }
};

struct CameraPose {
  Vec3 origin;
  double yaw_rad = 0;
  double tilt_rad = 0;
};

struct DepthFrame {
  std::size_t height = 0;
  std::size_t width = 0;
  double depth_min = 0.5;
  double depth_max = 8.0;
  std::vector<float> values;  // normalized depth in [0, 1]
  std::vector<Annotation> annotations;
};

/// Pinhole camera with square pixels; pixel centres sit at integer coordinates.
class Camera {
 public:
  Camera(const CameraPose& pose, std::size_t h, std::size_t w, double hfov_deg) : pose_(pose) {
    const double cy = std::cos(pose.yaw_rad), sy = std::sin(pose.yaw_rad);
    const double ct = std::cos(pose.tilt_rad), st = std::sin(pose.tilt_rad);
    forward_ = {sy * ct, cy * ct, -st};
    right_ = {cy, -sy, 0.0};
    down_ = forward_.cross(right_);
    focal_ = (static_cast<double>(w) / 2.0) / std::tan(hfov_deg * M_PI / 360.0);
    cx_ = (static_cast<double>(w) - 1.0) / 2.0;
    cy_ = (static_cast<double>(h) - 1.0) / 2.0;
  }

  const Vec3& origin() const { return pose_.origin; }

  // Ray direction with unit component along the optical axis, so the ray
  // parameter equals z-depth.
  Vec3 ray(double px, double py) const {
    return forward_ + right_ * ((px - cx_) / focal_) + down_ * ((py - cy_) / focal_);
  }

  std::optional<Annotation> project(const Vec3& p) const {
    const Vec3 rel = p - pose_.origin;
    const double z = rel.dot(forward_);
    if (z <= 1e-9) return std::nullopt;
    return Annotation{cx_ + focal_ * rel.dot(right_) / z, cy_ + focal_ * rel.dot(down_) / z, 0.0};
  }

  double depth_of(const Vec3& p) const { return (p - pose_.origin).dot(forward_); }

 private:
  CameraPose pose_;
  Vec3 forward_, right_, down_;
  double focal_ = 1, cx_ = 0, cy_ = 0;
};

namespace detail {

constexpr double kNoHit = std::numeric_limits<double>::infinity();

inline double hit_sphere(const Vec3& o, const Vec3& d, const Vec3& c, double r) {
  const Vec3 oc = o - c;
  const double a = d.dot(d), b = oc.dot(d), cc = oc.dot(oc) - r * r;
  const double disc = b * b - a * cc;
  if (disc < 0) return kNoHit;
  const double s = std::sqrt(disc);
  const double t0 = (-b - s) / a;
  if (t0 > 1e-9) return t0;
  const double t1 = (-b + s) / a;
  return t1 > 1e-9 ? t1 : kNoHit;
}

// Vertical capsule between heights z0 < z1 around (cx, cy).
inline double hit_capsule(const Vec3& o, const Vec3& d, double cx, double cy, double z0, double z1,
                          double r) {
  double best = kNoHit;
  const double ox = o.x - cx, oy = o.y - cy;
  const double a = d.x * d.x + d.y * d.y;
  if (a > 1e-12) {
    const double b = ox * d.x + oy * d.y, c = ox * ox + oy * oy - r * r;
    const double disc = b * b - a * c;
    if (disc >= 0) {
      const double t = (-b - std::sqrt(disc)) / a;
      const double z = o.z + t * d.z;
      if (t > 1e-9 && z >= z0 && z <= z1) best = t;
    }
  }
  best = std::min(best, hit_sphere(o, d, Vec3{cx, cy, z0}, r));
  best = std::min(best, hit_sphere(o, d, Vec3{cx, cy, z1}, r));
  return best;
}

inline double hit_box(const Vec3& o, const Vec3& d, const Box& b) {
  double t_enter = -kNoHit, t_exit = kNoHit;
  const std::array<double, 3> oo{o.x, o.y, o.z}, dd{d.x, d.y, d.z}, lo{b.lo.x, b.lo.y, b.lo.z},
      hi{b.hi.x, b.hi.y, b.hi.z};
  for (int k = 0; k < 3; ++k) {
    if (std::abs(dd[k]) < 1e-15) {
      if (oo[k] < lo[k] || oo[k] > hi[k]) return kNoHit;
      continue;
    }
    double t0 = (lo[k] - oo[k]) / dd[k], t1 = (hi[k] - oo[k]) / dd[k];
    if (t0 > t1) std::swap(t0, t1);
    t_enter = std::max(t_enter, t0);
    t_exit = std::min(t_exit, t1);
  }
  if (t_enter > t_exit || t_exit <= 1e-9) return kNoHit;
  return t_enter > 1e-9 ? t_enter : kNoHit;
}

// Exit distance from inside the room box.
inline double hit_room(const Vec3& o, const Vec3& d, const SceneConfig& cfg) {
  const std::array<double, 3> oo{o.x, o.y, o.z}, dd{d.x, d.y, d.z},
      hi{cfg.room_width, cfg.room_depth, cfg.room_height};
  double t = kNoHit;
  for (int k = 0; k < 3; ++k) {
    if (dd[k] > 1e-15) t = std::min(t, (hi[k] - oo[k]) / dd[k]);
    if (dd[k] < -1e-15) t = std::min(t, -oo[k] / dd[k]);
  }
  return t;
}

struct BodyParts {
  double leg_top = 0.9;
  double leg_radius = 0.12;
  double torso_radius = 0.2;
};

}  // namespace detail

/// Everything visible in one frame.
struct Scene {
  std::vector<Box> furniture;
  std::vector<Person> persons;
};

/// Z-buffer render. Annotations are the projected head centres that land in
/// the frame; occlusion is the share of head-sphere pixels covered by nearer
/// geometry.
inline DepthFrame render_frame(const SceneConfig& cfg, const Scene& scene, const CameraPose& pose,
                               Rng* noise_rng) {
  const Camera cam(pose, cfg.height, cfg.width, cfg.horizontal_fov_deg);
  const detail::BodyParts body;
  DepthFrame f;
  f.height = cfg.height;
  f.width = cfg.width;
  f.depth_min = cfg.depth_min;
  f.depth_max = cfg.depth_max;
  f.values.resize(cfg.height * cfg.width);
  const std::size_t np = scene.persons.size();
  std::vector<std::size_t> head_total(np, 0), head_visible(np, 0);
  const Vec3 o = cam.origin();
  for (std::size_t py = 0; py < cfg.height; ++py) {
    for (std::size_t px = 0; px < cfg.width; ++px) {
      const Vec3 d = cam.ray(static_cast<double>(px), static_cast<double>(py));
      double t = detail::hit_room(o, d, cfg);
      long nearest_head = -1;
      for (const auto& b : scene.furniture) t = std::min(t, detail::hit_box(o, d, b));
      for (std::size_t i = 0; i < np; ++i) {
        const Person& p = scene.persons[i];
        const double th = detail::hit_sphere(o, d, p.head(), p.head_radius);
        if (th < detail::kNoHit) ++head_total[i];
        const double torso_top = p.head_z - p.head_radius - 0.06 - body.torso_radius;
        const double torso_bottom = body.leg_top + body.torso_radius * 0.5;
        double tb = detail::kNoHit;
        if (torso_top > torso_bottom) {
          tb = detail::hit_capsule(o, d, p.x, p.y, torso_bottom, torso_top, body.torso_radius);
        }
        tb = std::min(tb, detail::hit_capsule(o, d, p.x, p.y, body.leg_radius, body.leg_top,
                                              body.leg_radius));
        if (tb < t) {
          t = tb;
          nearest_head = -1;
        }
        if (th < t) {
          t = th;
          nearest_head = static_cast<long>(i);
        }
      }
      if (nearest_head >= 0) ++head_visible[static_cast<std::size_t>(nearest_head)];
      double depth = t;
      if (noise_rng && cfg.depth_noise > 0) depth += noise_rng->normal(0.0, cfg.depth_noise);
      const double norm = (depth - cfg.depth_min) / (cfg.depth_max - cfg.depth_min);
      f.values[py * cfg.width + px] = static_cast<float>(std::clamp(norm, 0.0, 1.0));
    }
  }
  for (std::size_t i = 0; i < np; ++i) {
    auto a = cam.project(scene.persons[i].head());
    if (!a || !(a->u >= 0 && a->u < static_cast<double>(cfg.width) && a->v >= 0 &&
                a->v < static_cast<double>(cfg.height))) {
      continue;
    }
    a->occlusion = head_total[i] == 0
                       ? 1.0
                       : 1.0 - static_cast<double>(head_visible[i]) / static_cast<double>(head_total[i]);
    f.annotations.push_back(*a);
  }
  return f;
}

/// Episode camera pose drawn from the configured ranges.
inline CameraPose sample_camera(const SceneConfig& cfg, Rng& rng) {
  CameraPose pose;
  pose.origin = {cfg.room_width / 2 + rng.uniform(-cfg.camera_x_jitter, cfg.camera_x_jitter), 0.15,
                 cfg.camera_height.sample(rng)};
  pose.yaw_rad = rng.uniform(-cfg.camera_yaw_jitter_deg, cfg.camera_yaw_jitter_deg) * M_PI / 180.0;
  pose.tilt_rad = cfg.camera_tilt_deg.sample(rng) * M_PI / 180.0;
  return pose;
}

/// Small per-frame perturbation of an episode pose, clamped to the ranges.
inline CameraPose jitter_camera(const SceneConfig& cfg, const CameraPose& base, Rng& rng) {
  constexpr double kDeg = M_PI / 180.0;
  CameraPose p = base;
  p.origin.x += rng.uniform(-0.05, 0.05);
  p.origin.z = std::clamp(p.origin.z + rng.uniform(-0.05, 0.05), cfg.camera_height.lo, cfg.camera_height.hi);
  p.yaw_rad += rng.uniform(-1.5, 1.5) * kDeg;
  p.tilt_rad = std::clamp(p.tilt_rad + rng.uniform(-1.5, 1.5) * kDeg, cfg.camera_tilt_deg.lo * kDeg,
                          cfg.camera_tilt_deg.hi * kDeg);
  return p;
}

/// True when the head centre projects at least `margin` (fraction of the
/// frame) inside the image.
inline bool head_in_view(const SceneConfig& cfg, const CameraPose& pose, const Person& p,
                         double margin) {
  const Camera cam(pose, cfg.height, cfg.width, cfg.horizontal_fov_deg);
  const auto a = cam.project(p.head());
  if (!a) return false;
  const double mu = margin * static_cast<double>(cfg.width);
  const double mv = margin * static_cast<double>(cfg.height);
  return a->u >= mu && a->u < static_cast<double>(cfg.width) - mu && a->v >= mv &&
         a->v < static_cast<double>(cfg.height) - mv;
}

namespace detail {

constexpr double kWallMargin = 0.4;
constexpr double kNearLimit = 0.8;  // keeps walkers off the camera wall
constexpr double kPersonSpacing = 0.55;
constexpr double kViewMargin = 0.06;

inline bool walkable(const SceneConfig& cfg, double x, double y) {
  return x >= kWallMargin && x <= cfg.room_width - kWallMargin && y >= kNearLimit &&
         y <= cfg.room_depth - kWallMargin;
}

inline bool too_close(const std::vector<Person>& ps, std::size_t self, double x, double y) {
  for (std::size_t j = 0; j < ps.size(); ++j) {
    if (j != self && std::hypot(ps[j].x - x, ps[j].y - y) < kPersonSpacing) return true;
  }
  return false;
}

inline bool admissible(const SceneConfig& cfg, const CameraPose& view, const std::vector<Person>& ps,
                       std::size_t self, const Person& candidate) {
  return walkable(cfg, candidate.x, candidate.y) && !too_close(ps, self, candidate.x, candidate.y) &&
         head_in_view(cfg, view, candidate, kViewMargin);
}

}  // namespace detail

/// Walkers and furniture for the start of an episode. Walkers are placed
/// where `view` sees their heads.
inline Scene sample_scene(const SceneConfig& cfg, const CameraPose& view, Rng& rng) {
  Scene s;
  const auto nfurn = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(cfg.furniture_max)));
  for (std::size_t i = 0; i < nfurn; ++i) {
    const double bw = rng.uniform(0.4, 1.2), bd = rng.uniform(0.4, 1.0), bh = rng.uniform(0.4, 1.1);
    const double x = rng.uniform(0.0, std::max(0.0, cfg.room_width - bw));
    const double y = rng.uniform(detail::kNearLimit, std::max(detail::kNearLimit, cfg.room_depth - bd));
    s.furniture.push_back(Box{{x, y, 0.0}, {x + bw, y + bd, bh}});
  }
  const auto n = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(cfg.persons_min),
                                                          static_cast<std::int64_t>(cfg.persons_max)));
  for (std::size_t i = 0; i < n; ++i) {
    Person p;
    p.head_z = cfg.person_head_height.sample(rng);
    p.head_radius = cfg.head_diameter / 2;
    p.heading = rng.uniform(0.0, 2 * M_PI);
    p.speed = cfg.walk_speed.sample(rng);
    p.turn_in_s = rng.uniform(1.0, 4.0);
    bool placed = false;
    for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
      p.x = rng.uniform(detail::kWallMargin, cfg.room_width - detail::kWallMargin);
      p.y = rng.uniform(detail::kNearLimit, cfg.room_depth - detail::kWallMargin);
      placed = detail::admissible(cfg, view, s.persons, s.persons.size(), p);
    }
    if (placed) s.persons.push_back(p);
  }
  return s;
}

/// Straight segments with random turn times. A walker turns instead of
/// stepping into a wall, another walker, or out of the camera view.
inline void step_walkers(const SceneConfig& cfg, const CameraPose& view, Scene& s, double dt, Rng& rng) {
  for (std::size_t i = 0; i < s.persons.size(); ++i) {
    Person& p = s.persons[i];
    p.turn_in_s -= dt;
    if (p.turn_in_s <= 0) {
      p.heading = rng.uniform(0.0, 2 * M_PI);
      p.turn_in_s = rng.uniform(1.0, 4.0);
    }
    for (int attempt = 0; attempt < 8; ++attempt) {
      Person next = p;
      next.x += std::cos(p.heading) * p.speed * dt;
      next.y += std::sin(p.heading) * p.speed * dt;
      if (detail::admissible(cfg, view, s.persons, i, next)) {
        p = next;
        break;
      }
      p.heading = rng.uniform(0.0, 2 * M_PI);
    }
  }
}

/// Renders `scene` from a jittered copy of `base`. Jitter draws that would
/// push a head out of the frame are redrawn; after a few tries the base pose
/// is used.
inline DepthFrame generate_frame(const SceneConfig& cfg, const Scene& scene, const CameraPose& base,
                                 Rng& rng) {
  CameraPose pose = base;
  for (int attempt = 0; attempt < 8; ++attempt) {
    const CameraPose candidate = jitter_camera(cfg, base, rng);
    const bool all_visible = std::all_of(scene.persons.begin(), scene.persons.end(), [&](const Person& p) {
      return head_in_view(cfg, candidate, p, 0.0);
    });
    if (all_visible) {
      pose = candidate;
      break;
    }
  }
  return render_frame(cfg, scene, pose, &rng);
}

/// Frame `index` of a dataset. Episodes share the base camera pose, walkers
/// and furniture; pose jitter and sensor noise come from a per-frame stream,
/// so every frame is a pure function of (cfg, index).
inline DepthFrame dataset_frame(const SceneConfig& cfg, std::size_t index) {
  const std::size_t episode = index / cfg.episode_length;
  const std::size_t offset = index % cfg.episode_length;
  Rng walk = Rng::stream(mix_seed(cfg.seed, 0x5ce7e), episode);
  const CameraPose base = sample_camera(cfg, walk);
  Scene scene = sample_scene(cfg, base, walk);
  for (std::size_t k = 0; k < offset; ++k) step_walkers(cfg, base, scene, cfg.frame_interval_s, walk);
  Rng frame_rng = Rng::stream(mix_seed(cfg.seed, 0xf4a3e), index);
  return generate_frame(cfg, scene, base, frame_rng);
}

inline std::uint16_t to_raw(float v) {
  return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 65535.0f));
}

inline float from_raw(std::uint16_t r) { return static_cast<float>(r) / 65535.0f; }

}  // namespace pd3net::synth
