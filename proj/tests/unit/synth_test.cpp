// Copyright 2026 The PD3Net Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pd3net/dataset.hpp"

namespace pd3net {
namespace {

using synth::CameraPose;
using synth::Person;
using synth::Scene;
using synth::SceneConfig;

CameraPose level_pose() {
  CameraPose p;
  p.origin = {3.0, 0.15, 2.5};
  p.tilt_rad = 35.0 * M_PI / 180.0;
  return p;
}

Person person_at(double x, double y, double head_z) {
  Person p;
  p.x = x;
  p.y = y;
  p.head_z = head_z;
  return p;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("pd3net_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Render, EmptyRoomHasNoAnnotations) {
  SceneConfig cfg;
  const auto f = synth::render_frame(cfg, Scene{}, level_pose(), nullptr);
  EXPECT_TRUE(f.annotations.empty());
  ASSERT_EQ(f.values.size(), cfg.height * cfg.width);
  for (float v : f.values) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Render, CentredPersonStandsAboveFloor) {
  SceneConfig cfg;
  CameraPose pose = level_pose();
  // Shallow tilt so a head 3 m along the optical axis sits at standing height.
  pose.tilt_rad = std::asin(0.8 / 3.0);
  const synth::Camera cam(pose, cfg.height, cfg.width, cfg.horizontal_fov_deg);
  const synth::Vec3 head = pose.origin + cam.ray((cfg.width - 1) / 2.0, (cfg.height - 1) / 2.0) * 3.0;
  Scene scene;
  scene.persons.push_back(person_at(head.x, head.y, head.z));
  const auto with = synth::render_frame(cfg, scene, pose, nullptr);
  const auto without = synth::render_frame(cfg, Scene{}, pose, nullptr);
  ASSERT_EQ(with.annotations.size(), 1u);
  const auto& a = with.annotations[0];
  EXPECT_NEAR(a.u, (cfg.width - 1) / 2.0, 1e-9);
  EXPECT_NEAR(a.v, (cfg.height - 1) / 2.0, 1e-9);
  EXPECT_EQ(a.occlusion, 0.0);
  const std::size_t px = static_cast<std::size_t>(std::lround(a.v)) * cfg.width + static_cast<std::size_t>(std::lround(a.u));
  EXPECT_LT(with.values[px], without.values[px]);
  const double head_depth = (3.0 - 0.09 - cfg.depth_min) / (cfg.depth_max - cfg.depth_min);
  EXPECT_NEAR(with.values[px], head_depth, 0.02);
}

TEST(Render, CollinearHeadsOcclude) {
  SceneConfig cfg;
  const CameraPose pose = level_pose();
  const Person near = person_at(3.0, 2.0, 1.7);
  const synth::Vec3 ray = near.head() - pose.origin;
  const synth::Vec3 far_head = pose.origin + ray * 1.8;
  Scene scene;
  scene.persons = {near, person_at(far_head.x, far_head.y, far_head.z)};
  const auto f = synth::render_frame(cfg, scene, pose, nullptr);
  ASSERT_EQ(f.annotations.size(), 2u);
  EXPECT_LT(f.annotations[0].occlusion, 0.01);
  EXPECT_GT(f.annotations[1].occlusion, 0.5);
}

TEST(Camera, ProjectionInvertsRay) {
  SceneConfig cfg;
  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    const CameraPose pose = synth::sample_camera(cfg, rng);
    const synth::Camera cam(pose, cfg.height, cfg.width, cfg.horizontal_fov_deg);
    const synth::Vec3 p{rng.uniform(0.5, 5.5), rng.uniform(1.0, 7.0), rng.uniform(0.0, 2.0)};
    const auto a = cam.project(p);
    ASSERT_TRUE(a.has_value());
    const synth::Vec3 back = pose.origin + cam.ray(a->u, a->v) * cam.depth_of(p);
    EXPECT_NEAR(back.x, p.x, 1e-9);
    EXPECT_NEAR(back.y, p.y, 1e-9);
    EXPECT_NEAR(back.z, p.z, 1e-9);
  }
}

TEST(RawDepth, QuantizationRoundTrip) {
  for (std::uint32_t r = 0; r <= 65535; r += 97) {
    EXPECT_EQ(synth::to_raw(synth::from_raw(static_cast<std::uint16_t>(r))), r);
  }
  EXPECT_EQ(synth::to_raw(-1.0f), 0);
  EXPECT_EQ(synth::to_raw(2.0f), 65535);
}

TEST(Dataset, FramesAreDeterministicAndPopulated) {
  SceneConfig cfg;
  const auto a = synthesize_dataset(cfg, 200);
  const auto b = synthesize_dataset(cfg, 200);
  ASSERT_EQ(a.size(), 200u);
  std::size_t total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a.samples[i].depth, b.samples[i].depth);
    const std::size_t n = a.samples[i].annotations.size();
    EXPECT_GE(n, 1u) << i;
    EXPECT_LE(n, 4u) << i;
    total += n;
  }
  EXPECT_GT(total, 300u);
  SceneConfig other = cfg;
  other.seed = 2;
  EXPECT_NE(synthesize_dataset(other, 1).samples[0].depth, a.samples[0].depth);
}

TEST(Dataset, DiskRoundTripIndependentOfJobs) {
  SceneConfig cfg;
  const auto d1 = scratch("gen1"), d2 = scratch("gen4");
  generate_dataset(cfg, 12, d1, 1);
  generate_dataset(cfg, 12, d2, 4);
  EXPECT_EQ(slurp(d1 / kManifestName), slurp(d2 / kManifestName));
  const auto loaded = load_dataset(d1);
  const auto memory = synthesize_dataset(cfg, 12);
  ASSERT_EQ(loaded.size(), 12u);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(slurp(d1 / "frames" / (std::string(6 - std::to_string(i).size(), '0') + std::to_string(i) + ".u16")),
              slurp(d2 / "frames" / (std::string(6 - std::to_string(i).size(), '0') + std::to_string(i) + ".u16")));
    EXPECT_EQ(loaded.samples[i].depth, memory.samples[i].depth);
    ASSERT_EQ(loaded.samples[i].annotations.size(), memory.samples[i].annotations.size());
  }
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}

TEST(Dataset, TruncatedFrameIsDetected) {
  SceneConfig cfg;
  const auto dir = scratch("trunc");
  generate_dataset(cfg, 2, dir, 1);
  std::filesystem::resize_file(dir / "frames" / "000001.u16", 100);
  EXPECT_THROW(load_dataset(dir), TruncatedError);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_dataset(dir), IoError);
}

TEST(Dataset, SplitTwoThirds) {
  SceneConfig cfg;
  cfg.height = 12;
  cfg.width = 16;
  const auto all = synthesize_dataset(cfg, 200);
  const auto [train, val] = split_dataset(all, 0.67);
  EXPECT_EQ(train.size(), 134u);
  EXPECT_EQ(val.size(), 66u);
  EXPECT_EQ(val.samples[0].depth, all.samples[134].depth);
  EXPECT_THROW(split_dataset(all, 1.0), ParameterError);
}

TEST(SceneConfig, ParsesKeyValueFile) {
  std::istringstream text("# desk\nheight = 30\nwidth=40\npersons_max = 2\nroom_width = 5.5\n");
  const auto cfg = SceneConfig::from(KeyValueConfig::parse(text, "inline"));
  EXPECT_EQ(cfg.height, 30u);
  EXPECT_EQ(cfg.width, 40u);
  EXPECT_EQ(cfg.persons_max, 2u);
  EXPECT_EQ(cfg.room_width, 5.5);
  std::istringstream bad("persons_min = 5\npersons_max = 2\n");
  EXPECT_THROW(SceneConfig::from(KeyValueConfig::parse(bad, "inline")), ParameterError);
  std::istringstream garbage("height = tall\n");
  EXPECT_THROW(SceneConfig::from(KeyValueConfig::parse(garbage, "inline")), FormatError);
}

}  // namespace
}  // namespace pd3net
