#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "awmoe/udma.hpp"

using namespace awmoe;

namespace {

sim::Frame make_frame(uint64_t seed) {
  nn::Rng rng(seed);
  return sim::generate_scene(rng, sim::SceneConfig::defaults());
}

bool close(double a, double b, double tol = 1e-6) { return std::abs(a - b) <= tol; }

}  // namespace

TEST_CASE("apply_sync: identity spec leaves the frame unchanged") {
  auto frame = make_frame(1);
  auto out = udma::apply_sync(frame, {});
  REQUIRE(out.lidar.size() == frame.lidar.size());
  for (size_t i = 0; i < frame.lidar.size(); ++i) {
    CHECK(out.lidar[i].x == frame.lidar[i].x);
    CHECK(out.lidar[i].y == frame.lidar[i].y);
  }
  for (size_t i = 0; i < frame.gt_boxes.size(); ++i)
    CHECK(out.gt_boxes[i].yaw == frame.gt_boxes[i].yaw);
}

TEST_CASE("apply_sync: flip twice restores the frame") {
  auto frame = make_frame(2);
  udma::AugmentationSpec flip;
  flip.flip_x = true;
  auto twice = udma::apply_sync(udma::apply_sync(frame, flip), flip);
  for (size_t i = 0; i < frame.lidar.size(); ++i) {
    CHECK(close(twice.lidar[i].x, frame.lidar[i].x));
    CHECK(close(twice.lidar[i].y, frame.lidar[i].y));
    CHECK(close(twice.lidar[i].z, frame.lidar[i].z));
  }
  for (size_t i = 0; i < frame.gt_boxes.size(); ++i) {
    CHECK(close(twice.gt_boxes[i].x, frame.gt_boxes[i].x));
    CHECK(close(std::remainder(twice.gt_boxes[i].yaw - frame.gt_boxes[i].yaw,
                               2 * 3.14159265358979323846),
                0.0));
  }
}

TEST_CASE("apply_sync: GT-interior points stay interior under any spec") {
  nn::Rng rng(3);
  for (int round = 0; round < 10; ++round) {
    auto frame = make_frame(100 + round);
    if (frame.gt_boxes.empty()) continue;
    // plant random interior points
    pc::LidarCloud probes;
    std::vector<size_t> owner;
    for (int k = 0; k < 100; ++k) {
      const size_t bi = rng.below(frame.gt_boxes.size());
      const auto& box = frame.gt_boxes[bi];
      const double lx = rng.uniform(-box.dx / 2 + 1e-3, box.dx / 2 - 1e-3);
      const double ly = rng.uniform(-box.dy / 2 + 1e-3, box.dy / 2 - 1e-3);
      const double lz = rng.uniform(-box.dz / 2 + 1e-3, box.dz / 2 - 1e-3);
      const double c = std::cos(box.yaw), s = std::sin(box.yaw);
      probes.push_back({static_cast<float>(box.x + c * lx - s * ly),
                        static_cast<float>(box.y + s * lx + c * ly),
                        static_cast<float>(box.z + lz), 0.5f});
      owner.push_back(bi);
    }
    frame.lidar = probes;
    const auto spec = udma::sample_spec(rng);
    auto out = udma::apply_sync(frame, spec);
    for (size_t i = 0; i < out.lidar.size(); ++i) {
      const auto& p = out.lidar[i];
      CHECK(out.gt_boxes[owner[i]].contains({p.x, p.y, p.z}, 1e-4));
    }
  }
}

TEST_CASE("apply_sync: records the spec matrix for the Eq.-6 chain") {
  auto frame = make_frame(4);
  udma::AugmentationSpec spec{true, 0.3, 1.02};
  auto out = udma::apply_sync(frame, spec);
  const auto m = spec.matrix();
  for (int i = 0; i < 16; ++i) CHECK(close(out.t_lidar_aug.m[i], m.m[i], 1e-12));

  // a lidar point transformed by the recorded matrix matches the cloud
  const auto& p0 = frame.lidar[0];
  const auto q = m.apply({p0.x, p0.y, p0.z});
  CHECK(close(out.lidar[0].x, q.x, 1e-5));
  CHECK(close(out.lidar[0].y, q.y, 1e-5));
}

TEST_CASE("apply_sync: composition matches composed spec") {
  auto frame = make_frame(5);
  nn::Rng rng(6);
  for (int round = 0; round < 8; ++round) {
    const auto s1 = udma::sample_spec(rng);
    const auto s2 = udma::sample_spec(rng);
    auto a = udma::apply_sync(udma::apply_sync(frame, s1), s2);
    auto b = udma::apply_sync(frame, udma::compose(s1, s2));
    // clouds are stored float32: one ulp at 36 m is 3.8e-6 and the two-pass
    // path rounds twice, so points get 1e-5; double-precision boxes get 1e-6
    for (size_t i = 0; i < frame.lidar.size(); i += 37) {
      CHECK(close(a.lidar[i].x, b.lidar[i].x, 1e-5));
      CHECK(close(a.lidar[i].y, b.lidar[i].y, 1e-5));
      CHECK(close(a.lidar[i].z, b.lidar[i].z, 1e-5));
    }
    for (size_t i = 0; i < frame.gt_boxes.size(); ++i) {
      CHECK(close(a.gt_boxes[i].x, b.gt_boxes[i].x));
      CHECK(close(a.gt_boxes[i].dx, b.gt_boxes[i].dx));
      CHECK(close(std::remainder(a.gt_boxes[i].yaw - b.gt_boxes[i].yaw,
                                 2 * 3.14159265358979323846),
                  0.0));
    }
  }
}

TEST_CASE("apply_sync: cross-modal distance ratios preserved by the scale") {
  auto frame = make_frame(7);
  REQUIRE(!frame.radar.empty());
  udma::AugmentationSpec spec{true, -0.4, 0.97};
  auto out = udma::apply_sync(frame, spec);
  for (size_t i = 0; i < 20 && i < frame.lidar.size() && i < frame.radar.size(); ++i) {
    const auto& l0 = frame.lidar[i];
    const auto& r0 = frame.radar[i];
    const double before = std::sqrt(double(l0.x - r0.x) * (l0.x - r0.x) +
                                    double(l0.y - r0.y) * (l0.y - r0.y) +
                                    double(l0.z - r0.z) * (l0.z - r0.z));
    const auto& l1 = out.lidar[i];
    const auto& r1 = out.radar[i];
    const double after = std::sqrt(double(l1.x - r1.x) * (l1.x - r1.x) +
                                   double(l1.y - r1.y) * (l1.y - r1.y) +
                                   double(l1.z - r1.z) * (l1.z - r1.z));
    CHECK(close(after, spec.scale * before, 1e-4));
  }
}

TEST_CASE("build_gt_database: counting and bucket keying") {
  std::vector<sim::Frame> frames;
  size_t total_boxes = 0;
  for (uint64_t s = 0; s < 6; ++s) {
    auto frame = make_frame(200 + s);
    frame.id = s;
    if (s % 2 == 1) {
      nn::Rng wr(300 + s);
      frame = sim::apply_weather(frame, sim::Weather::kFog, wr);
    }
    total_boxes += frame.gt_boxes.size();
    frames.push_back(std::move(frame));
  }
  auto db = udma::build_gt_database(frames);
  CHECK(db.total_entries() == total_boxes);
  for (const auto& e : db.bucket(sim::Weather::kFog))
    CHECK(e.source_weather == sim::Weather::kFog);
  for (const auto& e : db.bucket(sim::Weather::kNormal))
    CHECK(e.source_weather == sim::Weather::kNormal);
  CHECK(db.bucket(sim::Weather::kRain).empty());

  // zero-box frame contributes nothing
  auto cfg = sim::SceneConfig::defaults();
  cfg.min_objects = 0;
  cfg.max_objects = 0;
  nn::Rng rng(8);
  std::vector<sim::Frame> empty_frames = {sim::generate_scene(rng, cfg)};
  CHECK(udma::build_gt_database(empty_frames).total_entries() == 0);
}

TEST_CASE("build_gt_database: stored entries lie in-box and round-trip to source pose") {
  auto frame = make_frame(9);
  frame.id = 77;
  std::vector<sim::Frame> frames = {frame};
  auto db = udma::build_gt_database(frames);
  for (const auto& e : db.bucket(sim::Weather::kNormal)) {
    for (const auto& p : e.lidar) {
      // local-frame containment
      CHECK(std::abs(p.x) <= e.box.dx / 2 + 1e-4);
      CHECK(std::abs(p.y) <= e.box.dy / 2 + 1e-4);
      CHECK(std::abs(p.z) <= e.box.dz / 2 + 1e-4);
      // re-project into the source pose and find it in the original cloud
      const double c = std::cos(e.box.yaw), s = std::sin(e.box.yaw);
      const double wx = e.box.x + c * p.x - s * p.y;
      const double wy = e.box.y + s * p.x + c * p.y;
      const double wz = e.box.z + p.z;
      bool found = false;
      for (const auto& q : frame.lidar)
        if (std::abs(q.x - wx) < 1e-5 && std::abs(q.y - wy) < 1e-5 && std::abs(q.z - wz) < 1e-5) {
          found = true;
          break;
        }
      CHECK(found);
    }
  }
}

TEST_CASE("gt database: file round trip") {
  auto frame = make_frame(10);
  frame.id = 5;
  std::vector<sim::Frame> frames = {frame};
  auto db = udma::build_gt_database(frames);
  const std::string path = "test_gtdb.awgt";
  udma::save_gt_database(path, db);
  auto loaded = udma::load_gt_database(path);
  REQUIRE(loaded.total_entries() == db.total_entries());
  const auto& a = db.bucket(sim::Weather::kNormal);
  const auto& b = loaded.bucket(sim::Weather::kNormal);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].box.x == b[i].box.x);
    CHECK(a[i].lidar.size() == b[i].lidar.size());
    for (size_t j = 0; j < a[i].lidar.size(); ++j) CHECK(a[i].lidar[j].x == b[i].lidar[j].x);
  }
  std::remove(path.c_str());
}

TEST_CASE("wsgts_sample: zero budget, empty bucket, purity, disjointness") {
  auto base = make_frame(11);
  std::vector<sim::Frame> source_frames;
  for (uint64_t s = 0; s < 8; ++s) {
    auto f = make_frame(400 + s);
    f.id = s;
    nn::Rng wr(500 + s);
    f = sim::apply_weather(f, sim::Weather::kRain, wr);
    source_frames.push_back(std::move(f));
  }
  auto db = udma::build_gt_database(source_frames);
  const auto extent = sim::SceneConfig::defaults().extent;

  // zero budget: unchanged
  {
    nn::Rng rng(12);
    auto frame = sim::apply_weather(base, sim::Weather::kRain, rng);
    const auto before = frame.gt_boxes.size();
    auto report = udma::wsgts_sample(frame, db, 0, rng, extent);
    CHECK(report.inserted.empty());
    CHECK(frame.gt_boxes.size() == before);
  }

  // empty bucket for this weather: inserts nothing, reports zero
  {
    nn::Rng rng(13);
    auto frame = sim::apply_weather(base, sim::Weather::kFog, rng);
    auto report = udma::wsgts_sample(frame, db, 4, rng, extent);
    CHECK(report.inserted.empty());
  }

  // matching bucket: same-weather provenance and IoU-0 placement
  {
    nn::Rng rng(14);
    auto frame = sim::apply_weather(base, sim::Weather::kRain, rng);
    const size_t before_boxes = frame.gt_boxes.size();
    const size_t before_points = frame.lidar.size();
    auto report = udma::wsgts_sample(frame, db, 5, rng, extent);
    CHECK(!report.inserted.empty());
    for (const auto& ins : report.inserted) CHECK(ins.source_weather == sim::Weather::kRain);
    CHECK(frame.gt_boxes.size() == before_boxes + report.inserted.size());
    CHECK(frame.lidar.size() > before_points);
    for (size_t i = 0; i < frame.gt_boxes.size(); ++i)
      for (size_t j = i + 1; j < frame.gt_boxes.size(); ++j)
        CHECK(geom::bev_iou(frame.gt_boxes[i], frame.gt_boxes[j]) == 0.0);
  }
}
