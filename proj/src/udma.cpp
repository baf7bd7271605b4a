#include "awmoe/udma.hpp"

#include <cmath>
#include <stdexcept>

#include "awmoe/bytes.hpp"

namespace awmoe::udma {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr char kDbMagic[4] = {'A', 'W', 'G', 'T'};
constexpr uint32_t kDbVersion = 1;

struct Similarity {
  double c, s, scale;
  bool flip;
  // p' = scale * Rz(yaw) * F, with F negating y when flip is set
  void apply(double x, double y, double z, double* ox, double* oy, double* oz) const {
    const double fy = flip ? -y : y;
    *ox = scale * (c * x - s * fy);
    *oy = scale * (s * x + c * fy);
    *oz = scale * z;
  }
};

Similarity as_similarity(const AugmentationSpec& spec) {
  return {std::cos(spec.yaw), std::sin(spec.yaw), spec.scale, spec.flip_x};
}

}  // namespace

geom::Mat4 AugmentationSpec::matrix() const {
  geom::Mat4 flip = geom::Mat4::identity();
  if (flip_x) flip.at(1, 1) = -1.0;
  return geom::Mat4::scaling(scale) * geom::Mat4::rotation_z(yaw) * flip;
}

AugmentationSpec compose(const AugmentationSpec& first, const AugmentationSpec& second) {
  // F R(a) F = R(-a), so pulling the second flip left of the first rotation
  // negates the first yaw.
  AugmentationSpec out;
  out.flip_x = first.flip_x != second.flip_x;
  out.yaw = second.yaw + (second.flip_x ? -first.yaw : first.yaw);
  out.scale = first.scale * second.scale;
  return out;
}

AugmentationSpec sample_spec(nn::Rng& rng, const AugmentationRanges& ranges) {
  AugmentationSpec spec;
  spec.flip_x = rng.uniform() < ranges.flip_probability;
  spec.yaw = rng.uniform(-ranges.max_yaw, ranges.max_yaw);
  spec.scale = rng.uniform(ranges.min_scale, ranges.max_scale);
  return spec;
}

sim::Frame apply_sync(const sim::Frame& frame, const AugmentationSpec& spec) {
  sim::Frame out = frame;
  const Similarity sim3 = as_similarity(spec);

  for (auto& p : out.lidar) {
    double x, y, z;
    sim3.apply(p.x, p.y, p.z, &x, &y, &z);
    p.x = static_cast<float>(x);
    p.y = static_cast<float>(y);
    p.z = static_cast<float>(z);
  }
  for (auto& p : out.radar) {
    double x, y, z;
    sim3.apply(p.x, p.y, p.z, &x, &y, &z);
    p.x = static_cast<float>(x);
    p.y = static_cast<float>(y);
    p.z = static_cast<float>(z);
  }
  for (auto& box : out.gt_boxes) {
    double x, y, z;
    sim3.apply(box.x, box.y, box.z, &x, &y, &z);
    box.x = x;
    box.y = y;
    box.z = z;
    box.yaw = geom::wrap_angle((spec.flip_x ? -box.yaw : box.yaw) + spec.yaw);
    box.dx *= spec.scale;
    box.dy *= spec.scale;
    box.dz *= spec.scale;
  }
  out.t_lidar_aug = spec.matrix() * frame.t_lidar_aug;
  return out;
}

// ---------------------------------------------------------------------------
// GT database

size_t GtDatabase::total_entries() const {
  size_t n = 0;
  for (const auto& b : buckets) n += b.size();
  return n;
}

GtDatabase build_gt_database(std::span<const sim::Frame> frames) {
  GtDatabase db;
  for (const auto& frame : frames) {
    for (const auto& box : frame.gt_boxes) {
      GtEntry entry;
      entry.box = box;
      entry.source_frame = frame.id;
      entry.source_weather = frame.weather;
      const double c = std::cos(box.yaw), s = std::sin(box.yaw);
      for (const auto& p : frame.lidar) {
        if (!box.contains({p.x, p.y, p.z}, 1e-6)) continue;
        const double rx = p.x - box.x, ry = p.y - box.y;
        pc::LidarPoint q = p;
        q.x = static_cast<float>(c * rx + s * ry);
        q.y = static_cast<float>(-s * rx + c * ry);
        q.z = static_cast<float>(p.z - box.z);
        entry.lidar.push_back(q);
      }
      for (const auto& p : frame.radar) {
        if (!box.contains({p.x, p.y, p.z}, 1e-6)) continue;
        const double rx = p.x - box.x, ry = p.y - box.y;
        pc::RadarPoint q = p;
        q.x = static_cast<float>(c * rx + s * ry);
        q.y = static_cast<float>(-s * rx + c * ry);
        q.z = static_cast<float>(p.z - box.z);
        entry.radar.push_back(q);
      }
      db.buckets[static_cast<size_t>(frame.weather)].push_back(std::move(entry));
    }
  }
  return db;
}

void save_gt_database(const std::string& path, const GtDatabase& db) {
  bytes::Writer w;
  w.raw(kDbMagic, 4);
  w.u32(kDbVersion);
  for (const auto& bucket : db.buckets) {
    w.u32(static_cast<uint32_t>(bucket.size()));
    for (const auto& e : bucket) {
      w.f64(e.box.x);
      w.f64(e.box.y);
      w.f64(e.box.z);
      w.f64(e.box.dx);
      w.f64(e.box.dy);
      w.f64(e.box.dz);
      w.f64(e.box.yaw);
      w.u64(e.source_frame);
      w.u32(static_cast<uint32_t>(e.source_weather));
      w.u32(static_cast<uint32_t>(e.lidar.size()));
      for (const auto& p : e.lidar) {
        w.f32(p.x);
        w.f32(p.y);
        w.f32(p.z);
        w.f32(p.intensity);
      }
      w.u32(static_cast<uint32_t>(e.radar.size()));
      for (const auto& p : e.radar) {
        w.f32(p.x);
        w.f32(p.y);
        w.f32(p.z);
        w.f32(p.doppler);
        w.f32(p.power);
      }
    }
  }
  bytes::write_file(path, w.bytes());
}

GtDatabase load_gt_database(const std::string& path) {
  const auto raw = bytes::read_file(path);
  bytes::Reader r(raw);
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8());
  if (std::string(magic, 4) != std::string(kDbMagic, 4))
    throw std::runtime_error("gt database: bad magic: " + path);
  if (r.u32() != kDbVersion) throw std::runtime_error("gt database: unsupported version");
  GtDatabase db;
  for (auto& bucket : db.buckets) {
    bucket.resize(r.u32());
    for (auto& e : bucket) {
      e.box.x = r.f64();
      e.box.y = r.f64();
      e.box.z = r.f64();
      e.box.dx = r.f64();
      e.box.dy = r.f64();
      e.box.dz = r.f64();
      e.box.yaw = r.f64();
      e.source_frame = r.u64();
      e.source_weather = static_cast<sim::Weather>(r.u32());
      e.lidar.resize(r.u32());
      for (auto& p : e.lidar) {
        p.x = r.f32();
        p.y = r.f32();
        p.z = r.f32();
        p.intensity = r.f32();
      }
      e.radar.resize(r.u32());
      for (auto& p : e.radar) {
        p.x = r.f32();
        p.y = r.f32();
        p.z = r.f32();
        p.doppler = r.f32();
        p.power = r.f32();
      }
    }
  }
  return db;
}

InsertionReport wsgts_sample(sim::Frame& frame, const GtDatabase& db, int max_insert,
                             nn::Rng& rng, const pc::Extent& placement_extent, int max_retries) {
  InsertionReport report;
  const auto& bucket = db.bucket(frame.weather);
  if (bucket.empty() || max_insert <= 0) return report;

  for (int k = 0; k < max_insert; ++k) {
    const GtEntry& entry = bucket[rng.below(bucket.size())];
    for (int attempt = 0; attempt < max_retries; ++attempt) {
      geom::Box3D box = entry.box;
      box.x = rng.uniform(placement_extent.x_min + box.dx / 2,
                          placement_extent.x_max - box.dx / 2);
      box.y = rng.uniform(placement_extent.y_min + box.dx / 2,
                          placement_extent.y_max - box.dx / 2);
      box.yaw = geom::wrap_angle(rng.uniform(-kPi, kPi));
      bool clear = true;
      for (const auto& other : frame.gt_boxes)
        if (geom::bev_iou(box, other) > 0.0) {
          clear = false;
          break;
        }
      if (!clear) continue;

      const double c = std::cos(box.yaw), s = std::sin(box.yaw);
      for (const auto& p : entry.lidar) {
        pc::LidarPoint q = p;
        q.x = static_cast<float>(box.x + c * p.x - s * p.y);
        q.y = static_cast<float>(box.y + s * p.x + c * p.y);
        q.z = static_cast<float>(box.z + p.z);
        frame.lidar.push_back(q);
      }
      for (const auto& p : entry.radar) {
        pc::RadarPoint q = p;
        q.x = static_cast<float>(box.x + c * p.x - s * p.y);
        q.y = static_cast<float>(box.y + s * p.x + c * p.y);
        q.z = static_cast<float>(box.z + p.z);
        frame.radar.push_back(q);
      }
      frame.gt_boxes.push_back(box);
      report.inserted.push_back({entry.source_frame, entry.source_weather,
                                 frame.gt_boxes.size() - 1});
      break;
    }
  }
  return report;
}

}  // namespace awmoe::udma
