#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "awmoe/weathersim.hpp"

namespace awmoe::udma {

/// One synchronized flip/rotate/scale draw. The induced map is the similarity
/// scale * Rz(yaw) * F applied identically to both clouds and every GT box;
/// it is also recorded on the frame as T_lidar_aug for the Eq.-6 chain.
struct AugmentationSpec {
  bool flip_x = false;  // mirror across the x axis (y -> -y)
  double yaw = 0.0;     // radians
  double scale = 1.0;

  geom::Mat4 matrix() const;
  bool is_identity() const { return !flip_x && yaw == 0.0 && scale == 1.0; }
};

/// Spec equivalent to applying `first` then `second`.
AugmentationSpec compose(const AugmentationSpec& first, const AugmentationSpec& second);

struct AugmentationRanges {
  double max_yaw = 3.14159265358979323846 / 4;  // [-pi/4, pi/4]
  double min_scale = 0.95, max_scale = 1.05;
  double flip_probability = 0.5;
};

AugmentationSpec sample_spec(nn::Rng& rng, const AugmentationRanges& ranges = {});

/// Applies the spec to lidar, radar, and GT boxes; weather tag and image are
/// untouched; frame.t_lidar_aug accumulates the transform.
sim::Frame apply_sync(const sim::Frame& frame, const AugmentationSpec& spec);

/// One stored object: box plus both modalities' in-box points expressed in
/// the box frame (origin at center, x along heading).
struct GtEntry {
  geom::Box3D box;
  std::vector<pc::LidarPoint> lidar;  // box-local
  std::vector<pc::RadarPoint> radar;  // box-local
  uint64_t source_frame = 0;
  sim::Weather source_weather = sim::Weather::kNormal;
};

struct GtDatabase {
  std::array<std::vector<GtEntry>, sim::kNumWeather> buckets;

  size_t total_entries() const;
  const std::vector<GtEntry>& bucket(sim::Weather w) const {
    return buckets[static_cast<size_t>(w)];
  }
};

/// Crops every GT box's points from both modalities and stores them under the
/// frame's weather key (WSGTS keying).
GtDatabase build_gt_database(std::span<const sim::Frame> frames);

void save_gt_database(const std::string& path, const GtDatabase& db);
GtDatabase load_gt_database(const std::string& path);

struct InsertedObject {
  uint64_t source_frame = 0;
  sim::Weather source_weather = sim::Weather::kNormal;
  size_t box_index = 0;  // index appended into frame.gt_boxes
};

struct InsertionReport {
  std::vector<InsertedObject> inserted;
};

/// Weather-Specific GT Sampling: draws up to max_insert entries from the
/// frame's own weather bucket only and places each at a collision-free pose
/// (BEV IoU exactly 0 against all boxes, bounded retries). Returns provenance
/// for the purity audit. An empty bucket inserts nothing.
InsertionReport wsgts_sample(sim::Frame& frame, const GtDatabase& db, int max_insert,
                             nn::Rng& rng, const pc::Extent& placement_extent,
                             int max_retries = 20);

}  // namespace awmoe::udma
