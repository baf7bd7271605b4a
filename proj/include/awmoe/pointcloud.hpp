#pragma once

#include <vector>

#include "awmoe/tensor.hpp"

namespace awmoe::pc {

struct LidarPoint {
  float x = 0, y = 0, z = 0;
  float intensity = 0;  // [0, 1]
};

struct RadarPoint {
  float x = 0, y = 0, z = 0;
  float doppler = 0;  // m/s
  float power = 0;    // arbitrary zero
};

using LidarCloud = std::vector<LidarPoint>;
using RadarCloud = std::vector<RadarPoint>;

struct Extent {
  double x_min = 0, x_max = 0, y_min = 0, y_max = 0;
  bool contains(double x, double y) const {
    return x >= x_min && x < x_max && y >= y_min && y < y_max;
  }
};

/// BEV grid geometry shared by pillarization and the detection head.
/// height = y extent / cell and width = x extent / cell must be integers.
struct GridSpec {
  Extent extent;
  double cell = 1.0;
  double ground_z = 0.75;  // nominal box-center height for head decoding

  int height() const;
  int width() const;
  /// Cell indices for a point inside the extent.
  int col_of(double x) const { return static_cast<int>((x - extent.x_min) / cell); }
  int row_of(double y) const { return static_cast<int>((y - extent.y_min) / cell); }
  double col_center(int ix) const { return extent.x_min + (ix + 0.5) * cell; }
  double row_center(int iy) const { return extent.y_min + (iy + 0.5) * cell; }
  void validate() const;  // throws on non-integral extent/cell ratios
};

/// Pillar features, 4 channels per cell: occupancy (count / max count),
/// mean z, mean intensity-or-power, mean planar offset from the cell center.
struct PillarGrid {
  GridSpec spec;
  nn::Tensor features;  // 4 x H x W
};

inline constexpr int kPillarChannels = 4;

LidarCloud crop(const LidarCloud& cloud, const Extent& extent);
RadarCloud crop(const RadarCloud& cloud, const Extent& extent);

PillarGrid pillarize(const LidarCloud& cloud, const GridSpec& spec);
PillarGrid pillarize(const RadarCloud& cloud, const GridSpec& spec);

}  // namespace awmoe::pc
