#include "awmoe/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <tuple>

namespace awmoe::pc {

namespace {

int extent_cells(double lo, double hi, double cell) {
  const double n = (hi - lo) / cell;
  const double rounded = std::round(n);
  if (cell <= 0 || rounded < 1 || std::abs(n - rounded) > 1e-9)
    throw std::invalid_argument("GridSpec: extent must be an integer number of cells");
  return static_cast<int>(rounded);
}

// Canonical sort key: cell index, then coordinates. Accumulation in sorted
// order makes pillarize exactly permutation-invariant.
template <typename Point>
std::vector<size_t> canonical_order(const std::vector<Point>& pts, const GridSpec& spec) {
  std::vector<size_t> idx(pts.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  const int w = spec.width();
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    const auto& p = pts[a];
    const auto& q = pts[b];
    const long ca = static_cast<long>(spec.row_of(p.y)) * w + spec.col_of(p.x);
    const long cb = static_cast<long>(spec.row_of(q.y)) * w + spec.col_of(q.x);
    return std::tie(ca, p.x, p.y, p.z) < std::tie(cb, q.x, q.y, q.z);
  });
  return idx;
}

template <typename Point, typename AuxFn>
PillarGrid pillarize_impl(const std::vector<Point>& cloud, const GridSpec& spec, AuxFn aux) {
  spec.validate();
  const int h = spec.height(), w = spec.width();
  PillarGrid grid{spec, nn::Tensor({kPillarChannels, h, w})};

  std::vector<Point> inside;
  inside.reserve(cloud.size());
  for (const auto& p : cloud)
    if (spec.extent.contains(p.x, p.y)) inside.push_back(p);
  if (inside.empty()) return grid;

  const auto order = canonical_order(inside, spec);
  const size_t cells = static_cast<size_t>(h) * w;
  std::vector<int> count(cells, 0);
  std::vector<double> sum_z(cells, 0.0), sum_aux(cells, 0.0), sum_off(cells, 0.0);
  for (size_t i : order) {
    const auto& p = inside[i];
    const int ix = spec.col_of(p.x), iy = spec.row_of(p.y);
    const size_t cell = static_cast<size_t>(iy) * w + ix;
    count[cell] += 1;
    sum_z[cell] += p.z;
    sum_aux[cell] += aux(p);
    const double ox = p.x - spec.col_center(ix);
    const double oy = p.y - spec.row_center(iy);
    sum_off[cell] += std::sqrt(ox * ox + oy * oy);
  }
  const int max_count = *std::max_element(count.begin(), count.end());

  float* occ = grid.features.data.data();
  float* mean_z = occ + cells;
  float* mean_aux = mean_z + cells;
  float* mean_off = mean_aux + cells;
  for (size_t c = 0; c < cells; ++c) {
    if (count[c] == 0) continue;
    occ[c] = static_cast<float>(static_cast<double>(count[c]) / max_count);
    mean_z[c] = static_cast<float>(sum_z[c] / count[c]);
    mean_aux[c] = static_cast<float>(sum_aux[c] / count[c]);
    mean_off[c] = static_cast<float>(sum_off[c] / count[c]);
  }
  return grid;
}

}  // namespace

int GridSpec::height() const { return extent_cells(extent.y_min, extent.y_max, cell); }
int GridSpec::width() const { return extent_cells(extent.x_min, extent.x_max, cell); }

void GridSpec::validate() const {
  (void)height();
  (void)width();
}

LidarCloud crop(const LidarCloud& cloud, const Extent& extent) {
  LidarCloud out;
  out.reserve(cloud.size());
  for (const auto& p : cloud)
    if (extent.contains(p.x, p.y)) out.push_back(p);
  return out;
}

RadarCloud crop(const RadarCloud& cloud, const Extent& extent) {
  RadarCloud out;
  out.reserve(cloud.size());
  for (const auto& p : cloud)
    if (extent.contains(p.x, p.y)) out.push_back(p);
  return out;
}

PillarGrid pillarize(const LidarCloud& cloud, const GridSpec& spec) {
  return pillarize_impl(cloud, spec, [](const LidarPoint& p) { return p.intensity; });
}

PillarGrid pillarize(const RadarCloud& cloud, const GridSpec& spec) {
  return pillarize_impl(cloud, spec, [](const RadarPoint& p) { return p.power; });
}

}  // namespace awmoe::pc
