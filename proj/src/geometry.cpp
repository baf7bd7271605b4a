#include "awmoe/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace awmoe::geom {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

std::array<Vec2, 4> Box3D::footprint() const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  const double hx = dx / 2, hy = dy / 2;
  // CCW in the box frame
  const double lx[4] = {hx, -hx, -hx, hx};
  const double ly[4] = {hy, hy, -hy, -hy};
  std::array<Vec2, 4> out;
  for (int i = 0; i < 4; ++i) {
    out[i].x = x + c * lx[i] - s * ly[i];
    out[i].y = y + s * lx[i] + c * ly[i];
  }
  return out;
}

bool Box3D::contains(const Vec3& p, double eps) const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  const double rx = p.x - x, ry = p.y - y;
  const double lx = c * rx + s * ry;
  const double ly = -s * rx + c * ry;
  const double lz = p.z - z;
  return std::abs(lx) <= dx / 2 + eps && std::abs(ly) <= dy / 2 + eps &&
         std::abs(lz) <= dz / 2 + eps;
}

bool Box3D::valid() const {
  return dx > 0 && dy > 0 && dz > 0 && std::isfinite(x) && std::isfinite(y) && std::isfinite(z) &&
         std::isfinite(yaw);
}

// ---------------------------------------------------------------------------
// Mat4

Mat4 Mat4::identity() {
  Mat4 t;
  for (int i = 0; i < 4; ++i) t.at(i, i) = 1.0;
  return t;
}

Mat4 Mat4::translation(double x, double y, double z) {
  Mat4 t = identity();
  t.at(0, 3) = x;
  t.at(1, 3) = y;
  t.at(2, 3) = z;
  return t;
}

Mat4 Mat4::rotation_z(double yaw) {
  Mat4 t = identity();
  const double c = std::cos(yaw), s = std::sin(yaw);
  t.at(0, 0) = c;
  t.at(0, 1) = -s;
  t.at(1, 0) = s;
  t.at(1, 1) = c;
  return t;
}

Mat4 Mat4::scaling(double s) {
  Mat4 t = identity();
  t.at(0, 0) = t.at(1, 1) = t.at(2, 2) = s;
  return t;
}

Mat4 Mat4::operator*(const Mat4& o) const {
  Mat4 out;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += at(r, k) * o.at(k, c);
      out.at(r, c) = s;
    }
  return out;
}

Vec3 Mat4::apply(const Vec3& p) const {
  const double v[4] = {p.x, p.y, p.z, 1.0};
  double out[4];
  for (int r = 0; r < 4; ++r) {
    double s = 0.0;
    for (int k = 0; k < 4; ++k) s += at(r, k) * v[k];
    out[r] = s;
  }
  const double w = out[3];
  return {out[0] / w, out[1] / w, out[2] / w};
}

Mat4 Mat4::inverse() const {
  // Gauss-Jordan on [A | I] with partial pivoting.
  double a[4][8];
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) a[r][c] = at(r, c);
    for (int c = 0; c < 4; ++c) a[r][4 + c] = (r == c) ? 1.0 : 0.0;
  }
  for (int col = 0; col < 4; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    if (std::abs(a[pivot][col]) < 1e-12) throw std::invalid_argument("Mat4::inverse: singular matrix");
    if (pivot != col)
      for (int c = 0; c < 8; ++c) std::swap(a[pivot][c], a[col][c]);
    const double inv = 1.0 / a[col][col];
    for (int c = 0; c < 8; ++c) a[col][c] *= inv;
    for (int r = 0; r < 4; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      if (f == 0.0) continue;
      for (int c = 0; c < 8; ++c) a[r][c] -= f * a[col][c];
    }
  }
  Mat4 out;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) out.at(r, c) = a[r][4 + c];
  return out;
}

CameraIntrinsics CameraIntrinsics::scaled(double sx, double sy) const {
  CameraIntrinsics out = *this;
  out.fx = fx * sx;
  out.fy = fy * sy;
  out.cx = cx * sx;
  out.cy = cy * sy;
  out.width = static_cast<int>(std::lround(width * sx));
  out.height = static_cast<int>(std::lround(height * sy));
  return out;
}

// ---------------------------------------------------------------------------
// Rotated IoU via sequential half-plane clipping

namespace {

double polygon_area(const std::vector<Vec2>& poly) {
  if (poly.size() < 3) return 0.0;
  double s = 0.0;
  for (size_t i = 0; i < poly.size(); ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % poly.size()];
    s += p.x * q.y - q.x * p.y;
  }
  return 0.5 * std::abs(s);
}

// Clip poly against the half-plane on the left of edge (a -> b).
std::vector<Vec2> clip_edge(const std::vector<Vec2>& poly, const Vec2& a, const Vec2& b) {
  std::vector<Vec2> out;
  out.reserve(poly.size() + 2);
  const double ex = b.x - a.x, ey = b.y - a.y;
  auto side = [&](const Vec2& p) { return ex * (p.y - a.y) - ey * (p.x - a.x); };
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    const double sp = side(p), sq = side(q);
    if (sp >= 0.0) out.push_back(p);
    if ((sp > 0.0 && sq < 0.0) || (sp < 0.0 && sq > 0.0)) {
      const double t = sp / (sp - sq);
      out.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
    }
  }
  return out;
}

}  // namespace

double footprint_intersection_area(const Box3D& a, const Box3D& b) {
  const auto ca = a.footprint();
  const auto cb = b.footprint();
  std::vector<Vec2> poly(ca.begin(), ca.end());
  for (int i = 0; i < 4 && !poly.empty(); ++i) poly = clip_edge(poly, cb[i], cb[(i + 1) % 4]);
  return polygon_area(poly);
}

double bev_iou(const Box3D& a, const Box3D& b) {
  const double inter = footprint_intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.footprint_area() + b.footprint_area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_3d(const Box3D& a, const Box3D& b) {
  const double inter_area = footprint_intersection_area(a, b);
  if (inter_area <= 0.0) return 0.0;
  const double z_lo = std::max(a.z - a.dz / 2, b.z - b.dz / 2);
  const double z_hi = std::min(a.z + a.dz / 2, b.z + b.dz / 2);
  const double h = z_hi - z_lo;
  if (h <= 0.0) return 0.0;
  const double inter = inter_area * h;
  const double uni = a.volume() + b.volume() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Camera chain

Vec3 transform_pixel_to_ego(double u, double v, double d, const CameraIntrinsics& a,
                            const Mat4& t_ext, const Mat4& t_img_aug, const Mat4& t_lidar_aug) {
  if (!(d > 0)) throw std::invalid_argument("transform_pixel_to_ego: depth must be > 0");
  if (!a.valid()) throw std::invalid_argument("transform_pixel_to_ego: singular intrinsics");
  Vec3 p{u * d, v * d, d};
  p = t_img_aug.inverse().apply(p);
  // A^-1 for [fx 0 cx; 0 fy cy; 0 0 1]
  p = Vec3{(p.x - a.cx * p.z) / a.fx, (p.y - a.cy * p.z) / a.fy, p.z};
  p = t_ext.apply(p);
  return t_lidar_aug.apply(p);
}

PixelProjection project_to_pixel(const Vec3& p_ego, const CameraIntrinsics& a, const Mat4& t_ext) {
  const Vec3 pc = t_ext.inverse().apply(p_ego);
  PixelProjection out;
  if (pc.z <= 0.0) {
    out.status = PixelProjection::Status::kBehindCamera;
    return out;
  }
  out.depth = pc.z;
  out.u = a.fx * pc.x / pc.z + a.cx;
  out.v = a.fy * pc.y / pc.z + a.cy;
  if (out.u < 0 || out.u >= a.width || out.v < 0 || out.v >= a.height)
    out.status = PixelProjection::Status::kOutOfFrame;
  return out;
}

// ---------------------------------------------------------------------------
// Weighted fusion (Eq. 10 with renormalized weights)

Box3D weighted_box_mean(std::span<const std::pair<Box3D, double>> boxes) {
  if (boxes.empty()) throw std::invalid_argument("weighted_box_mean: empty set");
  for (const auto& [b, w] : boxes)
    if (!(w > 0)) throw std::invalid_argument("weighted_box_mean: weights must be > 0");
  if (boxes.size() == 1) return boxes[0].first;  // identity after renormalization

  double wsum = 0.0;
  size_t ref_idx = 0;
  for (size_t i = 0; i < boxes.size(); ++i) {
    wsum += boxes[i].second;
    if (boxes[i].second > boxes[ref_idx].second) ref_idx = i;
  }
  const double ref_yaw = boxes[ref_idx].first.yaw;

  Box3D out;
  out.x = out.y = out.z = 0.0;
  out.dx = out.dy = out.dz = 0.0;
  double sy = 0.0, cy = 0.0;
  for (const auto& [b, w] : boxes) {
    const double wn = w / wsum;
    out.x += wn * b.x;
    out.y += wn * b.y;
    out.z += wn * b.z;
    out.dx += wn * b.dx;
    out.dy += wn * b.dy;
    out.dz += wn * b.dz;
    // align heading to the dominant box's hemisphere before the circular mean
    double yaw = b.yaw;
    if (std::cos(yaw - ref_yaw) < 0.0) yaw = wrap_angle(yaw + kPi);
    sy += wn * std::sin(yaw);
    cy += wn * std::cos(yaw);
  }
  out.yaw = wrap_angle(std::atan2(sy, cy));
  return out;
}

}  // namespace awmoe::geom
