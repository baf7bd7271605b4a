#pragma once

#include <array>
#include <span>
#include <utility>
#include <vector>

namespace awmoe::geom {

struct Vec2 {
  double x = 0, y = 0;
};

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

/// Oriented 3D box: center (x, y, z), sizes (dx along heading, dy lateral,
/// dz vertical, all > 0), yaw about +z in (-pi, pi]. Vertical extent is
/// z +- dz/2.
struct Box3D {
  double x = 0, y = 0, z = 0;
  double dx = 1, dy = 1, dz = 1;
  double yaw = 0;

  std::array<Vec2, 4> footprint() const;  // CCW corners
  double footprint_area() const { return dx * dy; }
  double volume() const { return dx * dy * dz; }
  bool contains(const Vec3& p, double eps = 0.0) const;
  bool valid() const;
};

/// 4x4 homogeneous matrix, row-major. Used both for rigid transforms and for
/// the similarity (rotation * scale) produced by augmentation.
struct Mat4 {
  std::array<double, 16> m{};

  static Mat4 identity();
  static Mat4 translation(double x, double y, double z);
  static Mat4 rotation_z(double yaw);
  static Mat4 scaling(double s);

  double& at(int r, int c) { return m[static_cast<size_t>(r) * 4 + c]; }
  double at(int r, int c) const { return m[static_cast<size_t>(r) * 4 + c]; }

  Mat4 operator*(const Mat4& o) const;
  Vec3 apply(const Vec3& p) const;  // homogeneous point, w = 1
  Mat4 inverse() const;             // Gauss-Jordan with partial pivoting
};

/// Pinhole intrinsics with the conventional [fx 0 cx; 0 fy cy; 0 0 1] layout.
struct CameraIntrinsics {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 0, height = 0;

  bool valid() const { return fx > 0 && fy > 0; }
  /// Rescaled copy for a feature grid of different resolution.
  CameraIntrinsics scaled(double sx, double sy) const;
};

/// Rotated-footprint intersection over union; symmetric, in [0, 1].
double bev_iou(const Box3D& a, const Box3D& b);

/// BEV intersection area times vertical overlap over volume union.
double iou_3d(const Box3D& a, const Box3D& b);

/// Intersection area of the two rotated footprints (convex polygon clipping).
double footprint_intersection_area(const Box3D& a, const Box3D& b);

/// P_ego = T_lidar_aug * T_ext * A^-1 * T_img_aug^-1 * (u*d, v*d, d, 1)^T,
/// applied in exactly that order. d must be > 0; singular A is rejected.
Vec3 transform_pixel_to_ego(double u, double v, double d, const CameraIntrinsics& a,
                            const Mat4& t_ext, const Mat4& t_img_aug, const Mat4& t_lidar_aug);

struct PixelProjection {
  enum class Status { kOk, kBehindCamera, kOutOfFrame };
  Status status = Status::kOk;
  double u = 0, v = 0, depth = 0;
};

/// Perspective projection of an ego-frame point through T_ext and A.
/// Behind-camera and out-of-frame results are reported distinctly.
PixelProjection project_to_pixel(const Vec3& p_ego, const CameraIntrinsics& a, const Mat4& t_ext);

/// Weighted fusion of boxes: weights renormalized to sum 1, center and sizes
/// averaged linearly, yaw by circular mean after aligning each yaw to the
/// highest-weight member's hemisphere. A single-element span returns its box
/// unchanged. Throws on an empty span or non-positive weight.
Box3D weighted_box_mean(std::span<const std::pair<Box3D, double>> boxes);

}  // namespace awmoe::geom
