#pragma once

#include <utility>
#include <vector>

#include "awmoe/geometry.hpp"
#include "awmoe/iwr.hpp"
#include "awmoe/nn.hpp"
#include "awmoe/pointcloud.hpp"
#include "awmoe/weathersim.hpp"

namespace awmoe::lrc {

inline constexpr int kDepthBinCount = 24;   // D1 = D2
inline constexpr int kContextChannels = 16;  // C2
inline constexpr int kCameraBevChannels = 16;

/// Uniform depth bins over [d_min, d_max).
struct DepthBins {
  double d_min = 1.0;
  double d_max = 49.0;
  int count = kDepthBinCount;

  double width() const { return (d_max - d_min) / count; }
  double center(int k) const { return d_min + (k + 0.5) * width(); }
  /// Bin index, or -1 when the depth lies outside [d_min, d_max).
  int index_of(double d) const {
    if (d < d_min || d >= d_max) return -1;
    return static_cast<int>((d - d_min) / width());
  }
};

/// Projects the cloud through A (already scaled to the target resolution,
/// with width/height giving the map extent) and one-hot encodes the nearest
/// hit per pixel: D1 x H x W with at most one nonzero bin per column.
nn::Tensor lidar_to_sparse_depth(const pc::LidarCloud& cloud, const geom::CameraIntrinsics& a,
                                 const geom::Mat4& t_ext, const DepthBins& bins);

/// Shared conv trunk over [conv(sparse depth); f_img] with a context head and
/// a depth-logit head.
class DepthNet {
 public:
  DepthNet(int image_channels, nn::Rng& init_rng);

  std::pair<nn::Tensor, nn::Tensor> forward_train(const nn::Tensor& f_img,
                                                  const nn::Tensor& sparse_depth);
  std::pair<nn::Tensor, nn::Tensor> infer(const nn::Tensor& f_img,
                                          const nn::Tensor& sparse_depth) const;
  /// Returns (grad f_img, grad sparse depth).
  std::pair<nn::Tensor, nn::Tensor> backward(const nn::Tensor& grad_context,
                                             const nn::Tensor& grad_depth_logits);
  std::vector<nn::LayerParams*> params();

 private:
  int image_channels_;
  nn::Conv2d sparse_conv_;
  nn::ReLU sparse_relu_;
  nn::Conv2d trunk_;
  nn::ReLU trunk_relu_;
  nn::Conv2d context_head_;
  nn::Conv2d depth_head_;
};

/// Per-pixel softmax over the leading (depth) channel dimension.
nn::Tensor softmax_channels(const nn::Tensor& logits);
nn::Tensor softmax_channels_backward(const nn::Tensor& probs, const nn::Tensor& grad);

/// Eq.-5 outer product: frustum(d, c, u, v) = d_prob(d, u, v) * context(c, u, v).
nn::Tensor lift(const nn::Tensor& d_prob, const nn::Tensor& f_context);
std::pair<nn::Tensor, nn::Tensor> lift_backward(const nn::Tensor& grad_frustum,
                                                const nn::Tensor& d_prob,
                                                const nn::Tensor& f_context);

struct VoxelSpec {
  pc::GridSpec bev;
  double z_min = -0.5;
  double z_max = 5.5;
  int z_bins = 3;
};

/// Maps every frustum cell through the Eq.-6 chain, sums features landing in
/// the same voxel, and flattens the z slabs into channels:
/// (z_bins * C2) x H_bev x W_bev. Sum pooling keeps the op linear.
nn::Tensor splat_scatter(const nn::Tensor& frustum, const geom::CameraIntrinsics& a,
                         const geom::Mat4& t_ext, const geom::Mat4& t_img_aug,
                         const geom::Mat4& t_lidar_aug, const DepthBins& bins,
                         const VoxelSpec& voxels);
nn::Tensor splat_scatter_backward(const nn::Tensor& grad_out, const geom::CameraIntrinsics& a,
                                  const geom::Mat4& t_ext, const geom::Mat4& t_img_aug,
                                  const geom::Mat4& t_lidar_aug, const DepthBins& bins,
                                  const VoxelSpec& voxels, const std::vector<int>& frustum_shape);

/// Eq.-7 fusion: concat [f^c, f^l, f^r] then two linear conv layers.
class FusionConvs {
 public:
  FusionConvs(int camera_channels, int lidar_channels, int radar_channels, int out_channels,
              nn::Rng& init_rng);

  nn::Tensor forward_train(const nn::Tensor& fc, const nn::Tensor& fl, const nn::Tensor& fr);
  nn::Tensor infer(const nn::Tensor& fc, const nn::Tensor& fl, const nn::Tensor& fr) const;
  /// Gradients w.r.t. (f^c, f^l, f^r).
  std::vector<nn::Tensor> backward(const nn::Tensor& grad_out);
  std::vector<nn::LayerParams*> params();
  nn::Conv2d& conv1() { return c1_; }
  nn::Conv2d& conv2() { return c2_; }

 private:
  int cc_, cl_, cr_;
  nn::Conv2d c1_, c2_;
};

/// The full AW-MoE-LRC camera branch: image backbone (same stem + first two
/// depthwise-separable blocks as the weather classifier), LiDAR-guided
/// DepthNet, Eq.-5 lift, Eq.-6 splat onto the detection BEV grid, a
/// channel-reducing conv, and Eq.-7 tri-modal fusion.
class CameraBranch {
 public:
  CameraBranch(const pc::GridSpec& bev_grid, nn::Rng& init_rng);

  struct Intermediates {
    nn::Tensor f_img, sparse_depth, context, depth_logits, d_prob, frustum, scattered, f_camera;
  };

  /// f^f from the frame's image/cloud plus the shared BEV features.
  nn::Tensor run(const sim::Frame& frame, const nn::Tensor& f_lidar, const nn::Tensor& f_radar,
                 Intermediates* inter = nullptr) const;

  const DepthBins& bins() const { return bins_; }
  const VoxelSpec& voxels() const { return voxels_; }
  std::vector<nn::LayerParams*> params();

 private:
  DepthBins bins_;
  VoxelSpec voxels_;
  nn::Conv2d stem_;
  nn::ReLU stem_relu_;
  nn::DepthwiseSeparableBlock b1_, b2_;
  DepthNet depthnet_;
  nn::Conv2d bev_reduce_;
  FusionConvs fuse_;
};

}  // namespace awmoe::lrc
