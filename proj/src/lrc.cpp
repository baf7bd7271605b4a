#include "awmoe/lrc.hpp"

#include <cmath>
#include <stdexcept>

#include "awmoe/wse.hpp"

namespace awmoe::lrc {

nn::Tensor lidar_to_sparse_depth(const pc::LidarCloud& cloud, const geom::CameraIntrinsics& a,
                                 const geom::Mat4& t_ext, const DepthBins& bins) {
  if (bins.count < 1 || !(bins.d_max > bins.d_min))
    throw std::invalid_argument("lidar_to_sparse_depth: bins must partition [d_min, d_max)");
  const int h = a.height, w = a.width;
  nn::Tensor out({bins.count, h, w});
  std::vector<double> nearest(static_cast<size_t>(h) * w, 1e300);
  std::vector<int> bin(static_cast<size_t>(h) * w, -1);
  for (const auto& p : cloud) {
    const auto proj = geom::project_to_pixel({p.x, p.y, p.z}, a, t_ext);
    if (proj.status != geom::PixelProjection::Status::kOk) continue;
    const int u = static_cast<int>(proj.u);
    const int v = static_cast<int>(proj.v);
    const size_t px = static_cast<size_t>(v) * w + u;
    if (proj.depth >= nearest[px]) continue;
    const int k = bins.index_of(proj.depth);
    if (k < 0) continue;
    nearest[px] = proj.depth;
    bin[px] = k;
  }
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const size_t px = static_cast<size_t>(v) * w + u;
      if (bin[px] >= 0) out.at3(bin[px], v, u) = 1.0f;
    }
  return out;
}

// ---------------------------------------------------------------------------
// DepthNet

DepthNet::DepthNet(int image_channels, nn::Rng& init_rng)
    : image_channels_(image_channels),
      sparse_conv_(kDepthBinCount, 8, 3, 1, 1),
      trunk_(image_channels + 8, 32, 3, 1, 1),
      context_head_(32, kContextChannels, 1, 1, 0),
      depth_head_(32, kDepthBinCount, 1, 1, 0) {
  sparse_conv_.init_he(init_rng);
  trunk_.init_he(init_rng);
  context_head_.init_he(init_rng);
  depth_head_.init_he(init_rng);
}

namespace {

nn::Tensor concat2(const nn::Tensor& a, const nn::Tensor& b) {
  nn::Tensor out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
  return out;
}

void check_aligned(const nn::Tensor& a, const nn::Tensor& b, const char* where) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
    throw std::invalid_argument(std::string(where) + ": spatial shapes disagree: " +
                                a.shape_str() + " vs " + b.shape_str());
}

}  // namespace

std::pair<nn::Tensor, nn::Tensor> DepthNet::forward_train(const nn::Tensor& f_img,
                                                          const nn::Tensor& sparse_depth) {
  check_aligned(f_img, sparse_depth, "depthnet");
  nn::Tensor s = sparse_relu_.forward(sparse_conv_.forward(sparse_depth));
  nn::Tensor t = trunk_relu_.forward(trunk_.forward(concat2(f_img, s)));
  return {context_head_.forward(t), depth_head_.forward(t)};
}

std::pair<nn::Tensor, nn::Tensor> DepthNet::infer(const nn::Tensor& f_img,
                                                  const nn::Tensor& sparse_depth) const {
  check_aligned(f_img, sparse_depth, "depthnet");
  nn::Tensor s = sparse_relu_.infer(sparse_conv_.infer(sparse_depth));
  nn::Tensor t = trunk_relu_.infer(trunk_.infer(concat2(f_img, s)));
  return {context_head_.infer(t), depth_head_.infer(t)};
}

std::pair<nn::Tensor, nn::Tensor> DepthNet::backward(const nn::Tensor& grad_context,
                                                     const nn::Tensor& grad_depth_logits) {
  nn::Tensor gt = context_head_.backward(grad_context);
  nn::Tensor gt2 = depth_head_.backward(grad_depth_logits);
  for (size_t i = 0; i < gt.data.size(); ++i) gt.data[i] += gt2.data[i];
  nn::Tensor gcat = trunk_.backward(trunk_relu_.backward(gt));
  nn::Tensor g_img({image_channels_, gcat.dim(1), gcat.dim(2)});
  nn::Tensor g_s({8, gcat.dim(1), gcat.dim(2)});
  std::copy(gcat.data.begin(), gcat.data.begin() + g_img.data.size(), g_img.data.begin());
  std::copy(gcat.data.begin() + g_img.data.size(), gcat.data.end(), g_s.data.begin());
  nn::Tensor g_sparse = sparse_conv_.backward(sparse_relu_.backward(g_s));
  return {std::move(g_img), std::move(g_sparse)};
}

std::vector<nn::LayerParams*> DepthNet::params() {
  return {&sparse_conv_.p(), &trunk_.p(), &context_head_.p(), &depth_head_.p()};
}

// ---------------------------------------------------------------------------
// Channel softmax + lift

nn::Tensor softmax_channels(const nn::Tensor& logits) {
  const int d = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  nn::Tensor out(logits.shape);
  const size_t hw = static_cast<size_t>(h) * w;
  for (size_t px = 0; px < hw; ++px) {
    double mx = -1e300;
    for (int k = 0; k < d; ++k) mx = std::max(mx, static_cast<double>(logits.data[k * hw + px]));
    double sum = 0.0;
    for (int k = 0; k < d; ++k) sum += std::exp(static_cast<double>(logits.data[k * hw + px]) - mx);
    for (int k = 0; k < d; ++k)
      out.data[k * hw + px] =
          static_cast<float>(std::exp(static_cast<double>(logits.data[k * hw + px]) - mx) / sum);
  }
  return out;
}

nn::Tensor softmax_channels_backward(const nn::Tensor& probs, const nn::Tensor& grad) {
  const int d = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
  nn::Tensor out(probs.shape);
  const size_t hw = static_cast<size_t>(h) * w;
  for (size_t px = 0; px < hw; ++px) {
    double dot = 0.0;
    for (int k = 0; k < d; ++k)
      dot += static_cast<double>(probs.data[k * hw + px]) * grad.data[k * hw + px];
    for (int k = 0; k < d; ++k)
      out.data[k * hw + px] = static_cast<float>(
          probs.data[k * hw + px] * (static_cast<double>(grad.data[k * hw + px]) - dot));
  }
  return out;
}

nn::Tensor lift(const nn::Tensor& d_prob, const nn::Tensor& f_context) {
  check_aligned(d_prob, f_context, "lift");
  const int d = d_prob.dim(0), c = f_context.dim(0);
  const int h = d_prob.dim(1), w = d_prob.dim(2);
  nn::Tensor out({d, c, h, w});
  const size_t hw = static_cast<size_t>(h) * w;
  for (int k = 0; k < d; ++k)
    for (int ch = 0; ch < c; ++ch) {
      const float* dp = d_prob.data.data() + k * hw;
      const float* cx = f_context.data.data() + ch * hw;
      float* op = out.data.data() + (static_cast<size_t>(k) * c + ch) * hw;
      for (size_t px = 0; px < hw; ++px) op[px] = dp[px] * cx[px];
    }
  return out;
}

std::pair<nn::Tensor, nn::Tensor> lift_backward(const nn::Tensor& grad_frustum,
                                                const nn::Tensor& d_prob,
                                                const nn::Tensor& f_context) {
  const int d = d_prob.dim(0), c = f_context.dim(0);
  const int h = d_prob.dim(1), w = d_prob.dim(2);
  const size_t hw = static_cast<size_t>(h) * w;
  nn::Tensor g_prob(d_prob.shape);
  nn::Tensor g_ctx(f_context.shape);
  for (int k = 0; k < d; ++k)
    for (int ch = 0; ch < c; ++ch) {
      const float* gf = grad_frustum.data.data() + (static_cast<size_t>(k) * c + ch) * hw;
      const float* dp = d_prob.data.data() + k * hw;
      const float* cx = f_context.data.data() + ch * hw;
      float* gp = g_prob.data.data() + k * hw;
      float* gc = g_ctx.data.data() + ch * hw;
      for (size_t px = 0; px < hw; ++px) {
        gp[px] += gf[px] * cx[px];
        gc[px] += gf[px] * dp[px];
      }
    }
  return {std::move(g_prob), std::move(g_ctx)};
}

// ---------------------------------------------------------------------------
// Splat

namespace {

/// Flat voxel-feature index for frustum cell (d, u, v), or -1 if outside.
int voxel_target(int d, int u, int v, const geom::CameraIntrinsics& a, const geom::Mat4& t_ext,
                 const geom::Mat4& t_img_aug, const geom::Mat4& t_lidar_aug,
                 const DepthBins& bins, const VoxelSpec& voxels, int channels) {
  const double depth = bins.center(d);
  const geom::Vec3 p = geom::transform_pixel_to_ego(static_cast<double>(u), static_cast<double>(v),
                                                    depth, a, t_ext, t_img_aug, t_lidar_aug);
  if (!voxels.bev.extent.contains(p.x, p.y)) return -1;
  if (p.z < voxels.z_min || p.z >= voxels.z_max) return -1;
  const int ix = voxels.bev.col_of(p.x);
  const int iy = voxels.bev.row_of(p.y);
  const int iz = static_cast<int>((p.z - voxels.z_min) / ((voxels.z_max - voxels.z_min) / voxels.z_bins));
  const int hb = voxels.bev.height(), wb = voxels.bev.width();
  // channel block iz*channels, spatial (iy, ix)
  return ((iz * channels) * hb + iy) * wb + ix;
}

}  // namespace

nn::Tensor splat_scatter(const nn::Tensor& frustum, const geom::CameraIntrinsics& a,
                         const geom::Mat4& t_ext, const geom::Mat4& t_img_aug,
                         const geom::Mat4& t_lidar_aug, const DepthBins& bins,
                         const VoxelSpec& voxels) {
  const int d = frustum.dim(0), c = frustum.dim(1), h = frustum.dim(2), w = frustum.dim(3);
  const int hb = voxels.bev.height(), wb = voxels.bev.width();
  nn::Tensor out({voxels.z_bins * c, hb, wb});
  const size_t hw = static_cast<size_t>(h) * w;
  const size_t hwb = static_cast<size_t>(hb) * wb;
  for (int k = 0; k < d; ++k)
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) {
        const int base = voxel_target(k, u, v, a, t_ext, t_img_aug, t_lidar_aug, bins, voxels, c);
        if (base < 0) continue;
        for (int ch = 0; ch < c; ++ch) {
          const float f = frustum.data[((static_cast<size_t>(k) * c + ch) * h + v) * w + u];
          out.data[base + ch * hwb] += f;
        }
        (void)hw;
      }
  return out;
}

nn::Tensor splat_scatter_backward(const nn::Tensor& grad_out, const geom::CameraIntrinsics& a,
                                  const geom::Mat4& t_ext, const geom::Mat4& t_img_aug,
                                  const geom::Mat4& t_lidar_aug, const DepthBins& bins,
                                  const VoxelSpec& voxels, const std::vector<int>& frustum_shape) {
  nn::Tensor gin(frustum_shape);
  const int d = frustum_shape[0], c = frustum_shape[1], h = frustum_shape[2], w = frustum_shape[3];
  const int hb = voxels.bev.height(), wb = voxels.bev.width();
  const size_t hwb = static_cast<size_t>(hb) * wb;
  for (int k = 0; k < d; ++k)
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) {
        const int base = voxel_target(k, u, v, a, t_ext, t_img_aug, t_lidar_aug, bins, voxels, c);
        if (base < 0) continue;
        for (int ch = 0; ch < c; ++ch)
          gin.data[((static_cast<size_t>(k) * c + ch) * h + v) * w + u] =
              grad_out.data[base + ch * hwb];
      }
  return gin;
}

// ---------------------------------------------------------------------------
// Fusion convs (Eq. 7)

FusionConvs::FusionConvs(int camera_channels, int lidar_channels, int radar_channels,
                         int out_channels, nn::Rng& init_rng)
    : cc_(camera_channels),
      cl_(lidar_channels),
      cr_(radar_channels),
      c1_(camera_channels + lidar_channels + radar_channels, out_channels, 3, 1, 1),
      c2_(out_channels, out_channels, 3, 1, 1) {
  c1_.init_he(init_rng);
  c2_.init_he(init_rng);
}

nn::Tensor FusionConvs::forward_train(const nn::Tensor& fc, const nn::Tensor& fl,
                                      const nn::Tensor& fr) {
  check_aligned(fc, fl, "fuse_trimodal");
  check_aligned(fl, fr, "fuse_trimodal");
  return c2_.forward(c1_.forward(concat2(concat2(fc, fl), fr)));
}

nn::Tensor FusionConvs::infer(const nn::Tensor& fc, const nn::Tensor& fl,
                              const nn::Tensor& fr) const {
  check_aligned(fc, fl, "fuse_trimodal");
  check_aligned(fl, fr, "fuse_trimodal");
  return c2_.infer(c1_.infer(concat2(concat2(fc, fl), fr)));
}

std::vector<nn::Tensor> FusionConvs::backward(const nn::Tensor& grad_out) {
  nn::Tensor g = c1_.backward(c2_.backward(grad_out));
  const int h = g.dim(1), w = g.dim(2);
  std::vector<nn::Tensor> grads;
  grads.emplace_back(std::vector<int>{cc_, h, w});
  grads.emplace_back(std::vector<int>{cl_, h, w});
  grads.emplace_back(std::vector<int>{cr_, h, w});
  const size_t hw = static_cast<size_t>(h) * w;
  std::copy_n(g.data.begin(), cc_ * hw, grads[0].data.begin());
  std::copy_n(g.data.begin() + cc_ * hw, cl_ * hw, grads[1].data.begin());
  std::copy_n(g.data.begin() + (cc_ + cl_) * hw, cr_ * hw, grads[2].data.begin());
  return grads;
}

std::vector<nn::LayerParams*> FusionConvs::params() { return {&c1_.p(), &c2_.p()}; }

// ---------------------------------------------------------------------------
// CameraBranch

CameraBranch::CameraBranch(const pc::GridSpec& bev_grid, nn::Rng& init_rng)
    : stem_(3, 16, 3, 2, 1),
      b1_(16, 24, 2),
      b2_(24, 32, 2),
      depthnet_(32, init_rng),
      bev_reduce_(VoxelSpec{}.z_bins * kContextChannels, kCameraBevChannels, 3, 1, 1),
      fuse_(kCameraBevChannels, wse::kBackboneChannels, wse::kBackboneChannels, wse::kFusedChannels,
            init_rng) {
  voxels_.bev = bev_grid;
  stem_.init_he(init_rng);
  b1_.init_he(init_rng);
  b2_.init_he(init_rng);
  bev_reduce_.init_he(init_rng);
}

nn::Tensor CameraBranch::run(const sim::Frame& frame, const nn::Tensor& f_lidar,
                             const nn::Tensor& f_radar, Intermediates* inter) const {
  nn::Tensor x = stem_relu_.infer(stem_.infer(frame.image));
  x = b2_.infer(b1_.infer(x));  // 32 x H/8 x W/8

  const double sx = static_cast<double>(x.dim(2)) / frame.calib.intrinsics.width;
  const double sy = static_cast<double>(x.dim(1)) / frame.calib.intrinsics.height;
  const geom::CameraIntrinsics a_feat = frame.calib.intrinsics.scaled(sx, sy);

  nn::Tensor sparse = lidar_to_sparse_depth(frame.lidar, a_feat, frame.calib.t_ext, bins_);
  auto [context, depth_logits] = depthnet_.infer(x, sparse);
  nn::Tensor d_prob = softmax_channels(depth_logits);
  nn::Tensor frustum = lift(d_prob, context);
  nn::Tensor scattered = splat_scatter(frustum, a_feat, frame.calib.t_ext,
                                       geom::Mat4::identity(), frame.t_lidar_aug, bins_, voxels_);
  nn::Tensor f_camera = bev_reduce_.infer(scattered);
  nn::Tensor fused = fuse_.infer(f_camera, f_lidar, f_radar);
  if (inter) {
    inter->f_img = std::move(x);
    inter->sparse_depth = std::move(sparse);
    inter->context = std::move(context);
    inter->depth_logits = std::move(depth_logits);
    inter->d_prob = std::move(d_prob);
    inter->frustum = std::move(frustum);
    inter->scattered = std::move(scattered);
    inter->f_camera = std::move(f_camera);
  }
  return fused;
}

std::vector<nn::LayerParams*> CameraBranch::params() {
  std::vector<nn::LayerParams*> out;
  auto add = [&](std::vector<nn::LayerParams*> ps) {
    out.insert(out.end(), ps.begin(), ps.end());
  };
  add(stem_.params());
  add(b1_.params());
  add(b2_.params());
  add(depthnet_.params());
  add(bev_reduce_.params());
  add(fuse_.params());
  return out;
}

}  // namespace awmoe::lrc
