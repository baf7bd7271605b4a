#include <doctest.h>

#include <cmath>
#include <map>

#include "awmoe/lrc.hpp"
#include "awmoe/udma.hpp"
#include "awmoe/wse.hpp"
#include "test_util.hpp"

using namespace awmoe;
using testutil::random_tensor;

namespace {

geom::CameraIntrinsics feature_intrinsics() {
  geom::CameraIntrinsics a;
  a.fx = 55.0 / 8;
  a.fy = 55.0 / 8;
  a.cx = 6.0;
  a.cy = 4.0;
  a.width = 12;
  a.height = 8;
  return a;
}

nn::Tensor simplex_prob(int d, int h, int w, nn::Rng& rng) {
  nn::Tensor logits = random_tensor({d, h, w}, rng, -2.0, 2.0);
  return lrc::softmax_channels(logits);
}

}  // namespace

TEST_CASE("sparse depth: empty cloud gives an all-zero map") {
  lrc::DepthBins bins;
  auto a = feature_intrinsics();
  auto map = lrc::lidar_to_sparse_depth({}, a, geom::Mat4::identity(), bins);
  for (float v : map.data) CHECK(v == 0.0f);
}

TEST_CASE("sparse depth: single point one-hot at its bin") {
  lrc::DepthBins bins;
  auto a = feature_intrinsics();
  // camera frame == ego frame (identity extrinsics): point on the axis
  const double depth = bins.center(3);
  pc::LidarCloud cloud = {{0.0f, 0.0f, static_cast<float>(depth), 0.5f}};
  auto map = lrc::lidar_to_sparse_depth(cloud, a, geom::Mat4::identity(), bins);
  int nonzero = 0;
  for (int k = 0; k < bins.count; ++k)
    for (int v = 0; v < a.height; ++v)
      for (int u = 0; u < a.width; ++u)
        if (map.at3(k, v, u) != 0.0f) {
          ++nonzero;
          CHECK(k == 3);
          CHECK(map.at3(k, v, u) == 1.0f);
        }
  CHECK(nonzero == 1);
}

TEST_CASE("sparse depth: nearest hit wins per pixel, one-hot columns") {
  lrc::DepthBins bins;
  auto a = feature_intrinsics();
  nn::Rng rng(5);
  pc::LidarCloud cloud;
  for (int i = 0; i < 500; ++i)
    cloud.push_back({static_cast<float>(rng.uniform(-8, 8)), static_cast<float>(rng.uniform(-6, 6)),
                     static_cast<float>(rng.uniform(2, 45)), 0.5f});
  auto map = lrc::lidar_to_sparse_depth(cloud, a, geom::Mat4::identity(), bins);

  // brute-force per-pixel min-depth oracle
  std::map<std::pair<int, int>, double> nearest;
  for (const auto& p : cloud) {
    const auto proj = geom::project_to_pixel({p.x, p.y, p.z}, a, geom::Mat4::identity());
    if (proj.status != geom::PixelProjection::Status::kOk) continue;
    if (bins.index_of(proj.depth) < 0) continue;
    auto key = std::make_pair(static_cast<int>(proj.v), static_cast<int>(proj.u));
    auto it = nearest.find(key);
    if (it == nearest.end() || proj.depth < it->second) nearest[key] = proj.depth;
  }
  for (int v = 0; v < a.height; ++v)
    for (int u = 0; u < a.width; ++u) {
      int hot = -1;
      int count = 0;
      for (int k = 0; k < bins.count; ++k)
        if (map.at3(k, v, u) != 0.0f) {
          hot = k;
          ++count;
          CHECK(map.at3(k, v, u) == 1.0f);
        }
      CHECK(count <= 1);  // at most one nonzero bin per column
      auto it = nearest.find({v, u});
      if (it != nearest.end()) {
        REQUIRE(count == 1);
        CHECK(hot == bins.index_of(it->second));
      } else {
        CHECK(count == 0);
      }
    }
}

TEST_CASE("depthnet: zero inputs and zero params give zero context, uniform depth") {
  nn::Rng rng(7);
  lrc::DepthNet net(32, rng);
  for (auto* p : net.params()) {
    std::fill(p->w.data.begin(), p->w.data.end(), 0.0f);
    std::fill(p->b.data.begin(), p->b.data.end(), 0.0f);
  }
  nn::Tensor f_img({32, 8, 12});
  nn::Tensor sparse({lrc::kDepthBinCount, 8, 12});
  auto [ctx, logits] = net.infer(f_img, sparse);
  for (float v : ctx.data) CHECK(v == 0.0f);
  auto prob = lrc::softmax_channels(logits);
  for (float v : prob.data) CHECK(v == doctest::Approx(1.0 / lrc::kDepthBinCount).epsilon(1e-6));
}

TEST_CASE("depthnet: deterministic per checkpoint and gradient-checked") {
  nn::Rng rng(9);
  lrc::DepthNet net(8, rng);
  nn::Tensor f_img = random_tensor({8, 4, 5}, rng);
  nn::Tensor sparse = random_tensor({lrc::kDepthBinCount, 4, 5}, rng, 0.0, 1.0);
  auto [c1, l1] = net.infer(f_img, sparse);
  auto [c2, l2] = net.infer(f_img, sparse);
  CHECK(c1.data == c2.data);
  CHECK(l1.data == l2.data);

  // FD through the two heads with a joint probe
  nn::Tensor cc = random_tensor(c1.shape, rng);
  nn::Tensor cl = random_tensor(l1.shape, rng);
  auto eval = [&]() {
    auto [ctx, logits] = net.infer(f_img, sparse);
    double s = 0;
    for (size_t i = 0; i < ctx.data.size(); ++i) s += static_cast<double>(cc.data[i]) * ctx.data[i];
    for (size_t i = 0; i < logits.data.size(); ++i)
      s += static_cast<double>(cl.data[i]) * logits.data[i];
    return s;
  };
  for (auto* p : net.params()) p->zero_grad();
  net.forward_train(f_img, sparse);
  auto [g_img, g_sparse] = net.backward(cc, cl);

  std::vector<char> valid;
  auto n_img = testutil::numeric_gradient_masked(f_img.data, eval, valid);
  std::vector<double> a_img(g_img.data.begin(), g_img.data.end());
  CHECK(testutil::rel_error_masked(a_img, n_img, valid) < 2e-3);
  auto n_sparse = testutil::numeric_gradient_masked(sparse.data, eval, valid);
  std::vector<double> a_sparse(g_sparse.data.begin(), g_sparse.data.end());
  CHECK(testutil::rel_error_masked(a_sparse, n_sparse, valid) < 2e-3);
}

TEST_CASE("lift: one-hot depth copies the context into one slice") {
  nn::Rng rng(11);
  nn::Tensor ctx = random_tensor({lrc::kContextChannels, 3, 4}, rng);
  nn::Tensor prob({5, 3, 4});
  for (int v = 0; v < 3; ++v)
    for (int u = 0; u < 4; ++u) prob.at3(2, v, u) = 1.0f;
  auto frustum = lrc::lift(prob, ctx);
  REQUIRE(frustum.shape == std::vector<int>({5, lrc::kContextChannels, 3, 4}));
  const size_t slice = static_cast<size_t>(lrc::kContextChannels) * 3 * 4;
  for (int k = 0; k < 5; ++k)
    for (size_t i = 0; i < slice; ++i) {
      const float v = frustum.data[k * slice + i];
      if (k == 2)
        CHECK(v == ctx.data[i]);
      else
        CHECK(v == 0.0f);
    }
}

TEST_CASE("lift: uniform depth spreads context equally; marginalization identity") {
  nn::Rng rng(13);
  const int d = 8;
  nn::Tensor ctx = random_tensor({lrc::kContextChannels, 4, 6}, rng);
  nn::Tensor uniform = nn::Tensor::full({d, 4, 6}, 1.0f / d);
  auto frustum = lrc::lift(uniform, ctx);
  const size_t slice = ctx.data.size();
  for (size_t i = 0; i < slice; ++i)
    CHECK(frustum.data[i] == doctest::Approx(ctx.data[i] / d).epsilon(1e-6));

  // sum over depth slices returns the context for any simplex distribution
  for (int round = 0; round < 50; ++round) {
    nn::Tensor prob = simplex_prob(d, 4, 6, rng);
    nn::Tensor ctx2 = random_tensor({lrc::kContextChannels, 4, 6}, rng);
    auto fr = lrc::lift(prob, ctx2);
    for (size_t i = 0; i < ctx2.data.size(); ++i) {
      double sum = 0.0;
      for (int k = 0; k < d; ++k) sum += fr.data[k * ctx2.data.size() + i];
      CHECK(std::abs(sum - ctx2.data[i]) < 1e-5);
    }
  }
}

TEST_CASE("lift backward: finite differences") {
  nn::Rng rng(17);
  nn::Tensor prob = simplex_prob(6, 3, 4, rng);
  nn::Tensor ctx = random_tensor({5, 3, 4}, rng);
  nn::Tensor coef = random_tensor({6, 5, 3, 4}, rng);
  auto eval = [&]() {
    auto fr = lrc::lift(prob, ctx);
    double s = 0;
    for (size_t i = 0; i < fr.data.size(); ++i) s += static_cast<double>(coef.data[i]) * fr.data[i];
    return s;
  };
  auto [gp, gc] = lrc::lift_backward(coef, prob, ctx);
  auto np = testutil::numeric_gradient(prob.data, eval);
  std::vector<double> ap(gp.data.begin(), gp.data.end());
  CHECK(testutil::rel_error(ap, np) < 1e-3);
  auto nc = testutil::numeric_gradient(ctx.data, eval);
  std::vector<double> ac(gc.data.begin(), gc.data.end());
  CHECK(testutil::rel_error(ac, nc) < 1e-3);
}

TEST_CASE("splat: identity chain maps a single cell to (u d, v d, d) quantized") {
  geom::CameraIntrinsics ident;  // fx=fy=1, cx=cy=0
  ident.width = 4;
  ident.height = 4;
  lrc::DepthBins bins{0.0, 16.0, 4};
  lrc::VoxelSpec vox;
  vox.bev.extent = {0.0, 16.0, -8.0, 8.0};
  vox.bev.cell = 1.0;
  vox.z_min = -20.0;
  vox.z_max = 28.0;
  vox.z_bins = 3;

  nn::Tensor frustum({4, 2, 4, 4});
  const int u = 1, v = 0, d = 2;  // depth center = 10
  frustum.data[((d * 2 + 0) * 4 + v) * 4 + u] = 1.0f;
  frustum.data[((d * 2 + 1) * 4 + v) * 4 + u] = 2.5f;

  const auto id = geom::Mat4::identity();
  auto out = lrc::splat_scatter(frustum, ident, id, id, id, bins, vox);
  // P_ego = (u*d, v*d, d) = (10, 0, 10) -> col 10, row 18? row_of(0) with y_min=-8 -> 8
  const int ix = vox.bev.col_of(10.0), iy = vox.bev.row_of(0.0);
  const int iz = static_cast<int>((10.0 - vox.z_min) / 16.0);
  int nonzero = 0;
  for (int c = 0; c < out.dim(0); ++c)
    for (int yy = 0; yy < out.dim(1); ++yy)
      for (int xx = 0; xx < out.dim(2); ++xx)
        if (out.at3(c, yy, xx) != 0.0f) {
          ++nonzero;
          CHECK(yy == iy);
          CHECK(xx == ix);
          CHECK(c / 2 == iz);
        }
  CHECK(nonzero == 2);
  CHECK(out.at3(iz * 2 + 0, iy, ix) == 1.0f);
  CHECK(out.at3(iz * 2 + 1, iy, ix) == 2.5f);
}

TEST_CASE("splat: features landing in one voxel sum; matches hash-map oracle") {
  nn::Rng rng(19);
  auto a = feature_intrinsics();
  geom::Mat4 t_ext = sim::default_calib(sim::SceneConfig::defaults()).t_ext;
  lrc::DepthBins bins;
  lrc::VoxelSpec vox;
  vox.bev.extent = {0.0, 36.0, -18.0, 18.0};
  vox.bev.cell = 1.5;

  nn::Tensor frustum = random_tensor({bins.count, 3, a.height, a.width}, rng);
  const auto id = geom::Mat4::identity();
  auto out = lrc::splat_scatter(frustum, a, t_ext, id, id, bins, vox);

  // brute-force accumulation oracle
  std::map<std::tuple<int, int, int>, std::vector<double>> cells;
  for (int k = 0; k < bins.count; ++k)
    for (int v = 0; v < a.height; ++v)
      for (int u = 0; u < a.width; ++u) {
        const auto p = geom::transform_pixel_to_ego(u, v, bins.center(k), a, t_ext, id, id);
        if (!vox.bev.extent.contains(p.x, p.y) || p.z < vox.z_min || p.z >= vox.z_max) continue;
        const int iz = static_cast<int>((p.z - vox.z_min) / ((vox.z_max - vox.z_min) / vox.z_bins));
        auto& acc = cells[{iz, vox.bev.row_of(p.y), vox.bev.col_of(p.x)}];
        if (acc.empty()) acc.assign(3, 0.0);
        for (int c = 0; c < 3; ++c)
          acc[c] += frustum.data[((static_cast<size_t>(k) * 3 + c) * a.height + v) * a.width + u];
      }
  double checked = 0;
  for (const auto& [key, acc] : cells) {
    const auto [iz, iy, ix] = key;
    for (int c = 0; c < 3; ++c) {
      CHECK(std::abs(out.at3(iz * 3 + c, iy, ix) - acc[c]) < 1e-5);
      checked += std::abs(acc[c]);
    }
  }
  CHECK(checked > 0.0);  // the oracle actually exercised voxels
}

TEST_CASE("splat: augmentation consistency moves the impulse to the transformed voxel") {
  auto a = feature_intrinsics();
  geom::Mat4 t_ext = sim::default_calib(sim::SceneConfig::defaults()).t_ext;
  lrc::DepthBins bins;
  lrc::VoxelSpec vox;
  vox.bev.extent = {0.0, 36.0, -18.0, 18.0};
  vox.bev.cell = 1.5;

  const int u = 7, v = 4, d = 9;
  nn::Tensor frustum({bins.count, 1, a.height, a.width});
  frustum.data[((static_cast<size_t>(d) * 1 + 0) * a.height + v) * a.width + u] = 1.0f;

  udma::AugmentationSpec spec{true, 0.35, 1.03};
  const geom::Mat4 t_aug = spec.matrix();
  const auto id = geom::Mat4::identity();

  const auto p_base = geom::transform_pixel_to_ego(u, v, bins.center(d), a, t_ext, id, id);
  const auto p_aug = t_aug.apply(p_base);
  if (vox.bev.extent.contains(p_aug.x, p_aug.y)) {
    auto out = lrc::splat_scatter(frustum, a, t_ext, id, t_aug, bins, vox);
    const int ix = vox.bev.col_of(p_aug.x), iy = vox.bev.row_of(p_aug.y);
    const int iz = static_cast<int>((p_aug.z - vox.z_min) / ((vox.z_max - vox.z_min) / vox.z_bins));
    CHECK(out.at3(iz * 1 + 0, iy, ix) == 1.0f);
  }
}

TEST_CASE("splat backward: gather matches finite differences") {
  nn::Rng rng(23);
  geom::CameraIntrinsics a = feature_intrinsics();
  geom::Mat4 t_ext = sim::default_calib(sim::SceneConfig::defaults()).t_ext;
  lrc::DepthBins bins;
  lrc::VoxelSpec vox;
  vox.bev.extent = {0.0, 36.0, -18.0, 18.0};
  vox.bev.cell = 1.5;
  const auto id = geom::Mat4::identity();

  nn::Tensor frustum = random_tensor({bins.count, 2, a.height, a.width}, rng);
  nn::Tensor coef;
  {
    auto out = lrc::splat_scatter(frustum, a, t_ext, id, id, bins, vox);
    coef = random_tensor(out.shape, rng);
  }
  auto eval = [&]() {
    auto out = lrc::splat_scatter(frustum, a, t_ext, id, id, bins, vox);
    double s = 0;
    for (size_t i = 0; i < out.data.size(); ++i)
      s += static_cast<double>(coef.data[i]) * out.data[i];
    return s;
  };
  auto analytic = lrc::splat_scatter_backward(coef, a, t_ext, id, id, bins, vox, frustum.shape);
  auto numeric = testutil::numeric_gradient(frustum.data, eval);
  std::vector<double> av(analytic.data.begin(), analytic.data.end());
  CHECK(testutil::rel_error(av, numeric) < 1e-3);
}

TEST_CASE("fuse_trimodal: zero camera with identity-selecting convs reproduces [f^l, f^r]") {
  nn::Rng rng(29);
  lrc::FusionConvs fuse(lrc::kCameraBevChannels, 4, 4, 8, rng);
  // conv1 center taps select channels [cc, cc+8) -> out 0..7; conv2 = identity
  for (auto* p : fuse.params()) {
    std::fill(p->w.data.begin(), p->w.data.end(), 0.0f);
    std::fill(p->b.data.begin(), p->b.data.end(), 0.0f);
  }
  auto& w1 = fuse.conv1().p().w;  // 8 x (cc+8) x 3 x 3
  const int in1 = lrc::kCameraBevChannels + 8;
  for (int o = 0; o < 8; ++o) {
    const int src = lrc::kCameraBevChannels + o;
    w1.data[((static_cast<size_t>(o) * in1 + src) * 3 + 1) * 3 + 1] = 1.0f;
  }
  auto& w2 = fuse.conv2().p().w;  // 8 x 8 x 3 x 3
  for (int o = 0; o < 8; ++o) w2.data[((static_cast<size_t>(o) * 8 + o) * 3 + 1) * 3 + 1] = 1.0f;

  nn::Tensor fc({lrc::kCameraBevChannels, 5, 5});
  nn::Tensor fl = random_tensor({4, 5, 5}, rng);
  nn::Tensor fr = random_tensor({4, 5, 5}, rng);
  auto out = fuse.infer(fc, fl, fr);
  REQUIRE(out.dim(0) == 8);
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 25; ++i) {
      CHECK(out.data[c * 25 + i] == doctest::Approx(fl.data[c * 25 + i]).epsilon(1e-6));
      CHECK(out.data[(4 + c) * 25 + i] == doctest::Approx(fr.data[c * 25 + i]).epsilon(1e-6));
    }
}

TEST_CASE("fuse_trimodal: concat order is camera, lidar, radar") {
  nn::Rng rng(31);
  lrc::FusionConvs fuse(2, 2, 2, 6, rng);
  for (auto* p : fuse.params()) {
    std::fill(p->w.data.begin(), p->w.data.end(), 0.0f);
    std::fill(p->b.data.begin(), p->b.data.end(), 0.0f);
  }
  // conv1 = identity over the 6 concatenated channels; conv2 = identity
  for (int o = 0; o < 6; ++o)
    fuse.conv1().p().w.data[((static_cast<size_t>(o) * 6 + o) * 3 + 1) * 3 + 1] = 1.0f;
  for (int o = 0; o < 6; ++o)
    fuse.conv2().p().w.data[((static_cast<size_t>(o) * 6 + o) * 3 + 1) * 3 + 1] = 1.0f;

  nn::Tensor fc({2, 3, 3}), fl({2, 3, 3}), fr({2, 3, 3});
  fc.at3(0, 1, 1) = 1.0f;  // tagged impulses
  fl.at3(0, 1, 1) = 2.0f;
  fr.at3(0, 1, 1) = 3.0f;
  auto out = fuse.infer(fc, fl, fr);
  CHECK(out.at3(0, 1, 1) == 1.0f);  // camera first
  CHECK(out.at3(2, 1, 1) == 2.0f);  // then lidar
  CHECK(out.at3(4, 1, 1) == 3.0f);  // then radar
}

TEST_CASE("fuse_trimodal: gradient check and grid mismatch rejection") {
  nn::Rng rng(37);
  lrc::FusionConvs fuse(3, 4, 4, 6, rng);
  nn::Tensor fc = random_tensor({3, 4, 4}, rng);
  nn::Tensor fl = random_tensor({4, 4, 4}, rng);
  nn::Tensor fr = random_tensor({4, 4, 4}, rng);
  nn::Tensor coef;
  {
    auto out = fuse.infer(fc, fl, fr);
    coef = random_tensor(out.shape, rng);
  }
  auto eval = [&]() {
    auto out = fuse.infer(fc, fl, fr);
    double s = 0;
    for (size_t i = 0; i < out.data.size(); ++i)
      s += static_cast<double>(coef.data[i]) * out.data[i];
    return s;
  };
  for (auto* p : fuse.params()) p->zero_grad();
  fuse.forward_train(fc, fl, fr);
  auto grads = fuse.backward(coef);
  const nn::Tensor* inputs[3] = {&fc, &fl, &fr};
  for (int m = 0; m < 3; ++m) {
    auto numeric = testutil::numeric_gradient(const_cast<nn::Tensor*>(inputs[m])->data, eval);
    std::vector<double> analytic(grads[m].data.begin(), grads[m].data.end());
    CHECK(testutil::rel_error(analytic, numeric) < 1e-3);
  }

  nn::Tensor bad({4, 5, 4});
  CHECK_THROWS_AS(fuse.infer(fc, bad, fr), std::invalid_argument);
}

TEST_CASE("camera branch: end-to-end shapes and determinism on a real frame") {
  nn::Rng rng(41);
  auto frame = sim::generate_scene(rng, sim::SceneConfig::defaults());
  pc::GridSpec grid;
  grid.extent = {0.0, 36.0, -18.0, 18.0};
  grid.cell = 1.5;

  nn::Rng init(42);
  lrc::CameraBranch branch(grid, init);
  nn::Rng shared_init(43);
  wse::SharedBackbone shared(shared_init);
  auto lg = pc::pillarize(frame.lidar, grid);
  auto rg = pc::pillarize(frame.radar, grid);
  auto [fl, fr] = shared.infer(lg.features, rg.features);

  lrc::CameraBranch::Intermediates inter;
  auto fused = branch.run(frame, fl, fr, &inter);
  CHECK(fused.shape == std::vector<int>({wse::kFusedChannels, grid.height(), grid.width()}));
  CHECK(inter.f_img.shape == std::vector<int>({32, 8, 12}));
  CHECK(inter.frustum.shape ==
        std::vector<int>({lrc::kDepthBinCount, lrc::kContextChannels, 8, 12}));

  auto fused2 = branch.run(frame, fl, fr);
  CHECK(fused.data == fused2.data);

  // per-pixel depth distribution is a simplex
  for (int v = 0; v < 8; ++v)
    for (int u = 0; u < 12; ++u) {
      double sum = 0;
      for (int k = 0; k < lrc::kDepthBinCount; ++k) sum += inter.d_prob.at3(k, v, u);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    }
}
