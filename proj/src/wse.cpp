#include "awmoe/wse.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace awmoe::wse {

namespace {

nn::Tensor concat_channels(const nn::Tensor& a, const nn::Tensor& b) {
  nn::check_same_shape(a, b, "concat_channels spatial");
  nn::Tensor out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
  return out;
}

std::pair<nn::Tensor, nn::Tensor> split_channels(const nn::Tensor& x, int first) {
  nn::Tensor a({first, x.dim(1), x.dim(2)});
  nn::Tensor b({x.dim(0) - first, x.dim(1), x.dim(2)});
  std::copy(x.data.begin(), x.data.begin() + a.data.size(), a.data.begin());
  std::copy(x.data.begin() + a.data.size(), x.data.end(), b.data.begin());
  return {std::move(a), std::move(b)};
}

void check_grid_pair(const nn::Tensor& a, const nn::Tensor& b, const char* where) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
    throw std::invalid_argument(std::string(where) + ": modality grids disagree: " +
                                a.shape_str() + " vs " + b.shape_str());
}

}  // namespace

// ---------------------------------------------------------------------------
// SharedBackbone

SharedBackbone::SharedBackbone(nn::Rng& init_rng)
    : l1_(pc::kPillarChannels, kBackboneChannels, 3, 1, 1),
      l2_(kBackboneChannels, kBackboneChannels, 3, 1, 1),
      r1_(pc::kPillarChannels, kBackboneChannels, 3, 1, 1),
      r2_(kBackboneChannels, kBackboneChannels, 3, 1, 1) {
  l1_.init_he(init_rng);
  l2_.init_he(init_rng);
  r1_.init_he(init_rng);
  r2_.init_he(init_rng);
}

std::pair<nn::Tensor, nn::Tensor> SharedBackbone::forward_train(const nn::Tensor& lidar_grid,
                                                                const nn::Tensor& radar_grid) {
  check_grid_pair(lidar_grid, radar_grid, "shared_forward");
  return {l2_.forward(l1_.forward(lidar_grid)), r2_.forward(r1_.forward(radar_grid))};
}

std::pair<nn::Tensor, nn::Tensor> SharedBackbone::infer(const nn::Tensor& lidar_grid,
                                                        const nn::Tensor& radar_grid) const {
  check_grid_pair(lidar_grid, radar_grid, "shared_forward");
  return {l2_.infer(l1_.infer(lidar_grid)), r2_.infer(r1_.infer(radar_grid))};
}

void SharedBackbone::backward(const nn::Tensor& grad_fl, const nn::Tensor& grad_fr) {
  l1_.backward(l2_.backward(grad_fl));
  r1_.backward(r2_.backward(grad_fr));
}

std::vector<nn::LayerParams*> SharedBackbone::params() {
  return {&l1_.p(), &l2_.p(), &r1_.p(), &r2_.p()};
}

ckpt::NamedTensors SharedBackbone::named_params(const std::string& prefix) {
  std::vector<std::pair<std::string, nn::Tensor*>> refs;
  l1_.collect_named(prefix + "/lidar1", refs);
  l2_.collect_named(prefix + "/lidar2", refs);
  r1_.collect_named(prefix + "/radar1", refs);
  r2_.collect_named(prefix + "/radar2", refs);
  ckpt::NamedTensors out;
  for (auto& [name, t] : refs) out.emplace_back(name, *t);
  return out;
}

void SharedBackbone::load_params(const ckpt::NamedTensors& entries, const std::string& prefix) {
  std::vector<std::pair<std::string, nn::Tensor*>> refs;
  l1_.collect_named(prefix + "/lidar1", refs);
  l2_.collect_named(prefix + "/lidar2", refs);
  r1_.collect_named(prefix + "/radar1", refs);
  r2_.collect_named(prefix + "/radar2", refs);
  if (entries.size() != refs.size())
    throw std::runtime_error("shared backbone checkpoint: tensor count mismatch");
  for (size_t i = 0; i < refs.size(); ++i) {
    if (entries[i].first != refs[i].first || entries[i].second.shape != refs[i].second->shape)
      throw std::runtime_error("shared backbone checkpoint: unexpected tensor " +
                               entries[i].first);
    *refs[i].second = entries[i].second;
  }
}

uint64_t SharedBackbone::param_hash() { return ckpt::hash_tensors(named_params("shared")); }

// ---------------------------------------------------------------------------
// Expert

Expert::Expert(nn::Rng& init_rng)
    : el1_(kBackboneChannels, kBackboneChannels, 3, 1, 1),
      el2_(kBackboneChannels, kBackboneChannels, 3, 1, 1),
      er1_(kBackboneChannels, kBackboneChannels, 3, 1, 1),
      er2_(kBackboneChannels, kBackboneChannels, 3, 1, 1),
      f1_(kFusedChannels, kFusedChannels, 3, 1, 1),
      f2_(kFusedChannels, kFusedChannels, 3, 1, 1),
      head_(kFusedChannels, kHeadChannels, 1, 1, 0) {
  el1_.init_he(init_rng);
  el2_.init_he(init_rng);
  er1_.init_he(init_rng);
  er2_.init_he(init_rng);
  f1_.init_he(init_rng);
  f2_.init_he(init_rng);
  head_.init_zero();
}

nn::Tensor Expert::forward_train(const nn::Tensor& fl, const nn::Tensor& fr) {
  check_grid_pair(fl, fr, "expert_forward");
  cached_h_ = fl.dim(1);
  cached_w_ = fl.dim(2);
  nn::Tensor al = relu_l2_.forward(el2_.forward(relu_l1_.forward(el1_.forward(fl))));
  nn::Tensor ar = relu_r2_.forward(er2_.forward(relu_r1_.forward(er1_.forward(fr))));
  nn::Tensor fused = relu_f2_.forward(f2_.forward(relu_f1_.forward(f1_.forward(concat_channels(al, ar)))));
  return head_.forward(fused);
}

nn::Tensor Expert::infer(const nn::Tensor& fl, const nn::Tensor& fr) const {
  check_grid_pair(fl, fr, "expert_forward");
  nn::Tensor al = relu_l2_.infer(el2_.infer(relu_l1_.infer(el1_.infer(fl))));
  nn::Tensor ar = relu_r2_.infer(er2_.infer(relu_r1_.infer(er1_.infer(fr))));
  nn::Tensor fused = relu_f2_.infer(f2_.infer(relu_f1_.infer(f1_.infer(concat_channels(al, ar)))));
  return head_.infer(fused);
}

std::pair<nn::Tensor, nn::Tensor> Expert::backward(const nn::Tensor& grad_map) {
  nn::Tensor g = head_.backward(grad_map);
  g = f1_.backward(relu_f1_.backward(f2_.backward(relu_f2_.backward(g))));
  auto [gl, gr] = split_channels(g, kBackboneChannels);
  nn::Tensor gfl = el1_.backward(relu_l1_.backward(el2_.backward(relu_l2_.backward(gl))));
  nn::Tensor gfr = er1_.backward(relu_r1_.backward(er2_.backward(relu_r2_.backward(gr))));
  return {std::move(gfl), std::move(gfr)};
}

std::vector<nn::LayerParams*> Expert::params() {
  return {&el1_.p(), &el2_.p(), &er1_.p(), &er2_.p(), &f1_.p(), &f2_.p(), &head_.p()};
}

ckpt::NamedTensors Expert::named_params(const std::string& prefix) {
  std::vector<std::pair<std::string, nn::Tensor*>> refs;
  el1_.collect_named(prefix + "/lidar1", refs);
  el2_.collect_named(prefix + "/lidar2", refs);
  er1_.collect_named(prefix + "/radar1", refs);
  er2_.collect_named(prefix + "/radar2", refs);
  f1_.collect_named(prefix + "/fuse1", refs);
  f2_.collect_named(prefix + "/fuse2", refs);
  head_.collect_named(prefix + "/head", refs);
  ckpt::NamedTensors out;
  for (auto& [name, t] : refs) out.emplace_back(name, *t);
  return out;
}

void Expert::load_params(const ckpt::NamedTensors& entries, const std::string& prefix) {
  std::vector<std::pair<std::string, nn::Tensor*>> refs;
  el1_.collect_named(prefix + "/lidar1", refs);
  el2_.collect_named(prefix + "/lidar2", refs);
  er1_.collect_named(prefix + "/radar1", refs);
  er2_.collect_named(prefix + "/radar2", refs);
  f1_.collect_named(prefix + "/fuse1", refs);
  f2_.collect_named(prefix + "/fuse2", refs);
  head_.collect_named(prefix + "/head", refs);
  if (entries.size() != refs.size()) throw std::runtime_error("expert checkpoint: tensor count mismatch");
  for (size_t i = 0; i < refs.size(); ++i) {
    if (entries[i].first != refs[i].first || entries[i].second.shape != refs[i].second->shape)
      throw std::runtime_error("expert checkpoint: unexpected tensor " + entries[i].first);
    *refs[i].second = entries[i].second;
  }
}

void Expert::copy_params_from(Expert& other) {
  auto dst = params();
  auto src = other.params();
  for (size_t i = 0; i < dst.size(); ++i) {
    dst[i]->w = src[i]->w;
    dst[i]->b = src[i]->b;
    // optimizer state restarts fresh on copy
    std::fill(dst[i]->vw.data.begin(), dst[i]->vw.data.end(), 0.0f);
    std::fill(dst[i]->vb.data.begin(), dst[i]->vb.data.end(), 0.0f);
  }
}

uint64_t Expert::param_hash() { return ckpt::hash_tensors(named_params("expert")); }

std::string Expert::architecture_string() {
  std::ostringstream os;
  auto conv = [&](const char* name, nn::Conv2d& c) {
    os << name << ":conv" << c.in_channels() << "->" << c.out_channels() << ";";
  };
  conv("El1", el1_);
  conv("El2", el2_);
  conv("Er1", er1_);
  conv("Er2", er2_);
  conv("F1", f1_);
  conv("F2", f2_);
  conv("H", head_);
  return os.str();
}

// ---------------------------------------------------------------------------
// Box codec

DetectionSet decode(const nn::Tensor& head_map, double score_threshold, const pc::GridSpec& grid) {
  const int h = grid.height(), w = grid.width();
  if (head_map.ndim() != 3 || head_map.dim(0) != kHeadChannels || head_map.dim(1) != h ||
      head_map.dim(2) != w)
    throw std::invalid_argument("decode: head map " + head_map.shape_str() +
                                " does not match grid " + std::to_string(h) + "x" +
                                std::to_string(w));
  DetectionSet out;
  for (int iy = 0; iy < h; ++iy) {
    for (int ix = 0; ix < w; ++ix) {
      const double score = nn::sigmoid(head_map.at3(0, iy, ix));
      if (score < score_threshold) continue;
      geom::Box3D box;
      box.x = grid.col_center(ix) + head_map.at3(1, iy, ix);
      box.y = grid.row_center(iy) + head_map.at3(2, iy, ix);
      box.z = grid.ground_z + head_map.at3(3, iy, ix);
      box.dx = std::exp(static_cast<double>(head_map.at3(4, iy, ix)));
      box.dy = std::exp(static_cast<double>(head_map.at3(5, iy, ix)));
      box.dz = std::exp(static_cast<double>(head_map.at3(6, iy, ix)));
      box.yaw = std::atan2(static_cast<double>(head_map.at3(7, iy, ix)),
                           static_cast<double>(head_map.at3(8, iy, ix)));
      out.boxes.push_back({box, score});
    }
  }
  return out;
}

EncodedTargets encode_targets(std::span<const geom::Box3D> boxes, const pc::GridSpec& grid) {
  const int h = grid.height(), w = grid.width();
  EncodedTargets out{nn::Tensor({kHeadChannels, h, w}), {}};
  std::vector<char> taken(static_cast<size_t>(h) * w, 0);
  for (const auto& box : boxes) {
    if (!grid.extent.contains(box.x, box.y)) continue;
    const int ix = grid.col_of(box.x), iy = grid.row_of(box.y);
    const int flat = iy * w + ix;
    if (taken[flat]) continue;  // first box claims the cell
    taken[flat] = 1;
    out.map.at3(0, iy, ix) = 1.0f;
    out.map.at3(1, iy, ix) = static_cast<float>(box.x - grid.col_center(ix));
    out.map.at3(2, iy, ix) = static_cast<float>(box.y - grid.row_center(iy));
    out.map.at3(3, iy, ix) = static_cast<float>(box.z - grid.ground_z);
    out.map.at3(4, iy, ix) = static_cast<float>(std::log(box.dx));
    out.map.at3(5, iy, ix) = static_cast<float>(std::log(box.dy));
    out.map.at3(6, iy, ix) = static_cast<float>(std::log(box.dz));
    out.map.at3(7, iy, ix) = static_cast<float>(std::sin(box.yaw));
    out.map.at3(8, iy, ix) = static_cast<float>(std::cos(box.yaw));
    out.positive_cell.push_back(flat);
  }
  return out;
}

LossResult detection_loss(const nn::Tensor& head_map, std::span<const geom::Box3D> gt_boxes,
                          const pc::GridSpec& grid, const FocalParams& focal) {
  const int h = grid.height(), w = grid.width();
  const auto targets = encode_targets(gt_boxes, grid);
  const size_t cells = static_cast<size_t>(h) * w;

  std::vector<char> positive(cells, 0);
  for (int flat : targets.positive_cell) positive[flat] = 1;

  LossResult out;
  out.grad_map = nn::Tensor(head_map.shape);
  out.num_positive = static_cast<int>(targets.positive_cell.size());
  const double norm = 1.0 / std::max(1, out.num_positive);

  double loss = 0.0;
  // objectness: binary focal over every cell
  for (size_t c = 0; c < cells; ++c) {
    double g = 0.0;
    loss += nn::binary_focal_loss(head_map.data[c], positive[c] ? 1 : 0, focal.alpha, focal.gamma,
                                  &g);
    out.grad_map.data[c] = static_cast<float>(g * norm);
  }
  // regression: smooth-L1 at positive cells only
  for (int flat : targets.positive_cell) {
    for (int ch = 1; ch < kHeadChannels; ++ch) {
      const size_t idx = static_cast<size_t>(ch) * cells + flat;
      double g = 0.0;
      loss += nn::smooth_l1(head_map.data[idx], targets.map.data[idx], &g);
      out.grad_map.data[idx] = static_cast<float>(g * norm);
    }
  }
  out.loss = loss * norm;
  return out;
}

}  // namespace awmoe::wse
