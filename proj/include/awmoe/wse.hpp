#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "awmoe/checkpoint.hpp"
#include "awmoe/geometry.hpp"
#include "awmoe/nn.hpp"
#include "awmoe/pointcloud.hpp"

namespace awmoe::wse {

inline constexpr int kBackboneChannels = 32;
inline constexpr int kFusedChannels = 64;
/// Head channels: objectness logit, dx, dy, dz offset, log l, log w, log h,
/// sin yaw, cos yaw.
inline constexpr int kHeadChannels = 9;

/// Two parallel linear conv stacks (4 -> 32 -> 32, 3x3, stride 1), one per
/// modality, emitting f^l and f^r on the shared BEV grid. No activations:
/// the map is linear in the input for zero bias, which the superposition
/// checks rely on; the experts add the nonlinearity.
class SharedBackbone {
 public:
  explicit SharedBackbone(nn::Rng& init_rng);

  std::pair<nn::Tensor, nn::Tensor> forward_train(const nn::Tensor& lidar_grid,
                                                  const nn::Tensor& radar_grid);
  std::pair<nn::Tensor, nn::Tensor> infer(const nn::Tensor& lidar_grid,
                                          const nn::Tensor& radar_grid) const;
  void backward(const nn::Tensor& grad_fl, const nn::Tensor& grad_fr);

  std::vector<nn::LayerParams*> params();
  ckpt::NamedTensors named_params(const std::string& prefix);
  void load_params(const ckpt::NamedTensors& entries, const std::string& prefix);
  uint64_t param_hash();

 private:
  nn::Conv2d l1_, l2_, r1_, r2_;
};

/// One Weather-Specific Expert: E_w (two conv+ReLU per modality, 32 -> 32),
/// F_w (concat to 64, two conv+ReLU), H_w (1x1 conv to the 9 head channels).
/// All experts share this structure by construction.
class Expert {
 public:
  explicit Expert(nn::Rng& init_rng);

  nn::Tensor forward_train(const nn::Tensor& fl, const nn::Tensor& fr);
  nn::Tensor infer(const nn::Tensor& fl, const nn::Tensor& fr) const;
  /// Gradient w.r.t. (f^l, f^r); parameter grads accumulate.
  std::pair<nn::Tensor, nn::Tensor> backward(const nn::Tensor& grad_map);

  std::vector<nn::LayerParams*> params();
  ckpt::NamedTensors named_params(const std::string& prefix);
  void load_params(const ckpt::NamedTensors& entries, const std::string& prefix);
  void copy_params_from(Expert& other);
  uint64_t param_hash();
  /// Layer/shape signature; identical across experts (structure, not values).
  std::string architecture_string();

 private:
  nn::Conv2d el1_, el2_, er1_, er2_;
  nn::ReLU relu_l1_, relu_l2_, relu_r1_, relu_r2_;
  nn::Conv2d f1_, f2_;
  nn::ReLU relu_f1_, relu_f2_;
  nn::Conv2d head_;
  int cached_h_ = 0, cached_w_ = 0;
};

struct ScoredBox {
  geom::Box3D box;
  double score = 0.0;
};

struct DetectionSet {
  std::vector<ScoredBox> boxes;
  int expert_id = -1;
  double routing_weight = 1.0;
};

/// Dense map -> boxes: cells with sigmoid(objectness) >= threshold decode to
/// center = cell center + (dx, dy), z = grid ground z + dz offset, sizes =
/// exp(log sizes), yaw = atan2(sin, cos). Single-class.
DetectionSet decode(const nn::Tensor& head_map, double score_threshold,
                    const pc::GridSpec& grid);

/// Inverse of decode for loss targets and codec tests. Boxes whose center
/// falls outside the grid are skipped; a cell keeps its first box.
struct EncodedTargets {
  nn::Tensor map;                  // kHeadChannels x H x W (regression filled at positives)
  std::vector<int> positive_cell;  // flat cell index per kept box
};
EncodedTargets encode_targets(std::span<const geom::Box3D> boxes, const pc::GridSpec& grid);

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

struct LossResult {
  double loss = 0.0;
  nn::Tensor grad_map;
  int num_positive = 0;
};

/// Binary focal objectness over all cells (target 1 at each GT-center cell)
/// plus smooth-L1 on the 8 regression channels at positives, normalized by
/// max(1, #positives).
LossResult detection_loss(const nn::Tensor& head_map, std::span<const geom::Box3D> gt_boxes,
                          const pc::GridSpec& grid, const FocalParams& focal = {});

}  // namespace awmoe::wse
