#pragma once

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "awmoe/iwr.hpp"
#include "awmoe/udma.hpp"
#include "awmoe/weathersim.hpp"
#include "awmoe/wse.hpp"

namespace awmoe::moe {

enum class RoutingMode { kIwr, kPfr, kForced };

/// The composed model: shared backbone, one expert per weather class, the
/// routing classifier and the PFR baseline gate. Forced mode bypasses the
/// classifier with a fixed class (P = one-hot exactly), used by the
/// degenerate-equivalence audits.
struct MoEModel {
  MoEModel(const pc::GridSpec& grid, uint64_t init_seed);

  pc::GridSpec grid;
  wse::SharedBackbone shared;
  std::vector<wse::Expert> experts;  // kNumWeather, identical architecture
  iwr::WeatherClassifier classifier;
  iwr::PfrGate pfr;

  int k = 1;
  RoutingMode mode = RoutingMode::kIwr;
  int forced_class = 0;

  iwr::RoutingDecision route_frame(const sim::Frame& frame, const nn::Tensor& f_lidar,
                                   const nn::Tensor& f_radar, int k_override = 0) const;
  uint64_t shared_hash();
  uint64_t expert_hash(int w);
};

/// Global-average pool of the concatenated shared features (PFR input).
nn::Tensor pooled_shared_feature(const nn::Tensor& f_lidar, const nn::Tensor& f_radar);

/// Eq. 9: L_CW = sum_{w in S} P_w * L_w. Throws if a selected expert has no
/// loss entry. Routing probabilities act as constants (no gradient into P).
double cw_loss(const std::map<int, double>& losses, std::span<const double> probs,
               std::span<const int> selected);

/// Greedy score-ordered NMS with 3D IoU and a content-based total order, so
/// the result is independent of input order.
std::vector<wse::ScoredBox> nms(std::vector<wse::ScoredBox> boxes, double iou_threshold);

/// Eq. 10 aggregation: greedy clustering by descending score; at most one box
/// per other expert joins a seed's cluster (same-expert duplicates are left
/// to the final NMS, which keeps K=1 bit-identical to plain NMS); matched
/// clusters fuse by weighted_box_mean with renormalized routing weights and
/// the fused score is the weight-mean of member scores; singletons pass
/// through unchanged; standard NMS at nms_iou finishes.
wse::DetectionSet cw_postprocess(std::span<const wse::DetectionSet> expert_dets, double match_iou,
                                 double nms_iou);

struct StageConfig {
  int epochs = 4;
  double lr = 0.02;
  double momentum = 0.9;
  bool augment = true;      // synchronized flip/rotate/scale
  int gt_sample_max = 4;    // WSGTS insertions per frame, 0 disables
  int designated = 0;       // WSE_d for stage 1
};

struct TrainLog {
  std::vector<double> epoch_loss;
  int steps = 0;
};

struct InferParams {
  int k = 1;
  double score_threshold = 0.3;
  double match_iou = 0.3;
  double nms_iou = 0.1;
};

/// Lidar+radar pillar grids for one frame (after any augmentation).
std::pair<nn::Tensor, nn::Tensor> frame_grids(const sim::Frame& frame, const pc::GridSpec& grid);

/// Detection loss of expert w on one frame under the current parameters,
/// with the shared backbone in inference mode. This is the single-branch
/// training loss; the stage-4 forced path must match it bit-for-bit.
double standalone_loss(MoEModel& model, const sim::Frame& frame, int w);

/// Stage 1: train E_shared plus the designated expert on all-weather data.
TrainLog train_stage1(MoEModel& model, std::span<const sim::Frame> train_frames,
                      const StageConfig& cfg, nn::Rng& rng);

/// Stage 3: copy WSE_d parameters into every expert branch and freeze the
/// shared backbone (stage 4 never updates it).
void init_moe(MoEModel& model, int designated);

struct StepAudit {
  int step = 0;
  std::vector<int> selected;
  double loss = 0.0;
};
using StepObserver = std::function<void(MoEModel&, const StepAudit&)>;

/// Stage 4: route every frame, compute the confidence-weighted loss over the
/// selected experts, and update only those experts.
TrainLog train_stage4(MoEModel& model, std::span<const sim::Frame> train_frames,
                      const StageConfig& cfg, nn::Rng& rng,
                      const StepObserver& observer = nullptr);

struct InferResult {
  wse::DetectionSet detections;
  iwr::RoutingDecision routing;
};

InferResult infer(const MoEModel& model, const sim::Frame& frame, const InferParams& params);

/// decode + NMS of a single expert, bypassing routing and aggregation.
wse::DetectionSet standalone_infer(const MoEModel& model, const sim::Frame& frame, int w,
                                   const InferParams& params);

/// Checkpoint with named sections shared/, expert_<i>/, and the classifier
/// reference hash. Loading validates section names and shapes and returns the
/// stored classifier hash for verification against the classifier checkpoint.
void save_moe(const std::string& path, MoEModel& model, uint64_t classifier_hash);
uint64_t load_moe(const std::string& path, MoEModel& model);

}  // namespace awmoe::moe
