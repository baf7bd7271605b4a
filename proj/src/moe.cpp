#include "awmoe/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace awmoe::moe {

namespace {

/// Content-based total order so greedy passes do not depend on input order.
bool score_order(const wse::ScoredBox& a, const wse::ScoredBox& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.box.x != b.box.x) return a.box.x < b.box.x;
  if (a.box.y != b.box.y) return a.box.y < b.box.y;
  if (a.box.z != b.box.z) return a.box.z < b.box.z;
  if (a.box.yaw != b.box.yaw) return a.box.yaw < b.box.yaw;
  return a.box.dx < b.box.dx;
}

}  // namespace

MoEModel::MoEModel(const pc::GridSpec& grid_in, uint64_t init_seed)
    : grid(grid_in),
      shared([&] {
        nn::Rng r(init_seed);
        return wse::SharedBackbone(r);
      }()),
      classifier([&] {
        nn::Rng r(init_seed + 1000);
        return iwr::WeatherClassifier(r);
      }()) {
  for (int w = 0; w < sim::kNumWeather; ++w) {
    nn::Rng r(init_seed + 100 + w);
    experts.emplace_back(r);
  }
}

iwr::RoutingDecision MoEModel::route_frame(const sim::Frame& frame, const nn::Tensor& f_lidar,
                                           const nn::Tensor& f_radar, int k_override) const {
  const int kk = k_override > 0 ? k_override : k;
  switch (mode) {
    case RoutingMode::kIwr:
      return iwr::route(classifier.classify(frame.image), kk);
    case RoutingMode::kPfr:
      return pfr.route_feature(pooled_shared_feature(f_lidar, f_radar), kk);
    case RoutingMode::kForced: {
      iwr::RoutingDecision d;
      d.probs.assign(sim::kNumWeather, 0.0);
      d.probs[forced_class] = 1.0;  // exact one-hot
      d.selected.assign(1, forced_class);
      for (int w = 0; w < sim::kNumWeather && static_cast<int>(d.selected.size()) < kk; ++w)
        if (w != forced_class) d.selected.push_back(w);
      return d;
    }
  }
  throw std::logic_error("route_frame: unknown mode");
}

uint64_t MoEModel::shared_hash() { return shared.param_hash(); }
uint64_t MoEModel::expert_hash(int w) { return experts[w].param_hash(); }

nn::Tensor pooled_shared_feature(const nn::Tensor& f_lidar, const nn::Tensor& f_radar) {
  const int c = f_lidar.dim(0);
  const int hw = f_lidar.dim(1) * f_lidar.dim(2);
  nn::Tensor out({2 * c});
  for (int ch = 0; ch < c; ++ch) {
    double sl = 0.0, sr = 0.0;
    for (int i = 0; i < hw; ++i) {
      sl += f_lidar.data[static_cast<size_t>(ch) * hw + i];
      sr += f_radar.data[static_cast<size_t>(ch) * hw + i];
    }
    out.data[ch] = static_cast<float>(sl / hw);
    out.data[c + ch] = static_cast<float>(sr / hw);
  }
  return out;
}

double cw_loss(const std::map<int, double>& losses, std::span<const double> probs,
               std::span<const int> selected) {
  double total = 0.0;
  for (int w : selected) {
    auto it = losses.find(w);
    if (it == losses.end())
      throw std::invalid_argument("cw_loss: selected expert " + std::to_string(w) +
                                  " has no loss entry");
    total += probs[w] * it->second;
  }
  return total;
}

std::vector<wse::ScoredBox> nms(std::vector<wse::ScoredBox> boxes, double iou_threshold) {
  std::sort(boxes.begin(), boxes.end(), score_order);
  std::vector<wse::ScoredBox> kept;
  std::vector<char> dead(boxes.size(), 0);
  for (size_t i = 0; i < boxes.size(); ++i) {
    if (dead[i]) continue;
    kept.push_back(boxes[i]);
    for (size_t j = i + 1; j < boxes.size(); ++j) {
      if (dead[j]) continue;
      if (geom::iou_3d(boxes[i].box, boxes[j].box) >= iou_threshold) dead[j] = 1;
    }
  }
  return kept;
}

wse::DetectionSet cw_postprocess(std::span<const wse::DetectionSet> expert_dets, double match_iou,
                                 double nms_iou) {
  if (!(match_iou > 0.0 && match_iou < 1.0))
    throw std::invalid_argument("cw_postprocess: match threshold must lie in (0, 1)");

  struct Entry {
    wse::ScoredBox sb;
    int expert;
    double weight;
  };
  std::vector<Entry> pool;
  for (const auto& det : expert_dets)
    for (const auto& sb : det.boxes) pool.push_back({sb, det.expert_id, det.routing_weight});
  std::sort(pool.begin(), pool.end(), [](const Entry& a, const Entry& b) {
    if (a.sb.score != b.sb.score || a.sb.box.x != b.sb.box.x || a.sb.box.y != b.sb.box.y)
      return score_order(a.sb, b.sb);
    return a.expert < b.expert;
  });

  std::vector<char> consumed(pool.size(), 0);
  std::vector<wse::ScoredBox> fused;
  for (size_t i = 0; i < pool.size(); ++i) {
    if (consumed[i]) continue;
    consumed[i] = 1;
    std::vector<size_t> cluster = {i};
    std::array<char, sim::kNumWeather> have{};
    have[pool[i].expert] = 1;
    for (size_t j = i + 1; j < pool.size(); ++j) {
      if (consumed[j] || have[pool[j].expert]) continue;
      if (geom::iou_3d(pool[i].sb.box, pool[j].sb.box) < match_iou) continue;
      consumed[j] = 1;
      have[pool[j].expert] = 1;
      cluster.push_back(j);
    }
    if (cluster.size() == 1) {
      fused.push_back(pool[i].sb);  // pass through bit-identical
      continue;
    }
    std::vector<std::pair<geom::Box3D, double>> members;
    double wsum = 0.0;
    for (size_t idx : cluster) {
      members.emplace_back(pool[idx].sb.box, pool[idx].weight);
      wsum += pool[idx].weight;
    }
    wse::ScoredBox out;
    out.box = geom::weighted_box_mean(members);
    double score = 0.0;
    for (size_t idx : cluster) score += (pool[idx].weight / wsum) * pool[idx].sb.score;
    out.score = score;
    fused.push_back(out);
  }

  wse::DetectionSet result;
  result.expert_id = -1;
  result.boxes = nms(std::move(fused), nms_iou);
  return result;
}

// ---------------------------------------------------------------------------
// Training stages

std::pair<nn::Tensor, nn::Tensor> frame_grids(const sim::Frame& frame, const pc::GridSpec& grid) {
  auto lg = pc::pillarize(frame.lidar, grid);
  auto rg = pc::pillarize(frame.radar, grid);
  return {std::move(lg.features), std::move(rg.features)};
}

double standalone_loss(MoEModel& model, const sim::Frame& frame, int w) {
  auto [lg, rg] = frame_grids(frame, model.grid);
  auto [fl, fr] = model.shared.infer(lg, rg);
  nn::Tensor map = model.experts[w].infer(fl, fr);
  return wse::detection_loss(map, frame.gt_boxes, model.grid).loss;
}

namespace {

sim::Frame augment_frame(const sim::Frame& frame, const StageConfig& cfg,
                         const udma::GtDatabase* db, const pc::Extent& extent, nn::Rng& rng) {
  sim::Frame out = frame;
  if (cfg.gt_sample_max > 0 && db) udma::wsgts_sample(out, *db, cfg.gt_sample_max, rng, extent);
  if (cfg.augment) out = udma::apply_sync(out, udma::sample_spec(rng));
  return out;
}

void zero_grads(std::vector<nn::LayerParams*>& params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace

TrainLog train_stage1(MoEModel& model, std::span<const sim::Frame> train_frames,
                      const StageConfig& cfg, nn::Rng& rng) {
  if (train_frames.empty()) throw std::invalid_argument("train_stage1: empty training set");
  if (cfg.designated < 0 || cfg.designated >= sim::kNumWeather)
    throw std::invalid_argument("train_stage1: designated expert out of range");

  udma::GtDatabase db;
  if (cfg.gt_sample_max > 0)
    db = udma::build_gt_database(std::span<const sim::Frame>(train_frames));

  auto shared_params = model.shared.params();
  auto expert_params = model.experts[cfg.designated].params();
  std::vector<nn::LayerParams*> all = shared_params;
  all.insert(all.end(), expert_params.begin(), expert_params.end());
  const nn::SgdConfig sgd{cfg.lr, cfg.momentum};

  TrainLog log;
  std::vector<size_t> order(train_frames.size());
  std::iota(order.begin(), order.end(), size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    double epoch_loss = 0.0;
    for (size_t idx : order) {
      const sim::Frame frame =
          augment_frame(train_frames[idx], cfg, cfg.gt_sample_max > 0 ? &db : nullptr,
                        model.grid.extent, rng);
      auto [lg, rg] = frame_grids(frame, model.grid);
      zero_grads(all);
      auto [fl, fr] = model.shared.forward_train(lg, rg);
      nn::Tensor map = model.experts[cfg.designated].forward_train(fl, fr);
      auto loss = wse::detection_loss(map, frame.gt_boxes, model.grid);
      epoch_loss += loss.loss;
      auto [gfl, gfr] = model.experts[cfg.designated].backward(loss.grad_map);
      model.shared.backward(gfl, gfr);
      nn::sgd_step(std::span<nn::LayerParams* const>(all.data(), all.size()), sgd);
      log.steps += 1;
    }
    log.epoch_loss.push_back(epoch_loss / train_frames.size());
  }
  return log;
}

void init_moe(MoEModel& model, int designated) {
  for (int w = 0; w < sim::kNumWeather; ++w) {
    if (w == designated) continue;
    model.experts[w].copy_params_from(model.experts[designated]);
  }
  // the designated expert's momentum restarts too, matching the copies
  for (auto* p : model.experts[designated].params()) {
    std::fill(p->vw.data.begin(), p->vw.data.end(), 0.0f);
    std::fill(p->vb.data.begin(), p->vb.data.end(), 0.0f);
  }
}

TrainLog train_stage4(MoEModel& model, std::span<const sim::Frame> train_frames,
                      const StageConfig& cfg, nn::Rng& rng, const StepObserver& observer) {
  if (train_frames.empty()) throw std::invalid_argument("train_stage4: empty training set");
  if (model.k < 1 || model.k > sim::kNumWeather)
    throw std::invalid_argument("train_stage4: K out of range");

  udma::GtDatabase db;
  if (cfg.gt_sample_max > 0)
    db = udma::build_gt_database(std::span<const sim::Frame>(train_frames));
  const nn::SgdConfig sgd{cfg.lr, cfg.momentum};

  TrainLog log;
  std::vector<size_t> order(train_frames.size());
  std::iota(order.begin(), order.end(), size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    double epoch_loss = 0.0;
    for (size_t idx : order) {
      const sim::Frame frame =
          augment_frame(train_frames[idx], cfg, cfg.gt_sample_max > 0 ? &db : nullptr,
                        model.grid.extent, rng);
      auto [lg, rg] = frame_grids(frame, model.grid);
      // shared backbone frozen: inference path only
      auto [fl, fr] = model.shared.infer(lg, rg);
      const auto decision = model.route_frame(frame, fl, fr);

      std::map<int, double> losses;
      std::vector<nn::LayerParams*> selected_params;
      for (int w : decision.selected) {
        auto ps = model.experts[w].params();
        for (auto* p : ps) p->zero_grad();
        selected_params.insert(selected_params.end(), ps.begin(), ps.end());
        nn::Tensor map = model.experts[w].forward_train(fl, fr);
        auto loss = wse::detection_loss(map, frame.gt_boxes, model.grid);
        losses[w] = loss.loss;
        // gradient scaled by the routing confidence; P carries no gradient
        const float pw = static_cast<float>(decision.probs[w]);
        nn::Tensor scaled = loss.grad_map;
        for (auto& g : scaled.data) g *= pw;
        model.experts[w].backward(scaled);
      }
      const double step_loss =
          cw_loss(losses, decision.probs,
                  std::span<const int>(decision.selected.data(), decision.selected.size()));
      epoch_loss += step_loss;
      nn::sgd_step(std::span<nn::LayerParams* const>(selected_params.data(),
                                                     selected_params.size()),
                   sgd);
      log.steps += 1;
      if (observer) observer(model, {log.steps, decision.selected, step_loss});
    }
    log.epoch_loss.push_back(epoch_loss / train_frames.size());
  }
  return log;
}

InferResult infer(const MoEModel& model, const sim::Frame& frame, const InferParams& params) {
  if (params.k < 1 || params.k > sim::kNumWeather)
    throw std::invalid_argument("infer: K out of range");
  auto [lg, rg] = frame_grids(frame, model.grid);
  auto [fl, fr] = model.shared.infer(lg, rg);

  const auto decision = model.route_frame(frame, fl, fr, params.k);

  std::vector<wse::DetectionSet> dets;
  for (int w : decision.selected) {
    nn::Tensor map = model.experts[w].infer(fl, fr);
    wse::DetectionSet d = wse::decode(map, params.score_threshold, model.grid);
    d.expert_id = w;
    d.routing_weight = decision.probs[w];
    dets.push_back(std::move(d));
  }
  InferResult out;
  out.detections = cw_postprocess(dets, params.match_iou, params.nms_iou);
  out.routing = decision;
  return out;
}

wse::DetectionSet standalone_infer(const MoEModel& model, const sim::Frame& frame, int w,
                                   const InferParams& params) {
  auto [lg, rg] = frame_grids(frame, model.grid);
  auto [fl, fr] = model.shared.infer(lg, rg);
  nn::Tensor map = model.experts[w].infer(fl, fr);
  wse::DetectionSet d = wse::decode(map, params.score_threshold, model.grid);
  d.expert_id = w;
  d.boxes = nms(std::move(d.boxes), params.nms_iou);
  return d;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_moe(const std::string& path, MoEModel& model, uint64_t classifier_hash) {
  ckpt::NamedTensors entries = model.shared.named_params("shared");
  for (int w = 0; w < sim::kNumWeather; ++w) {
    auto e = model.experts[w].named_params("expert_" + std::to_string(w));
    entries.insert(entries.end(), e.begin(), e.end());
  }
  nn::Tensor hash_bytes({8});
  for (int i = 0; i < 8; ++i)
    hash_bytes.data[i] = static_cast<float>((classifier_hash >> (8 * i)) & 0xff);
  entries.emplace_back("meta/classifier_hash", std::move(hash_bytes));
  ckpt::save(path, entries);
}

uint64_t load_moe(const std::string& path, MoEModel& model) {
  const auto entries = ckpt::load(path);
  size_t pos = 0;
  auto take_section = [&](const std::string& prefix, size_t count) {
    if (pos + count > entries.size())
      throw std::runtime_error("moe checkpoint: missing component " + prefix);
    ckpt::NamedTensors section(entries.begin() + pos, entries.begin() + pos + count);
    for (const auto& [name, t] : section)
      if (name.rfind(prefix, 0) != 0)
        throw std::runtime_error("moe checkpoint: missing component " + prefix +
                                 " (found " + name + ")");
    pos += count;
    return section;
  };
  const size_t shared_count = model.shared.named_params("shared").size();
  model.shared.load_params(take_section("shared", shared_count), "shared");
  for (int w = 0; w < sim::kNumWeather; ++w) {
    const std::string prefix = "expert_" + std::to_string(w);
    const size_t count = model.experts[w].named_params(prefix).size();
    model.experts[w].load_params(take_section(prefix, count), prefix);
  }
  if (pos >= entries.size() || entries[pos].first != "meta/classifier_hash")
    throw std::runtime_error("moe checkpoint: missing component meta/classifier_hash");
  uint64_t hash = 0;
  for (int i = 0; i < 8; ++i)
    hash |= static_cast<uint64_t>(static_cast<uint8_t>(entries[pos].second.data[i])) << (8 * i);
  return hash;
}

}  // namespace awmoe::moe
