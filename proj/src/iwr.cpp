#include "awmoe/iwr.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace awmoe::iwr {

RoutingDecision route(const nn::Tensor& logits, int k) {
  if (logits.numel() != sim::kNumWeather)
    throw std::invalid_argument("route: expected " + std::to_string(sim::kNumWeather) +
                                " logits, got " + logits.shape_str());
  if (k < 1 || k > sim::kNumWeather)
    throw std::invalid_argument("route: K must be in [1, " + std::to_string(sim::kNumWeather) +
                                "], got " + std::to_string(k));
  RoutingDecision out;
  out.probs = nn::softmax64(std::span<const float>(logits.data.data(), logits.data.size()));
  std::vector<int> order(sim::kNumWeather);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (out.probs[a] != out.probs[b]) return out.probs[a] > out.probs[b];
    return a < b;  // deterministic tie rule
  });
  out.selected.assign(order.begin(), order.begin() + k);
  return out;
}

WeatherClassifier::WeatherClassifier(nn::Rng& init_rng)
    : stem_(3, 16, 3, 2, 1),
      b1_(16, 24, 2),
      b2_(24, 32, 2),
      b3_(32, 48, 2),
      b4_(48, 64, 2),
      head_(64, sim::kNumWeather) {
  stem_.init_he(init_rng);
  b1_.init_he(init_rng);
  b2_.init_he(init_rng);
  b3_.init_he(init_rng);
  b4_.init_he(init_rng);
  head_.init_zero();
}

nn::Tensor WeatherClassifier::classify(const nn::Tensor& image) const {
  nn::Tensor x = stem_relu_.infer(stem_.infer(image));
  x = b1_.infer(x);
  x = b2_.infer(x);
  x = b3_.infer(x);
  x = b4_.infer(x);
  return head_.infer(pool_.infer(x));
}

nn::Tensor WeatherClassifier::forward_train(const nn::Tensor& image) {
  nn::Tensor x = stem_relu_.forward(stem_.forward(image));
  x = b1_.forward(x);
  x = b2_.forward(x);
  x = b3_.forward(x);
  x = b4_.forward(x);
  return head_.forward(pool_.forward(x));
}

void WeatherClassifier::backward(const nn::Tensor& grad_logits) {
  nn::Tensor g = pool_.backward(head_.backward(grad_logits));
  g = b4_.backward(g);
  g = b3_.backward(g);
  g = b2_.backward(g);
  g = b1_.backward(g);
  stem_.backward(stem_relu_.backward(g));
}

std::vector<nn::LayerParams*> WeatherClassifier::params() {
  std::vector<nn::LayerParams*> out = stem_.params();
  for (nn::Layer* l : {static_cast<nn::Layer*>(&b1_), static_cast<nn::Layer*>(&b2_),
                       static_cast<nn::Layer*>(&b3_), static_cast<nn::Layer*>(&b4_),
                       static_cast<nn::Layer*>(&head_)}) {
    auto ps = l->params();
    out.insert(out.end(), ps.begin(), ps.end());
  }
  return out;
}

ckpt::NamedTensors WeatherClassifier::named_params() {
  std::vector<std::pair<std::string, nn::Tensor*>> refs;
  stem_.collect_named("classifier/stem", refs);
  b1_.collect_named("classifier/block1", refs);
  b2_.collect_named("classifier/block2", refs);
  b3_.collect_named("classifier/block3", refs);
  b4_.collect_named("classifier/block4", refs);
  head_.collect_named("classifier/head", refs);
  ckpt::NamedTensors out;
  out.reserve(refs.size());
  for (auto& [name, t] : refs) out.emplace_back(name, *t);
  return out;
}

void WeatherClassifier::load_params(const ckpt::NamedTensors& entries) {
  std::vector<std::pair<std::string, nn::Tensor*>> refs;
  stem_.collect_named("classifier/stem", refs);
  b1_.collect_named("classifier/block1", refs);
  b2_.collect_named("classifier/block2", refs);
  b3_.collect_named("classifier/block3", refs);
  b4_.collect_named("classifier/block4", refs);
  head_.collect_named("classifier/head", refs);
  if (entries.size() != refs.size())
    throw std::runtime_error("classifier checkpoint: expected " + std::to_string(refs.size()) +
                             " tensors, got " + std::to_string(entries.size()));
  for (size_t i = 0; i < refs.size(); ++i) {
    if (entries[i].first != refs[i].first)
      throw std::runtime_error("classifier checkpoint: unexpected tensor " + entries[i].first);
    if (entries[i].second.shape != refs[i].second->shape)
      throw std::runtime_error("classifier checkpoint: shape mismatch for " + entries[i].first);
    *refs[i].second = entries[i].second;
  }
}

size_t WeatherClassifier::param_count() {
  size_t n = 0;
  for (auto* p : params()) n += p->w.data.size() + p->b.data.size();
  return n;
}

uint64_t WeatherClassifier::param_hash() { return ckpt::hash_tensors(named_params()); }

TrainCurve train_classifier(WeatherClassifier& classifier, std::span<const sim::Frame> frames,
                            const ClassifierTrainConfig& cfg, nn::Rng& rng) {
  if (frames.empty()) throw std::invalid_argument("train_classifier: empty training set");
  TrainCurve curve;
  auto params = classifier.params();
  const nn::SgdConfig sgd{cfg.lr, cfg.momentum};
  std::vector<size_t> order(frames.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates under the run rng
    for (size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    double epoch_loss = 0.0;
    int in_batch = 0;
    for (auto* p : params) p->zero_grad();
    for (size_t idx = 0; idx < order.size(); ++idx) {
      const auto& frame = frames[order[idx]];
      nn::Tensor logits = classifier.forward_train(frame.image);
      auto loss = nn::cross_entropy_loss(logits, static_cast<int>(frame.weather));
      epoch_loss += loss.loss;
      classifier.backward(loss.grad);
      if (++in_batch == cfg.batch_size || idx + 1 == order.size()) {
        const float inv = 1.0f / static_cast<float>(in_batch);
        for (auto* p : params) {
          for (auto& g : p->gw.data) g *= inv;
          for (auto& g : p->gb.data) g *= inv;
        }
        nn::sgd_step(std::span<nn::LayerParams* const>(params.data(), params.size()), sgd);
        for (auto* p : params) p->zero_grad();
        in_batch = 0;
      }
    }
    curve.epoch_loss.push_back(epoch_loss / frames.size());
  }
  return curve;
}

double classifier_accuracy(const WeatherClassifier& classifier,
                           std::span<const sim::Frame> frames) {
  if (frames.empty()) return 0.0;
  int correct = 0;
  for (const auto& frame : frames) {
    const auto decision = route(classifier.classify(frame.image), 1);
    correct += decision.top1() == static_cast<int>(frame.weather);
  }
  return static_cast<double>(correct) / frames.size();
}

RoutingDecision PfrGate::route_feature(const nn::Tensor& pooled_feature, int k) const {
  return route(gate_.infer(pooled_feature), k);
}

ckpt::NamedTensors PfrGate::named_params() {
  std::vector<std::pair<std::string, nn::Tensor*>> refs;
  gate_.collect_named("pfr/gate", refs);
  ckpt::NamedTensors out;
  for (auto& [name, t] : refs) out.emplace_back(name, *t);
  return out;
}

void PfrGate::load_params(const ckpt::NamedTensors& entries) {
  std::vector<std::pair<std::string, nn::Tensor*>> refs;
  gate_.collect_named("pfr/gate", refs);
  if (entries.size() != refs.size()) throw std::runtime_error("pfr checkpoint: tensor count mismatch");
  for (size_t i = 0; i < refs.size(); ++i) {
    if (entries[i].first != refs[i].first || entries[i].second.shape != refs[i].second->shape)
      throw std::runtime_error("pfr checkpoint: unexpected tensor " + entries[i].first);
    *refs[i].second = entries[i].second;
  }
}

TrainCurve train_pfr_gate(PfrGate& gate, std::span<const nn::Tensor> pooled_features,
                          std::span<const int> labels, const ClassifierTrainConfig& cfg,
                          nn::Rng& rng) {
  if (pooled_features.empty() || pooled_features.size() != labels.size())
    throw std::invalid_argument("train_pfr_gate: empty or mismatched training set");
  TrainCurve curve;
  auto params = gate.gate().params();
  const nn::SgdConfig sgd{cfg.lr, cfg.momentum};
  std::vector<size_t> order(pooled_features.size());
  std::iota(order.begin(), order.end(), size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    double epoch_loss = 0.0;
    int in_batch = 0;
    for (auto* p : params) p->zero_grad();
    for (size_t idx = 0; idx < order.size(); ++idx) {
      nn::Tensor logits = gate.gate().forward(pooled_features[order[idx]]);
      auto loss = nn::cross_entropy_loss(logits, labels[order[idx]]);
      epoch_loss += loss.loss;
      gate.gate().backward(loss.grad);
      if (++in_batch == cfg.batch_size || idx + 1 == order.size()) {
        const float inv = 1.0f / static_cast<float>(in_batch);
        for (auto* p : params) {
          for (auto& g : p->gw.data) g *= inv;
          for (auto& g : p->gb.data) g *= inv;
        }
        nn::sgd_step(std::span<nn::LayerParams* const>(params.data(), params.size()), sgd);
        for (auto* p : params) p->zero_grad();
        in_batch = 0;
      }
    }
    curve.epoch_loss.push_back(epoch_loss / pooled_features.size());
  }
  return curve;
}

double pfr_accuracy(const PfrGate& gate, std::span<const nn::Tensor> pooled_features,
                    std::span<const int> labels) {
  if (pooled_features.empty()) return 0.0;
  int correct = 0;
  for (size_t i = 0; i < pooled_features.size(); ++i)
    correct += gate.route_feature(pooled_features[i], 1).top1() == labels[i];
  return static_cast<double>(correct) / pooled_features.size();
}

}  // namespace awmoe::iwr
