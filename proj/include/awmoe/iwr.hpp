#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "awmoe/checkpoint.hpp"
#include "awmoe/nn.hpp"
#include "awmoe/weathersim.hpp"

namespace awmoe::iwr {

/// Softmax probabilities over the weather classes plus the selected expert
/// set, ordered by descending probability (ties to the lower class index).
struct RoutingDecision {
  std::vector<double> probs;   // length kNumWeather, sums to 1
  std::vector<int> selected;   // |selected| = K
  int top1() const { return selected.front(); }
};

/// Softmax + top-K selection over classifier logits.
RoutingDecision route(const nn::Tensor& logits, int k);

/// Lightweight image classifier: stem conv (3->16, stride 2), four
/// depthwise-separable blocks (16->24->32->48->64, each stride 2), global
/// average pool, linear head to the 7 weather classes. The head is
/// zero-initialized so a fresh model emits zero logits.
class WeatherClassifier {
 public:
  explicit WeatherClassifier(nn::Rng& init_rng);

  /// Inference path; touches no internal state.
  nn::Tensor classify(const nn::Tensor& image) const;

  nn::Tensor forward_train(const nn::Tensor& image);
  void backward(const nn::Tensor& grad_logits);

  std::vector<nn::LayerParams*> params();
  ckpt::NamedTensors named_params();
  void load_params(const ckpt::NamedTensors& entries);
  size_t param_count();
  uint64_t param_hash();

 private:
  nn::Conv2d stem_;
  nn::ReLU stem_relu_;
  nn::DepthwiseSeparableBlock b1_, b2_, b3_, b4_;
  nn::GlobalAvgPool pool_;
  nn::Linear head_;
};

struct ClassifierTrainConfig {
  int epochs = 6;
  double lr = 0.05;
  double momentum = 0.9;
  int batch_size = 8;
};

struct TrainCurve {
  std::vector<double> epoch_loss;
};

/// Cross-entropy SGD on (image, weather) pairs; deterministic under the rng.
TrainCurve train_classifier(WeatherClassifier& classifier, std::span<const sim::Frame> frames,
                            const ClassifierTrainConfig& cfg, nn::Rng& rng);

double classifier_accuracy(const WeatherClassifier& classifier,
                           std::span<const sim::Frame> frames);

/// Point-cloud Feature-based Routing baseline: a linear gate over the
/// global-average-pooled shared BEV feature (64-dim), same decision contract.
class PfrGate {
 public:
  PfrGate() : gate_(64, sim::kNumWeather) { gate_.init_zero(); }

  nn::Tensor logits(const nn::Tensor& pooled_feature) const { return gate_.infer(pooled_feature); }
  RoutingDecision route_feature(const nn::Tensor& pooled_feature, int k) const;

  nn::Linear& gate() { return gate_; }
  ckpt::NamedTensors named_params();
  void load_params(const ckpt::NamedTensors& entries);

 private:
  nn::Linear gate_;
};

TrainCurve train_pfr_gate(PfrGate& gate, std::span<const nn::Tensor> pooled_features,
                          std::span<const int> labels, const ClassifierTrainConfig& cfg,
                          nn::Rng& rng);

double pfr_accuracy(const PfrGate& gate, std::span<const nn::Tensor> pooled_features,
                    std::span<const int> labels);

}  // namespace awmoe::iwr
