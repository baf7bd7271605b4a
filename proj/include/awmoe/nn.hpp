#pragma once

#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "awmoe/rng.hpp"
#include "awmoe/tensor.hpp"

namespace awmoe::nn {

/// One weight/bias pair with gradient and momentum buffers of matching shape.
struct LayerParams {
  Tensor w, b;
  Tensor gw, gb;  // gradient accumulators
  Tensor vw, vb;  // SGD momentum state

  void init_shapes(std::vector<int> w_shape, std::vector<int> b_shape);
  void zero_grad();  // idempotent
};

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
};

/// v <- momentum * v + g; w <- w - lr * v
void sgd_step(std::span<LayerParams* const> params, const SgdConfig& cfg);

/// Base for the fixed layer set. forward() caches activations for backward();
/// infer() runs the same arithmetic without touching any state, so frozen
/// models are safe to share across readers. backward() accumulates parameter
/// gradients and returns the gradient w.r.t. the layer input; calling it
/// without a preceding forward() throws.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x) = 0;
  virtual Tensor infer(const Tensor& x) const = 0;
  virtual Tensor backward(const Tensor& gy) = 0;
  virtual std::vector<LayerParams*> params() { return {}; }
  virtual void collect_named(const std::string& prefix,
                             std::vector<std::pair<std::string, Tensor*>>& out) {
    (void)prefix;
    (void)out;
  }
};

class Conv2d final : public Layer {
 public:
  /// Kernel must be spatially odd; pad >= 0, stride >= 1.
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad);

  void init_he(Rng& rng);
  void init_zero();

  Tensor forward(const Tensor& x) override;
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& gy) override;
  std::vector<LayerParams*> params() override { return {&p_}; }
  void collect_named(const std::string& prefix,
                     std::vector<std::pair<std::string, Tensor*>>& out) override;

  LayerParams& p() { return p_; }
  const LayerParams& p() const { return p_; }
  int out_extent(int in_extent) const { return (in_extent + 2 * pad_ - kernel_) / stride_ + 1; }
  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }

 private:
  Tensor run(const Tensor& x) const;
  int in_ch_, out_ch_, kernel_, stride_, pad_;
  LayerParams p_;
  Tensor x_cache_;
  bool has_cache_ = false;
};

/// Per-channel spatial convolution (one kernel per input channel).
class DepthwiseConv2d final : public Layer {
 public:
  DepthwiseConv2d(int channels, int kernel, int stride, int pad);

  void init_he(Rng& rng);

  Tensor forward(const Tensor& x) override;
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& gy) override;
  std::vector<LayerParams*> params() override { return {&p_}; }
  void collect_named(const std::string& prefix,
                     std::vector<std::pair<std::string, Tensor*>>& out) override;

  LayerParams& p() { return p_; }

 private:
  Tensor run(const Tensor& x) const;
  int channels_, kernel_, stride_, pad_;
  LayerParams p_;
  Tensor x_cache_;
  bool has_cache_ = false;
};

/// Per-channel normalization over spatial positions with learned affine.
/// Works at batch size 1 and keeps training deterministic.
class InstanceNorm final : public Layer {
 public:
  explicit InstanceNorm(int channels, double eps = 1e-5);

  Tensor forward(const Tensor& x) override;
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& gy) override;
  std::vector<LayerParams*> params() override { return {&p_}; }
  void collect_named(const std::string& prefix,
                     std::vector<std::pair<std::string, Tensor*>>& out) override;

 private:
  Tensor run(const Tensor& x, std::vector<double>* mean_out, std::vector<double>* istd_out) const;
  int channels_;
  double eps_;
  LayerParams p_;  // w = scale (gamma), b = shift (beta)
  Tensor x_cache_;
  std::vector<double> mean_, istd_;
  bool has_cache_ = false;
};

class ReLU final : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& gy) override;

 private:
  Tensor x_cache_;
  bool has_cache_ = false;
};

/// {C, H, W} -> {C} spatial mean.
class GlobalAvgPool final : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& gy) override;

 private:
  std::vector<int> in_shape_;
  bool has_cache_ = false;
};

class Linear final : public Layer {
 public:
  Linear(int in_dim, int out_dim);

  void init_he(Rng& rng);
  void init_zero();

  Tensor forward(const Tensor& x) override;
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& gy) override;
  std::vector<LayerParams*> params() override { return {&p_}; }
  void collect_named(const std::string& prefix,
                     std::vector<std::pair<std::string, Tensor*>>& out) override;

  LayerParams& p() { return p_; }

 private:
  Tensor run(const Tensor& x) const;
  int in_dim_, out_dim_;
  LayerParams p_;
  Tensor x_cache_;
  bool has_cache_ = false;
};

/// Fig.-5 style block: depthwise conv -> norm -> pointwise conv -> norm -> ReLU.
class DepthwiseSeparableBlock final : public Layer {
 public:
  DepthwiseSeparableBlock(int in_ch, int out_ch, int stride);

  void init_he(Rng& rng);

  Tensor forward(const Tensor& x) override;
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& gy) override;
  std::vector<LayerParams*> params() override;
  void collect_named(const std::string& prefix,
                     std::vector<std::pair<std::string, Tensor*>>& out) override;

 private:
  DepthwiseConv2d dw_;
  InstanceNorm norm1_;
  Conv2d pw_;  // 1x1
  InstanceNorm norm2_;
  ReLU relu_;
};

// ---------------------------------------------------------------------------
// Stateless ops and losses.

/// Max-subtracted softmax; output entries positive and summing to 1.
Tensor softmax(const Tensor& z);
std::vector<double> softmax64(std::span<const float> z);

/// Gradient of softmax given its output y and upstream gy.
Tensor softmax_backward(const Tensor& y, const Tensor& gy);

struct ScalarLoss {
  double loss = 0.0;
  Tensor grad;  // w.r.t. the logits / predictions
};

/// Softmax cross-entropy against an integer class target.
ScalarLoss cross_entropy_loss(const Tensor& logits, int target);

/// Elementwise smooth-L1 (Huber, delta = 1). Returns loss; *grad gets dL/dpred.
double smooth_l1(double pred, double target, double* grad);

/// Binary focal loss on a logit. target is 0 or 1.
double binary_focal_loss(double logit, int target, double alpha, double gamma, double* grad);

double sigmoid(double z);

}  // namespace awmoe::nn
