#include "awmoe/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace awmoe::nn {

namespace {

// Per-output accumulation runs in float64 and is rounded once at the end.
// The summation order below is part of the numeric contract (determinism).

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void require_3d(const Tensor& x, int channels, const char* where) {
  if (x.ndim() != 3 || x.dim(0) != channels) {
    throw std::invalid_argument(std::string(where) + ": expected [" + std::to_string(channels) +
                                "xHxW] input, got " + x.shape_str());
  }
}

float he_bound(int fan_in) { return std::sqrt(6.0f / static_cast<float>(fan_in)); }

void fill_uniform(Tensor& t, Rng& rng, float bound) {
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
}

}  // namespace

void LayerParams::init_shapes(std::vector<int> w_shape, std::vector<int> b_shape) {
  w = Tensor(w_shape);
  gw = Tensor(w_shape);
  vw = Tensor(std::move(w_shape));
  b = Tensor(b_shape);
  gb = Tensor(b_shape);
  vb = Tensor(std::move(b_shape));
}

void LayerParams::zero_grad() {
  std::fill(gw.data.begin(), gw.data.end(), 0.0f);
  std::fill(gb.data.begin(), gb.data.end(), 0.0f);
}

void sgd_step(std::span<LayerParams* const> params, const SgdConfig& cfg) {
  const float lr = static_cast<float>(cfg.lr);
  const float mom = static_cast<float>(cfg.momentum);
  for (LayerParams* p : params) {
    for (size_t i = 0; i < p->w.data.size(); ++i) {
      p->vw.data[i] = mom * p->vw.data[i] + p->gw.data[i];
      p->w.data[i] -= lr * p->vw.data[i];
    }
    for (size_t i = 0; i < p->b.data.size(); ++i) {
      p->vb.data[i] = mom * p->vb.data[i] + p->gb.data[i];
      p->b.data[i] -= lr * p->vb.data[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad)
    : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride), pad_(pad) {
  require(kernel >= 1 && kernel % 2 == 1, "Conv2d: kernel must be spatially odd");
  require(stride >= 1, "Conv2d: stride must be >= 1");
  require(pad >= 0, "Conv2d: pad must be >= 0");
  p_.init_shapes({out_ch, in_ch, kernel, kernel}, {out_ch});
}

void Conv2d::init_he(Rng& rng) {
  fill_uniform(p_.w, rng, he_bound(in_ch_ * kernel_ * kernel_));
  std::fill(p_.b.data.begin(), p_.b.data.end(), 0.0f);
}

void Conv2d::init_zero() {
  std::fill(p_.w.data.begin(), p_.w.data.end(), 0.0f);
  std::fill(p_.b.data.begin(), p_.b.data.end(), 0.0f);
}

Tensor Conv2d::run(const Tensor& x) const {
  require_3d(x, in_ch_, "conv2d");
  const int h = x.dim(1), w = x.dim(2);
  const int ho = out_extent(h), wo = out_extent(w);
  require(ho >= 1 && wo >= 1, "conv2d: output extent would be empty");

  std::vector<double> acc(static_cast<size_t>(out_ch_) * ho * wo);
  for (int co = 0; co < out_ch_; ++co) {
    const double bias = p_.b.data[co];
    double* plane = acc.data() + static_cast<size_t>(co) * ho * wo;
    std::fill(plane, plane + static_cast<size_t>(ho) * wo, bias);
    for (int ci = 0; ci < in_ch_; ++ci) {
      const float* xplane = x.data.data() + static_cast<size_t>(ci) * h * w;
      for (int kh = 0; kh < kernel_; ++kh) {
        for (int kw = 0; kw < kernel_; ++kw) {
          const float wv =
              p_.w.data[((static_cast<size_t>(co) * in_ch_ + ci) * kernel_ + kh) * kernel_ + kw];
          if (wv == 0.0f) continue;
          const int base = kw - pad_;
          // ow range keeping iw = ow*stride + base inside [0, w)
          int lo = 0, hi = wo - 1;
          if (base < 0) lo = (-base + stride_ - 1) / stride_;
          hi = std::min(hi, (w - 1 - base) / stride_);
          for (int oh = 0; oh < ho; ++oh) {
            const int ih = oh * stride_ - pad_ + kh;
            if (ih < 0 || ih >= h) continue;
            const float* xrow = xplane + static_cast<size_t>(ih) * w;
            double* arow = plane + static_cast<size_t>(oh) * wo;
            if (stride_ == 1) {
              for (int ow = lo; ow <= hi; ++ow) arow[ow] += static_cast<double>(wv) * xrow[ow + base];
            } else {
              for (int ow = lo; ow <= hi; ++ow)
                arow[ow] += static_cast<double>(wv) * xrow[ow * stride_ + base];
            }
          }
        }
      }
    }
  }

  Tensor out({out_ch_, ho, wo});
  for (size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<float>(acc[i]);
  return out;
}

Tensor Conv2d::forward(const Tensor& x) {
  Tensor y = run(x);
  x_cache_ = x;
  has_cache_ = true;
  return y;
}

Tensor Conv2d::infer(const Tensor& x) const { return run(x); }

Tensor Conv2d::backward(const Tensor& gy) {
  require(has_cache_, "conv2d backward called without a cached forward");
  const Tensor& x = x_cache_;
  const int h = x.dim(1), w = x.dim(2);
  const int ho = gy.dim(1), wo = gy.dim(2);

  // bias grads
  for (int co = 0; co < out_ch_; ++co) {
    const float* gplane = gy.data.data() + static_cast<size_t>(co) * ho * wo;
    double s = 0.0;
    for (size_t i = 0; i < static_cast<size_t>(ho) * wo; ++i) s += gplane[i];
    p_.gb.data[co] += static_cast<float>(s);
  }

  // weight grads
  for (int co = 0; co < out_ch_; ++co) {
    const float* gplane = gy.data.data() + static_cast<size_t>(co) * ho * wo;
    for (int ci = 0; ci < in_ch_; ++ci) {
      const float* xplane = x.data.data() + static_cast<size_t>(ci) * h * w;
      for (int kh = 0; kh < kernel_; ++kh) {
        for (int kw = 0; kw < kernel_; ++kw) {
          const int base = kw - pad_;
          int lo = 0, hi = wo - 1;
          if (base < 0) lo = (-base + stride_ - 1) / stride_;
          hi = std::min(hi, (w - 1 - base) / stride_);
          double s0 = 0.0, s1 = 0.0;
          for (int oh = 0; oh < ho; ++oh) {
            const int ih = oh * stride_ - pad_ + kh;
            if (ih < 0 || ih >= h) continue;
            const float* xrow = xplane + static_cast<size_t>(ih) * w;
            const float* grow = gplane + static_cast<size_t>(oh) * wo;
            int ow = lo;
            if (stride_ == 1) {
              for (; ow + 1 <= hi; ow += 2) {
                s0 += static_cast<double>(grow[ow]) * xrow[ow + base];
                s1 += static_cast<double>(grow[ow + 1]) * xrow[ow + 1 + base];
              }
              for (; ow <= hi; ++ow) s0 += static_cast<double>(grow[ow]) * xrow[ow + base];
            } else {
              for (; ow <= hi; ++ow) s0 += static_cast<double>(grow[ow]) * xrow[ow * stride_ + base];
            }
          }
          p_.gw.data[((static_cast<size_t>(co) * in_ch_ + ci) * kernel_ + kh) * kernel_ + kw] +=
              static_cast<float>(s0 + s1);
        }
      }
    }
  }

  // input grads
  std::vector<double> gacc(x.data.size());
  for (int co = 0; co < out_ch_; ++co) {
    const float* gplane = gy.data.data() + static_cast<size_t>(co) * ho * wo;
    for (int ci = 0; ci < in_ch_; ++ci) {
      double* gxplane = gacc.data() + static_cast<size_t>(ci) * h * w;
      for (int kh = 0; kh < kernel_; ++kh) {
        for (int kw = 0; kw < kernel_; ++kw) {
          const float wv =
              p_.w.data[((static_cast<size_t>(co) * in_ch_ + ci) * kernel_ + kh) * kernel_ + kw];
          if (wv == 0.0f) continue;
          const int base = kw - pad_;
          int lo = 0, hi = wo - 1;
          if (base < 0) lo = (-base + stride_ - 1) / stride_;
          hi = std::min(hi, (w - 1 - base) / stride_);
          for (int oh = 0; oh < ho; ++oh) {
            const int ih = oh * stride_ - pad_ + kh;
            if (ih < 0 || ih >= h) continue;
            double* gxrow = gxplane + static_cast<size_t>(ih) * w;
            const float* grow = gplane + static_cast<size_t>(oh) * wo;
            if (stride_ == 1) {
              for (int ow = lo; ow <= hi; ++ow)
                gxrow[ow + base] += static_cast<double>(wv) * grow[ow];
            } else {
              for (int ow = lo; ow <= hi; ++ow)
                gxrow[ow * stride_ + base] += static_cast<double>(wv) * grow[ow];
            }
          }
        }
      }
    }
  }
  Tensor gx(x.shape);
  for (size_t i = 0; i < gacc.size(); ++i) gx.data[i] = static_cast<float>(gacc[i]);
  return gx;
}

void Conv2d::collect_named(const std::string& prefix,
                           std::vector<std::pair<std::string, Tensor*>>& out) {
  out.emplace_back(prefix + "/w", &p_.w);
  out.emplace_back(prefix + "/b", &p_.b);
}

// ---------------------------------------------------------------------------
// DepthwiseConv2d

DepthwiseConv2d::DepthwiseConv2d(int channels, int kernel, int stride, int pad)
    : channels_(channels), kernel_(kernel), stride_(stride), pad_(pad) {
  require(kernel >= 1 && kernel % 2 == 1, "DepthwiseConv2d: kernel must be spatially odd");
  p_.init_shapes({channels, kernel, kernel}, {channels});
}

void DepthwiseConv2d::init_he(Rng& rng) {
  fill_uniform(p_.w, rng, he_bound(kernel_ * kernel_));
  std::fill(p_.b.data.begin(), p_.b.data.end(), 0.0f);
}

Tensor DepthwiseConv2d::run(const Tensor& x) const {
  require_3d(x, channels_, "depthwise_conv");
  const int h = x.dim(1), w = x.dim(2);
  const int ho = (h + 2 * pad_ - kernel_) / stride_ + 1;
  const int wo = (w + 2 * pad_ - kernel_) / stride_ + 1;
  require(ho >= 1 && wo >= 1, "depthwise_conv: output extent would be empty");

  Tensor out({channels_, ho, wo});
  std::vector<double> acc(static_cast<size_t>(ho) * wo);
  for (int c = 0; c < channels_; ++c) {
    std::fill(acc.begin(), acc.end(), static_cast<double>(p_.b.data[c]));
    const float* xplane = x.data.data() + static_cast<size_t>(c) * h * w;
    for (int kh = 0; kh < kernel_; ++kh) {
      for (int kw = 0; kw < kernel_; ++kw) {
        const float wv = p_.w.data[(static_cast<size_t>(c) * kernel_ + kh) * kernel_ + kw];
        const int base = kw - pad_;
        int lo = 0, hi = wo - 1;
        if (base < 0) lo = (-base + stride_ - 1) / stride_;
        hi = std::min(hi, (w - 1 - base) / stride_);
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * stride_ - pad_ + kh;
          if (ih < 0 || ih >= h) continue;
          const float* xrow = xplane + static_cast<size_t>(ih) * w;
          double* arow = acc.data() + static_cast<size_t>(oh) * wo;
          for (int ow = lo; ow <= hi; ++ow)
            arow[ow] += static_cast<double>(wv) * xrow[ow * stride_ + base];
        }
      }
    }
    float* oplane = out.data.data() + static_cast<size_t>(c) * ho * wo;
    for (size_t i = 0; i < acc.size(); ++i) oplane[i] = static_cast<float>(acc[i]);
  }
  return out;
}

Tensor DepthwiseConv2d::forward(const Tensor& x) {
  Tensor y = run(x);
  x_cache_ = x;
  has_cache_ = true;
  return y;
}

Tensor DepthwiseConv2d::infer(const Tensor& x) const { return run(x); }

Tensor DepthwiseConv2d::backward(const Tensor& gy) {
  require(has_cache_, "depthwise_conv backward called without a cached forward");
  const Tensor& x = x_cache_;
  const int h = x.dim(1), w = x.dim(2);
  const int ho = gy.dim(1), wo = gy.dim(2);

  std::vector<double> gacc(x.data.size());
  for (int c = 0; c < channels_; ++c) {
    const float* gplane = gy.data.data() + static_cast<size_t>(c) * ho * wo;
    const float* xplane = x.data.data() + static_cast<size_t>(c) * h * w;
    double* gxplane = gacc.data() + static_cast<size_t>(c) * h * w;

    double bsum = 0.0;
    for (size_t i = 0; i < static_cast<size_t>(ho) * wo; ++i) bsum += gplane[i];
    p_.gb.data[c] += static_cast<float>(bsum);

    for (int kh = 0; kh < kernel_; ++kh) {
      for (int kw = 0; kw < kernel_; ++kw) {
        const float wv = p_.w.data[(static_cast<size_t>(c) * kernel_ + kh) * kernel_ + kw];
        const int base = kw - pad_;
        int lo = 0, hi = wo - 1;
        if (base < 0) lo = (-base + stride_ - 1) / stride_;
        hi = std::min(hi, (w - 1 - base) / stride_);
        double ws = 0.0;
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * stride_ - pad_ + kh;
          if (ih < 0 || ih >= h) continue;
          const float* xrow = xplane + static_cast<size_t>(ih) * w;
          const float* grow = gplane + static_cast<size_t>(oh) * wo;
          double* gxrow = gxplane + static_cast<size_t>(ih) * w;
          for (int ow = lo; ow <= hi; ++ow) {
            const double g = grow[ow];
            ws += g * xrow[ow * stride_ + base];
            gxrow[ow * stride_ + base] += static_cast<double>(wv) * g;
          }
        }
        p_.gw.data[(static_cast<size_t>(c) * kernel_ + kh) * kernel_ + kw] += static_cast<float>(ws);
      }
    }
  }
  Tensor gx(x.shape);
  for (size_t i = 0; i < gacc.size(); ++i) gx.data[i] = static_cast<float>(gacc[i]);
  return gx;
}

void DepthwiseConv2d::collect_named(const std::string& prefix,
                                    std::vector<std::pair<std::string, Tensor*>>& out) {
  out.emplace_back(prefix + "/w", &p_.w);
  out.emplace_back(prefix + "/b", &p_.b);
}

// ---------------------------------------------------------------------------
// InstanceNorm

InstanceNorm::InstanceNorm(int channels, double eps) : channels_(channels), eps_(eps) {
  p_.init_shapes({channels}, {channels});
  std::fill(p_.w.data.begin(), p_.w.data.end(), 1.0f);  // scale
  std::fill(p_.b.data.begin(), p_.b.data.end(), 0.0f);  // shift
}

Tensor InstanceNorm::run(const Tensor& x, std::vector<double>* mean_out,
                         std::vector<double>* istd_out) const {
  require_3d(x, channels_, "normalize");
  const int hw = x.dim(1) * x.dim(2);
  Tensor out(x.shape);
  if (mean_out) mean_out->assign(channels_, 0.0);
  if (istd_out) istd_out->assign(channels_, 0.0);
  for (int c = 0; c < channels_; ++c) {
    const float* xp = x.data.data() + static_cast<size_t>(c) * hw;
    double mean = 0.0;
    for (int i = 0; i < hw; ++i) mean += xp[i];
    mean /= hw;
    double var = 0.0;
    for (int i = 0; i < hw; ++i) {
      const double d = xp[i] - mean;
      var += d * d;
    }
    var /= hw;
    const double istd = 1.0 / std::sqrt(var + eps_);
    const double scale = p_.w.data[c], shift = p_.b.data[c];
    float* op = out.data.data() + static_cast<size_t>(c) * hw;
    for (int i = 0; i < hw; ++i)
      op[i] = static_cast<float>((xp[i] - mean) * istd * scale + shift);
    if (mean_out) (*mean_out)[c] = mean;
    if (istd_out) (*istd_out)[c] = istd;
  }
  return out;
}

Tensor InstanceNorm::forward(const Tensor& x) {
  Tensor y = run(x, &mean_, &istd_);
  x_cache_ = x;
  has_cache_ = true;
  return y;
}

Tensor InstanceNorm::infer(const Tensor& x) const { return run(x, nullptr, nullptr); }

Tensor InstanceNorm::backward(const Tensor& gy) {
  require(has_cache_, "normalize backward called without a cached forward");
  const Tensor& x = x_cache_;
  const int hw = x.dim(1) * x.dim(2);
  Tensor gx(x.shape);
  for (int c = 0; c < channels_; ++c) {
    const float* xp = x.data.data() + static_cast<size_t>(c) * hw;
    const float* gp = gy.data.data() + static_cast<size_t>(c) * hw;
    float* gxp = gx.data.data() + static_cast<size_t>(c) * hw;
    const double mean = mean_[c], istd = istd_[c];
    const double scale = p_.w.data[c];

    double sum_g = 0.0, sum_gxhat = 0.0;
    for (int i = 0; i < hw; ++i) {
      const double xhat = (xp[i] - mean) * istd;
      sum_g += gp[i];
      sum_gxhat += gp[i] * xhat;
    }
    p_.gb.data[c] += static_cast<float>(sum_g);
    p_.gw.data[c] += static_cast<float>(sum_gxhat);

    // d/dx of (xhat*scale): classic instance-norm gradient
    const double inv_n = 1.0 / hw;
    for (int i = 0; i < hw; ++i) {
      const double xhat = (xp[i] - mean) * istd;
      const double g = gp[i] * scale;
      gxp[i] = static_cast<float>(istd * (g - inv_n * (sum_g * scale) - xhat * inv_n * (sum_gxhat * scale)));
    }
  }
  return gx;
}

void InstanceNorm::collect_named(const std::string& prefix,
                                 std::vector<std::pair<std::string, Tensor*>>& out) {
  out.emplace_back(prefix + "/scale", &p_.w);
  out.emplace_back(prefix + "/shift", &p_.b);
}

// ---------------------------------------------------------------------------
// ReLU / GlobalAvgPool / Linear

Tensor ReLU::forward(const Tensor& x) {
  x_cache_ = x;
  has_cache_ = true;
  return infer(x);
}

Tensor ReLU::infer(const Tensor& x) const {
  Tensor out(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] > 0.0f ? x.data[i] : 0.0f;
  return out;
}

Tensor ReLU::backward(const Tensor& gy) {
  require(has_cache_, "relu backward called without a cached forward");
  Tensor gx(x_cache_.shape);
  for (size_t i = 0; i < gx.data.size(); ++i)
    gx.data[i] = x_cache_.data[i] > 0.0f ? gy.data[i] : 0.0f;
  return gx;
}

Tensor GlobalAvgPool::forward(const Tensor& x) {
  in_shape_ = x.shape;
  has_cache_ = true;
  return infer(x);
}

Tensor GlobalAvgPool::infer(const Tensor& x) const {
  const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor out({c});
  for (int i = 0; i < c; ++i) {
    const float* xp = x.data.data() + static_cast<size_t>(i) * hw;
    double s = 0.0;
    for (int j = 0; j < hw; ++j) s += xp[j];
    out.data[i] = static_cast<float>(s / hw);
  }
  return out;
}

Tensor GlobalAvgPool::backward(const Tensor& gy) {
  require(has_cache_, "global_average_pool backward called without a cached forward");
  const int hw = in_shape_[1] * in_shape_[2];
  Tensor gx(in_shape_);
  for (int c = 0; c < in_shape_[0]; ++c) {
    const float g = gy.data[c] / static_cast<float>(hw);
    float* gxp = gx.data.data() + static_cast<size_t>(c) * hw;
    for (int j = 0; j < hw; ++j) gxp[j] = g;
  }
  return gx;
}

Linear::Linear(int in_dim, int out_dim) : in_dim_(in_dim), out_dim_(out_dim) {
  p_.init_shapes({out_dim, in_dim}, {out_dim});
}

void Linear::init_he(Rng& rng) {
  fill_uniform(p_.w, rng, he_bound(in_dim_));
  std::fill(p_.b.data.begin(), p_.b.data.end(), 0.0f);
}

void Linear::init_zero() {
  std::fill(p_.w.data.begin(), p_.w.data.end(), 0.0f);
  std::fill(p_.b.data.begin(), p_.b.data.end(), 0.0f);
}

Tensor Linear::run(const Tensor& x) const {
  if (x.ndim() != 1 || x.dim(0) != in_dim_)
    throw std::invalid_argument("linear: expected [" + std::to_string(in_dim_) + "] input, got " +
                                x.shape_str());
  Tensor out({out_dim_});
  for (int o = 0; o < out_dim_; ++o) {
    const float* wrow = p_.w.data.data() + static_cast<size_t>(o) * in_dim_;
    double s = p_.b.data[o];
    for (int i = 0; i < in_dim_; ++i) s += static_cast<double>(wrow[i]) * x.data[i];
    out.data[o] = static_cast<float>(s);
  }
  return out;
}

Tensor Linear::forward(const Tensor& x) {
  Tensor y = run(x);
  x_cache_ = x;
  has_cache_ = true;
  return y;
}

Tensor Linear::infer(const Tensor& x) const { return run(x); }

Tensor Linear::backward(const Tensor& gy) {
  require(has_cache_, "linear backward called without a cached forward");
  Tensor gx({in_dim_});
  for (int o = 0; o < out_dim_; ++o) {
    const float g = gy.data[o];
    p_.gb.data[o] += g;
    float* gwrow = p_.gw.data.data() + static_cast<size_t>(o) * in_dim_;
    for (int i = 0; i < in_dim_; ++i) gwrow[i] += g * x_cache_.data[i];
  }
  for (int i = 0; i < in_dim_; ++i) {
    double s = 0.0;
    for (int o = 0; o < out_dim_; ++o)
      s += static_cast<double>(p_.w.data[static_cast<size_t>(o) * in_dim_ + i]) * gy.data[o];
    gx.data[i] = static_cast<float>(s);
  }
  return gx;
}

void Linear::collect_named(const std::string& prefix,
                           std::vector<std::pair<std::string, Tensor*>>& out) {
  out.emplace_back(prefix + "/w", &p_.w);
  out.emplace_back(prefix + "/b", &p_.b);
}

// ---------------------------------------------------------------------------
// DepthwiseSeparableBlock

DepthwiseSeparableBlock::DepthwiseSeparableBlock(int in_ch, int out_ch, int stride)
    : dw_(in_ch, 3, stride, 1), norm1_(in_ch), pw_(in_ch, out_ch, 1, 1, 0), norm2_(out_ch) {}

void DepthwiseSeparableBlock::init_he(Rng& rng) {
  dw_.init_he(rng);
  pw_.init_he(rng);
}

Tensor DepthwiseSeparableBlock::forward(const Tensor& x) {
  return relu_.forward(norm2_.forward(pw_.forward(norm1_.forward(dw_.forward(x)))));
}

Tensor DepthwiseSeparableBlock::infer(const Tensor& x) const {
  return relu_.infer(norm2_.infer(pw_.infer(norm1_.infer(dw_.infer(x)))));
}

Tensor DepthwiseSeparableBlock::backward(const Tensor& gy) {
  return dw_.backward(norm1_.backward(pw_.backward(norm2_.backward(relu_.backward(gy)))));
}

std::vector<LayerParams*> DepthwiseSeparableBlock::params() {
  std::vector<LayerParams*> out;
  for (Layer* l : {static_cast<Layer*>(&dw_), static_cast<Layer*>(&norm1_),
                   static_cast<Layer*>(&pw_), static_cast<Layer*>(&norm2_)}) {
    auto ps = l->params();
    out.insert(out.end(), ps.begin(), ps.end());
  }
  return out;
}

void DepthwiseSeparableBlock::collect_named(const std::string& prefix,
                                            std::vector<std::pair<std::string, Tensor*>>& out) {
  dw_.collect_named(prefix + "/dw", out);
  norm1_.collect_named(prefix + "/norm1", out);
  pw_.collect_named(prefix + "/pw", out);
  norm2_.collect_named(prefix + "/norm2", out);
}

// ---------------------------------------------------------------------------
// Stateless ops

std::vector<double> softmax64(std::span<const float> z) {
  double mx = -1e300;
  for (float v : z) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(static_cast<double>(z[i]) - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

Tensor softmax(const Tensor& z) {
  auto p = softmax64(std::span<const float>(z.data.data(), z.data.size()));
  Tensor out(z.shape);
  for (size_t i = 0; i < p.size(); ++i) out.data[i] = static_cast<float>(p[i]);
  return out;
}

Tensor softmax_backward(const Tensor& y, const Tensor& gy) {
  check_same_shape(y, gy, "softmax_backward");
  double dot = 0.0;
  for (size_t i = 0; i < y.data.size(); ++i) dot += static_cast<double>(y.data[i]) * gy.data[i];
  Tensor gz(y.shape);
  for (size_t i = 0; i < y.data.size(); ++i)
    gz.data[i] = static_cast<float>(y.data[i] * (gy.data[i] - dot));
  return gz;
}

ScalarLoss cross_entropy_loss(const Tensor& logits, int target) {
  if (target < 0 || target >= logits.numel())
    throw std::invalid_argument("cross_entropy_loss: target class out of range");
  double mx = -1e300;
  for (float v : logits.data) mx = std::max(mx, static_cast<double>(v));
  double lse = 0.0;
  for (float v : logits.data) lse += std::exp(static_cast<double>(v) - mx);
  lse = std::log(lse) + mx;
  ScalarLoss out;
  out.loss = lse - logits.data[target];
  out.grad = Tensor(logits.shape);
  for (int i = 0; i < logits.numel(); ++i) {
    const double p = std::exp(static_cast<double>(logits.data[i]) - lse);
    out.grad.data[i] = static_cast<float>(p - (i == target ? 1.0 : 0.0));
  }
  return out;
}

double smooth_l1(double pred, double target, double* grad) {
  const double d = pred - target;
  if (std::abs(d) < 1.0) {
    if (grad) *grad = d;
    return 0.5 * d * d;
  }
  if (grad) *grad = d > 0 ? 1.0 : -1.0;
  return std::abs(d) - 0.5;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

namespace {
// log(1 + exp(z)) without overflow
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
}  // namespace

double binary_focal_loss(double logit, int target, double alpha, double gamma, double* grad) {
  const double p = sigmoid(logit);
  const double log_p = -softplus(-logit);   // log sigmoid(z)
  const double log_1mp = -softplus(logit);  // log (1 - sigmoid(z))
  if (target == 1) {
    const double q = 1.0 - p;
    // dL/dz = alpha (1-p)^g [g p log p - (1-p)], with dp/dz = p(1-p)
    if (grad) *grad = alpha * std::pow(q, gamma) * (gamma * p * log_p - q);
    return -alpha * std::pow(q, gamma) * log_p;
  }
  // dL/dz = (1-alpha) p^g [p - g (1-p) log(1-p)]
  if (grad) *grad = (1.0 - alpha) * std::pow(p, gamma) * (p - gamma * (1.0 - p) * log_1mp);
  return -(1.0 - alpha) * std::pow(p, gamma) * log_1mp;
}

}  // namespace awmoe::nn
