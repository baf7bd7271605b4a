#pragma once

// Shared helpers for the unit and acceptance suites. The gradient checker is
// the independent oracle for every hand-derived backward pass: it perturbs
// each scalar with central differences (h = 1e-3) and compares the resulting
// numeric gradient against the analytic one using a vector-norm relative
// error, which keeps float32 forward roundoff from drowning tiny entries.

#include <cmath>
#include <functional>
#include <vector>

#include "awmoe/nn.hpp"
#include "awmoe/rng.hpp"
#include "awmoe/tensor.hpp"

namespace awmoe::testutil {

inline nn::Tensor random_tensor(std::vector<int> shape, nn::Rng& rng, double lo = -1.0,
                                double hi = 1.0) {
  nn::Tensor t(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

inline double rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double num = 0.0, da = 0.0, dn = 0.0;
  for (size_t i = 0; i < analytic.size(); ++i) {
    const double d = analytic[i] - numeric[i];
    num += d * d;
    da += analytic[i] * analytic[i];
    dn += numeric[i] * numeric[i];
  }
  const double denom = std::sqrt(std::max(da, dn));
  // Structurally-zero gradients (e.g. a bias absorbed by normalization) leave
  // only float32 forward roundoff on the numeric side; both vanishing means
  // the two agree. The floor budgets ~2.5e-4 of FD noise per element.
  const double noise_floor = 2e-3 * std::sqrt(static_cast<double>(analytic.size()));
  if (denom < noise_floor) return 0.0;
  return std::sqrt(num) / denom;
}

/// Central finite differences of a scalar function over a float buffer.
inline std::vector<double> numeric_gradient(std::vector<float>& values,
                                            const std::function<double()>& eval,
                                            double h = 1e-3) {
  std::vector<double> grad(values.size());
  for (size_t i = 0; i < values.size(); ++i) {
    const float saved = values[i];
    values[i] = static_cast<float>(saved + h);
    const double fp = eval();
    values[i] = static_cast<float>(saved - h);
    const double fm = eval();
    values[i] = saved;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

/// Central differences with a non-smoothness mask for piecewise-linear nets:
/// where a perturbation crosses a ReLU kink the two one-sided differences
/// disagree by the slope jump, and the central difference is meaningless for
/// comparing against the (one-sided, valid) analytic gradient. Coordinates
/// whose one-sided differences disagree are reported invalid. A wrong
/// backward pass shifts both one-sided slopes equally, so the mask cannot
/// hide it.
inline std::vector<double> numeric_gradient_masked(std::vector<float>& values,
                                                   const std::function<double()>& eval,
                                                   std::vector<char>& valid, double h = 1e-3,
                                                   double kink_tol = 1e-5) {
  std::vector<double> grad(values.size());
  valid.assign(values.size(), 1);
  const double f0 = eval();
  for (size_t i = 0; i < values.size(); ++i) {
    const float saved = values[i];
    values[i] = static_cast<float>(saved + h);
    const double fp = eval();
    values[i] = static_cast<float>(saved - h);
    const double fm = eval();
    values[i] = saved;
    const double d_plus = (fp - f0) / h;
    const double d_minus = (f0 - fm) / h;
    grad[i] = (fp - fm) / (2.0 * h);
    if (std::abs(d_plus - d_minus) > kink_tol * (1.0 + std::abs(d_plus) + std::abs(d_minus)))
      valid[i] = 0;
  }
  return grad;
}

inline double rel_error_masked(const std::vector<double>& analytic,
                               const std::vector<double>& numeric,
                               const std::vector<char>& valid) {
  std::vector<double> a, n;
  for (size_t i = 0; i < analytic.size(); ++i) {
    if (!valid[i]) continue;
    a.push_back(analytic[i]);
    n.push_back(numeric[i]);
  }
  return rel_error(a, n);
}

/// Double-precision conv2d forward for shadow-evaluating composites in FD
/// oracles (float32 forward rounding would otherwise dominate h = 1e-3).
inline std::vector<double> conv2d_f64(const std::vector<double>& x, int in_ch, int h, int w,
                                      const nn::Tensor& wt, const nn::Tensor& bias, int out_ch,
                                      int k, int stride, int pad, int* ho_out, int* wo_out) {
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (w + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<size_t>(out_ch) * ho * wo);
  for (int co = 0; co < out_ch; ++co)
    for (int oh = 0; oh < ho; ++oh)
      for (int ow = 0; ow < wo; ++ow) {
        double s = bias.data[co];
        for (int ci = 0; ci < in_ch; ++ci)
          for (int kh = 0; kh < k; ++kh)
            for (int kw = 0; kw < k; ++kw) {
              const int ih = oh * stride - pad + kh;
              const int iw = ow * stride - pad + kw;
              if (ih < 0 || ih >= h || iw < 0 || iw >= w) continue;
              s += static_cast<double>(
                       wt.data[((static_cast<size_t>(co) * in_ch + ci) * k + kh) * k + kw]) *
                   x[(static_cast<size_t>(ci) * h + ih) * w + iw];
            }
        out[(static_cast<size_t>(co) * ho + oh) * wo + ow] = s;
      }
  *ho_out = ho;
  *wo_out = wo;
  return out;
}

inline void relu_f64(std::vector<double>& x) {
  for (auto& v : x) v = v > 0.0 ? v : 0.0;
}

struct GradCheckResult {
  double input_err = 0.0;
  double weight_err = 0.0;
  double bias_err = 0.0;
  double max_err() const { return std::max(input_err, std::max(weight_err, bias_err)); }
};

/// Checks a layer's backward pass against finite differences. The probe loss
/// is sum(c .* forward(x)) with fixed random coefficients c.
inline GradCheckResult grad_check_layer(nn::Layer& layer, nn::Tensor x, nn::Rng& rng,
                                        double h = 1e-3) {
  nn::Tensor y0 = layer.forward(x);
  nn::Tensor coef = random_tensor(y0.shape, rng);

  auto probe = [&]() {
    nn::Tensor y = layer.infer(x);
    double s = 0.0;
    for (size_t i = 0; i < y.data.size(); ++i) s += static_cast<double>(coef.data[i]) * y.data[i];
    return s;
  };

  for (auto* p : layer.params()) p->zero_grad();
  nn::Tensor y = layer.forward(x);
  nn::Tensor gx = layer.backward(coef);

  GradCheckResult r;
  {
    auto numeric = numeric_gradient(x.data, probe, h);
    std::vector<double> analytic(gx.data.begin(), gx.data.end());
    r.input_err = rel_error(analytic, numeric);
  }
  for (auto* p : layer.params()) {
    {
      auto numeric = numeric_gradient(p->w.data, probe, h);
      std::vector<double> analytic(p->gw.data.begin(), p->gw.data.end());
      r.weight_err = std::max(r.weight_err, rel_error(analytic, numeric));
    }
    {
      auto numeric = numeric_gradient(p->b.data, probe, h);
      std::vector<double> analytic(p->gb.data.begin(), p->gb.data.end());
      r.bias_err = std::max(r.bias_err, rel_error(analytic, numeric));
    }
  }
  return r;
}

}  // namespace awmoe::testutil
