/*
 * Copyright 2026 The DARE Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef DARE_NUMCORE_HPP
#define DARE_NUMCORE_HPP

// Dense numeric kernel: vectors, matrices, a small MLP with explicit
// backward, scaled softmax, Adam, and a finite-difference gradient checker.
// Everything is double precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dare/rng.hpp"

namespace dare {

using Vec = std::vector<double>;

class DimensionError : public std::invalid_argument {
 public:
  explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

inline void require_same_length(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": length mismatch (" + std::to_string(a) +
                         " vs " + std::to_string(b) + ")");
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  require_same_length(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }
inline double norm(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require_same_length(x.size(), y.size(), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

/// Softmax of logits / sqrt(scale_dim), computed with max subtraction.
inline Vec softmax_scaled(std::span<const double> logits, std::size_t scale_dim) {
  if (logits.empty()) throw DimensionError("softmax_scaled: empty input");
  if (scale_dim == 0) throw DimensionError("softmax_scaled: scale_dim must be positive");
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(scale_dim));
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vec out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - mx) * inv_scale);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

/// Backward of softmax_scaled: given w = softmax(l / sqrt(d)) and dL/dw,
/// returns dL/dl.
inline Vec softmax_scaled_backward(std::span<const double> weights,
                                   std::span<const double> grad_weights,
                                   std::size_t scale_dim) {
  require_same_length(weights.size(), grad_weights.size(), "softmax_scaled_backward");
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(scale_dim));
  const double mean = dot(weights, grad_weights);
  Vec out(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out[i] = weights[i] * (grad_weights[i] - mean) * inv_scale;
  }
  return out;
}

/// Row-major dense matrix.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Mat&, const Mat&) = default;
};

// y = W x
inline Vec matvec(const Mat& w, std::span<const double> x) {
  require_same_length(w.cols, x.size(), "matvec");
  Vec y(w.rows);
  for (std::size_t r = 0; r < w.rows; ++r) y[r] = dot(w.row(r), x);
  return y;
}

// y = W^T x
inline Vec matvec_transposed(const Mat& w, std::span<const double> x) {
  require_same_length(w.rows, x.size(), "matvec_transposed");
  Vec y(w.cols, 0.0);
  for (std::size_t r = 0; r < w.rows; ++r) {
    if (x[r] != 0.0) axpy(x[r], w.row(r), y);
  }
  return y;
}

// G += alpha * a b^T
inline void add_outer(double alpha, std::span<const double> a, std::span<const double> b, Mat& g) {
  require_same_length(g.rows, a.size(), "add_outer rows");
  require_same_length(g.cols, b.size(), "add_outer cols");
  for (std::size_t r = 0; r < g.rows; ++r) {
    const double s = alpha * a[r];
    if (s != 0.0) axpy(s, b, g.row(r));
  }
}

enum class Activation { kIdentity, kRelu, kTanh };

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kTanh: return std::tanh(x);
    case Activation::kIdentity: break;
  }
  return x;
}

// Derivative expressed through the pre-activation value.
inline double activate_grad(Activation a, double pre) {
  switch (a) {
    case Activation::kRelu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::kTanh: {
      const double t = std::tanh(pre);
      return 1.0 - t * t;
    }
    case Activation::kIdentity: break;
  }
  return 1.0;
}

struct DenseLayer {
  Mat weight;  // out x in
  Vec bias;    // out
  Activation activation = Activation::kIdentity;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct MlpParams {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().weight.cols; }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().weight.rows; }

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

/// Builds an MLP over `dims` (input, hidden..., output). Hidden layers use
/// `hidden`, the last layer is linear. Weights are uniform in
/// [-scale/sqrt(fan_in), scale/sqrt(fan_in)], biases zero.
inline MlpParams make_mlp(std::span<const std::size_t> dims, Activation hidden, double scale,
                          Rng& rng) {
  if (dims.size() < 2) throw DimensionError("make_mlp: need at least input and output dims");
  MlpParams p;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    if (dims[l] == 0 || dims[l + 1] == 0) throw DimensionError("make_mlp: zero-width layer");
    DenseLayer layer;
    layer.weight = Mat(dims[l + 1], dims[l]);
    layer.bias.assign(dims[l + 1], 0.0);
    layer.activation = (l + 2 == dims.size()) ? Activation::kIdentity : hidden;
    const double bound = scale / std::sqrt(static_cast<double>(dims[l]));
    for (double& w : layer.weight.data) w = rng.uniform(-bound, bound);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

struct MlpCache {
  std::vector<Vec> inputs;  // input to each layer
  std::vector<Vec> pre;     // pre-activation of each layer
};

struct MlpGrads {
  std::vector<Mat> weight;
  std::vector<Vec> bias;

  static MlpGrads zeros_like(const MlpParams& p) {
    MlpGrads g;
    for (const auto& l : p.layers) {
      g.weight.emplace_back(l.weight.rows, l.weight.cols);
      g.bias.emplace_back(l.bias.size(), 0.0);
    }
    return g;
  }
};

inline Vec mlp_forward(const MlpParams& p, std::span<const double> x, MlpCache* cache = nullptr) {
  if (p.layers.empty()) throw DimensionError("mlp_forward: empty network");
  require_same_length(p.input_dim(), x.size(), "mlp_forward");
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Vec cur(x.begin(), x.end());
  for (const auto& layer : p.layers) {
    Vec pre = matvec(layer.weight, cur);
    for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += layer.bias[i];
    Vec out(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) out[i] = activate(layer.activation, pre[i]);
    if (cache) {
      cache->inputs.push_back(std::move(cur));
      cache->pre.push_back(std::move(pre));
    }
    cur = std::move(out);
  }
  return cur;
}

/// Accumulates `scale` * dOut/dParams into `grads` and returns dOut/dx.
inline Vec mlp_backward(const MlpParams& p, const MlpCache& cache, std::span<const double> grad_out,
                        MlpGrads& grads, double scale = 1.0) {
  if (cache.inputs.size() != p.layers.size() || cache.pre.size() != p.layers.size()) {
    throw DimensionError("mlp_backward: cache does not match network");
  }
  require_same_length(p.output_dim(), grad_out.size(), "mlp_backward");
  Vec delta(grad_out.begin(), grad_out.end());
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const auto& layer = p.layers[l];
    require_same_length(layer.weight.cols, cache.inputs[l].size(), "mlp_backward cache");
    for (std::size_t i = 0; i < delta.size(); ++i) {
      delta[i] *= activate_grad(layer.activation, cache.pre[l][i]);
    }
    add_outer(scale, delta, cache.inputs[l], grads.weight[l]);
    axpy(scale, delta, grads.bias[l]);
    delta = matvec_transposed(layer.weight, delta);
  }
  return delta;
}

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;
};

/// Adam with L2 weight decay folded into the gradient (g <- g + wd * theta)
/// and bias-corrected moments. One moment buffer pair per parameter tensor.
class AdamState {
 public:
  AdamState() = default;
  AdamState(AdamConfig cfg, const std::vector<std::size_t>& sizes) : cfg_(cfg) {
    for (std::size_t n : sizes) {
      m_.emplace_back(n, 0.0);
      v_.emplace_back(n, 0.0);
    }
  }

  void step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads) {
    require_same_length(params.size(), m_.size(), "adam_step tensors");
    require_same_length(grads.size(), m_.size(), "adam_step grads");
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t t = 0; t < params.size(); ++t) {
      auto theta = params[t];
      auto g = grads[t];
      require_same_length(theta.size(), m_[t].size(), "adam_step param");
      require_same_length(g.size(), m_[t].size(), "adam_step grad");
      auto& m = m_[t];
      auto& v = v_[t];
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double gi = g[i] + cfg_.weight_decay * theta[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        theta[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  const AdamConfig& config() const { return cfg_; }
  std::size_t steps() const { return step_; }
  const std::vector<Vec>& first_moments() const { return m_; }
  const std::vector<Vec>& second_moments() const { return v_; }

  void restore(std::size_t steps, std::vector<Vec> m, std::vector<Vec> v) {
    require_same_length(m.size(), m_.size(), "adam restore");
    require_same_length(v.size(), v_.size(), "adam restore");
    step_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  AdamConfig cfg_;
  std::size_t step_ = 0;
  std::vector<Vec> m_;
  std::vector<Vec> v_;
};

/// Relative error used by the gradient checker. Entries whose magnitude is
/// below `floor` are compared on an absolute scale.
inline double relative_error(double analytic, double numeric, double floor = 1e-4) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares `analytic` (dF/dparams at `params`) to central differences of
/// `f`. `params` is perturbed in place and restored. Returns the max
/// relative error.
inline double check_gradients(const std::function<double()>& f, std::span<double> params,
                              std::span<const double> analytic, double h = 1e-5) {
  require_same_length(params.size(), analytic.size(), "check_gradients");
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double fp = f();
    params[i] = saved - h;
    const double fm = f();
    params[i] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    worst = std::max(worst, relative_error(analytic[i], numeric));
  }
  return worst;
}

}  // namespace dare

#endif  // DARE_NUMCORE_HPP
