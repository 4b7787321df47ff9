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

#ifndef DARE_TEST_SUPPORT_HPP
#define DARE_TEST_SUPPORT_HPP

// Shared by the unit tests and the acceptance binary: small random models,
// random samples that own their histories, and a whole-model gradient check.

#include <algorithm>
#include <cmath>
#include <vector>

#include "dare/data.hpp"
#include "dare/model.hpp"
#include "dare/numcore.hpp"
#include "dare/rng.hpp"

namespace dare::testing {

struct SampleSet {
  std::vector<std::vector<BehaviorEvent>> storage;
  std::vector<Sample> samples;
};

/// Random samples over a vocabulary where item i has category i % cats.
/// History lengths are uniform in [min_len, window].
inline SampleSet random_samples(std::size_t n, std::size_t items, std::size_t cats, std::size_t window,
                                std::uint64_t seed, std::size_t min_len = 1) {
  Rng rng(seed);
  SampleSet set;
  set.storage.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t len = min_len + rng.below(window - min_len + 1);
    std::vector<BehaviorEvent> h(len);
    for (std::size_t i = 0; i < len; ++i) {
      const auto item = static_cast<std::uint32_t>(rng.below(items));
      h[i] = {item, static_cast<std::uint32_t>(item % cats), static_cast<std::int64_t>(len - i)};
    }
    set.storage.push_back(std::move(h));
  }
  for (std::size_t s = 0; s < n; ++s) {
    Sample x;
    x.history = set.storage[s];
    const auto item = static_cast<std::uint32_t>(rng.below(items));
    x.target = {item, static_cast<std::uint32_t>(item % cats), 1000};
    x.label = static_cast<int>(rng.below(2));
    x.user = static_cast<std::uint32_t>(s);
    set.samples.push_back(x);
  }
  return set;
}

/// Small model config: widths <= 8, K <= 4.
inline ModelConfig small_model_config(Variant v, std::uint64_t seed) {
  ModelConfig c;
  c.variant = v;
  c.attention_dim = v == Variant::kDare || v == Variant::kTwin4E ? 4 : 6;
  c.representation_dim = v == Variant::kDare || v == Variant::kTwin4E ? 8 : 6;
  c.retrieval_count = 3;
  c.window = 8;
  c.mlp_hidden = {7, 5};
  c.din_hidden = 6;
  c.seed = seed;
  c.num_items = 12;
  c.num_categories = 4;
  return c;
}

/// False when a perturbation of size ~h could cross a non-differentiable
/// point: a top-K boundary or a ReLU kink in the head or DIN layers.
inline bool well_conditioned(const ModelState& s, const Sample& x, double margin = 1e-3) {
  const ForwardCache c = forward(s, x);
  if (s.config.variant != Variant::kTwinHard) {
    std::vector<double> l(c.logits.begin(), c.logits.begin() + static_cast<std::ptrdiff_t>(x.history.size()));
    std::sort(l.begin(), l.end(), std::greater<>());
    const std::size_t k = s.config.retrieval_count;
    if (l.size() > k && l[k - 1] - l[k] < margin) return false;
  }
  auto kink = [&](const MlpCache& mc) {
    for (std::size_t layer = 0; layer + 1 < mc.pre.size(); ++layer) {
      for (double z : mc.pre[layer]) {
        if (std::abs(z) < margin) return true;
      }
    }
    return false;
  };
  if (kink(c.head_cache)) return false;
  for (const auto& dc : c.din_caches) {
    if (kink(dc)) return false;
  }
  return true;
}

/// Max relative error between backward() and central differences of the
/// sample loss, over every parameter of the model.
inline double max_gradient_error(ModelState& s, const Sample& x, double h = 1e-5) {
  ModelGrads g = ModelGrads::zeros_like(s);
  const ForwardCache c = forward(s, x);
  backward(s, x, c, x.label, g);
  const std::vector<Vec> analytic = g.dense(s);
  auto params = s.parameters();
  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    worst = std::max(worst, check_gradients([&] { return sample_loss(s, x); }, params[t], analytic[t], h));
  }
  return worst;
}

}  // namespace dare::testing

#endif  // DARE_TEST_SUPPORT_HPP
