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

#ifndef DARE_DIAGNOSTICS_HPP
#define DARE_DIAGNOSTICS_HPP

// Streaming observers over training: per-row gradient domination and
// conflict between the attention and representation paths, and the
// distribution of pre-softmax attention logits. Observers never touch the
// model.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

#include "dare/model.hpp"
#include "dare/numcore.hpp"

namespace dare {

inline constexpr double kNormFloor = 1e-12;

struct GradStep {
  std::size_t step = 0;
  double mean_norm_att = 0.0;
  double mean_norm_repr = 0.0;
  double ratio = 0.0;  // mean_norm_repr / mean_norm_att, 0 when undefined
  double frac_negative_cosine = 0.0;
  std::size_t cosine_count = 0;
};

/// Per-row gradient pair. Either side may be empty (identically zero).
struct RowPair {
  std::span<const double> att;
  std::span<const double> repr;
};

class GradDiagnostics {
 public:
  /// Records one optimizer step. Norm means run over rows touched by each
  /// path; cosines over rows where both components exceed kNormFloor.
  GradStep record_step(std::span<const RowPair> rows) {
    GradStep st;
    st.step = ++step_;
    double sum_att = 0.0, sum_repr = 0.0;
    std::size_t n_att = 0, n_repr = 0, n_neg = 0;
    for (const auto& r : rows) {
      const double na = r.att.empty() ? 0.0 : norm(r.att);
      const double nr = r.repr.empty() ? 0.0 : norm(r.repr);
      if (!r.att.empty()) {
        sum_att += na;
        ++n_att;
      }
      if (!r.repr.empty()) {
        sum_repr += nr;
        ++n_repr;
      }
      if (na >= kNormFloor && nr >= kNormFloor) {
        const double cs = std::clamp(dot(r.att, r.repr) / (na * nr), -1.0, 1.0);
        cosines_.push_back(cs);
        ++st.cosine_count;
        if (cs < 0.0) ++n_neg;
      }
    }
    st.mean_norm_att = n_att ? sum_att / static_cast<double>(n_att) : 0.0;
    st.mean_norm_repr = n_repr ? sum_repr / static_cast<double>(n_repr) : 0.0;
    st.ratio = st.mean_norm_att > 0.0 ? st.mean_norm_repr / st.mean_norm_att : 0.0;
    st.frac_negative_cosine = st.cosine_count ? static_cast<double>(n_neg) / static_cast<double>(st.cosine_count) : 0.0;
    steps_.push_back(st);
    return st;
  }

  /// Convenience over a model gradient: every touched row of every table.
  GradStep record_step(const ModelGrads& g) {
    std::vector<RowPair> rows;
    for (const auto& t : g.tables) {
      for (const auto& [id, rg] : t.rows) rows.push_back({rg.att, rg.repr});
    }
    return record_step(rows);
  }

  std::size_t step() const { return step_; }
  const std::vector<GradStep>& steps() const { return steps_; }
  const std::vector<double>& cosine_samples() const { return cosines_; }

  /// Fraction of negative cosines pooled over every recorded row and step.
  double pooled_frac_negative() const {
    if (cosines_.empty()) return 0.0;
    const auto neg = std::count_if(cosines_.begin(), cosines_.end(), [](double c) { return c < 0.0; });
    return static_cast<double>(neg) / static_cast<double>(cosines_.size());
  }

  // Set for DARE-style models: the two paths land on different tables, so the
  // ratio compares different tables and no cosines exist.
  bool decoupled = false;

  void write_csv(std::ostream& out) const {
    out << "step,mean_norm_att,mean_norm_repr,ratio,frac_negative_cosine\n";
    out.precision(17);
    for (const auto& s : steps_) {
      out << s.step << ',' << s.mean_norm_att << ',' << s.mean_norm_repr << ',' << s.ratio << ','
          << s.frac_negative_cosine << '\n';
    }
  }

 private:
  std::size_t step_ = 0;
  std::vector<GradStep> steps_;
  std::vector<double> cosines_;
};

/// Fixed-range histogram of attention logits with underflow/overflow bins.
class LogitsHistogram {
 public:
  LogitsHistogram(double lo = -20.0, double hi = 20.0, std::size_t bins = 80)
      : lo_(lo), hi_(hi), counts_(bins, 0) {}

  void record(std::span<const double> logits) {
    for (double v : logits) {
      if (!std::isfinite(v)) continue;
      ++total_;
      const double delta = v - mean_;
      mean_ += delta / static_cast<double>(total_);
      m2_ += delta * (v - mean_);
      min_ = std::min(min_, v);
      max_ = std::max(max_, v);
      if (v < lo_) {
        ++underflow_;
      } else if (v >= hi_) {
        ++overflow_;
      } else {
        auto b = static_cast<std::size_t>((v - lo_) / (hi_ - lo_) * static_cast<double>(counts_.size()));
        counts_[std::min(b, counts_.size() - 1)]++;
      }
    }
  }

  std::size_t total() const { return total_; }
  const std::vector<std::size_t>& counts() const { return counts_; }
  std::size_t underflow() const { return underflow_; }
  std::size_t overflow() const { return overflow_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  double min() const { return total_ ? min_ : 0.0; }
  double max() const { return total_ ? max_ : 0.0; }
  double mean() const { return mean_; }
  // Population standard deviation.
  double stddev() const { return total_ ? std::sqrt(m2_ / static_cast<double>(total_)) : 0.0; }
  std::vector<double> edges() const {
    std::vector<double> e;
    for (std::size_t i = 0; i <= counts_.size(); ++i) {
      e.push_back(lo_ + (hi_ - lo_) * static_cast<double>(i) / static_cast<double>(counts_.size()));
    }
    return e;
  }

 private:
  double lo_, hi_;
  std::vector<std::size_t> counts_;
  std::size_t underflow_ = 0, overflow_ = 0, total_ = 0;
  double mean_ = 0.0, m2_ = 0.0;
  double min_ = std::numeric_limits<double>::infinity();
  double max_ = -std::numeric_limits<double>::infinity();
};

}  // namespace dare

#endif  // DARE_DIAGNOSTICS_HPP
