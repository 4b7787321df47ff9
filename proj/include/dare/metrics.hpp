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

#ifndef DARE_METRICS_HPP
#define DARE_METRICS_HPP

// Evaluation: AUC, mutual-information ground truth for retrieval, NDCG of
// retrieved behaviors, K-means discriminability of the aggregated history
// representation, and validation-accuracy convergence curves.
//
// Mutual information is always reported in bits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "dare/data.hpp"
#include "dare/model.hpp"
#include "dare/rng.hpp"

namespace dare {

class UndefinedMetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// AUC

/// Rank-sum AUC: P(score of a random positive > score of a random negative),
/// ties counting one half.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
  require_same_length(scores.size(), labels.size(), "auc");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (labels[idx[t]] == 1) {
        rank_sum += avg_rank;
        ++pos;
      } else {
        ++neg;
      }
    }
    i = j;
  }
  if (pos == 0 || neg == 0) throw UndefinedMetricError("auc: both classes must be present");
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

// ---------------------------------------------------------------------------
// Mutual information

/// Plug-in MI in bits of a rows x cols contingency table (row-major counts).
inline double mutual_information_bits(std::span<const double> counts, std::size_t rows, std::size_t cols) {
  require_same_length(counts.size(), rows * cols, "mutual_information_bits");
  double total = 0.0;
  for (double c : counts) total += c;
  if (total <= 0.0) return 0.0;
  std::vector<double> rs(rows, 0.0), cs(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      rs[r] += counts[r * cols + c];
      cs[c] += counts[r * cols + c];
    }
  }
  double mi = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double n = counts[r * cols + c];
      if (n > 0.0) mi += n / total * std::log2(n * total / (rs[r] * cs[c]));
    }
  }
  return std::max(0.0, mi);
}

/// MI(X; Y) in bits between two discrete label sequences.
inline double mutual_information_bits(std::span<const std::size_t> x, std::span<const std::size_t> y) {
  require_same_length(x.size(), y.size(), "mutual_information_bits");
  if (x.empty()) return 0.0;
  const std::size_t nx = *std::max_element(x.begin(), x.end()) + 1;
  const std::size_t ny = *std::max_element(y.begin(), y.end()) + 1;
  std::vector<double> counts(nx * ny, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) counts[x[i] * ny + y[i]] += 1.0;
  return mutual_information_bits(counts, nx, ny);
}

inline double entropy_bits(std::span<const std::size_t> y) {
  if (y.empty()) return 0.0;
  const std::size_t ny = *std::max_element(y.begin(), y.end()) + 1;
  std::vector<double> counts(ny, 0.0);
  for (std::size_t v : y) counts[v] += 1.0;
  double h = 0.0;
  for (double c : counts) {
    if (c > 0) {
      const double p = c / static_cast<double>(y.size());
      h -= p * std::log2(p);
    }
  }
  return h;
}

/// MI between B = [history has category c at position p] and the label,
/// for samples whose target has category t. Dense over (t, c, p).
class MiTable {
 public:
  MiTable() = default;
  MiTable(std::size_t num_categories, std::size_t window, double support_floor = 20.0)
      : categories_(checked_categories(num_categories, window)),
        window_(window),
        floor_(support_floor),
        present_(num_categories * num_categories * window * 2, 0.0),
        totals_(num_categories * 2, 0.0) {}

  void add(const Sample& x) {
    const std::size_t t = x.target.category;
    const std::size_t y = x.label == 1 ? 1 : 0;
    totals_[t * 2 + y] += 1.0;
    const std::size_t n = std::min(x.history.size(), window_);
    for (std::size_t i = 0; i < n; ++i) present_[cell(t, x.history[i].category, i + 1) * 2 + y] += 1.0;
    dirty_ = true;
  }

  void finalize() {
    mi_.assign(categories_ * categories_ * window_, 0.0);
    for (std::size_t t = 0; t < categories_; ++t) {
      const double n1 = totals_[t * 2 + 1], n0 = totals_[t * 2];
      for (std::size_t c = 0; c < categories_; ++c) {
        for (std::size_t p = 1; p <= window_; ++p) {
          const std::size_t k = cell(t, c, p);
          const double b0y0 = present_[k * 2], b1y1 = present_[k * 2 + 1];
          const double counts[4] = {n0 - b0y0, n1 - b1y1, b0y0, b1y1};  // rows: B=0, B=1
          mi_[k] = mutual_information_bits(counts, 2, 2);
        }
      }
    }
    dirty_ = false;
  }

  std::size_t num_categories() const { return categories_; }
  std::size_t window() const { return window_; }
  double support_floor() const { return floor_; }

  double mi(std::size_t t, std::size_t c, std::size_t p) const {
    if (dirty_) throw std::logic_error("MiTable: finalize() before querying");
    return mi_[cell(t, c, p)];
  }
  double support(std::size_t t, std::size_t c, std::size_t p) const {
    const std::size_t k = cell(t, c, p);
    return present_[k * 2] + present_[k * 2 + 1];
  }
  bool reliable(std::size_t t, std::size_t c, std::size_t p) const { return support(t, c, p) >= floor_; }
  double target_count(std::size_t t) const { return totals_[t * 2] + totals_[t * 2 + 1]; }

  void write_csv(std::ostream& out) const {
    out << "target_category,behavior_category,position,mi_bits,support\n";
    out.precision(17);
    for (std::size_t t = 0; t < categories_; ++t) {
      for (std::size_t c = 0; c < categories_; ++c) {
        for (std::size_t p = 1; p <= window_; ++p) {
          out << t << ',' << c << ',' << p << ',' << mi(t, c, p) << ',' << support(t, c, p) << '\n';
        }
      }
    }
  }

 private:
  static std::size_t checked_categories(std::size_t categories, std::size_t window) {
    const double cells = static_cast<double>(categories) * static_cast<double>(categories) * static_cast<double>(window);
    if (cells > 5e7) throw std::length_error("MiTable: too many (target, category, position) cells");
    return categories;
  }

  std::size_t cell(std::size_t t, std::size_t c, std::size_t p) const {
    if (t >= categories_ || c >= categories_ || p < 1 || p > window_) throw std::out_of_range("MiTable cell");
    return (t * categories_ + c) * window_ + (p - 1);
  }

  std::size_t categories_ = 0;
  std::size_t window_ = 0;
  double floor_ = 20.0;
  std::vector<double> present_;  // (t, c, p, y) counts of B = 1
  std::vector<double> totals_;   // (t, y)
  std::vector<double> mi_;
  bool dirty_ = true;
};

inline MiTable build_mi_table(std::span<const Sample> samples, std::size_t num_categories, std::size_t window,
                              double support_floor = 20.0) {
  MiTable t(num_categories, window, support_floor);
  for (const auto& x : samples) t.add(x);
  t.finalize();
  return t;
}

// ---------------------------------------------------------------------------
// NDCG

enum class Relevance { kBinary, kGraded };

/// The k history slots with the highest MI for the sample's target category
/// (unreliable cells score 0), ties going to the more recent slot. Returned
/// in ideal order.
inline std::vector<std::uint32_t> ground_truth_slots(const Sample& x, const MiTable& mi, std::size_t k) {
  const std::size_t n = std::min(x.history.size(), mi.window());
  std::vector<double> score(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = x.history[i].category, t = x.target.category;
    score[i] = mi.reliable(t, c, i + 1) ? mi.mi(t, c, i + 1) : 0.0;
  }
  std::vector<std::uint32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  const std::size_t m = std::min(k, n);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m), idx.end(),
                    [&](std::uint32_t a, std::uint32_t b) { return score[a] > score[b] || (score[a] == score[b] && a < b); });
  idx.resize(m);
  return idx;
}

/// NDCG of a ranked list against a relevance assignment. `gains` holds one
/// gain per ground-truth item in ideal order; retrieved items not in the
/// ground truth have zero gain. Discount 1/log2(rank + 1).
inline double ndcg(std::span<const std::uint32_t> retrieved, std::span<const std::uint32_t> ground_truth,
                   std::span<const double> gains) {
  require_same_length(ground_truth.size(), gains.size(), "ndcg");
  if (ground_truth.empty()) return 0.0;
  double dcg = 0.0;
  for (std::size_t r = 0; r < retrieved.size(); ++r) {
    const auto it = std::find(ground_truth.begin(), ground_truth.end(), retrieved[r]);
    if (it != ground_truth.end()) dcg += gains[static_cast<std::size_t>(it - ground_truth.begin())] / std::log2(r + 2.0);
  }
  std::vector<double> ideal(gains.begin(), gains.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double idcg = 0.0;
  for (std::size_t r = 0; r < ideal.size(); ++r) idcg += ideal[r] / std::log2(r + 2.0);
  return idcg > 0.0 ? std::clamp(dcg / idcg, 0.0, 1.0) : 0.0;
}

inline double ndcg_binary(std::span<const std::uint32_t> retrieved, std::span<const std::uint32_t> ground_truth) {
  const std::vector<double> ones(ground_truth.size(), 1.0);
  return ndcg(retrieved, ground_truth, ones);
}

inline double ndcg_at_k(std::span<const std::uint32_t> retrieved, const Sample& x, const MiTable& mi, std::size_t k = 20,
                        Relevance rel = Relevance::kBinary) {
  const auto gt = ground_truth_slots(x, mi, k);
  const auto top = retrieved.first(std::min(k, retrieved.size()));
  if (rel == Relevance::kBinary) return ndcg_binary(top, gt);
  std::vector<double> gains;
  for (std::uint32_t i : gt) gains.push_back(mi.mi(x.target.category, x.history[i].category, i + 1));
  return ndcg(top, gt, gains);
}

struct RetrievalEval {
  std::vector<double> per_sample;
  double mean = 0.0;
};

// ---------------------------------------------------------------------------
// K-means

struct KMeansResult {
  std::vector<std::size_t> assignment;
  std::vector<double> centroids;  // k x dim
  std::vector<double> objective;  // after each assignment step
  std::size_t iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding. Stops after `max_iter`
/// iterations or when no centroid moves more than `tol`. An empty cluster is
/// reseeded with the point farthest from its own centroid.
inline KMeansResult kmeans(std::span<const double> points, std::size_t dim, std::size_t k, std::uint64_t seed,
                           std::size_t max_iter = 100, double tol = 1e-6) {
  if (dim == 0 || points.size() % dim != 0) throw DimensionError("kmeans: points not a multiple of dim");
  const std::size_t n = points.size() / dim;
  if (k < 1) throw std::invalid_argument("kmeans: k must be positive");
  if (n < k) throw std::invalid_argument("kmeans: fewer points than clusters");
  auto pt = [&](std::size_t i) { return points.subspan(i * dim, dim); };
  auto dist2 = [dim](std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = a[j] - b[j];
      s += d * d;
    }
    return s;
  };

  Rng rng(derive_seed(seed, "kmeans"));
  KMeansResult res;
  res.centroids.resize(k * dim);
  auto centroid = [&](std::size_t c) { return std::span<double>(res.centroids).subspan(c * dim, dim); };
  {
    std::size_t first = rng.below(n);
    std::copy_n(pt(first).begin(), dim, centroid(0).begin());
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = dist2(pt(i), centroid(0));
    for (std::size_t c = 1; c < k; ++c) {
      const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
      const std::size_t pick = total > 0.0 ? rng.categorical(d2, total) : rng.below(n);
      std::copy_n(pt(pick).begin(), dim, centroid(c).begin());
      for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], dist2(pt(i), centroid(c)));
    }
  }

  res.assignment.assign(n, 0);
  std::vector<double> point_cost(n);
  std::vector<double> sums(k * dim);
  std::vector<std::size_t> counts(k);
  for (std::size_t it = 0; it < max_iter; ++it) {
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = dist2(pt(i), centroid(c));
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      res.assignment[i] = best;
      point_cost[i] = bd;
      obj += bd;
    }
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) counts[res.assignment[i]]++;
    // Reseed empty clusters: move in the point farthest from its centroid,
    // taken only from clusters that keep at least one member.
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = n;
      double fd = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[res.assignment[i]] > 1 && point_cost[i] > fd) {
          fd = point_cost[i];
          far = i;
        }
      }
      if (far == n) continue;  // every remaining point coincides with its centroid
      counts[res.assignment[far]]--;
      res.assignment[far] = c;
      counts[c] = 1;
      obj -= point_cost[far];
      point_cost[far] = 0.0;
      std::copy_n(pt(far).begin(), dim, centroid(c).begin());
    }
    res.objective.push_back(obj);
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto p = pt(i);
      for (std::size_t j = 0; j < dim; ++j) sums[res.assignment[i] * dim + j] += p[j];
    }
    double moved = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      auto ce = centroid(c);
      double m2 = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double v = sums[c * dim + j] / static_cast<double>(counts[c]);
        m2 += (v - ce[j]) * (v - ce[j]);
        ce[j] = v;
      }
      moved = std::max(moved, std::sqrt(m2));
    }
    res.iterations = it + 1;
    if (moved < tol) break;
  }
  return res;
}

inline double kmeans_objective(std::span<const double> points, std::size_t dim, const KMeansResult& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < r.assignment.size(); ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = points[i * dim + j] - r.centroids[r.assignment[i] * dim + j];
      s += d * d;
    }
  }
  return s;
}

struct DiscriminabilityEval {
  std::vector<std::size_t> grid;
  std::vector<double> mi_bits;
};

inline const std::vector<std::size_t>& default_cluster_grid() {
  static const std::vector<std::size_t> g{4, 8, 16, 32, 64};
  return g;
}

/// MI(Q(h), Y) in bits for each cluster count in `grid`.
inline DiscriminabilityEval discriminability(std::span<const double> h, std::size_t dim, std::span<const int> labels,
                                             std::span<const std::size_t> grid, std::uint64_t seed) {
  require_same_length(h.size() / std::max<std::size_t>(dim, 1), labels.size(), "discriminability");
  DiscriminabilityEval out;
  std::vector<std::size_t> y(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] == 1 ? 1 : 0;
  for (std::size_t k : grid) {
    const KMeansResult km = kmeans(h, dim, k, seed);
    out.grid.push_back(k);
    out.mi_bits.push_back(mutual_information_bits(km.assignment, y));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convergence

struct ConvergencePoint {
  std::size_t iteration = 0;
  double accuracy = 0.0;
};

/// Accuracy of p_click thresholded at 0.5.
inline double accuracy(const ModelState& s, std::span<const Sample> samples) {
  if (samples.empty()) throw std::invalid_argument("accuracy: empty sample set");
  std::size_t hit = 0;
  for (const auto& x : samples) {
    const int pred = predict(s, x) > 0.5 ? 1 : 0;
    if (pred == x.label) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(samples.size());
}

/// Records validation accuracy every `every` iterations; install as
/// TrainOptions::after_step.
class ConvergenceTracker {
 public:
  ConvergenceTracker(std::span<const Sample> val, std::size_t every) : val_(val), every_(every) {
    if (val.empty()) throw std::invalid_argument("track_convergence: empty validation set");
    if (every == 0) throw std::invalid_argument("track_convergence: cadence must be positive");
  }

  void operator()(std::size_t iteration, const ModelState& s) {
    if (iteration % every_ == 0) curve_.push_back({iteration, accuracy(s, val_)});
  }

  const std::vector<ConvergencePoint>& curve() const { return curve_; }

 private:
  std::span<const Sample> val_;
  std::size_t every_;
  std::vector<ConvergencePoint> curve_;
};

/// First recorded iteration whose accuracy reaches `target`, or 0 if never.
inline std::size_t iterations_to_reach(std::span<const ConvergencePoint> curve, double target) {
  for (const auto& p : curve) {
    if (p.accuracy >= target) return p.iteration;
  }
  return 0;
}

}  // namespace dare

#endif  // DARE_METRICS_HPP
