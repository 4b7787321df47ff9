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

#ifndef DARE_PIPELINE_HPP
#define DARE_PIPELINE_HPP

// End-to-end training and evaluation shared by the CLI and the acceptance
// harness.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dare/data.hpp"
#include "dare/diagnostics.hpp"
#include "dare/metrics.hpp"
#include "dare/model.hpp"
#include "dare/run.hpp"

namespace dare {

class MissingDatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VocabularyMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Loads a canonical behavior CSV (or a directory holding behaviors.csv).
inline Dataset load_dataset(const std::string& path) {
  if (path.empty()) throw MissingDatasetError("no dataset given");
  const auto csv = dataset_csv(path);
  if (!std::filesystem::is_regular_file(csv)) throw MissingDatasetError("dataset not found: " + csv.string());
  return ingest_log(csv.string(), LogFormat::kCanonicalCsv);
}

inline SplitResult split_for_run(const Dataset& ds, const RunConfig& rc) {
  return split_dataset(ds, split_spec(rc), rc.neg_ratio, rc.seed);
}

inline void check_vocabulary(const ModelState& s, const Dataset& ds) {
  if (s.config.num_items != ds.num_items || s.config.num_categories != ds.num_categories) {
    throw VocabularyMismatchError("vocabulary mismatch: model has " + std::to_string(s.config.num_items) + " items / " +
                                  std::to_string(s.config.num_categories) + " categories, dataset has " +
                                  std::to_string(ds.num_items) + " / " + std::to_string(ds.num_categories));
  }
}

struct TrainOutcome {
  std::vector<double> losses;  // per iteration
  std::vector<ConvergencePoint> convergence;
  GradDiagnostics diagnostics;
  std::optional<LogitsHistogram> histogram;
  std::size_t iterations = 0;
};

/// Runs rc.epochs passes (capped by rc.max_iterations), recording gradient
/// diagnostics every rc.diag_every iterations and validation accuracy every
/// rc.eval_every iterations.
inline TrainOutcome run_training(ModelState& s, const SplitResult& split, const RunConfig& rc,
                                 bool collect_histogram = false) {
  if (split.train.empty() && rc.epochs > 0) throw std::invalid_argument("no training samples; the dataset has no eligible users");
  TrainOutcome out;
  out.diagnostics.decoupled = !is_shared_table(s.config.variant);
  if (collect_histogram) out.histogram.emplace();
  std::optional<ConvergenceTracker> tracker;
  if (!split.val.empty()) tracker.emplace(split.val, rc.eval_every);

  TrainOptions opt;
  opt.batch_size = rc.batch_size;
  opt.max_iterations = rc.max_iterations;
  opt.collect_logits = collect_histogram;
  opt.on_iteration = [&](const IterationReport& r) {
    if (r.iteration % rc.diag_every == 0) out.diagnostics.record_step(*r.grads);
    if (out.histogram) out.histogram->record(r.logits);
  };
  opt.after_step = [&](std::size_t it, ModelState& st) {
    if (tracker) (*tracker)(it, st);
  };
  for (std::size_t e = 0; e < rc.epochs; ++e) {
    const EpochResult er = train_epoch(s, split.train, opt, out.iterations);
    out.losses.insert(out.losses.end(), er.losses.begin(), er.losses.end());
    out.iterations += er.iterations;
    if (er.iterations == 0) break;
  }
  if (tracker) out.convergence = tracker->curve();
  return out;
}

struct Evaluation {
  double auc = 0.0;
  double mean_ndcg = 0.0;
  std::size_t num_samples = 0;
  DiscriminabilityEval discriminability;
};

/// AUC, mean NDCG@k against MI ground truth and the discriminability grid
/// over `samples`. The MI table must come from training data.
inline Evaluation evaluate_model(const ModelState& s, std::span<const Sample> samples, const MiTable& mi,
                                 const RunConfig& rc, bool with_discriminability = true) {
  if (samples.empty()) throw std::invalid_argument("no evaluation samples");
  Evaluation ev;
  ev.num_samples = samples.size();
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<double> h;
  double ndcg_sum = 0.0;
  std::size_t h_dim = 0;
  for (const auto& x : samples) {
    const ForwardCache c = forward(s, x);
    scores.push_back(c.p_click);
    labels.push_back(x.label);
    ndcg_sum += ndcg_at_k(c.retrieved, x, mi, rc.ndcg_k, rc.relevance);
    h_dim = c.h.size();
    h.insert(h.end(), c.h.begin(), c.h.end());
  }
  ev.auc = auc(scores, labels);
  ev.mean_ndcg = ndcg_sum / static_cast<double>(samples.size());
  if (with_discriminability) {
    ev.discriminability = discriminability(h, h_dim, labels, rc.cluster_grid,
                                           derive_seed(rc.seed, "kmeans"));
  }
  return ev;
}

inline Json convergence_json(std::span<const ConvergencePoint> curve) {
  Json a = Json::array();
  for (const auto& p : curve) a.push_back({{"iteration", p.iteration}, {"accuracy", p.accuracy}});
  return a;
}

inline std::vector<ConvergencePoint> convergence_from_json(const Json& a) {
  std::vector<ConvergencePoint> out;
  if (!a.is_array()) return out;
  for (const auto& p : a) out.push_back({p["iteration"].get<std::size_t>(), p["accuracy"].get<double>()});
  return out;
}

inline Json histogram_json(const LogitsHistogram& h) {
  return {{"lo", h.lo()},       {"hi", h.hi()},           {"edges", h.edges()},
          {"counts", h.counts()}, {"underflow", h.underflow()}, {"overflow", h.overflow()},
          {"total", h.total()}, {"mean", h.mean()},       {"stddev", h.stddev()},
          {"min", h.min()},     {"max", h.max()}};
}

}  // namespace dare

#endif  // DARE_PIPELINE_HPP
