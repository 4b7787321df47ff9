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

#ifndef DARE_BENCH_HPP
#define DARE_BENCH_HPP

// Search-stage timing as a function of the attention width. The timed
// kernel is exactly the model's: dot_logits over the history followed by
// select_top_k.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include "dare/model.hpp"
#include "dare/rng.hpp"

namespace dare {

struct BenchResult {
  std::size_t attention_dim = 0;  // width of the attention vectors searched
  std::size_t sequence_length = 0;
  double median_ns = 0.0;  // per retrieval
  double min_ns = 0.0;
  double max_ns = 0.0;
  double throughput = 0.0;  // retrievals per second
  double normalized_cost = 0.0;
  std::optional<double> auc;
};

struct BenchOptions {
  std::vector<std::size_t> dims{16, 32, 64, 128};
  std::size_t sequence_length = 200;
  std::size_t retrieval_count = 20;
  std::size_t batch = 256;  // upper bound on retrievals per timed repetition
  // Keys touched per repetition stay within this many bytes, so the timing
  // reflects the kernel rather than DRAM streaming. 0 disables the cap.
  std::size_t working_set_bytes = std::size_t{1} << 20;
  std::size_t repetitions = 30;
  std::size_t warmup = 5;
  std::size_t baseline_dim = 128;
  std::uint64_t seed = 7;
};

/// Random keys/queries for `batch` retrievals at width `dim`.
struct SearchWorkload {
  std::size_t dim = 0;
  std::size_t n = 0;
  std::vector<double> keys;     // batch x n x dim
  std::vector<double> queries;  // batch x dim

  static SearchWorkload make(std::size_t dim, std::size_t n, std::size_t batch, std::uint64_t seed) {
    SearchWorkload w;
    w.dim = dim;
    w.n = n;
    Rng rng(derive_seed(seed, "bench/" + std::to_string(dim) + "/" + std::to_string(n)));
    w.keys.resize(batch * n * dim);
    w.queries.resize(batch * dim);
    for (double& v : w.keys) v = rng.uniform(-1.0, 1.0);
    for (double& v : w.queries) v = rng.uniform(-1.0, 1.0);
    return w;
  }
  std::size_t batch() const { return dim ? queries.size() / dim : 0; }
};

/// One retrieval: the model's logits kernel plus top-K selection.
inline std::vector<std::uint32_t> search_kernel(std::span<const double> keys, std::span<const double> query, std::size_t n,
                                                std::size_t k, std::vector<double>& scratch) {
  scratch.resize(n);
  dot_logits(keys, query, n, scratch);
  return select_top_k(scratch, k);
}

/// Median wall time (ns) per retrieval over `repetitions` passes of the
/// workload, after `warmup` untimed passes. Fills min/max as well.
inline BenchResult time_search(const SearchWorkload& w, std::size_t k, std::size_t repetitions, std::size_t warmup) {
  std::vector<double> scratch;
  std::uint64_t sink = 0;
  const std::size_t b = w.batch();
  auto pass = [&] {
    for (std::size_t q = 0; q < b; ++q) {
      const auto r = search_kernel(std::span<const double>(w.keys).subspan(q * w.n * w.dim, w.n * w.dim),
                                   std::span<const double>(w.queries).subspan(q * w.dim, w.dim), w.n, k, scratch);
      sink += r.front();
    }
  };
  for (std::size_t i = 0; i < warmup; ++i) pass();
  std::vector<double> per;
  for (std::size_t r = 0; r < std::max<std::size_t>(1, repetitions); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    pass();
    const auto t1 = std::chrono::steady_clock::now();
    per.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count() / static_cast<double>(std::max<std::size_t>(b, 1)));
  }
  std::sort(per.begin(), per.end());
  BenchResult res;
  res.attention_dim = w.dim;
  res.sequence_length = w.n;
  const std::size_t m = per.size();
  res.median_ns = m % 2 ? per[m / 2] : 0.5 * (per[m / 2 - 1] + per[m / 2]);
  res.min_ns = per.front();
  res.max_ns = per.back();
  res.throughput = res.median_ns > 0.0 ? 1e9 / res.median_ns : 0.0;
  static volatile std::uint64_t observed;
  observed = sink;
  return res;
}

/// Times every width in opt.dims. Costs are normalized to baseline_dim when
/// it is part of the grid, otherwise to the widest entry.
inline std::vector<BenchResult> bench_search(const BenchOptions& opt) {
  std::vector<BenchResult> out;
  for (std::size_t d : opt.dims) {
    std::size_t batch = opt.batch;
    if (opt.working_set_bytes) {
      const std::size_t per = std::max<std::size_t>(1, opt.sequence_length * d * sizeof(double));
      batch = std::clamp<std::size_t>(opt.working_set_bytes / per, 1, opt.batch);
    }
    const auto w = SearchWorkload::make(d, opt.sequence_length, batch, opt.seed);
    out.push_back(time_search(w, opt.retrieval_count, opt.repetitions, opt.warmup));
  }
  auto base_it = std::find_if(out.begin(), out.end(),
                              [&](const BenchResult& r) { return r.attention_dim == opt.baseline_dim; });
  if (base_it == out.end()) {
    base_it = std::max_element(out.begin(), out.end(), [](const BenchResult& a, const BenchResult& b) {
      return a.attention_dim < b.attention_dim;
    });
  }
  const double base = base_it == out.end() ? 0.0 : base_it->median_ns;
  for (auto& r : out) r.normalized_cost = base > 0.0 ? r.median_ns / base : 0.0;
  return out;
}

inline void write_bench_csv(std::span<const BenchResult> results, std::ostream& out) {
  out << "K_A,N,median_ns_per_retrieval,normalized_cost,auc\n";
  out.precision(10);
  for (const auto& r : results) {
    out << r.attention_dim << ',' << r.sequence_length << ',' << r.median_ns << ',' << r.normalized_cost << ',';
    if (r.auc) out << *r.auc;
    out << '\n';
  }
}

}  // namespace dare

#endif  // DARE_BENCH_HPP
