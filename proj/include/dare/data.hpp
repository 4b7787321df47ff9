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

#ifndef DARE_DATA_HPP
#define DARE_DATA_HPP

// Behavior logs: synthetic generation, CSV ingestion, and the
// train/validation/test split with negative sampling.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dare/rng.hpp"

namespace dare {

struct BehaviorEvent {
  std::uint32_t item = 0;
  std::uint32_t category = 0;
  std::int64_t timestamp = 0;

  friend bool operator==(const BehaviorEvent&, const BehaviorEvent&) = default;
};

/// Per-user chronological sequences plus vocabularies. Every item belongs to
/// exactly one category (`item_category`).
struct Dataset {
  std::vector<std::vector<BehaviorEvent>> sequences;
  std::vector<std::int64_t> user_ids;  // raw id per sequence
  std::size_t num_items = 0;
  std::size_t num_categories = 0;
  std::vector<std::uint32_t> item_category;

  std::size_t num_users() const { return sequences.size(); }
  std::size_t num_events() const {
    std::size_t n = 0;
    for (const auto& s : sequences) n += s.size();
    return n;
  }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& msg)
      : std::invalid_argument(field + ": " + msg), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// ---------------------------------------------------------------------------
// Synthetic generator

struct GenConfig {
  std::size_t num_categories = 20;
  std::size_t items_per_category = 50;
  std::size_t num_users = 5000;
  std::size_t sequence_length = 300;
  std::vector<double> affinity;  // C x C row-major; empty means default_affinity
  double decay = 0.9;            // gamma
  double bias = -2.0;            // b in the click rule
  double preference_weight = 0.3;
  double preference_sharpness = 1.0;
  double self_affinity = 2.0;      // used only to build the default matrix
  double neighbor_affinity = 0.3;  // used only to build the default matrix
  std::uint64_t seed = 1;

  double affinity_at(std::size_t from, std::size_t to) const {
    return affinity[from * num_categories + to];
  }
};

/// Diagonal `self` plus `neighbor` on the cyclic +-1 off-diagonals.
inline std::vector<double> default_affinity(std::size_t c, double self, double neighbor) {
  std::vector<double> a(c * c, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    a[i * c + i] = self;
    if (c > 2) {
      a[i * c + (i + 1) % c] += neighbor;
      a[i * c + (i + c - 1) % c] += neighbor;
    }
  }
  return a;
}

/// Fills the default affinity when absent and validates every field.
inline GenConfig resolve(GenConfig cfg) {
  if (cfg.num_categories == 0) throw ConfigError("num_categories", "must be positive");
  if (cfg.items_per_category == 0) throw ConfigError("items_per_category", "must be positive");
  if (!(cfg.decay > 0.0 && cfg.decay < 1.0)) throw ConfigError("decay", "must lie in (0, 1)");
  if (!(cfg.preference_weight >= 0.0 && cfg.preference_weight <= 1.0)) {
    throw ConfigError("preference_weight", "must lie in [0, 1]");
  }
  if (!std::isfinite(cfg.bias)) throw ConfigError("bias", "must be finite");
  const std::size_t c = cfg.num_categories;
  if (cfg.affinity.empty()) cfg.affinity = default_affinity(c, cfg.self_affinity, cfg.neighbor_affinity);
  if (cfg.affinity.size() != c * c) throw ConfigError("affinity", "must be a C x C matrix");
  for (std::size_t i = 0; i < c; ++i) {
    double off = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double v = cfg.affinity[i * c + j];
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("affinity", "entries must be finite and nonnegative");
      if (j != i) off += v;
    }
    const double off_mean = c > 1 ? off / static_cast<double>(c - 1) : 0.0;
    if (!(cfg.affinity[i * c + i] > off_mean)) {
      throw ConfigError("affinity", "diagonal must exceed the row's off-diagonal mean");
    }
  }
  return cfg;
}

/// Click rule: sigmoid(b + sum_i affinity[c_i, c_t] * gamma^{p_i}), with
/// `history_categories` most-recent-first (position p_i = i + 1).
inline double click_probability(const GenConfig& cfg, std::span<const std::uint32_t> history_categories,
                                std::uint32_t target_category) {
  double s = cfg.bias;
  double g = cfg.decay;
  for (std::uint32_t c : history_categories) {
    s += cfg.affinity_at(c, target_category) * g;
    g *= cfg.decay;
  }
  return 1.0 / (1.0 + std::exp(-s));
}

/// Each user draws a preference distribution over categories; each next
/// category comes from that preference with probability `preference_weight`
/// and otherwise from the affinity to recent categories,
/// q(c) ~ sum_i affinity[c_i, c] * gamma^{p_i}. Items are uniform within the
/// category and timestamps are ordinal.
inline Dataset generate_log(const GenConfig& raw) {
  const GenConfig cfg = resolve(raw);
  const std::size_t c = cfg.num_categories;
  Dataset ds;
  ds.num_categories = c;
  ds.num_items = c * cfg.items_per_category;
  ds.item_category.resize(ds.num_items);
  for (std::size_t i = 0; i < ds.num_items; ++i) {
    ds.item_category[i] = static_cast<std::uint32_t>(i / cfg.items_per_category);
  }
  const std::uint64_t gen_seed = derive_seed(cfg.seed, "generate");
  ds.sequences.resize(cfg.num_users);
  ds.user_ids.resize(cfg.num_users);
  std::vector<double> pref(c), decayed(c), q(c);
  for (std::size_t u = 0; u < cfg.num_users; ++u) {
    Rng rng(gen_seed ^ static_cast<std::uint64_t>(u));
    ds.user_ids[u] = static_cast<std::int64_t>(u);
    double pref_total = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      pref[k] = std::exp(cfg.preference_sharpness * rng.normal());
      pref_total += pref[k];
    }
    std::fill(decayed.begin(), decayed.end(), 0.0);
    auto& seq = ds.sequences[u];
    seq.reserve(cfg.sequence_length);
    for (std::size_t t = 0; t < cfg.sequence_length; ++t) {
      std::size_t cat;
      const double mix = rng.uniform();
      double q_total = 0.0;
      if (t > 0 && mix >= cfg.preference_weight) {
        for (std::size_t k = 0; k < c; ++k) {
          double s = 0.0;
          for (std::size_t j = 0; j < c; ++j) s += decayed[j] * cfg.affinity[j * c + k];
          q[k] = s;
          q_total += s;
        }
      }
      if (q_total > 0.0) {
        cat = rng.categorical(q, q_total);
      } else {
        cat = rng.categorical(pref, pref_total);
      }
      const auto item = static_cast<std::uint32_t>(cat * cfg.items_per_category +
                                                   rng.below(cfg.items_per_category));
      seq.push_back({item, static_cast<std::uint32_t>(cat), static_cast<std::int64_t>(t)});
      // The event just emitted becomes position 1 for the next draw.
      for (double& d : decayed) d *= cfg.decay;
      decayed[cat] += cfg.decay;
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Ingestion

class IngestError : public std::runtime_error {
 public:
  IngestError(std::size_t line, const std::string& msg)
      : std::runtime_error("line " + std::to_string(line) + ": " + msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

enum class LogFormat { kCanonicalCsv, kTaobaoUserBehavior };

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::int64_t parse_int(std::string_view s, std::size_t line, const char* field) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw IngestError(line, std::string("malformed ") + field + " '" + std::string(s) + "'");
  }
  return v;
}

struct RawEvent {
  std::int64_t item;
  std::int64_t category;
  std::int64_t timestamp;
  std::size_t line;
};

}  // namespace detail

/// Parses a behavior log, groups events by user (users ordered by first
/// appearance), stable-sorts each user by timestamp, and remaps item and
/// category ids densely in order of first occurrence along that traversal.
inline Dataset ingest_stream(std::istream& in, LogFormat format) {
  std::unordered_map<std::int64_t, std::size_t> user_slot;
  std::vector<std::int64_t> users;
  std::vector<std::vector<detail::RawEvent>> raw;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (format == LogFormat::kCanonicalCsv && lineno == 1) {
      if (line != "user_id,item_id,category_id,timestamp") {
        throw IngestError(lineno, "expected header user_id,item_id,category_id,timestamp");
      }
      continue;
    }
    const auto f = detail::split_commas(line);
    std::int64_t user, item, cat, ts;
    if (format == LogFormat::kCanonicalCsv) {
      if (f.size() != 4) throw IngestError(lineno, "expected 4 fields, got " + std::to_string(f.size()));
      user = detail::parse_int(f[0], lineno, "user_id");
      item = detail::parse_int(f[1], lineno, "item_id");
      cat = detail::parse_int(f[2], lineno, "category_id");
      ts = detail::parse_int(f[3], lineno, "timestamp");
    } else {
      if (f.size() != 5) throw IngestError(lineno, "expected 5 fields, got " + std::to_string(f.size()));
      user = detail::parse_int(f[0], lineno, "user_id");
      item = detail::parse_int(f[1], lineno, "item_id");
      cat = detail::parse_int(f[2], lineno, "category_id");
      ts = detail::parse_int(f[4], lineno, "timestamp");
      if (f[3] != "pv") continue;  // clicks only
    }
    auto [it, inserted] = user_slot.try_emplace(user, users.size());
    if (inserted) {
      users.push_back(user);
      raw.emplace_back();
    }
    raw[it->second].push_back({item, cat, ts, lineno});
  }

  Dataset ds;
  ds.user_ids = users;
  std::unordered_map<std::int64_t, std::uint32_t> item_map, cat_map;
  for (auto& events : raw) {
    std::stable_sort(events.begin(), events.end(),
                     [](const detail::RawEvent& a, const detail::RawEvent& b) { return a.timestamp < b.timestamp; });
    std::vector<BehaviorEvent> seq;
    seq.reserve(events.size());
    for (const auto& e : events) {
      const auto [cit, cnew] = cat_map.try_emplace(e.category, static_cast<std::uint32_t>(cat_map.size()));
      const auto [iit, inew] = item_map.try_emplace(e.item, static_cast<std::uint32_t>(item_map.size()));
      if (inew) {
        ds.item_category.push_back(cit->second);
      } else if (ds.item_category[iit->second] != cit->second) {
        throw IngestError(e.line, "item " + std::to_string(e.item) + " appears under two categories");
      }
      seq.push_back({iit->second, cit->second, e.timestamp});
    }
    ds.sequences.push_back(std::move(seq));
  }
  ds.num_items = item_map.size();
  ds.num_categories = cat_map.size();
  return ds;
}

inline Dataset ingest_log(const std::string& path, LogFormat format) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return ingest_stream(in, format);
}

/// Canonical CSV: header plus one row per event, users in dataset order.
inline void write_canonical_csv(const Dataset& ds, std::ostream& out) {
  out << "user_id,item_id,category_id,timestamp\n";
  for (std::size_t u = 0; u < ds.sequences.size(); ++u) {
    const std::int64_t uid = u < ds.user_ids.size() ? ds.user_ids[u] : static_cast<std::int64_t>(u);
    for (const auto& e : ds.sequences[u]) {
      out << uid << ',' << e.item << ',' << e.category << ',' << e.timestamp << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Split

struct SplitSpec {
  std::size_t test_index = 1;
  std::size_t val_index = 2;
  std::vector<std::size_t> train_indices = default_train_indices();
  std::size_t window = 200;
  std::size_t min_length = 210;  // users need strictly more behaviors than this

  static std::vector<std::size_t> default_train_indices() {
    std::vector<std::size_t> v;
    for (std::size_t i = 0; i <= 18; ++i) v.push_back(3 + 5 * i);
    return v;
  }
};

/// One prediction example. `history` is most-recent-first (history[i] sits
/// at relative position i + 1); slots beyond history.size() up to the window
/// are padding.
struct Sample {
  std::span<const BehaviorEvent> history;
  BehaviorEvent target;
  int label = 0;
  std::uint32_t user = 0;
  std::uint32_t target_rank = 0;  // 1 = most recent behavior of the user
};

/// Owns the recency-ordered copies of each retained user's sequence that the
/// samples point into. Move-only so the spans stay valid.
struct SplitResult {
  std::vector<std::vector<BehaviorEvent>> recency;
  std::vector<Sample> train, val, test;

  SplitResult() = default;
  SplitResult(const SplitResult&) = delete;
  SplitResult& operator=(const SplitResult&) = delete;
  SplitResult(SplitResult&&) = default;
  SplitResult& operator=(SplitResult&&) = default;
};

/// Numbers behaviors 1..T from most recent, drops users with T <= min_length,
/// and for each selected rank j emits a positive (target = j-th behavior,
/// history = ranks j+1..j+window) followed by `neg_ratio` negatives whose
/// targets are uniform over the item vocabulary, never equal to the positive.
inline SplitResult split_dataset(const Dataset& ds, const SplitSpec& spec, std::size_t neg_ratio,
                                 std::uint64_t seed) {
  SplitResult out;
  Rng rng(derive_seed(seed, "negatives"));
  for (std::size_t u = 0; u < ds.sequences.size(); ++u) {
    const auto& seq = ds.sequences[u];
    if (seq.size() <= spec.min_length) continue;
    out.recency.emplace_back(seq.rbegin(), seq.rend());
  }
  std::size_t slot = 0;
  for (std::size_t u = 0; u < ds.sequences.size(); ++u) {
    if (ds.sequences[u].size() <= spec.min_length) continue;
    const auto& rec = out.recency[slot++];
    const std::size_t t_len = rec.size();
    auto emit = [&](std::size_t rank, std::vector<Sample>& dst) {
      if (rank < 1 || rank > t_len) return;
      const std::size_t start = rank;  // 0-based index of rank + 1
      const std::size_t len = std::min(spec.window, t_len - start);
      Sample pos;
      pos.history = std::span<const BehaviorEvent>(rec.data() + start, len);
      pos.target = rec[rank - 1];
      pos.label = 1;
      pos.user = static_cast<std::uint32_t>(u);
      pos.target_rank = static_cast<std::uint32_t>(rank);
      dst.push_back(pos);
      for (std::size_t k = 0; k < neg_ratio; ++k) {
        Sample neg = pos;
        neg.label = 0;
        if (ds.num_items < 2) throw std::invalid_argument("negative sampling needs at least two items");
        std::uint32_t item;
        do {
          item = static_cast<std::uint32_t>(rng.below(ds.num_items));
        } while (item == pos.target.item);
        neg.target.item = item;
        neg.target.category = ds.item_category[item];
        dst.push_back(neg);
      }
    };
    emit(spec.test_index, out.test);
    emit(spec.val_index, out.val);
    for (std::size_t j : spec.train_indices) emit(j, out.train);
  }
  return out;
}

}  // namespace dare

#endif  // DARE_DATA_HPP
