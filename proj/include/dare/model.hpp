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

#ifndef DARE_MODEL_HPP
#define DARE_MODEL_HPP

// Two-stage long-sequence CTR models. All variants share one pipeline:
//
//   embedding lookup -> attention logits -> top-K search -> scaled softmax
//   -> representation aggregation -> MLP head -> 2-class cross-entropy
//
// and differ only in how embedding tables are wired to the four encoder
// roles (attention/representation x history/target), plus the projection
// (TWIN_PROJ) and attention-MLP (DIN) extras.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dare/data.hpp"
#include "dare/numcore.hpp"
#include "dare/rng.hpp"

namespace dare {

enum class Variant { kDare, kTwin, kTwinProj, kTwin4E, kTwinHard, kTwinNoTr, kDin };

inline constexpr std::array<Variant, 7> kAllVariants = {
    Variant::kDare,     Variant::kTwin,     Variant::kTwinProj, Variant::kTwin4E,
    Variant::kTwinHard, Variant::kTwinNoTr, Variant::kDin};

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kDare: return "DARE";
    case Variant::kTwin: return "TWIN";
    case Variant::kTwinProj: return "TWIN_PROJ";
    case Variant::kTwin4E: return "TWIN_4E";
    case Variant::kTwinHard: return "TWIN_HARD";
    case Variant::kTwinNoTr: return "TWIN_NO_TR";
    case Variant::kDin: return "DIN";
  }
  return "?";
}

inline std::optional<Variant> parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  return std::nullopt;
}

inline std::string valid_variant_list() {
  std::string s;
  for (Variant v : kAllVariants) {
    if (!s.empty()) s += ", ";
    s += variant_name(v);
  }
  return s;
}

/// True when attention and representation read the same tables.
inline bool is_shared_table(Variant v) { return v != Variant::kDare && v != Variant::kTwin4E; }
inline bool uses_target_aware_repr(Variant v) { return v != Variant::kTwinNoTr; }

class EmptyHistoryError : public std::invalid_argument {
 public:
  EmptyHistoryError() : std::invalid_argument("search_top_k: history has no unmasked behavior") {}
};

struct ModelConfig {
  Variant variant = Variant::kDare;
  // Full behavior-vector widths in each space; item and category embeddings
  // take half each, position embeddings the full width.
  std::size_t attention_dim = 16;
  std::size_t representation_dim = 16;
  std::size_t retrieval_count = 20;
  std::size_t window = 200;
  std::vector<std::size_t> mlp_hidden = {200, 80};
  std::size_t din_hidden = 36;
  double init_scale = 1.0;
  std::uint64_t seed = 1;
  std::size_t num_items = 0;
  std::size_t num_categories = 0;

  std::size_t attention_vector_dim() const { return attention_dim; }
  std::size_t representation_vector_dim() const { return representation_dim; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void validate(const ModelConfig& c) {
  if (c.attention_dim == 0 || c.attention_dim % 2) throw ConfigError("attention_dim", "must be positive and even");
  if (c.representation_dim == 0 || c.representation_dim % 2) {
    throw ConfigError("representation_dim", "must be positive and even");
  }
  if (c.window == 0) throw ConfigError("window", "must be positive");
  if (c.retrieval_count == 0 || c.retrieval_count > c.window) {
    throw ConfigError("retrieval_count", "must lie in [1, window]");
  }
  if (c.num_items == 0) throw ConfigError("num_items", "must be positive");
  if (c.num_categories == 0) throw ConfigError("num_categories", "must be positive");
  if (is_shared_table(c.variant) && c.attention_dim != c.representation_dim) {
    throw ConfigError("representation_dim", "single-table variants need attention_dim == representation_dim");
  }
  if (c.variant == Variant::kDin && c.din_hidden == 0) throw ConfigError("din_hidden", "must be positive");
}

struct EmbeddingTable {
  std::string name;
  std::size_t num_ids = 0;
  std::size_t dim = 0;
  std::vector<double> weights;

  std::span<double> row(std::size_t id) { return {weights.data() + id * dim, dim}; }
  std::span<const double> row(std::size_t id) const { return {weights.data() + id * dim, dim}; }

  friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;
};

enum class Role { kAttHistory = 0, kAttTarget = 1, kReprHistory = 2, kReprTarget = 3 };

/// Indices into ModelState::tables. A behavior vector is
/// concat(item, category) + position, with position 0 reserved for the target.
struct Encoder {
  std::size_t item = 0;
  std::size_t category = 0;
  std::size_t position = 0;

  friend bool operator==(const Encoder&, const Encoder&) = default;
};

struct ModelState {
  ModelConfig config;
  std::vector<EmbeddingTable> tables;
  std::array<Encoder, 4> encoders{};
  MlpParams head;
  Mat w_query, w_key, w_value;  // TWIN_PROJ
  MlpParams din_attention;      // DIN
  AdamState adam;
  Rng rng;  // shuffling stream

  const Encoder& encoder(Role r) const { return encoders[static_cast<std::size_t>(r)]; }

  /// Points role `from` at the tables of role `to` (shared storage).
  void tie(Role from, Role to) { encoders[static_cast<std::size_t>(from)] = encoder(to); }

  bool has_projection() const { return config.variant == Variant::kTwinProj; }
  bool has_din() const { return config.variant == Variant::kDin; }

  /// Parameter tensors in the fixed optimizer order: tables, head layers
  /// (weight, bias), projections, DIN attention layers.
  std::vector<std::span<double>> parameters() {
    std::vector<std::span<double>> p;
    for (auto& t : tables) p.emplace_back(t.weights);
    for (auto& l : head.layers) {
      p.emplace_back(l.weight.data);
      p.emplace_back(l.bias);
    }
    if (has_projection()) {
      p.emplace_back(w_query.data);
      p.emplace_back(w_key.data);
      p.emplace_back(w_value.data);
    }
    if (has_din()) {
      for (auto& l : din_attention.layers) {
        p.emplace_back(l.weight.data);
        p.emplace_back(l.bias);
      }
    }
    return p;
  }

  std::vector<std::size_t> parameter_sizes() {
    std::vector<std::size_t> s;
    for (auto p : parameters()) s.push_back(p.size());
    return s;
  }
};

inline std::vector<std::size_t> head_dims(const ModelConfig& c) {
  std::vector<std::size_t> dims{2 * c.representation_vector_dim()};
  dims.insert(dims.end(), c.mlp_hidden.begin(), c.mlp_hidden.end());
  dims.push_back(2);
  return dims;
}

inline ModelState make_model(const ModelConfig& cfg, const AdamConfig& adam = {}) {
  validate(cfg);
  ModelState s;
  s.config = cfg;
  auto add_table = [&](const std::string& name, std::size_t ids, std::size_t dim) {
    EmbeddingTable t;
    t.name = name;
    t.num_ids = ids;
    t.dim = dim;
    t.weights.resize(ids * dim);
    Rng rng(derive_seed(cfg.seed, "table/" + std::to_string(s.tables.size())));
    const double bound = cfg.init_scale / std::sqrt(static_cast<double>(dim));
    for (double& w : t.weights) w = rng.uniform(-bound, bound);
    s.tables.push_back(std::move(t));
    return s.tables.size() - 1;
  };
  auto add_encoder = [&](const std::string& prefix, std::size_t dim) {
    Encoder e;
    e.item = add_table(prefix + "/item", cfg.num_items, dim / 2);
    e.category = add_table(prefix + "/category", cfg.num_categories, dim / 2);
    e.position = add_table(prefix + "/position", cfg.window + 1, dim);
    return e;
  };
  switch (cfg.variant) {
    case Variant::kDare: {
      const Encoder att = add_encoder("att", cfg.attention_dim);
      const Encoder repr = add_encoder("repr", cfg.representation_dim);
      s.encoders = {att, att, repr, repr};
      break;
    }
    case Variant::kTwin4E: {
      const Encoder ah = add_encoder("att-h", cfg.attention_dim);
      const Encoder at = add_encoder("att-t", cfg.attention_dim);
      const Encoder rh = add_encoder("repr-h", cfg.representation_dim);
      const Encoder rt = add_encoder("repr-t", cfg.representation_dim);
      s.encoders = {ah, at, rh, rt};
      break;
    }
    default: {
      const Encoder shared = add_encoder("shared", cfg.attention_dim);
      s.encoders = {shared, shared, shared, shared};
      break;
    }
  }
  const auto dims = head_dims(cfg);
  Rng head_rng(derive_seed(cfg.seed, "head"));
  s.head = make_mlp(dims, Activation::kRelu, cfg.init_scale, head_rng);
  if (cfg.variant == Variant::kTwinProj) {
    const std::size_t d = cfg.attention_vector_dim();
    Rng prng(derive_seed(cfg.seed, "projection"));
    const double bound = cfg.init_scale / std::sqrt(static_cast<double>(d));
    for (Mat* m : {&s.w_query, &s.w_key, &s.w_value}) {
      *m = Mat(d, d);
      for (double& w : m->data) w = prng.uniform(-bound, bound);
    }
  }
  if (cfg.variant == Variant::kDin) {
    const std::size_t d = cfg.attention_vector_dim();
    const std::vector<std::size_t> dims_din{3 * d, cfg.din_hidden, 1};
    Rng drng(derive_seed(cfg.seed, "din"));
    s.din_attention = make_mlp(dims_din, Activation::kRelu, cfg.init_scale, drng);
  }
  s.adam = AdamState(adam, s.parameter_sizes());
  s.rng = Rng(derive_seed(cfg.seed, "shuffle"));
  return s;
}

// ---------------------------------------------------------------------------
// Encoding

inline void check_event(const ModelState& s, const BehaviorEvent& e) {
  if (e.item >= s.config.num_items) throw DimensionError("item id " + std::to_string(e.item) + " out of vocabulary");
  if (e.category >= s.config.num_categories) {
    throw DimensionError("category id " + std::to_string(e.category) + " out of vocabulary");
  }
}

inline void check_sample(const ModelState& s, const Sample& x) {
  if (x.history.size() > s.config.window) throw DimensionError("history longer than window");
  check_event(s, x.target);
  for (const auto& e : x.history) check_event(s, e);
}

/// concat(item, category) + position[position] written into `out`.
inline void encode_into(const ModelState& s, const Encoder& enc, const BehaviorEvent& e, std::size_t position,
                        std::span<double> out) {
  const auto& it = s.tables[enc.item];
  const auto& ct = s.tables[enc.category];
  const auto& pt = s.tables[enc.position];
  const auto irow = it.row(e.item);
  const auto crow = ct.row(e.category);
  const auto prow = pt.row(position);
  for (std::size_t k = 0; k < it.dim; ++k) out[k] = irow[k] + prow[k];
  for (std::size_t k = 0; k < ct.dim; ++k) out[it.dim + k] = crow[k] + prow[it.dim + k];
}

inline Vec encode(const ModelState& s, Role role, const BehaviorEvent& e, std::size_t position) {
  const Encoder& enc = s.encoder(role);
  Vec v(s.tables[enc.item].dim + s.tables[enc.category].dim);
  encode_into(s, enc, e, position, v);
  return v;
}

// ---------------------------------------------------------------------------
// Search kernel, shared with the benchmark.

/// logits[i] = <keys[i], query> over `n` row-major keys.
inline void dot_logits(std::span<const double> keys, std::span<const double> query, std::size_t n,
                       std::span<double> logits) {
  const std::size_t d = query.size();
  for (std::size_t i = 0; i < n; ++i) logits[i] = dot(keys.subspan(i * d, d), query);
}

/// Indices of the k largest finite logits, descending; equal logits keep the
/// smaller index (the more recent behavior) first. Partial selection.
inline std::vector<std::uint32_t> select_top_k(std::span<const double> logits, std::size_t k) {
  std::vector<std::uint32_t> idx;
  idx.reserve(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (std::isfinite(logits[i])) idx.push_back(static_cast<std::uint32_t>(i));
  }
  if (idx.empty()) throw EmptyHistoryError();
  const std::size_t m = std::min(k, idx.size());
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    return logits[a] > logits[b] || (logits[a] == logits[b] && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m), idx.end(), better);
  idx.resize(m);
  return idx;
}

// ---------------------------------------------------------------------------
// Forward

struct ForwardCache {
  std::size_t n = 0;
  Vec logits;  // window entries, -inf for padding
  std::vector<std::uint32_t> retrieved;
  Vec weights;
  Vec target_att;  // encoded target in the attention space
  Vec key_query;   // TWIN_PROJ: W_K^T W_Q q
  Vec query_proj;  // TWIN_PROJ: W_Q q
  std::vector<Vec> att_vecs;   // retrieved, attention space (before projection)
  std::vector<Vec> repr_raw;   // retrieved, representation encoder output
  std::vector<Vec> repr_vecs;  // after W_V for TWIN_PROJ, otherwise == repr_raw
  Vec target_repr_raw;
  Vec target_repr;
  std::vector<MlpCache> din_caches;
  std::vector<Vec> din_inputs;
  Vec h;
  Vec mlp_input;
  MlpCache head_cache;
  Vec head_logits;
  Vec probs;
  double p_click = 0.5;
};

namespace detail {

inline Vec din_input(std::span<const double> a, std::span<const double> q) {
  const std::size_t d = a.size();
  Vec x(3 * d);
  for (std::size_t k = 0; k < d; ++k) {
    x[k] = a[k];
    x[d + k] = q[k];
    x[2 * d + k] = a[k] * q[k];
  }
  return x;
}

// Fills logits (size window, -inf padded); keeps target_att / key_query in
// `cache` when given.
inline Vec compute_logits(const ModelState& s, const Sample& x, ForwardCache* cache) {
  check_sample(s, x);
  const std::size_t n = x.history.size();
  const std::size_t d = s.config.attention_vector_dim();
  Vec logits(s.config.window, -std::numeric_limits<double>::infinity());
  Vec q = encode(s, Role::kAttTarget, x.target, 0);
  const Encoder& hist = s.encoder(Role::kAttHistory);
  Vec keys(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    encode_into(s, hist, x.history[i], i + 1, std::span<double>(keys).subspan(i * d, d));
  }
  Vec key_query, query_proj;
  if (s.config.variant == Variant::kDin) {
    for (std::size_t i = 0; i < n; ++i) {
      const Vec in = din_input(std::span<const double>(keys).subspan(i * d, d), q);
      logits[i] = mlp_forward(s.din_attention, in)[0];
    }
  } else {
    if (s.has_projection()) {
      // <W_K e_i, W_Q q> == <e_i, W_K^T (W_Q q)>
      query_proj = matvec(s.w_query, q);
      key_query = matvec_transposed(s.w_key, query_proj);
      dot_logits(keys, key_query, n, logits);
    } else {
      dot_logits(keys, q, n, logits);
    }
  }
  if (cache) {
    cache->n = n;
    cache->target_att = std::move(q);
    cache->key_query = std::move(key_query);
    cache->query_proj = std::move(query_proj);
  }
  return logits;
}

}  // namespace detail

/// Per-behavior attention logits over the window; padded slots are -inf.
inline Vec attention_logits(const ModelState& s, const Sample& x) { return detail::compute_logits(s, x, nullptr); }

/// Top-K behavior indices. Soft variants rank by logit (ties: more recent
/// first); TWIN_HARD keeps same-category behaviors, most recent first.
inline std::vector<std::uint32_t> search_top_k(std::span<const double> logits, const Sample& x,
                                               const ModelConfig& cfg) {
  const std::size_t n = std::min(x.history.size(), logits.size());
  if (n == 0) throw EmptyHistoryError();
  if (cfg.variant == Variant::kTwinHard) {
    std::vector<std::uint32_t> out;
    for (std::size_t i = 0; i < n && out.size() < cfg.retrieval_count; ++i) {
      if (x.history[i].category == x.target.category) out.push_back(static_cast<std::uint32_t>(i));
    }
    return out;
  }
  return select_top_k(logits.first(n), cfg.retrieval_count);
}

struct Aggregate {
  Vec h;
  Vec mlp_input;  // concat(h, target representation)
};

/// h = sum_i w_i (r_i (.) u) for target-aware variants, sum_i w_i r_i for
/// TWIN_NO_TR; the MLP input is concat(h, u).
inline Aggregate aggregate_vectors(std::span<const Vec> repr, std::span<const double> weights,
                                   std::span<const double> target_repr, bool target_aware) {
  require_same_length(repr.size(), weights.size(), "aggregate");
  const std::size_t d = target_repr.size();
  Aggregate out;
  out.h.assign(d, 0.0);
  for (std::size_t i = 0; i < repr.size(); ++i) {
    require_same_length(repr[i].size(), d, "aggregate");
    for (std::size_t k = 0; k < d; ++k) {
      out.h[k] += weights[i] * (target_aware ? repr[i][k] * target_repr[k] : repr[i][k]);
    }
  }
  out.mlp_input = out.h;
  out.mlp_input.insert(out.mlp_input.end(), target_repr.begin(), target_repr.end());
  return out;
}

namespace detail {

inline void representation_vectors(const ModelState& s, const Sample& x, std::span<const std::uint32_t> retrieval,
                                   ForwardCache& c) {
  c.repr_raw.clear();
  c.repr_vecs.clear();
  for (std::uint32_t i : retrieval) c.repr_raw.push_back(encode(s, Role::kReprHistory, x.history[i], i + 1));
  c.target_repr_raw = encode(s, Role::kReprTarget, x.target, 0);
  if (s.has_projection()) {
    for (const auto& r : c.repr_raw) c.repr_vecs.push_back(matvec(s.w_value, r));
    c.target_repr = matvec(s.w_value, c.target_repr_raw);
  } else {
    c.repr_vecs = c.repr_raw;
    c.target_repr = c.target_repr_raw;
  }
}

}  // namespace detail

/// Aggregation given a retrieval and its softmax weights.
inline Aggregate aggregate(const ModelState& s, const Sample& x, std::span<const std::uint32_t> retrieval,
                           std::span<const double> weights) {
  ForwardCache c;
  detail::representation_vectors(s, x, retrieval, c);
  return aggregate_vectors(c.repr_vecs, weights, c.target_repr, uses_target_aware_repr(s.config.variant));
}

inline Vec log_softmax(std::span<const double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  Vec out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
  return out;
}

inline ForwardCache forward(const ModelState& s, const Sample& x) {
  ForwardCache c;
  c.logits = detail::compute_logits(s, x, &c);
  c.retrieved = search_top_k(c.logits, x, s.config);
  const std::size_t d_att = s.config.attention_vector_dim();
  if (!c.retrieved.empty()) {
    Vec chosen;
    for (std::uint32_t i : c.retrieved) chosen.push_back(c.logits[i]);
    c.weights = softmax_scaled(chosen, d_att);
    for (std::uint32_t i : c.retrieved) c.att_vecs.push_back(encode(s, Role::kAttHistory, x.history[i], i + 1));
    if (s.has_din()) {
      for (const auto& a : c.att_vecs) {
        c.din_inputs.push_back(detail::din_input(a, c.target_att));
        c.din_caches.emplace_back();
        mlp_forward(s.din_attention, c.din_inputs.back(), &c.din_caches.back());
      }
    }
  }
  detail::representation_vectors(s, x, c.retrieved, c);
  Aggregate agg = aggregate_vectors(c.repr_vecs, c.weights, c.target_repr, uses_target_aware_repr(s.config.variant));
  c.h = std::move(agg.h);
  c.mlp_input = std::move(agg.mlp_input);
  c.head_logits = mlp_forward(s.head, c.mlp_input, &c.head_cache);
  const Vec ls = log_softmax(c.head_logits);
  c.probs = {std::exp(ls[0]), std::exp(ls[1])};
  c.p_click = c.probs[1];
  return c;
}

inline double predict(const ModelState& s, const Sample& x) { return forward(s, x).p_click; }

// ---------------------------------------------------------------------------
// Backward

enum class Path { kAttention, kRepresentation };

/// Gradient of one embedding row, split by the path it arrived through.
/// An empty component is identically zero.
struct RowGrad {
  Vec att;
  Vec repr;

  Vec total() const {
    const std::size_t d = std::max(att.size(), repr.size());
    Vec t(d, 0.0);
    if (!att.empty()) axpy(1.0, att, t);
    if (!repr.empty()) axpy(1.0, repr, t);
    return t;
  }
};

struct TableGrad {
  std::unordered_map<std::uint32_t, RowGrad> rows;
};

struct ModelGrads {
  std::vector<TableGrad> tables;
  MlpGrads head;
  Mat w_query, w_key, w_value;
  MlpGrads din;

  static ModelGrads zeros_like(const ModelState& s) {
    ModelGrads g;
    g.tables.resize(s.tables.size());
    g.head = MlpGrads::zeros_like(s.head);
    if (s.has_projection()) {
      g.w_query = Mat(s.w_query.rows, s.w_query.cols);
      g.w_key = Mat(s.w_key.rows, s.w_key.cols);
      g.w_value = Mat(s.w_value.rows, s.w_value.cols);
    }
    if (s.has_din()) g.din = MlpGrads::zeros_like(s.din_attention);
    return g;
  }

  void add_row(std::size_t table, std::uint32_t id, Path path, std::span<const double> g, std::size_t dim) {
    RowGrad& r = tables[table].rows[id];
    Vec& dst = path == Path::kAttention ? r.att : r.repr;
    if (dst.empty()) dst.assign(dim, 0.0);
    for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
  }

  /// Dense gradients in ModelState::parameters() order.
  std::vector<Vec> dense(const ModelState& s) const {
    std::vector<Vec> out;
    for (std::size_t t = 0; t < s.tables.size(); ++t) {
      Vec g(s.tables[t].weights.size(), 0.0);
      const std::size_t d = s.tables[t].dim;
      for (const auto& [id, rg] : tables[t].rows) {
        std::span<double> dst(g.data() + static_cast<std::size_t>(id) * d, d);
        if (!rg.att.empty()) axpy(1.0, rg.att, dst);
        if (!rg.repr.empty()) axpy(1.0, rg.repr, dst);
      }
      out.push_back(std::move(g));
    }
    for (std::size_t l = 0; l < head.weight.size(); ++l) {
      out.push_back(head.weight[l].data);
      out.push_back(head.bias[l]);
    }
    if (s.has_projection()) {
      out.push_back(w_query.data);
      out.push_back(w_key.data);
      out.push_back(w_value.data);
    }
    if (s.has_din()) {
      for (std::size_t l = 0; l < din.weight.size(); ++l) {
        out.push_back(din.weight[l].data);
        out.push_back(din.bias[l]);
      }
    }
    return out;
  }
};

namespace detail {

inline void encoder_backward(const ModelState& s, const Encoder& enc, const BehaviorEvent& e, std::size_t position,
                             std::span<const double> g, Path path, ModelGrads& grads) {
  const std::size_t di = s.tables[enc.item].dim;
  const std::size_t dc = s.tables[enc.category].dim;
  grads.add_row(enc.item, e.item, path, g.first(di), di);
  grads.add_row(enc.category, e.category, path, g.subspan(di, dc), dc);
  grads.add_row(enc.position, static_cast<std::uint32_t>(position), path, g, di + dc);
}

}  // namespace detail

/// Head-logit gradient of the 2-class cross-entropy: softmax(z) - onehot.
inline Vec head_logit_grad(std::span<const double> probs, int label) {
  Vec dz(probs.begin(), probs.end());
  dz[label == 1 ? 1 : 0] -= 1.0;
  return dz;
}

/// Accumulates scale * dLoss/dparams into `grads` and returns the loss.
/// Embedding-row gradients are stored per path: the attention path carries
/// everything that flows through the softmax weights (representations held
/// fixed), the representation path everything through the aggregation and
/// the head's target input (weights held fixed).
inline double backward(const ModelState& s, const Sample& x, const ForwardCache& c, int label, ModelGrads& grads,
                       double scale = 1.0) {
  if (c.head_cache.inputs.size() != s.head.layers.size() || c.retrieved.size() != c.repr_vecs.size()) {
    throw DimensionError("backward: cache does not match model");
  }
  const Vec ls = log_softmax(c.head_logits);
  const double loss = -ls[label == 1 ? 1 : 0];
  Vec dz = head_logit_grad(c.probs, label);
  for (double& v : dz) v *= scale;
  const Vec dx = mlp_backward(s.head, c.head_cache, dz, grads.head);

  const std::size_t dr = c.target_repr.size();
  const bool tr = uses_target_aware_repr(s.config.variant);
  std::span<const double> dh(dx.data(), dr);
  Vec du(dx.begin() + static_cast<std::ptrdiff_t>(dr), dx.end());

  // Representation path.
  const std::size_t m = c.retrieved.size();
  Vec dweights(m, 0.0);
  Vec dr_i(dr);
  for (std::size_t j = 0; j < m; ++j) {
    const Vec& r = c.repr_vecs[j];
    for (std::size_t k = 0; k < dr; ++k) {
      if (tr) {
        dr_i[k] = c.weights[j] * dh[k] * c.target_repr[k];
        du[k] += c.weights[j] * dh[k] * r[k];
        dweights[j] += dh[k] * r[k] * c.target_repr[k];
      } else {
        dr_i[k] = c.weights[j] * dh[k];
        dweights[j] += dh[k] * r[k];
      }
    }
    const std::uint32_t i = c.retrieved[j];
    if (s.has_projection()) {
      add_outer(1.0, dr_i, c.repr_raw[j], grads.w_value);
      const Vec de = matvec_transposed(s.w_value, dr_i);
      detail::encoder_backward(s, s.encoder(Role::kReprHistory), x.history[i], i + 1, de, Path::kRepresentation,
                               grads);
    } else {
      detail::encoder_backward(s, s.encoder(Role::kReprHistory), x.history[i], i + 1, dr_i, Path::kRepresentation,
                               grads);
    }
  }
  if (s.has_projection()) {
    add_outer(1.0, du, c.target_repr_raw, grads.w_value);
    const Vec dt = matvec_transposed(s.w_value, du);
    detail::encoder_backward(s, s.encoder(Role::kReprTarget), x.target, 0, dt, Path::kRepresentation, grads);
  } else {
    detail::encoder_backward(s, s.encoder(Role::kReprTarget), x.target, 0, du, Path::kRepresentation, grads);
  }

  // Attention path.
  if (m == 0) return loss;
  const std::size_t da = s.config.attention_vector_dim();
  const Vec dl = softmax_scaled_backward(c.weights, dweights, da);
  Vec dq(da, 0.0);
  Vec da_i(da);
  Vec dkq;
  if (s.has_projection()) dkq.assign(da, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    const Vec& a = c.att_vecs[j];
    if (s.has_din()) {
      Vec g1{dl[j]};
      const Vec din_dx = mlp_backward(s.din_attention, c.din_caches[j], g1, grads.din);
      for (std::size_t k = 0; k < da; ++k) {
        da_i[k] = din_dx[k] + din_dx[2 * da + k] * c.target_att[k];
        dq[k] += din_dx[da + k] + din_dx[2 * da + k] * a[k];
      }
    } else if (s.has_projection()) {
      for (std::size_t k = 0; k < da; ++k) da_i[k] = dl[j] * c.key_query[k];
      axpy(dl[j], a, dkq);
    } else {
      for (std::size_t k = 0; k < da; ++k) {
        da_i[k] = dl[j] * c.target_att[k];
        dq[k] += dl[j] * a[k];
      }
    }
    const std::uint32_t i = c.retrieved[j];
    detail::encoder_backward(s, s.encoder(Role::kAttHistory), x.history[i], i + 1, da_i, Path::kAttention, grads);
  }
  if (s.has_projection()) {
    // key_query = W_K^T y, y = W_Q q
    add_outer(1.0, c.query_proj, dkq, grads.w_key);
    const Vec dy = matvec(s.w_key, dkq);
    add_outer(1.0, dy, c.target_att, grads.w_query);
    dq = matvec_transposed(s.w_query, dy);
  }
  detail::encoder_backward(s, s.encoder(Role::kAttTarget), x.target, 0, dq, Path::kAttention, grads);
  return loss;
}

inline double sample_loss(const ModelState& s, const Sample& x) {
  const ForwardCache c = forward(s, x);
  return -log_softmax(c.head_logits)[x.label == 1 ? 1 : 0];
}

// ---------------------------------------------------------------------------
// Training

struct IterationReport {
  std::size_t iteration = 0;  // 1-based, global across epochs
  double loss = 0.0;          // batch mean
  const ModelGrads* grads = nullptr;
  std::span<const double> logits;  // unmasked attention logits of the batch, when collected
};

struct TrainOptions {
  std::size_t batch_size = 2048;
  bool collect_logits = false;
  std::size_t max_iterations = 0;  // 0 = no limit
  std::function<void(const IterationReport&)> on_iteration;
  std::function<void(std::size_t iteration, ModelState&)> after_step;
};

struct EpochResult {
  std::vector<double> losses;
  std::size_t iterations = 0;
};

/// One pass over `samples` in a seeded shuffled order. Each batch's gradient
/// is the mean over its samples, accumulated in sample order.
inline EpochResult train_epoch(ModelState& s, std::span<const Sample> samples, TrainOptions& opt,
                               std::size_t start_iteration = 0) {
  if (samples.empty()) throw std::invalid_argument("train_epoch: no samples");
  if (opt.batch_size == 0) throw ConfigError("batch_size", "must be positive");
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  s.rng.shuffle(order);
  EpochResult res;
  ModelGrads grads = ModelGrads::zeros_like(s);
  std::vector<double> batch_logits;
  for (std::size_t begin = 0; begin < order.size(); begin += opt.batch_size) {
    if (opt.max_iterations && start_iteration + res.iterations >= opt.max_iterations) break;
    const std::size_t end = std::min(order.size(), begin + opt.batch_size);
    const double scale = 1.0 / static_cast<double>(end - begin);
    grads = ModelGrads::zeros_like(s);
    batch_logits.clear();
    double loss = 0.0;
    for (std::size_t b = begin; b < end; ++b) {
      const Sample& x = samples[order[b]];
      const ForwardCache c = forward(s, x);
      if (opt.collect_logits) {
        for (std::size_t i = 0; i < c.n; ++i) batch_logits.push_back(c.logits[i]);
      }
      loss += backward(s, x, c, x.label, grads, scale) * scale;
    }
    ++res.iterations;
    res.losses.push_back(loss);
    if (opt.on_iteration) {
      IterationReport rep;
      rep.iteration = start_iteration + res.iterations;
      rep.loss = loss;
      rep.grads = &grads;
      rep.logits = batch_logits;
      opt.on_iteration(rep);
    }
    const std::vector<Vec> dense = grads.dense(s);
    std::vector<std::span<const double>> gspans(dense.begin(), dense.end());
    const auto params = s.parameters();
    s.adam.step(params, gspans);
    if (opt.after_step) opt.after_step(start_iteration + res.iterations, s);
  }
  return res;
}

}  // namespace dare

#endif  // DARE_MODEL_HPP
