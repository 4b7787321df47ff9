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

#ifndef DARE_RUN_HPP
#define DARE_RUN_HPP

// Run configuration, manifests and checkpoints. Configs are flat key=value
// files; a manifest's "config" object is accepted as a config too, so any
// run can be replayed from its manifest.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dare/data.hpp"
#include "dare/metrics.hpp"
#include "dare/model.hpp"

namespace dare {

using Json = nlohmann::ordered_json;

inline constexpr const char* kCheckpointFormat = "dare-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct RunConfig {
  // data
  GenConfig gen;
  std::string dataset;  // directory holding behaviors.csv, or a CSV path
  std::size_t neg_ratio = 1;
  std::size_t window = 200;
  std::size_t min_length = 210;
  // model
  Variant variant = Variant::kDare;
  std::size_t attention_dim = 16;
  std::size_t representation_dim = 16;
  std::size_t retrieval_count = 20;
  std::vector<std::size_t> mlp_hidden{200, 80};
  std::size_t din_hidden = 36;
  double init_scale = 1.0;
  // optimizer
  std::size_t epochs = 2;  // 0 writes the initialized model untrained
  std::size_t batch_size = 2048;
  double lr = 0.01;
  double weight_decay = 1e-6;
  std::size_t max_iterations = 0;
  // run
  std::uint64_t seed = 1;
  std::size_t diag_every = 1;
  std::size_t eval_every = 10;
  std::size_t ndcg_k = 20;
  Relevance relevance = Relevance::kBinary;
  std::vector<std::size_t> cluster_grid{4, 8, 16, 32, 64};
  // bench
  std::vector<std::size_t> bench_dims{16, 32, 64, 128};
  std::size_t bench_n = 200;
  std::size_t bench_batch = 256;
  std::size_t bench_repetitions = 30;
  std::size_t bench_warmup = 5;
  std::size_t bench_working_set = std::size_t{1} << 20;  // bytes of keys per timed pass, 0 = uncapped
  bool bench_auc = false;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(key, "expected a nonnegative integer, got '" + v + "'");
  }
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) throw ConfigError(key, "expected a number, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_u64(key, trim(item)));
  return out;
}

inline std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Applies one key=value setting. Unknown keys and malformed values raise
/// ConfigError naming the key.
inline void set_option(RunConfig& rc, const std::string& key, const std::string& raw) {
  using namespace detail;
  const std::string v = trim(raw);
  auto sz = [&] { return static_cast<std::size_t>(parse_u64(key, v)); };
  auto num = [&] { return parse_double(key, v); };
  if (key == "num_categories") rc.gen.num_categories = sz();
  else if (key == "items_per_category") rc.gen.items_per_category = sz();
  else if (key == "num_users") rc.gen.num_users = sz();
  else if (key == "sequence_length") rc.gen.sequence_length = sz();
  else if (key == "decay") rc.gen.decay = num();
  else if (key == "bias") rc.gen.bias = num();
  else if (key == "preference_weight") rc.gen.preference_weight = num();
  else if (key == "preference_sharpness") rc.gen.preference_sharpness = num();
  else if (key == "self_affinity") rc.gen.self_affinity = num();
  else if (key == "neighbor_affinity") rc.gen.neighbor_affinity = num();
  else if (key == "dataset") rc.dataset = v;
  else if (key == "neg_ratio") rc.neg_ratio = sz();
  else if (key == "window") rc.window = sz();
  else if (key == "min_length") rc.min_length = sz();
  else if (key == "variant") {
    const auto p = parse_variant(v);
    if (!p) throw ConfigError(key, "unknown variant '" + v + "'; valid: " + valid_variant_list());
    rc.variant = *p;
  } else if (key == "attention_dim") rc.attention_dim = sz();
  else if (key == "representation_dim") rc.representation_dim = sz();
  else if (key == "retrieval_count") rc.retrieval_count = sz();
  else if (key == "mlp_hidden") rc.mlp_hidden = parse_list(key, v);
  else if (key == "din_hidden") rc.din_hidden = sz();
  else if (key == "init_scale") rc.init_scale = num();
  else if (key == "epochs") rc.epochs = sz();
  else if (key == "batch_size") rc.batch_size = sz();
  else if (key == "lr") rc.lr = num();
  else if (key == "weight_decay") rc.weight_decay = num();
  else if (key == "max_iterations") rc.max_iterations = sz();
  else if (key == "seed") rc.seed = parse_u64(key, v);
  else if (key == "diag_every") rc.diag_every = sz();
  else if (key == "eval_every") rc.eval_every = sz();
  else if (key == "ndcg_k") rc.ndcg_k = sz();
  else if (key == "relevance") {
    if (v == "binary") rc.relevance = Relevance::kBinary;
    else if (v == "graded") rc.relevance = Relevance::kGraded;
    else throw ConfigError(key, "expected binary or graded, got '" + v + "'");
  } else if (key == "cluster_grid") rc.cluster_grid = parse_list(key, v);
  else if (key == "bench_dims") rc.bench_dims = parse_list(key, v);
  else if (key == "bench_n") rc.bench_n = sz();
  else if (key == "bench_batch") rc.bench_batch = sz();
  else if (key == "bench_repetitions") rc.bench_repetitions = sz();
  else if (key == "bench_warmup") rc.bench_warmup = sz();
  else if (key == "bench_working_set") rc.bench_working_set = sz();
  else if (key == "bench_auc") rc.bench_auc = parse_bool(key, v);
  else throw ConfigError(key, "unknown configuration key");
}

/// Every key with its current value, in a fixed order.
inline std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& rc) {
  using detail::format_double;
  using detail::join;
  auto u = [](std::size_t v) { return std::to_string(v); };
  return {
      {"num_categories", u(rc.gen.num_categories)},
      {"items_per_category", u(rc.gen.items_per_category)},
      {"num_users", u(rc.gen.num_users)},
      {"sequence_length", u(rc.gen.sequence_length)},
      {"decay", format_double(rc.gen.decay)},
      {"bias", format_double(rc.gen.bias)},
      {"preference_weight", format_double(rc.gen.preference_weight)},
      {"preference_sharpness", format_double(rc.gen.preference_sharpness)},
      {"self_affinity", format_double(rc.gen.self_affinity)},
      {"neighbor_affinity", format_double(rc.gen.neighbor_affinity)},
      {"dataset", rc.dataset},
      {"neg_ratio", u(rc.neg_ratio)},
      {"window", u(rc.window)},
      {"min_length", u(rc.min_length)},
      {"variant", std::string(variant_name(rc.variant))},
      {"attention_dim", u(rc.attention_dim)},
      {"representation_dim", u(rc.representation_dim)},
      {"retrieval_count", u(rc.retrieval_count)},
      {"mlp_hidden", join(rc.mlp_hidden)},
      {"din_hidden", u(rc.din_hidden)},
      {"init_scale", format_double(rc.init_scale)},
      {"epochs", u(rc.epochs)},
      {"batch_size", u(rc.batch_size)},
      {"lr", format_double(rc.lr)},
      {"weight_decay", format_double(rc.weight_decay)},
      {"max_iterations", u(rc.max_iterations)},
      {"seed", std::to_string(rc.seed)},
      {"diag_every", u(rc.diag_every)},
      {"eval_every", u(rc.eval_every)},
      {"ndcg_k", u(rc.ndcg_k)},
      {"relevance", rc.relevance == Relevance::kBinary ? "binary" : "graded"},
      {"cluster_grid", join(rc.cluster_grid)},
      {"bench_dims", join(rc.bench_dims)},
      {"bench_n", u(rc.bench_n)},
      {"bench_batch", u(rc.bench_batch)},
      {"bench_repetitions", u(rc.bench_repetitions)},
      {"bench_warmup", u(rc.bench_warmup)},
      {"bench_working_set", u(rc.bench_working_set)},
      {"bench_auc", rc.bench_auc ? "true" : "false"},
  };
}

inline Json config_json(const RunConfig& rc) {
  Json j = Json::object();
  for (const auto& [k, v] : config_entries(rc)) j[k] = v;
  return j;
}

/// Reads key=value lines ('#' starts a comment), or the "config" object of
/// a manifest when the file parses as JSON.
inline void load_config_file(RunConfig& rc, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    const Json j = Json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config", path + " is not valid JSON");
    const Json& cfg = j.contains("config") ? j["config"] : j;
    for (const auto& [k, v] : cfg.items()) set_option(rc, k, v.is_string() ? v.get<std::string>() : v.dump());
    return;
  }
  std::istringstream lines(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config", path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    set_option(rc, detail::trim(t.substr(0, eq)), t.substr(eq + 1));
  }
}

/// SEQREC_SEED, when set, replaces the configured seed.
inline void apply_environment(RunConfig& rc) {
  if (const char* s = std::getenv("SEQREC_SEED")) set_option(rc, "seed", s);
}

inline GenConfig gen_config(const RunConfig& rc) {
  GenConfig g = rc.gen;
  g.seed = rc.seed;
  return g;
}

inline SplitSpec split_spec(const RunConfig& rc) {
  SplitSpec s;
  s.window = rc.window;
  s.min_length = rc.min_length;
  return s;
}

inline AdamConfig adam_config(const RunConfig& rc) {
  AdamConfig a;
  a.lr = rc.lr;
  a.weight_decay = rc.weight_decay;
  return a;
}

inline ModelConfig model_config(const RunConfig& rc, std::size_t num_items, std::size_t num_categories) {
  ModelConfig m;
  m.variant = rc.variant;
  m.attention_dim = rc.attention_dim;
  m.representation_dim = rc.representation_dim;
  m.retrieval_count = rc.retrieval_count;
  m.window = rc.window;
  m.mlp_hidden = rc.mlp_hidden;
  m.din_hidden = rc.din_hidden;
  m.init_scale = rc.init_scale;
  m.seed = rc.seed;
  m.num_items = num_items;
  m.num_categories = num_categories;
  return m;
}

/// Checks the training and evaluation settings that the data and model
/// validators do not cover.
inline void validate(const RunConfig& rc) {
  resolve(gen_config(rc));
  if (rc.batch_size == 0) throw ConfigError("batch_size", "must be positive");
  if (!(rc.lr >= 0.0) || !std::isfinite(rc.lr)) throw ConfigError("lr", "must be finite and nonnegative");
  if (!(rc.weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be nonnegative");
  if (rc.neg_ratio == 0) throw ConfigError("neg_ratio", "must be positive");
  if (rc.diag_every == 0) throw ConfigError("diag_every", "must be positive");
  if (rc.eval_every == 0) throw ConfigError("eval_every", "must be positive");
  if (rc.ndcg_k == 0) throw ConfigError("ndcg_k", "must be positive");
  for (std::size_t k : rc.cluster_grid) {
    if (k < 2) throw ConfigError("cluster_grid", "cluster counts must be at least 2");
  }
  validate(model_config(rc, 1, 1));
}

// ---------------------------------------------------------------------------
// Files

/// Writes to a temporary sibling, then renames over `path`.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// FNV-1a 64 of the bytes, as 16 hex digits.
inline std::string content_hash(std::string_view bytes) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

/// `path` may be a dataset directory (behaviors.csv inside) or a CSV file.
inline std::filesystem::path dataset_csv(const std::string& path) {
  std::filesystem::path p(path);
  if (std::filesystem::is_directory(p)) p /= "behaviors.csv";
  return p;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace detail {

inline Json vec_json(std::span<const double> v) { return Json(std::vector<double>(v.begin(), v.end())); }

inline Vec json_vec(const Json& j, std::size_t expect, const std::string& what) {
  Vec v = j.get<Vec>();
  if (v.size() != expect) throw std::runtime_error("checkpoint: " + what + " has the wrong size");
  return v;
}

inline Json mlp_json(const MlpParams& p) {
  Json layers = Json::array();
  for (const auto& l : p.layers) {
    layers.push_back({{"rows", l.weight.rows}, {"cols", l.weight.cols}, {"weight", vec_json(l.weight.data)},
                      {"bias", vec_json(l.bias)}});
  }
  return layers;
}

inline void json_mlp(const Json& j, MlpParams& p, const std::string& what) {
  if (j.size() != p.layers.size()) throw std::runtime_error("checkpoint: " + what + " layer count mismatch");
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    l.weight.data = json_vec(j[i]["weight"], l.weight.data.size(), what);
    l.bias = json_vec(j[i]["bias"], l.bias.size(), what);
  }
}

}  // namespace detail

/// Full training state as JSON: resolved config, vocabularies, every
/// parameter tensor, Adam moments and the shuffling RNG. `extra` is stored
/// under "training".
inline std::string checkpoint_json(const ModelState& s, const RunConfig& rc, const Json& extra = Json::object()) {
  using detail::vec_json;
  Json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["config"] = config_json(rc);
  j["vocabulary"] = {{"num_items", s.config.num_items}, {"num_categories", s.config.num_categories}};
  Json tables = Json::array();
  for (const auto& t : s.tables) {
    tables.push_back({{"name", t.name}, {"num_ids", t.num_ids}, {"dim", t.dim}, {"weights", vec_json(t.weights)}});
  }
  j["tables"] = tables;
  j["encoders"] = Json::array();
  for (const auto& e : s.encoders) j["encoders"].push_back({e.item, e.category, e.position});
  j["head"] = detail::mlp_json(s.head);
  if (s.has_projection()) {
    j["projection"] = {{"query", vec_json(s.w_query.data)}, {"key", vec_json(s.w_key.data)},
                       {"value", vec_json(s.w_value.data)}};
  }
  if (s.has_din()) j["din_attention"] = detail::mlp_json(s.din_attention);
  Json m = Json::array(), v = Json::array();
  for (const auto& t : s.adam.first_moments()) m.push_back(vec_json(t));
  for (const auto& t : s.adam.second_moments()) v.push_back(vec_json(t));
  j["adam"] = {{"steps", s.adam.steps()}, {"m", m}, {"v", v}};
  j["rng"] = s.rng.state();
  j["training"] = extra;
  return j.dump() + "\n";
}

struct Checkpoint {
  RunConfig config;
  ModelState state;
  Json training;
};

inline Checkpoint parse_checkpoint(const std::string& text) {
  const Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw std::runtime_error("checkpoint: not valid JSON");
  if (j.value("format", "") != kCheckpointFormat) throw std::runtime_error("checkpoint: unknown format");
  if (j.value("version", 0) != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + j.value("version", Json()).dump());
  }
  Checkpoint c;
  for (const auto& [k, v] : j["config"].items()) set_option(c.config, k, v.get<std::string>());
  const auto& voc = j["vocabulary"];
  c.state = make_model(model_config(c.config, voc["num_items"].get<std::size_t>(),
                                    voc["num_categories"].get<std::size_t>()),
                       adam_config(c.config));
  ModelState& s = c.state;
  const auto& tables = j["tables"];
  if (tables.size() != s.tables.size()) throw std::runtime_error("checkpoint: table count mismatch");
  for (std::size_t t = 0; t < s.tables.size(); ++t) {
    s.tables[t].weights = detail::json_vec(tables[t]["weights"], s.tables[t].weights.size(), s.tables[t].name);
  }
  for (std::size_t r = 0; r < 4; ++r) {
    const auto& e = j["encoders"][r];
    s.encoders[r] = {e[0].get<std::size_t>(), e[1].get<std::size_t>(), e[2].get<std::size_t>()};
    for (std::size_t idx : {s.encoders[r].item, s.encoders[r].category, s.encoders[r].position}) {
      if (idx >= s.tables.size()) throw std::runtime_error("checkpoint: encoder points past the tables");
    }
  }
  detail::json_mlp(j["head"], s.head, "head");
  if (s.has_projection()) {
    s.w_query.data = detail::json_vec(j["projection"]["query"], s.w_query.data.size(), "projection");
    s.w_key.data = detail::json_vec(j["projection"]["key"], s.w_key.data.size(), "projection");
    s.w_value.data = detail::json_vec(j["projection"]["value"], s.w_value.data.size(), "projection");
  }
  if (s.has_din()) detail::json_mlp(j["din_attention"], s.din_attention, "din_attention");
  const auto sizes = s.parameter_sizes();
  std::vector<Vec> m, v;
  for (std::size_t t = 0; t < sizes.size(); ++t) {
    m.push_back(detail::json_vec(j["adam"]["m"][t], sizes[t], "adam"));
    v.push_back(detail::json_vec(j["adam"]["v"][t], sizes[t], "adam"));
  }
  s.adam.restore(j["adam"]["steps"].get<std::size_t>(), std::move(m), std::move(v));
  s.rng.set_state(j["rng"].get<std::string>());
  c.training = j.value("training", Json::object());
  return c;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

}  // namespace dare

#endif  // DARE_RUN_HPP
