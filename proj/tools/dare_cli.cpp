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

// Command-line driver: gen-data, ingest, train, evaluate, diagnose, bench.
// Exit codes: 0 success, 2 invalid input (config, dataset, variant,
// vocabulary), 1 anything else.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dare/bench.hpp"
#include "dare/pipeline.hpp"
#include "dare/run.hpp"

namespace fs = std::filesystem;
using namespace dare;

namespace {

constexpr const char* kToolVersion = "1.0.0";

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out = ".";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key=value config file, or a manifest.json from an earlier run");
  cmd->add_option("--set", c.overrides, "override one setting as key=value (repeatable, last wins)");
  cmd->add_option("--out", c.out, "output directory");
}

void apply_overrides(RunConfig& rc, const std::vector<std::string>& overrides,
                     const std::set<std::string>* allowed = nullptr) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError(o, "override must look like key=value");
    const std::string key = detail::trim(o.substr(0, eq));
    if (allowed && !allowed->count(key)) throw ConfigError(key, "cannot be changed for this command");
    set_option(rc, key, o.substr(eq + 1));
  }
}

// Precedence: defaults, config file, SEQREC_SEED, --set.
RunConfig resolve_config(const Common& c) {
  RunConfig rc;
  if (!c.config_path.empty()) load_config_file(rc, c.config_path);
  apply_environment(rc);
  apply_overrides(rc, c.overrides);
  validate(rc);
  return rc;
}

class Manifest {
 public:
  Manifest(std::string command, const RunConfig& rc, fs::path dir) : dir_(std::move(dir)) {
    j_["command"] = std::move(command);
    j_["tool_version"] = kToolVersion;
    j_["config"] = config_json(rc);
    j_["inputs"] = Json::object();
    j_["outputs"] = Json::object();
  }

  void input(const std::string& name, const fs::path& path) {
    j_["inputs"][name] = {{"path", path.string()}, {"hash", content_hash(read_file(path))}};
  }

  // Writes `content` atomically into the output directory and records its hash.
  void output(const std::string& name, const std::string& content) {
    atomic_write(dir_ / name, content);
    j_["outputs"][name] = content_hash(content);
  }

  void set(const std::string& key, Json value) { j_[key] = std::move(value); }

  void finish() { atomic_write(dir_ / "manifest.json", j_.dump(2) + "\n"); }

 private:
  fs::path dir_;
  Json j_;
};

std::string csv(const std::function<void(std::ostream&)>& fill) {
  std::ostringstream out;
  fill(out);
  return out.str();
}

int cmd_gen_data(const Common& c) {
  const RunConfig rc = resolve_config(c);
  const Dataset ds = generate_log(gen_config(rc));
  Manifest m("gen-data", rc, c.out);
  m.output("behaviors.csv", csv([&](std::ostream& o) { write_canonical_csv(ds, o); }));
  m.set("summary", {{"users", ds.num_users()}, {"events", ds.num_events()}, {"items", ds.num_items},
                    {"categories", ds.num_categories}});
  m.finish();
  std::cout << "wrote " << ds.num_events() << " behaviors for " << ds.num_users() << " users to "
            << (fs::path(c.out) / "behaviors.csv").string() << "\n";
  return 0;
}

int cmd_ingest(const Common& c, const std::string& input, const std::string& format) {
  const RunConfig rc = resolve_config(c);
  if (!fs::is_regular_file(input)) throw MissingDatasetError("input log not found: " + input);
  const LogFormat f = format == "taobao" ? LogFormat::kTaobaoUserBehavior : LogFormat::kCanonicalCsv;
  const Dataset ds = ingest_log(input, f);
  Manifest m("ingest", rc, c.out);
  m.input("log", input);
  m.set("format", format);
  m.output("behaviors.csv", csv([&](std::ostream& o) { write_canonical_csv(ds, o); }));
  m.set("summary", {{"users", ds.num_users()}, {"events", ds.num_events()}, {"items", ds.num_items},
                    {"categories", ds.num_categories}});
  m.finish();
  std::cout << "ingested " << ds.num_events() << " behaviors for " << ds.num_users() << " users\n";
  return 0;
}

struct Loaded {
  Dataset ds;
  SplitResult split;
};

Loaded load_and_split(RunConfig& rc, const std::string& data_flag) {
  if (!data_flag.empty()) rc.dataset = data_flag;
  Loaded l{load_dataset(rc.dataset), {}};
  l.split = split_for_run(l.ds, rc);
  return l;
}

void write_training_outputs(Manifest& m, const TrainOutcome& t) {
  m.output("loss.csv", csv([&](std::ostream& o) {
             o << "iteration,loss\n";
             o.precision(17);
             for (std::size_t i = 0; i < t.losses.size(); ++i) o << i + 1 << ',' << t.losses[i] << '\n';
           }));
  m.output("convergence.csv", csv([&](std::ostream& o) {
             o << "iteration,val_accuracy\n";
             o.precision(17);
             for (const auto& p : t.convergence) o << p.iteration << ',' << p.accuracy << '\n';
           }));
  m.output("diagnostics.csv", csv([&](std::ostream& o) { t.diagnostics.write_csv(o); }));
}

Json diagnostics_summary(const TrainOutcome& t) {
  const auto& steps = t.diagnostics.steps();
  std::size_t dominated = 0;
  for (const auto& s : steps) dominated += s.ratio > 1.0;
  return {{"decoupled", t.diagnostics.decoupled},
          {"recorded_steps", steps.size()},
          {"fraction_ratio_above_one", steps.empty() ? 0.0 : static_cast<double>(dominated) / steps.size()},
          {"pooled_frac_negative_cosine", t.diagnostics.pooled_frac_negative()},
          {"cosine_samples", t.diagnostics.cosine_samples().size()}};
}

int cmd_train(const Common& c, const std::string& data_flag, bool diagnose) {
  RunConfig rc = resolve_config(c);
  if (diagnose) rc.diag_every = 1;
  Loaded l = load_and_split(rc, data_flag);
  ModelState s = make_model(model_config(rc, l.ds.num_items, l.ds.num_categories), adam_config(rc));
  const TrainOutcome t = run_training(s, l.split, rc, diagnose);

  Manifest m(diagnose ? "diagnose" : "train", rc, c.out);
  m.input("dataset", dataset_csv(rc.dataset));
  write_training_outputs(m, t);
  m.set("diagnostics", diagnostics_summary(t));
  if (t.histogram) m.output("logits_histogram.json", histogram_json(*t.histogram).dump(2) + "\n");
  const Json extra = {{"iterations", t.iterations}, {"convergence", convergence_json(t.convergence)}};
  m.output("checkpoint.json", checkpoint_json(s, rc, extra));
  m.set("summary", {{"iterations", t.iterations},
                    {"final_loss", t.losses.empty() ? 0.0 : t.losses.back()},
                    {"train_samples", l.split.train.size()}});
  m.finish();
  std::cout << variant_name(rc.variant) << ": " << t.iterations << " iterations, final batch loss "
            << (t.losses.empty() ? 0.0 : t.losses.back()) << "\n";
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& checkpoint_path, const std::string& data_flag) {
  if (!fs::is_regular_file(checkpoint_path)) throw MissingDatasetError("checkpoint not found: " + checkpoint_path);
  Checkpoint ck = load_checkpoint(checkpoint_path);
  RunConfig rc = ck.config;
  static const std::set<std::string> kEvalKeys{"ndcg_k", "relevance", "cluster_grid", "dataset"};
  apply_overrides(rc, c.overrides, &kEvalKeys);
  validate(rc);
  Loaded l = load_and_split(rc, data_flag);
  check_vocabulary(ck.state, l.ds);
  if (l.split.test.empty()) throw std::invalid_argument("no test samples; the dataset has no eligible users");
  const MiTable mi = build_mi_table(l.split.train, l.ds.num_categories, rc.window);
  const Evaluation ev = evaluate_model(ck.state, l.split.test, mi, rc);

  Manifest m("evaluate", rc, c.out);
  m.input("checkpoint", checkpoint_path);
  m.input("dataset", dataset_csv(rc.dataset));
  Json grid = Json::array();
  for (std::size_t i = 0; i < ev.discriminability.grid.size(); ++i) {
    grid.push_back({{"clusters", ev.discriminability.grid[i]}, {"mi_bits", ev.discriminability.mi_bits[i]}});
  }
  Json report;
  report["variant"] = variant_name(rc.variant);
  report["checkpoint_hash"] = content_hash(read_file(checkpoint_path));
  report["test_samples"] = ev.num_samples;
  report["auc"] = ev.auc;
  report["mean_ndcg"] = ev.mean_ndcg;
  report["ndcg_k"] = rc.ndcg_k;
  report["relevance"] = rc.relevance == Relevance::kBinary ? "binary" : "graded";
  report["discriminability"] = grid;
  report["convergence"] = ck.training.value("convergence", Json::array());
  m.output("report.json", report.dump(2) + "\n");
  m.output("mi_table.csv", csv([&](std::ostream& o) { mi.write_csv(o); }));
  m.finish();
  std::cout << "auc " << ev.auc << ", mean NDCG@" << rc.ndcg_k << " " << ev.mean_ndcg << "\n";
  return 0;
}

int cmd_bench(const Common& c, const std::string& data_flag) {
  RunConfig rc = resolve_config(c);
  BenchOptions opt;
  opt.dims = rc.bench_dims;
  opt.sequence_length = rc.bench_n;
  opt.retrieval_count = std::min(rc.retrieval_count, rc.bench_n);
  opt.batch = rc.bench_batch;
  opt.repetitions = rc.bench_repetitions;
  opt.warmup = rc.bench_warmup;
  opt.working_set_bytes = rc.bench_working_set;
  opt.seed = derive_seed(rc.seed, "bench");
  std::vector<BenchResult> results = bench_search(opt);

  Manifest m("bench", rc, c.out);
  if (rc.bench_auc) {
    Loaded l = load_and_split(rc, data_flag);
    m.input("dataset", dataset_csv(rc.dataset));
    const MiTable mi = build_mi_table(l.split.train, l.ds.num_categories, rc.window);
    for (auto& r : results) {
      RunConfig v = rc;
      v.variant = Variant::kDare;
      v.attention_dim = r.attention_dim;
      ModelState s = make_model(model_config(v, l.ds.num_items, l.ds.num_categories), adam_config(v));
      run_training(s, l.split, v);
      r.auc = evaluate_model(s, l.split.test, mi, v, false).auc;
    }
  }
  m.output("bench.csv", csv([&](std::ostream& o) { write_bench_csv(results, o); }));
  m.finish();
  for (const auto& r : results) {
    std::cout << "K_A=" << r.attention_dim << " median " << r.median_ns << " ns/retrieval, normalized "
              << r.normalized_cost << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential recommendation with decoupled attention and representation embeddings"};
  app.require_subcommand(1);

  Common gen, ing, tr, ev, dg, bn;
  std::string ingest_input, ingest_format = "canonical";
  std::string tr_data, ev_data, dg_data, bn_data, ev_checkpoint;

  auto* c_gen = app.add_subcommand("gen-data", "generate a synthetic behavior log");
  add_common(c_gen, gen);
  auto* c_ing = app.add_subcommand("ingest", "convert an external behavior log to the canonical CSV");
  add_common(c_ing, ing);
  c_ing->add_option("--in,--input", ingest_input, "log file")->required();
  c_ing->add_option("--format", ingest_format, "canonical or taobao")
      ->check(CLI::IsMember({"canonical", "taobao"}));
  auto* c_tr = app.add_subcommand("train", "train a model and write a checkpoint");
  add_common(c_tr, tr);
  c_tr->add_option("--data", tr_data, "dataset directory or behaviors.csv");
  auto* c_ev = app.add_subcommand("evaluate", "score a checkpoint on the test split");
  add_common(c_ev, ev);
  c_ev->add_option("--checkpoint", ev_checkpoint, "checkpoint.json")->required();
  c_ev->add_option("--data", ev_data, "dataset directory or behaviors.csv");
  auto* c_dg = app.add_subcommand("diagnose", "train with per-step gradient and logit diagnostics");
  add_common(c_dg, dg);
  c_dg->add_option("--data", dg_data, "dataset directory or behaviors.csv");
  auto* c_bn = app.add_subcommand("bench", "time the top-K search across attention widths");
  add_common(c_bn, bn);
  c_bn->add_option("--data", bn_data, "dataset for bench_auc=true");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*c_gen) return cmd_gen_data(gen);
    if (*c_ing) return cmd_ingest(ing, ingest_input, ingest_format);
    if (*c_tr) return cmd_train(tr, tr_data, false);
    if (*c_ev) return cmd_evaluate(ev, ev_checkpoint, ev_data);
    if (*c_dg) return cmd_train(dg, dg_data, true);
    if (*c_bn) return cmd_bench(bn, bn_data);
  } catch (const ConfigError& e) {
    std::cerr << "error: invalid configuration: " << e.what() << "\n";
    return 2;
  } catch (const MissingDatasetError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const VocabularyMismatchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IngestError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
