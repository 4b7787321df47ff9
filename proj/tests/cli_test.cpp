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

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "dare/pipeline.hpp"
#include "dare/run.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;

namespace dare {
namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("dare_cli_test_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Runs the CLI with `args`; stderr lands in err().
  int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " " + DARE_CLI_PATH + " " + args + " >" + (dir_ / "stdout").string() + " 2>" +
                            (dir_ / "stderr").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string err() const { return read_file(dir_ / "stderr"); }
  std::string path(const std::string& p) const { return (dir_ / p).string(); }

  void gen_small(const std::string& out, const std::string& extra = "") {
    ASSERT_EQ(run("gen-data --set num_users=40 --set sequence_length=220 " + extra + " --out " + path(out)), 0)
        << err();
  }

  static constexpr const char* kTrainArgs =
      "--set batch_size=128 --set epochs=1 --set mlp_hidden=8 --set attention_dim=4 --set representation_dim=4 "
      "--set retrieval_count=5 --set cluster_grid=2,4";

  fs::path dir_;
};

TEST_F(CliTest, GenDataWritesRequestedRows) {
  gen_small("d");
  const std::string csv = read_file(path("d/behaviors.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 40 * 220);
  const Json m = Json::parse(read_file(path("d/manifest.json")));
  EXPECT_EQ(m["command"], "gen-data");
  EXPECT_EQ(m["outputs"]["behaviors.csv"], content_hash(csv));
  EXPECT_EQ(m["config"]["num_users"], "40");
}

TEST_F(CliTest, InvalidConfigExitsTwoNamingField) {
  EXPECT_EQ(run("gen-data --set decay=1.5 --out " + path("x")), 2);
  EXPECT_NE(err().find("decay"), std::string::npos);
  EXPECT_EQ(run("gen-data --set no_such_key=1 --out " + path("x")), 2);
  EXPECT_NE(err().find("no_such_key"), std::string::npos);
  EXPECT_EQ(run("gen-data --set num_users=abc --out " + path("x")), 2);
  EXPECT_NE(err().find("num_users"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("x/behaviors.csv")));
}

TEST_F(CliTest, UnknownVariantListsValidOnes) {
  gen_small("d");
  EXPECT_EQ(run("train --data " + path("d") + " --set variant=TWINN --out " + path("t")), 2);
  for (Variant v : kAllVariants) EXPECT_NE(err().find(std::string(variant_name(v))), std::string::npos);
}

TEST_F(CliTest, MissingDatasetExitsTwo) {
  EXPECT_EQ(run("train --data " + path("nope") + " --out " + path("t")), 2);
  EXPECT_EQ(run("train --out " + path("t")), 2);
  EXPECT_EQ(run("evaluate --checkpoint " + path("none.json") + " --out " + path("e")), 2);
  EXPECT_EQ(run("ingest --input " + path("none.csv") + " --out " + path("i")), 2);
}

TEST_F(CliTest, VocabularyMismatchExitsTwo) {
  gen_small("d");
  gen_small("d2", "--set items_per_category=3");
  ASSERT_EQ(run("train --data " + path("d") + " " + kTrainArgs + " --out " + path("t")), 0) << err();
  EXPECT_EQ(run("evaluate --checkpoint " + path("t/checkpoint.json") + " --data " + path("d2") + " --out " + path("e")),
            2);
  EXPECT_NE(err().find("vocabulary"), std::string::npos);
}

TEST_F(CliTest, TrainAndEvaluateAreReproducible) {
  gen_small("d");
  for (const char* t : {"t1", "t2"}) {
    ASSERT_EQ(run("train --data " + path("d") + " " + kTrainArgs + " --out " + path(t)), 0) << err();
    ASSERT_EQ(run("evaluate --checkpoint " + path(std::string(t) + "/checkpoint.json") + " --out " +
                  path(std::string(t) + "/eval")),
              0)
        << err();
  }
  EXPECT_EQ(read_file(path("t1/checkpoint.json")), read_file(path("t2/checkpoint.json")));
  EXPECT_EQ(read_file(path("t1/eval/report.json")), read_file(path("t2/eval/report.json")));

  // Replaying from the manifest alone reproduces the checkpoint.
  ASSERT_EQ(run("train --config " + path("t1/manifest.json") + " --out " + path("t3")), 0) << err();
  EXPECT_EQ(read_file(path("t1/checkpoint.json")), read_file(path("t3/checkpoint.json")));

  const Json report = Json::parse(read_file(path("t1/eval/report.json")));
  for (const char* k : {"auc", "mean_ndcg", "discriminability", "convergence"}) EXPECT_TRUE(report.contains(k)) << k;
  EXPECT_EQ(report["checkpoint_hash"], content_hash(read_file(path("t1/checkpoint.json"))));
  EXPECT_TRUE(fs::exists(path("t1/eval/mi_table.csv")));
  for (const char* f : {"loss.csv", "convergence.csv", "diagnostics.csv"}) EXPECT_TRUE(fs::exists(path(std::string("t1/") + f)));
}

TEST_F(CliTest, TinyTwinRunLearns) {
  // 30 users x 19 positions x 2 = 1140 training samples
  ASSERT_EQ(run("gen-data --set num_users=30 --set sequence_length=215 --out " + path("d")), 0) << err();
  const auto t0 = std::chrono::steady_clock::now();
  ASSERT_EQ(run("train --data " + path("d") + " --set variant=TWIN --set batch_size=64 --set epochs=3 --out " +
                path("t")),
            0)
      << err();
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 60.0);
  std::istringstream in(read_file(path("t/loss.csv")));
  std::string line;
  std::getline(in, line);
  std::vector<double> loss;
  while (std::getline(in, line)) loss.push_back(std::stod(line.substr(line.find(',') + 1)));
  ASSERT_GE(loss.size(), 40u);
  const auto mean = [&](std::size_t b, std::size_t e) {
    double s = 0.0;
    for (std::size_t i = b; i < e; ++i) s += loss[i];
    return s / static_cast<double>(e - b);
  };
  EXPECT_LT(mean(loss.size() - 10, loss.size()), mean(0, 10));
}

TEST_F(CliTest, UntrainedCheckpointScoresNearChance) {
  ASSERT_EQ(run("gen-data --set num_users=1000 --set sequence_length=215 --out " + path("d")), 0) << err();
  ASSERT_EQ(run("train --data " + path("d") + " --set epochs=0 --set cluster_grid=4 --out " + path("t")), 0) << err();
  ASSERT_EQ(run("evaluate --checkpoint " + path("t/checkpoint.json") + " --out " + path("e")), 0) << err();
  const Json r = Json::parse(read_file(path("e/report.json")));
  EXPECT_EQ(r["test_samples"], 2000);
  EXPECT_GE(r["auc"].get<double>(), 0.45);
  EXPECT_LE(r["auc"].get<double>(), 0.55);
}

// Field names and types documented in the README.
TEST_F(CliTest, ReportMatchesDocumentedSchema) {
  gen_small("d");
  ASSERT_EQ(run("train --data " + path("d") + " " + kTrainArgs + " --out " + path("t")), 0) << err();
  ASSERT_EQ(run("evaluate --checkpoint " + path("t/checkpoint.json") + " --out " + path("e")), 0) << err();
  const Json r = Json::parse(read_file(path("e/report.json")));
  const std::vector<std::string> keys{"variant",  "checkpoint_hash", "test_samples",     "auc",        "mean_ndcg",
                                      "ndcg_k",   "relevance",       "discriminability", "convergence"};
  ASSERT_EQ(r.size(), keys.size());
  std::size_t i = 0;
  for (const auto& [k, v] : r.items()) EXPECT_EQ(k, keys[i++]);
  EXPECT_TRUE(r["variant"].is_string());
  EXPECT_EQ(r["checkpoint_hash"].get<std::string>().size(), 16u);
  EXPECT_TRUE(r["test_samples"].is_number_unsigned());
  EXPECT_TRUE(r["auc"].is_number_float());
  EXPECT_TRUE(r["mean_ndcg"].is_number_float());
  EXPECT_TRUE(r["ndcg_k"].is_number_unsigned());
  EXPECT_TRUE(r["relevance"] == "binary" || r["relevance"] == "graded");
  ASSERT_EQ(r["discriminability"].size(), 2u);
  for (const auto& p : r["discriminability"]) {
    EXPECT_TRUE(p["clusters"].is_number_unsigned());
    EXPECT_GE(p["mi_bits"].get<double>(), 0.0);
  }
  ASSERT_FALSE(r["convergence"].empty());
  for (const auto& p : r["convergence"]) {
    EXPECT_TRUE(p["iteration"].is_number_unsigned());
    EXPECT_GE(p["accuracy"].get<double>(), 0.0);
    EXPECT_LE(p["accuracy"].get<double>(), 1.0);
  }
}

TEST_F(CliTest, SeedEnvironmentOverridesConfig) {
  gen_small("d");
  ASSERT_EQ(run("train --data " + path("d") + " " + kTrainArgs + " --out " + path("a")), 0);
  ASSERT_EQ(run("train --data " + path("d") + " " + kTrainArgs + " --out " + path("b"), "SEQREC_SEED=99"), 0);
  EXPECT_NE(read_file(path("a/checkpoint.json")), read_file(path("b/checkpoint.json")));
  EXPECT_EQ(Json::parse(read_file(path("b/manifest.json")))["config"]["seed"], "99");
}

TEST_F(CliTest, DiagnoseAndBenchWriteOutputs) {
  gen_small("d");
  ASSERT_EQ(run("diagnose --data " + path("d") + " " + kTrainArgs + " --set variant=TWIN --out " + path("g")), 0)
      << err();
  const Json h = Json::parse(read_file(path("g/logits_histogram.json")));
  EXPECT_GT(h["total"].get<std::size_t>(), 0u);
  const Json m = Json::parse(read_file(path("g/manifest.json")));
  EXPECT_FALSE(m["diagnostics"]["decoupled"].get<bool>());

  ASSERT_EQ(run("bench --set bench_repetitions=2 --set bench_batch=4 --set bench_warmup=0 --out " + path("b")), 0)
      << err();
  const std::string csv = read_file(path("b/bench.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "K_A,N,median_ns_per_retrieval,normalized_cost,auc");
}

TEST_F(CliTest, IngestRoundTrip) {
  gen_small("d");
  ASSERT_EQ(run("ingest --in " + path("d/behaviors.csv") + " --out " + path("i")), 0) << err();
  ASSERT_EQ(run("ingest --input " + path("i/behaviors.csv") + " --out " + path("j")), 0) << err();
  EXPECT_EQ(read_file(path("i/behaviors.csv")), read_file(path("j/behaviors.csv")));
}

TEST(RunConfigTest, FileParsingAndErrors) {
  const fs::path p = fs::temp_directory_path() / ("dare_cfg_" + std::to_string(::getpid()) + ".conf");
  atomic_write(p, "# comment\nvariant = TWIN  # trailing\n\nmlp_hidden=4,3\nlr=0.5\n");
  RunConfig rc;
  load_config_file(rc, p.string());
  EXPECT_EQ(rc.variant, Variant::kTwin);
  EXPECT_EQ(rc.mlp_hidden, (std::vector<std::size_t>{4, 3}));
  EXPECT_EQ(rc.lr, 0.5);

  atomic_write(p, "epochs 3\n");
  EXPECT_THROW(load_config_file(rc, p.string()), ConfigError);
  atomic_write(p, "lr=fast\n");
  try {
    load_config_file(rc, p.string());
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "lr");
  }
  fs::remove(p);

  // Every emitted entry parses back to the same config.
  RunConfig a;
  a.variant = Variant::kDin;
  a.gen.decay = 0.123456789012345;
  a.cluster_grid = {3, 9};
  RunConfig b;
  for (const auto& [k, v] : config_entries(a)) set_option(b, k, v);
  EXPECT_EQ(config_entries(a), config_entries(b));
}

// Save, load, and keep training: identical to training without interruption.
TEST(CheckpointTest, ResumeMatchesUninterruptedTraining) {
  for (Variant v : {Variant::kDare, Variant::kTwinProj, Variant::kDin}) {
    const auto set = testing::random_samples(40, 12, 4, 8, 5, 2);
    RunConfig rc;
    rc.variant = v;
    ModelConfig mc = testing::small_model_config(v, 4);
    rc.attention_dim = mc.attention_dim;
    rc.representation_dim = mc.representation_dim;
    rc.retrieval_count = mc.retrieval_count;
    rc.window = mc.window;
    rc.mlp_hidden = mc.mlp_hidden;
    rc.din_hidden = mc.din_hidden;
    rc.seed = mc.seed;
    ModelState full = make_model(model_config(rc, mc.num_items, mc.num_categories), adam_config(rc));
    ModelState half = full;
    TrainOptions opt;
    opt.batch_size = 16;
    train_epoch(full, set.samples, opt);
    train_epoch(full, set.samples, opt);

    train_epoch(half, set.samples, opt);
    const std::string text = checkpoint_json(half, rc);
    Checkpoint ck = parse_checkpoint(text);
    EXPECT_EQ(checkpoint_json(ck.state, ck.config), text) << variant_name(v);
    train_epoch(ck.state, set.samples, opt);
    EXPECT_EQ(checkpoint_json(ck.state, rc), checkpoint_json(full, rc)) << variant_name(v);
  }
}

TEST(CheckpointTest, RejectsWrongFormatOrVersion) {
  EXPECT_THROW(parse_checkpoint("not json"), std::runtime_error);
  EXPECT_THROW(parse_checkpoint(R"({"format":"other","version":1})"), std::runtime_error);
  EXPECT_THROW(parse_checkpoint(R"({"format":"dare-checkpoint","version":99})"), std::runtime_error);
}

TEST(RunFilesTest, AtomicWriteAndHash) {
  const fs::path p = fs::temp_directory_path() / ("dare_atomic_" + std::to_string(::getpid())) / "f.txt";
  atomic_write(p, "abc");
  atomic_write(p, "abcd");
  EXPECT_EQ(read_file(p), "abcd");
  EXPECT_FALSE(fs::exists(p.string() + ".tmp"));
  EXPECT_EQ(content_hash(""), "cbf29ce484222325");  // FNV-1a 64 offset basis
  fs::remove_all(p.parent_path());
}

}  // namespace
}  // namespace dare
