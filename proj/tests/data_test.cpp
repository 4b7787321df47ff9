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

#include "dare/data.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>
#include <vector>

#include "dare/metrics.hpp"

namespace dare {
namespace {

Dataset ingest_text(const std::string& text, LogFormat fmt = LogFormat::kCanonicalCsv) {
  std::istringstream in(text);
  return ingest_stream(in, fmt);
}

// Pooled MI between [history slot p has category f(target)] and the label.
double pooled_mi(std::span<const Sample> samples, std::size_t p, std::size_t c, std::size_t offset) {
  double counts[4] = {0, 0, 0, 0};  // (B, Y)
  for (const auto& x : samples) {
    if (x.history.size() < p) continue;
    const bool b = x.history[p - 1].category == (x.target.category + offset) % c;
    counts[(b ? 2 : 0) + (x.label == 1 ? 1 : 0)] += 1.0;
  }
  return mutual_information_bits(counts, 2, 2);
}

GenConfig small_config(std::uint64_t seed = 3) {
  GenConfig g;
  g.num_users = 40;
  g.sequence_length = 120;
  g.num_categories = 6;
  g.items_per_category = 5;
  g.seed = seed;
  return g;
}

TEST(GenerateLogTest, DeterministicForSeed) {
  const Dataset a = generate_log(small_config());
  const Dataset b = generate_log(small_config());
  EXPECT_EQ(a, b);
  std::ostringstream sa, sb;
  write_canonical_csv(a, sa);
  write_canonical_csv(b, sb);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_NE(a, generate_log(small_config(4)));
}

TEST(GenerateLogTest, ShapeAndVocabulary) {
  const GenConfig g = small_config();
  const Dataset ds = generate_log(g);
  ASSERT_EQ(ds.num_users(), g.num_users);
  EXPECT_EQ(ds.num_items, 30u);
  EXPECT_EQ(ds.num_categories, 6u);
  for (const auto& seq : ds.sequences) {
    ASSERT_EQ(seq.size(), g.sequence_length);
    for (std::size_t t = 0; t < seq.size(); ++t) {
      EXPECT_LT(seq[t].item, ds.num_items);
      EXPECT_EQ(ds.item_category[seq[t].item], seq[t].category);
      EXPECT_EQ(seq[t].timestamp, static_cast<std::int64_t>(t));
    }
  }
}

TEST(GenerateLogTest, RejectsDegenerateConfig) {
  auto field_of = [](GenConfig g) {
    try {
      resolve(g);
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string();
  };
  GenConfig g;
  g.decay = 1.5;
  EXPECT_EQ(field_of(g), "decay");
  g = {};
  g.decay = 0.0;
  EXPECT_EQ(field_of(g), "decay");
  g = {};
  g.num_categories = 0;
  EXPECT_EQ(field_of(g), "num_categories");
  g = {};
  g.num_categories = 3;
  g.affinity = {1, 2, 0, 0, 1, 0, 0, 0, 1};  // row 0 diagonal below an off-diagonal mean
  EXPECT_EQ(field_of(g), "affinity");
  g.affinity = {1, 0};
  EXPECT_EQ(field_of(g), "affinity");
  EXPECT_EQ(field_of(GenConfig{}), "");
}

TEST(ClickRuleTest, HandValue) {
  GenConfig g = resolve(small_config());
  g.bias = -1.0;
  g.decay = 0.5;
  // history categories (most recent first) {0, 1}, target 0:
  // s = -1 + aff[0][0] * 0.5 + aff[1][0] * 0.25 = -1 + 1.0 + 0.075
  const std::vector<std::uint32_t> h{0, 1};
  EXPECT_NEAR(click_probability(g, h, 0), 1.0 / (1.0 + std::exp(-0.075)), 1e-15);
  EXPECT_NEAR(click_probability(g, {}, 0), 1.0 / (1.0 + std::exp(1.0)), 1e-15);
}

TEST(ClickRuleTest, NearZeroDecayDependsOnlyOnMostRecent) {
  GenConfig g = resolve(small_config());
  g.decay = 1e-9;
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::uint32_t> a(20), b(20);
    for (auto& v : a) v = static_cast<std::uint32_t>(rng.below(6));
    for (auto& v : b) v = static_cast<std::uint32_t>(rng.below(6));
    b[0] = a[0];
    const auto t = static_cast<std::uint32_t>(rng.below(6));
    EXPECT_NEAR(click_probability(g, a, t), click_probability(g, b, t), 1e-12);
  }
}

TEST(GenerateLogTest, IdentityAffinityMakesSameCategoryMostInformative) {
  GenConfig g;
  g.num_users = 600;
  g.sequence_length = 260;
  g.num_categories = 10;
  g.affinity = default_affinity(10, 2.0, 0.0);
  g.seed = 5;
  const Dataset ds = generate_log(g);
  const SplitResult sp = split_dataset(ds, SplitSpec{}, 1, 5);
  ASSERT_GE(sp.train.size(), 10000u);
  for (std::size_t p : {1, 2, 5, 10, 20, 50, 100, 150, 200}) {
    const double same = pooled_mi(sp.train, p, 10, 0);
    for (std::size_t off = 1; off < 10; ++off) EXPECT_GT(same, pooled_mi(sp.train, p, 10, off)) << "p=" << p;
  }
}

TEST(GenerateLogTest, SameCategoryInformationDecaysWithPosition) {
  GenConfig g;
  g.num_users = 600;
  g.seed = 6;
  const Dataset ds = generate_log(g);
  const SplitResult sp = split_dataset(ds, SplitSpec{}, 1, 6);
  ASSERT_GE(sp.train.size(), 10000u);
  EXPECT_GT(pooled_mi(sp.train, 1, 20, 0), pooled_mi(sp.train, 50, 20, 0));
}

TEST(IngestTest, EmptyInput) {
  const Dataset ds = ingest_text("");
  EXPECT_EQ(ds.num_users(), 0u);
  EXPECT_EQ(ds.num_items, 0u);
  EXPECT_EQ(ingest_text("user_id,item_id,category_id,timestamp\n").num_users(), 0u);
}

TEST(IngestTest, SortsByTimestamp) {
  const Dataset ds = ingest_text(
      "user_id,item_id,category_id,timestamp\n"
      "7,10,1,30\n"
      "7,11,1,10\n"
      "7,12,2,20\n");
  ASSERT_EQ(ds.num_users(), 1u);
  const auto& s = ds.sequences[0];
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].timestamp, 10);
  EXPECT_EQ(s[1].timestamp, 20);
  EXPECT_EQ(s[2].timestamp, 30);
  EXPECT_EQ(ds.user_ids, std::vector<std::int64_t>{7});
}

TEST(IngestTest, DenseRemapByFirstOccurrence) {
  const Dataset ds = ingest_text(
      "user_id,item_id,category_id,timestamp\n"
      "1,10,4,1\n"
      "1,99,8,2\n"
      "1,10,4,3\n");
  std::vector<std::uint32_t> items;
  for (const auto& e : ds.sequences[0]) items.push_back(e.item);
  EXPECT_EQ(items, (std::vector<std::uint32_t>{0, 1, 0}));
  EXPECT_EQ(ds.num_items, 2u);
  EXPECT_EQ(ds.num_categories, 2u);
  EXPECT_EQ(ds.item_category, (std::vector<std::uint32_t>{0, 1}));
}

TEST(IngestTest, StableForDuplicateTimestamps) {
  const Dataset ds = ingest_text(
      "user_id,item_id,category_id,timestamp\n"
      "1,5,0,9\n"
      "1,6,0,9\n"
      "1,7,0,9\n");
  std::vector<std::uint32_t> items;
  for (const auto& e : ds.sequences[0]) items.push_back(e.item);
  EXPECT_EQ(items, (std::vector<std::uint32_t>{0, 1, 2}));
}

TEST(IngestTest, ErrorsCarryLineNumbers) {
  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      ingest_text(text);
    } catch (const IngestError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(line_of("user,item\n"), 1u);
  EXPECT_EQ(line_of("user_id,item_id,category_id,timestamp\n1,2,3,4\n1,2,3\n"), 3u);
  EXPECT_EQ(line_of("user_id,item_id,category_id,timestamp\n1,2,3,4\n1,x,3,4\n"), 3u);
  EXPECT_EQ(line_of("user_id,item_id,category_id,timestamp\n1,2,3,4\n\n2,2,5,1\n"), 4u);  // item under two categories
  EXPECT_THROW(ingest_log("/nonexistent/behaviors.csv", LogFormat::kCanonicalCsv), std::runtime_error);
}

TEST(IngestTest, TaobaoKeepsPageViewsOnly) {
  const Dataset ds = ingest_text(
      "1,100,7,pv,1511544070\n"
      "1,101,7,buy,1511544071\n"
      "1,102,8,pv,1511544072\n"
      "2,101,7,cart,1511544073\n",
      LogFormat::kTaobaoUserBehavior);
  ASSERT_EQ(ds.num_users(), 1u);
  EXPECT_EQ(ds.sequences[0].size(), 2u);
  EXPECT_EQ(ds.num_items, 2u);
  EXPECT_EQ(ds.sequences[0][1].timestamp, 1511544072);
}

TEST(IngestTest, Idempotent) {
  const Dataset raw = ingest_text(
      "user_id,item_id,category_id,timestamp\n"
      "5,300,2,4\n"
      "9,301,3,1\n"
      "5,302,3,2\n"
      "9,300,2,0\n"
      "5,301,3,3\n");
  std::ostringstream once;
  write_canonical_csv(raw, once);
  const Dataset again = ingest_text(once.str());
  EXPECT_EQ(again, raw);

  const Dataset gen = generate_log(small_config());
  std::ostringstream g1;
  write_canonical_csv(gen, g1);
  const Dataset a = ingest_text(g1.str());
  std::ostringstream g2;
  write_canonical_csv(a, g2);
  EXPECT_EQ(ingest_text(g2.str()), a);
}

Dataset single_user(std::size_t length, std::size_t items = 50) {
  Dataset ds;
  ds.num_items = items;
  ds.num_categories = 5;
  for (std::size_t i = 0; i < items; ++i) ds.item_category.push_back(static_cast<std::uint32_t>(i % 5));
  std::vector<BehaviorEvent> seq;
  for (std::size_t t = 0; t < length; ++t) {
    const auto item = static_cast<std::uint32_t>(t % items);
    seq.push_back({item, item % 5, static_cast<std::int64_t>(t)});
  }
  ds.sequences.push_back(seq);
  ds.user_ids.push_back(0);
  return ds;
}

TEST(SplitTest, ShortUsersDropped) {
  for (std::size_t len : {209, 210}) {
    const SplitResult sp = split_dataset(single_user(len), SplitSpec{}, 1, 1);
    EXPECT_TRUE(sp.train.empty() && sp.val.empty() && sp.test.empty()) << len;
  }
  EXPECT_FALSE(split_dataset(single_user(211), SplitSpec{}, 1, 1).test.empty());
}

TEST(SplitTest, ThreeHundredBehaviors) {
  const SplitResult sp = split_dataset(single_user(300), SplitSpec{}, 1, 1);
  auto positives = [](const std::vector<Sample>& v) {
    std::vector<std::uint32_t> ranks;
    for (const auto& x : v) {
      if (x.label == 1) ranks.push_back(x.target_rank);
    }
    return ranks;
  };
  std::vector<std::uint32_t> expect;
  for (std::uint32_t i = 0; i <= 18; ++i) expect.push_back(3 + 5 * i);
  EXPECT_EQ(positives(sp.train), expect);
  EXPECT_EQ(positives(sp.val), std::vector<std::uint32_t>{2});
  EXPECT_EQ(positives(sp.test), std::vector<std::uint32_t>{1});
  for (const auto& x : sp.train) EXPECT_EQ(x.history.size(), 200u);
}

TEST(SplitTest, NegativesMatchPositives) {
  GenConfig g = small_config();
  g.sequence_length = 240;
  const Dataset ds = generate_log(g);
  for (std::size_t ratio : {1, 3}) {
    const SplitResult sp = split_dataset(ds, SplitSpec{}, ratio, 9);
    for (const auto* split : {&sp.train, &sp.val, &sp.test}) {
      std::size_t pos = 0, neg = 0;
      for (std::size_t i = 0; i < split->size(); ++i) {
        const Sample& x = (*split)[i];
        if (x.label == 1) {
          ++pos;
          for (std::size_t k = 1; k <= ratio; ++k) {
            const Sample& n = (*split)[i + k];
            EXPECT_EQ(n.label, 0);
            EXPECT_NE(n.target.item, x.target.item);
            EXPECT_EQ(n.target.category, ds.item_category[n.target.item]);
            EXPECT_EQ(n.history.data(), x.history.data());
          }
        } else {
          ++neg;
        }
      }
      EXPECT_EQ(neg, ratio * pos);
      EXPECT_EQ(pos, g.num_users * (split == &sp.train ? 19 : 1));
    }
  }
}

TEST(SplitTest, HistoryPrecedesTargetAndSplitsAreDisjoint) {
  GenConfig g = small_config();
  g.sequence_length = 260;
  const Dataset ds = generate_log(g);
  const SplitResult sp = split_dataset(ds, SplitSpec{}, 1, 2);
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  for (const auto* split : {&sp.train, &sp.val, &sp.test}) {
    std::set<std::pair<std::uint32_t, std::uint32_t>> mine;
    for (const auto& x : *split) {
      const auto& seq = ds.sequences[x.user];
      const std::size_t t_idx = seq.size() - x.target_rank;
      if (x.label == 1) EXPECT_EQ(seq[t_idx], x.target);
      for (std::size_t i = 0; i < x.history.size(); ++i) {
        EXPECT_LT(x.history[i].timestamp, seq[t_idx].timestamp);
        EXPECT_EQ(x.history[i], seq[t_idx - 1 - i]);  // most recent first
      }
      mine.insert({x.user, x.target_rank});
    }
    for (const auto& k : mine) EXPECT_FALSE(seen.count(k));
    seen.insert(mine.begin(), mine.end());
  }
}

TEST(SplitTest, DeterministicNegatives) {
  const Dataset ds = generate_log(small_config());
  SplitSpec spec;
  spec.min_length = 100;
  spec.window = 20;
  const SplitResult a = split_dataset(ds, spec, 1, 4);
  const SplitResult b = split_dataset(ds, spec, 1, 4);
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].target, b.train[i].target);
}

}  // namespace
}  // namespace dare
