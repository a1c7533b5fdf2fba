// Unit tests for the unified label space: category table, intensity
// mapping for every scheme kind, the masking rules, manifest round-trips,
// and the multi-dataset merge.
//
// Copyright 2026 The speecheq authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "speecheq/seqm.hpp"

#include <gtest/gtest.h>

#include <random>

#include "testutil.hpp"

namespace sq = speecheq;
using sq::seqm::LabelScheme;
using sq::seqm::SchemeKind;
using sq::seqm::UnifiedLabel;

namespace {

LabelScheme full_scheme(SchemeKind kind, const std::string& name = "toy") {
  LabelScheme s;
  s.name = name;
  s.kind = kind;
  for (int c = 0; c < sq::seqm::kNumCategories; ++c)
    s.label_to_category[sq::seqm::kCategoryNames[static_cast<size_t>(c)]] = c;
  if (kind == SchemeKind::Continuous) {
    s.lo = 1.0;
    s.hi = 5.0;
  }
  return s;
}

}  // namespace

TEST(Categories, NamesRoundTrip) {
  EXPECT_EQ(sq::seqm::kNumCategories, 9);
  EXPECT_EQ(sq::seqm::kNeutralId, 0);
  EXPECT_STREQ(sq::seqm::category_name(0), "Neutral");
  EXPECT_STREQ(sq::seqm::category_name(2), "Joy");
  EXPECT_STREQ(sq::seqm::category_name(8), "Fear");
  for (int c = 0; c < sq::seqm::kNumCategories; ++c)
    EXPECT_EQ(sq::seqm::category_from_name(sq::seqm::category_name(c)), c);
  EXPECT_THROW(sq::seqm::category_name(9), sq::MappingError);
  EXPECT_THROW(sq::seqm::category_name(-1), sq::MappingError);
  EXPECT_THROW(sq::seqm::category_from_name("Happiness"), sq::MappingError);
}

TEST(Mapping, ThreeLevelGoldens) {
  auto s = full_scheme(SchemeKind::ThreeLevel);
  EXPECT_EQ(sq::seqm::unify_level_label(s, "Anger", std::string("low")).eis, 1.5);
  EXPECT_EQ(sq::seqm::unify_level_label(s, "Anger", std::string("medium")).eis, 2.5);
  EXPECT_EQ(sq::seqm::unify_level_label(s, "Anger", std::string("high")).eis, 3.5);
  EXPECT_FALSE(sq::seqm::unify_level_label(s, "Anger", std::string("low")).masked);
}

TEST(Mapping, TwoLevelGoldens) {
  auto s = full_scheme(SchemeKind::TwoLevel);
  EXPECT_EQ(sq::seqm::unify_level_label(s, "Fear", std::string("low")).eis, 2.0);
  EXPECT_EQ(sq::seqm::unify_level_label(s, "Fear", std::string("high")).eis, 3.0);
  EXPECT_THROW(sq::seqm::unify_level_label(s, "Fear", std::string("medium")), sq::SchemaError);
}

TEST(Mapping, NeutralPrecedesKind) {
  // Neutral pins intensity to exactly 0 on any specified scheme, before the
  // kind-specific mapping runs; a stray level token on Neutral is ignored.
  for (auto kind : {SchemeKind::ThreeLevel, SchemeKind::TwoLevel, SchemeKind::Continuous}) {
    auto s = full_scheme(kind);
    auto u = sq::seqm::unify_level_label(s, "Neutral", std::nullopt);
    EXPECT_EQ(u.eis, 0.0);
    EXPECT_FALSE(u.masked);
    EXPECT_EQ(sq::seqm::unify_level_label(s, "Neutral", std::string("high")).eis, 0.0);
  }
}

TEST(Mapping, UnspecifiedMasksEverything) {
  auto s = full_scheme(SchemeKind::Unspecified);
  for (const char* label : {"Neutral", "Joy", "Fear"}) {
    auto u = sq::seqm::unify_level_label(s, label, std::nullopt);
    EXPECT_TRUE(u.masked);
    EXPECT_EQ(u.eis, sq::seqm::kMaskedSentinel);
  }
  // a level token contradicts the declared kind
  EXPECT_THROW(sq::seqm::unify_level_label(s, "Joy", std::string("high")), sq::SchemaError);
  // whitespace-only level tokens count as absent
  EXPECT_NO_THROW(sq::seqm::unify_level_label(s, "Joy", std::string("  ")));
}

TEST(Mapping, ContinuousEndpointsAndClamp) {
  auto s = full_scheme(SchemeKind::Continuous);  // [1,5]
  EXPECT_EQ(sq::seqm::unify_level_label(s, "Joy", std::string("1")).eis, 1.0);
  EXPECT_EQ(sq::seqm::unify_level_label(s, "Joy", std::string("5")).eis, 4.0);
  std::vector<std::string> warnings;
  auto u = sq::seqm::unify_level_label(s, "Joy", std::string("6.2"), &warnings);
  EXPECT_EQ(u.eis, 4.0);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("clamped"), std::string::npos);
  EXPECT_THROW(sq::seqm::unify_level_label(s, "Joy", std::string("3x")), sq::SchemaError);
  EXPECT_THROW(sq::seqm::unify_level_label(s, "Joy", std::nullopt), sq::SchemaError);
}

TEST(Mapping, UnmappedLabelIsError) {
  auto s = full_scheme(SchemeKind::ThreeLevel);
  try {
    sq::seqm::unify_level_label(s, "bored", std::string("low"));
    FAIL() << "expected MappingError";
  } catch (const sq::MappingError& e) {
    EXPECT_NE(std::string(e.what()).find("bored"), std::string::npos);
  }
}

TEST(Mapping, MaskedXorInRangeProperty) {
  // for every reachable output: masked <=> eis is the sentinel, and
  // unmasked values always land inside [0,4]
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> raw(-2.0, 9.0);
  auto cont = full_scheme(SchemeKind::Continuous);
  auto unspecified = full_scheme(SchemeKind::Unspecified);
  auto three = full_scheme(SchemeKind::ThreeLevel);
  for (int i = 0; i < 500; ++i) {
    const int cat = static_cast<int>(rng() % 9);
    const char* name = sq::seqm::category_name(cat);
    UnifiedLabel u;
    switch (rng() % 3) {
      case 0:
        u = sq::seqm::unify_level_label(cont, name, sq::format_real(raw(rng)));
        break;
      case 1:
        u = sq::seqm::unify_level_label(unspecified, name, std::nullopt);
        break;
      default: {
        const char* levels[3] = {"low", "medium", "high"};
        u = sq::seqm::unify_level_label(three, name, std::string(levels[rng() % 3]));
        break;
      }
    }
    EXPECT_EQ(u.masked, u.eis == sq::seqm::kMaskedSentinel);
    if (!u.masked) {
      EXPECT_GE(u.eis, sq::seqm::kEisMin);
      EXPECT_LE(u.eis, sq::seqm::kEisMax);
    }
  }
}

TEST(Rescale, MonotoneAndEndpointExact) {
  EXPECT_EQ(sq::seqm::rescale_continuous(1.0, 5.0, 1.0), 1.0);
  EXPECT_EQ(sq::seqm::rescale_continuous(1.0, 5.0, 5.0), 4.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(1.0, 5.0);
  for (int i = 0; i < 200; ++i) {
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    EXPECT_LE(sq::seqm::rescale_continuous(1.0, 5.0, a), sq::seqm::rescale_continuous(1.0, 5.0, b));
  }
  EXPECT_THROW(sq::seqm::rescale_continuous(2.0, 2.0, 2.0), sq::ConfigError);
  EXPECT_THROW(sq::seqm::rescale_continuous(1.0, 5.0, std::nan("")), sq::NumericError);
}

TEST(Clip, IdempotentAndBounded) {
  EXPECT_EQ(sq::seqm::clip_eis(-3.0), 0.0);
  EXPECT_EQ(sq::seqm::clip_eis(7.5), 4.0);
  EXPECT_EQ(sq::seqm::clip_eis(2.25), 2.25);
  for (double x : {-1.0, 0.0, 2.0, 4.0, 9.0})
    EXPECT_EQ(sq::seqm::clip_eis(sq::seqm::clip_eis(x)), sq::seqm::clip_eis(x));
  EXPECT_THROW(sq::seqm::clip_eis(std::numeric_limits<double>::infinity()), sq::NumericError);
}

TEST(SchemeJson, ParseAndValidate) {
  nlohmann::json j = {{"name", "demo"},
                      {"kind", "continuous"},
                      {"labels", {{"hap", "Joy"}, {"neu", "Neutral"}}},
                      {"exclude", {"oth"}},
                      {"range", {{"lo", 1.0}, {"hi", 5.0}}}};
  auto s = sq::seqm::scheme_from_json(j);
  EXPECT_EQ(s.name, "demo");
  EXPECT_EQ(s.kind, SchemeKind::Continuous);
  EXPECT_EQ(s.label_to_category.at("hap"), 2);
  EXPECT_EQ(s.excluded.count("oth"), 1u);

  j["bogus"] = 1;
  EXPECT_THROW(sq::seqm::scheme_from_json(j), sq::ConfigError);
  j.erase("bogus");
  j["kind"] = "four-level";
  EXPECT_THROW(sq::seqm::scheme_from_json(j), sq::ConfigError);
  j["kind"] = "three-level";  // range only belongs to continuous schemes
  EXPECT_THROW(sq::seqm::scheme_from_json(j), sq::ConfigError);
}

TEST(Manifests, RawRoundTrip) {
  std::vector<sq::seqm::UtteranceRecord> recs(2);
  recs[0] = {"u1", "wav/u1.wav", "ni3 hao3", "happy", std::string("high"), sq::seqm::Gender::Male,
             "train"};
  recs[1] = {"u2", "wav/u2.wav", "", "neutral", std::nullopt, sq::seqm::Gender::Female, "test"};
  auto text = sq::seqm::format_raw_manifest(recs);
  auto back = sq::seqm::parse_raw_manifest(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].id, "u1");
  EXPECT_EQ(back[0].source_level, std::string("high"));
  EXPECT_FALSE(back[1].source_level.has_value());
  EXPECT_EQ(back[1].gender, sq::seqm::Gender::Female);

  EXPECT_THROW(sq::seqm::parse_raw_manifest("id\twrong\theader\n"), sq::FormatError);
  EXPECT_THROW(sq::seqm::parse_raw_manifest(std::string(sq::seqm::kRawHeader) + "\na\tb\tc\n"),
               sq::FormatError);
  // duplicate utterance ids are rejected
  auto dup = text + text.substr(text.find('\n') + 1);
  EXPECT_THROW(sq::seqm::parse_raw_manifest(dup), sq::FormatError);
}

TEST(Manifests, UnifiedRoundTripAndSentinelRule) {
  std::vector<sq::seqm::UnifiedRecord> recs(2);
  recs[0].id = "a/u1";
  recs[0].audio_path = "wav/u1.wav";
  recs[0].dataset = "a";
  recs[0].label = {4, 3.5, false};
  recs[1].id = "a/u2";
  recs[1].audio_path = "wav/u2.wav";
  recs[1].dataset = "a";
  recs[1].label = {2, sq::seqm::kMaskedSentinel, true};
  auto text = sq::seqm::format_unified_manifest(recs);
  auto back = sq::seqm::parse_unified_manifest(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].label.category, 4);
  EXPECT_EQ(back[0].label.eis, 3.5);
  EXPECT_TRUE(back[1].label.masked);
  EXPECT_EQ(back[1].label.eis, sq::seqm::kMaskedSentinel);

  // a masked row must carry the sentinel, nothing else
  auto tampered = text;
  auto pos = tampered.find("-1\t1");
  ASSERT_NE(pos, std::string::npos);
  tampered.replace(pos, 4, "2\t1");
  EXPECT_THROW(sq::seqm::parse_unified_manifest(tampered), sq::FormatError);

  // an unmasked row must sit inside [0,4]
  auto out_of_range = text;
  pos = out_of_range.find("3.5\t0");
  ASSERT_NE(pos, std::string::npos);
  out_of_range.replace(pos, 5, "4.5\t0");
  EXPECT_THROW(sq::seqm::parse_unified_manifest(out_of_range), sq::FormatError);

  EXPECT_THROW(sq::seqm::format_unified_manifest(
                   {{"a\tb", "p", "", "d", {0, 0.0, false}, sq::seqm::Gender::Male, "train"}}),
               sq::FormatError);
}

TEST(Msud, NamespacesCountsAndMarginals) {
  sq::seqm::DatasetInput a, b;
  a.scheme = full_scheme(SchemeKind::ThreeLevel, "alpha");
  a.scheme.excluded.insert("skipme");
  a.scheme.label_to_category["skipme"] = 1;
  b.scheme = full_scheme(SchemeKind::Unspecified, "beta");

  a.records.push_back({"u1", "p1", "", "Joy", std::string("low"), sq::seqm::Gender::Male, "train"});
  a.records.push_back({"u2", "p2", "", "Joy", std::string("high"), sq::seqm::Gender::Male, "train"});
  a.records.push_back({"u3", "p3", "", "Anger", std::string("medium"), sq::seqm::Gender::Female, "test"});
  a.records.push_back({"u4", "p4", "", "skipme", std::string("low"), sq::seqm::Gender::Male, "train"});
  b.records.push_back({"u1", "q1", "", "Fear", std::nullopt, sq::seqm::Gender::Female, "train"});

  auto r = sq::seqm::build_msud({a, b});
  // size equals the sum of inputs minus exclusions
  EXPECT_EQ(r.records.size(), 4u);
  EXPECT_EQ(r.excluded_per_dataset.at("alpha"), 1u);
  EXPECT_EQ(r.excluded_per_dataset.count("beta"), 0u);
  // ids are namespaced, so the same source id from two datasets coexists
  EXPECT_EQ(r.records[0].id, "alpha/u1");
  EXPECT_EQ(r.records[3].id, "beta/u1");
  // per-category marginals survive the merge
  std::map<int, int> marginal;
  for (const auto& rec : r.records) ++marginal[rec.label.category];
  EXPECT_EQ(marginal[2], 2);
  EXPECT_EQ(marginal[4], 1);
  EXPECT_EQ(marginal[8], 1);

  EXPECT_THROW(sq::seqm::build_msud({}), sq::ConfigError);
  EXPECT_THROW(sq::seqm::build_msud({a, a}), sq::ConfigError);  // duplicate dataset name
}

TEST(Msud, SavedManifestParsesBack) {
  testutil::TempDir tmp;
  sq::seqm::DatasetInput a;
  a.scheme = full_scheme(SchemeKind::TwoLevel, "solo");
  a.records.push_back({"x", "wav/x.wav", "hi", "Sadness", std::string("high"), sq::seqm::Gender::Male,
                       "train"});
  auto r = sq::seqm::build_msud({a});
  sq::seqm::save_unified_manifest(tmp / "m.tsv", r.records);
  auto back = sq::seqm::load_unified_manifest(tmp / "m.tsv");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].id, "solo/x");
  EXPECT_EQ(back[0].label.eis, 3.0);
}
