#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "pair_oracle.hpp"
#include "pap/stats.hpp"

using namespace pap;
using pair_oracle::Exhaustive;
using pair_oracle::exhaustive_ratios;

namespace {

SceneSample constant_sample(std::size_t h, std::size_t w) {
  SceneSample s;
  s.depth = Tensor({h, w}, 2.0);
  s.normal = Tensor({3, h, w}, 0.0);
  for (std::size_t i = 0; i < h * w; ++i) s.normal[2 * h * w + i] = 1.0;
  s.image = Tensor({3, h, w}, 0.5);
  s.labels.assign(h * w, 1);
  return s;
}

}  // namespace

TEST(PairMatch, IdenticalConstantMaps) {
  PairMatchConfig cfg;
  cfg.pairs_per_image = 50;
  const MatchTable t = pair_match_stats({constant_sample(8, 8), constant_sample(8, 8)}, cfg);
  EXPECT_EQ(t.pairs(), 100u);
  for (TaskKind a : kAllTasks) {
    EXPECT_EQ(t.dissimilar_count(a), 0u);
    EXPECT_FALSE(t.dissimilar_ratio(a, a).has_value());
    for (TaskKind b : kAllTasks) EXPECT_EQ(t.similar_ratio(a, b), 1.0);
  }
}

TEST(PairMatch, ClassificationIsSymmetric) {
  const SceneSample s = generate_scene(SceneSpec::sized(16, 16, 2), 3);
  PairMatchConfig cfg;
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> pick(0, 255);
  for (int k = 0; k < 2000; ++k) {
    const std::size_t i = pick(rng), j = pick(rng);
    EXPECT_EQ(classify_pair(s, i, j, cfg), classify_pair(s, j, i, cfg));
  }
}

TEST(PairMatch, RatiosBoundedWithUnitDiagonal) {
  const auto samples = generate_dataset(SceneSpec::sized(16, 16, 5), 10);
  PairMatchConfig cfg;
  const MatchTable t = pair_match_stats(samples, cfg);
  for (TaskKind a : kAllTasks) {
    EXPECT_EQ(t.similar_ratio(a, a), 1.0);
    for (TaskKind b : kAllTasks) {
      for (auto r : {t.similar_ratio(a, b), t.dissimilar_ratio(a, b)}) {
        ASSERT_TRUE(r.has_value());
        EXPECT_GE(*r, 0.0);
        EXPECT_LE(*r, 1.0);
      }
    }
  }
}

TEST(PairMatch, UndefinedRatioDiffersFromZero) {
  MatchTable t;
  t.add({PairRelation::Dissimilar, PairRelation::Similar, PairRelation::Dissimilar});
  EXPECT_FALSE(t.similar_ratio(TaskKind::Depth, TaskKind::Normal).has_value());
  EXPECT_EQ(t.similar_ratio(TaskKind::Normal, TaskKind::Depth), 0.0);
  std::ostringstream os;
  t.write_csv(os);
  EXPECT_NE(os.str().find("similar,depth,normal,undefined,0,0"), std::string::npos);
  EXPECT_NE(os.str().find("similar,normal,depth,0,0,1"), std::string::npos);
}

TEST(PairMatch, ConfigValidation) {
  PairMatchConfig cfg;
  cfg.normal_dissimilar = 0.2;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = PairMatchConfig{};
  cfg.depth_rel = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(PairMatch, SampledRatiosMatchExhaustiveOracle) {
  const auto samples = generate_dataset(SceneSpec::sized(32, 32, 9), 20);
  PairMatchConfig cfg;
  cfg.pairs_per_image = 5000;  // 1e5 pairs in total
  cfg.seed = 77;
  const MatchTable t = pair_match_stats(samples, cfg);
  ASSERT_EQ(t.pairs(), 100000u);
  const Exhaustive e = exhaustive_ratios(samples, PairMatchConfig{});
  for (TaskKind a : kAllTasks)
    for (TaskKind b : kAllTasks) {
      const std::size_t ia = task_index(a), ib = task_index(b);
      EXPECT_NEAR(*t.similar_ratio(a, b), e.similar(ia, ib), 0.02) << task_name(a) << "->" << task_name(b);
      EXPECT_NEAR(*t.dissimilar_ratio(a, b), e.dissimilar(ia, ib), 0.02) << task_name(a) << "->" << task_name(b);
    }
}

TEST(PairMatch, GroundTruthSimilarPairsMatchAcrossTasks) {
  const auto samples = generate_dataset(SceneSpec::sized(32, 32, 9), 20);
  const Exhaustive e = exhaustive_ratios(samples, PairMatchConfig{});
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b) EXPECT_GE(e.similar(a, b), 0.5) << a << "->" << b;
}
