#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pap/experiment.hpp"

using namespace pap;

namespace {

PapConfig tiny_config() {
  PapConfig c;
  c.seed = 1;
  c.image_height = c.image_width = 32;
  c.encoder_width = 4;
  c.branch_width = 4;
  c.classes = 4;
  c.samples = 8;
  c.epochs = 1;
  c.pairs = 40;
  return c;
}

ExperimentPlan tiny_plan(PlanKind kind) {
  ExperimentPlan p;
  p.kind = kind;
  p.seeds = {1, 2, 3};
  p.base = tiny_config();
  return p;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST(Plan, NeedsThreeDistinctSeeds) {
  ExperimentPlan p = tiny_plan(PlanKind::ModuleAblation);
  p.seeds = {1, 2};
  EXPECT_THROW(p.validate(), ConfigError);
  p.seeds = {1, 2, 2};
  EXPECT_THROW(p.validate(), ConfigError);
  p.seeds = {1, 2, 3};
  EXPECT_NO_THROW(p.validate());
}

TEST(Plan, KindNamesRoundTrip) {
  for (PlanKind k : kAllPlanKinds) EXPECT_EQ(parse_plan_kind(plan_kind_name(k)), k);
  EXPECT_THROW(parse_plan_kind("everything"), ConfigError);
}

TEST(Plan, VariantsPerKind) {
  const auto joint = plan_variants(tiny_plan(PlanKind::JointVsSingle));
  ASSERT_EQ(joint.size(), 4u);
  EXPECT_EQ(joint[0].config.tasks.size(), 3u);
  EXPECT_EQ(joint[1].config.tasks, std::vector<TaskKind>{TaskKind::Depth});

  const auto sweep = plan_variants(tiny_plan(PlanKind::IterationSweep));
  ASSERT_EQ(sweep.size(), 5u);
  const std::size_t expect[] = {0, 1, 2, 4, 8};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(sweep[i].config.diffusion.iterations, expect[i]);

  EXPECT_EQ(plan_variants(tiny_plan(PlanKind::ScaleSweep)).size(), 3u);
  const auto sim = plan_variants(tiny_plan(PlanKind::SimilarityFnSweep));
  ASSERT_EQ(sim.size(), 2u);
  EXPECT_EQ(sim[1].config.similarity, SimilarityKind::L1Distance);

  const auto abl = plan_variants(tiny_plan(PlanKind::ModuleAblation));
  ASSERT_EQ(abl.size(), 4u);
  EXPECT_FALSE(abl[0].config.diffusion_active());
  EXPECT_FALSE(abl[0].config.reconstruction);
  EXPECT_EQ(abl[0].config.loss.xi[0], 0.0);
  EXPECT_TRUE(abl[1].config.diffusion_active());
  EXPECT_FALSE(abl[1].config.reconstruction);
  EXPECT_TRUE(abl[2].config.reconstruction);
  EXPECT_EQ(abl[2].config.loss.xi[0], 0.0);
  EXPECT_EQ(abl[3].config.loss.xi[0], 0.2);
}

TEST(Experiment, ReproducibleMetricsCsv) {
  const ExperimentPlan plan = tiny_plan(PlanKind::SimilarityFnSweep);
  auto csv = [&] {
    std::ostringstream os;
    write_metrics_csv(os, {run_experiment(plan)});
    return os.str();
  };
  const std::string a = csv();
  EXPECT_EQ(a, csv());
  EXPECT_EQ(a.substr(0, a.find('\n')), "run_id,seed,config_digest,task,metric,value");
  EXPECT_NE(a.find("similarity-sweep-v1-s3,3,"), std::string::npos);

  ExperimentPlan other = plan;
  other.seeds = {4, 5, 6};
  std::ostringstream os;
  write_metrics_csv(os, {run_experiment(other)});
  EXPECT_NE(os.str(), a);
}

TEST(Experiment, FailedRunsArePreserved) {
  // 40x40 scenes cannot enter a network that needs sizes divisible by 16.
  const auto bad = generate_dataset(SceneSpec::sized(40, 40, 1), 6);
  const ExperimentResult r = run_experiment(tiny_plan(PlanKind::SimilarityFnSweep), &bad);
  ASSERT_EQ(r.runs.size(), 6u);
  EXPECT_FALSE(r.complete());
  for (const auto& run : r.runs) EXPECT_NE(run.error.find("divisible by 16"), std::string::npos) << run.error;
}

TEST(Experiment, StepTimingIsPositive) {
  const PapConfig c = tiny_config();
  const auto batch = prepare_samples(generate_dataset(c.scene_spec(), 2));
  EXPECT_GT(measure_step_seconds(c, batch, 2), 0.0);
}

TEST(Report, WritesArtifactsAndRefusesOverwrite) {
  const ExperimentResult r = run_experiment(tiny_plan(PlanKind::ModuleAblation));
  ASSERT_TRUE(r.complete());
  ASSERT_TRUE(r.ratios.has_value());
  const auto dir = fresh_dir("pap_report_test");
  export_report({r}, dir, false);
  for (const char* f : {"metrics.csv", "ratios.csv", "summary.md"}) EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;

  const std::string summary = read_file(dir / "summary.md");
  EXPECT_NE(summary.find("## module-ablation"), std::string::npos);
  for (const char* v : {"initial prediction", "+ propagation", "+ reconstruction", "+ pair-wise loss"}) {
    EXPECT_NE(summary.find(v), std::string::npos) << v;
  }
  EXPECT_EQ(read_file(dir / "ratios.csv").substr(0, 9), "regime,re");
  std::size_t dumps = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir / "dumps"))
    if (e.path().extension() == ".pgm") ++dumps;
  EXPECT_GE(dumps, 12u);

  const std::string before = read_file(dir / "metrics.csv");
  std::ofstream(dir / "metrics.csv") << "sentinel";
  EXPECT_THROW(export_report({r}, dir, false), ConfigError);
  EXPECT_EQ(read_file(dir / "metrics.csv"), "sentinel");
  export_report({r}, dir, true);
  EXPECT_EQ(read_file(dir / "metrics.csv"), before);
  std::filesystem::remove_all(dir);
}

TEST(Report, OneTablePerPlanKind) {
  ExperimentResult a, b;
  a.kind = PlanKind::IterationSweep;
  b.kind = PlanKind::ScaleSweep;
  a.variants = {"iterations=0"};
  b.variants = {"affinity at 1/8"};
  std::ostringstream os;
  write_summary_md(os, {a, b});
  const std::string s = os.str();
  EXPECT_NE(s.find("## iteration-sweep"), std::string::npos);
  EXPECT_NE(s.find("## scale-sweep"), std::string::npos);
  EXPECT_EQ(std::count(s.begin(), s.end(), '#'), 1 + 2 * 2);
}
