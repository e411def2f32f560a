#include <gtest/gtest.h>

#include <fstream>
#include <map>

#include "emutriage/pipeline.hpp"
#include "fixtures.hpp"

using namespace emutriage;
using emutriage::testing::code_of;
using emutriage::testing::TempDir;
namespace fs = std::filesystem;

namespace {

PipelineConfig small_config() {
  PipelineConfig c;
  auto spec = preset("paper-mini", 0);
  spec.benign.n_samples = 30;
  spec.families.resize(3);
  for (auto& f : spec.families) f.n_samples = 30;
  c.synth = spec;
  for (auto protocol : {Protocol::binary_full, Protocol::multiclass}) {
    ExperimentConfig e;
    e.protocol = protocol;
    e.folds = 3;
    e.repeats = 1;
    e.family_threshold = 20;
    e.models = {ModelKind::knn};
    c.experiments.push_back(e);
  }
  c.cluster_settings.k = 2;
  c.cluster_settings.sweep = std::make_pair(std::size_t{2}, std::size_t{3});
  c.seed = 5;
  return c;
}

std::map<std::string, bool> by_stage(const std::vector<StageOutcome>& outcomes) {
  std::map<std::string, bool> out;
  for (const auto& o : outcomes) out[o.stage] = o.skipped;
  return out;
}

}  // namespace

TEST(TreeHash, FileAndDirectory) {
  TempDir dir;
  write_text_file(dir / "a.txt", "abc");
  EXPECT_EQ(tree_hash(dir / "a.txt"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  fs::create_directories(dir / "sub");
  write_text_file(dir / "sub" / "b.txt", "x");
  const auto h = tree_hash(dir.path());
  write_text_file(dir / "sub" / "b.txt", "y");
  EXPECT_NE(tree_hash(dir.path()), h);
  write_text_file(dir / "sub" / "b.txt", "x");
  EXPECT_EQ(tree_hash(dir.path()), h);
}

TEST(PipelineConfig, HashAndJson) {
  const auto a = small_config();
  auto b = small_config();
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 6;
  EXPECT_NE(config_hash(a), config_hash(b));

  const auto c = pipeline_config_from_json(
      R"({"seed": 3, "corpus": {"manifest": "m.csv", "reports": "r"}, "aliases": "al.csv",
          "select": {"enabled": false}, "eval": [{"protocol": "binary_balanced"}],
          "cluster": {"enabled": true, "k": 4, "sweep": [2, 5]}})",
      "/base");
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.manifest, fs::path("/base/m.csv"));
  EXPECT_EQ(*c.aliases, fs::path("/base/al.csv"));
  EXPECT_FALSE(c.select);
  ASSERT_EQ(c.experiments.size(), 1u);
  EXPECT_EQ(c.experiments[0].protocol, Protocol::binary_balanced);
  EXPECT_EQ(c.cluster_settings.k, 4u);
  EXPECT_EQ(c.cluster_settings.sweep->second, 5u);
  EXPECT_EQ(code_of([] { pipeline_config_from_json("{}", "/"); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { pipeline_config_from_json("{", "/"); }), ErrorCode::MalformedJson);

  const auto preset_config = preset_pipeline_config("paper-mini", 42);
  EXPECT_EQ(preset_config.seed, 42u);
  EXPECT_EQ(preset_config.experiments.size(), 3u);
  EXPECT_TRUE(preset_config.cluster);
  EXPECT_FALSE(preset_pipeline_config("easy", 1).cluster);
}

TEST(ResolveAliases, MissingFileNamesPath) {
  EXPECT_GT(resolve_aliases(std::nullopt).size(), 0u);
  try {
    resolve_aliases(fs::path("/nonexistent/aliases.csv"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
    EXPECT_NE(e.detail().find("/nonexistent/aliases.csv"), std::string::npos);
  }
}

TEST(RunPipeline, StagesArtifactsAndCaching) {
  TempDir dir;
  const auto config = small_config();
  RunOptions options{dir / "out", false, 2};
  const auto first = run_pipeline(config, options);
  std::vector<std::string> names;
  for (const auto& o : first) {
    names.push_back(o.stage);
    EXPECT_FALSE(o.skipped) << o.stage;
  }
  EXPECT_EQ(names, (std::vector<std::string>{"datagen", "ingest", "featurize", "select", "eval", "cluster"}));
  for (const auto& stage : names) EXPECT_TRUE(fs::exists(dir / "out" / stage / "stage.json")) << stage;
  EXPECT_TRUE(fs::exists(dir / "out" / "eval" / "binary_full.json"));
  EXPECT_TRUE(fs::exists(dir / "out" / "eval" / "multiclass_confusion_knn.csv"));
  EXPECT_TRUE(fs::exists(dir / "out" / "cluster" / "clusters.json"));
  EXPECT_TRUE(fs::exists(dir / "out" / "cluster" / "sweep.csv"));
  const auto eval_hash = tree_hash(dir / "out" / "eval");

  for (const auto& [stage, skipped] : by_stage(run_pipeline(config, options))) EXPECT_TRUE(skipped) << stage;

  // a tampered output reruns its stage and everything downstream
  write_text_file(dir / "out" / "select" / "decision.json", "{}");
  const auto after = by_stage(run_pipeline(config, options));
  EXPECT_TRUE(after.at("featurize"));
  EXPECT_FALSE(after.at("select"));
  EXPECT_TRUE(after.at("eval"));  // same selection, same inputs
  EXPECT_EQ(tree_hash(dir / "out" / "eval"), eval_hash);

  options.force = true;
  for (const auto& [stage, skipped] : by_stage(run_pipeline(config, options))) EXPECT_FALSE(skipped) << stage;
  EXPECT_EQ(tree_hash(dir / "out" / "eval"), eval_hash);

  options.force = false;
  auto changed = config;
  changed.experiments[0].folds = 4;
  const auto rerun = by_stage(run_pipeline(changed, options));
  EXPECT_TRUE(rerun.at("select"));
  EXPECT_FALSE(rerun.at("eval"));
}

TEST(RunPipeline, ByteIdenticalAcrossJobCounts) {
  TempDir dir;
  const auto config = small_config();
  run_pipeline(config, RunOptions{dir / "a", false, 1});
  run_pipeline(config, RunOptions{dir / "b", false, 3});
  EXPECT_EQ(tree_hash(dir / "a"), tree_hash(dir / "b"));
}

TEST(RunPipeline, ManifestCorpusAndStageErrors) {
  TempDir dir;
  auto spec = small_config().synth.value();
  write_corpus(dir / "corpus", generate(spec), spec);
  PipelineConfig c = small_config();
  c.synth.reset();
  c.manifest = dir / "corpus" / "manifest.csv";
  c.reports = dir / "corpus" / "reports";
  c.select = false;
  c.cluster = false;
  const auto outcomes = run_pipeline(c, RunOptions{dir / "out", false, 1});
  EXPECT_EQ(outcomes.front().stage, "ingest");
  EXPECT_FALSE(fs::exists(dir / "out" / "cluster"));

  c.aliases = dir / "missing.csv";
  EXPECT_EQ(code_of([&] { run_pipeline(c, RunOptions{dir / "out2", false, 1}); }), ErrorCode::ConfigError);

  c.aliases.reset();
  c.select = true;
  c.boruta.max_iter = 1;  // one iteration cannot confirm anything
  try {
    run_pipeline(c, RunOptions{dir / "out4", false, 1});
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "eval");
    EXPECT_EQ(e.code(), ErrorCode::EmptyMatrix);
  }

  c.select = false;
  c.experiments[1].family_threshold = 1000;
  try {
    run_pipeline(c, RunOptions{dir / "out3", false, 1});
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "eval");
    EXPECT_EQ(e.code(), ErrorCode::NoEligibleFamilies);
  }
}
