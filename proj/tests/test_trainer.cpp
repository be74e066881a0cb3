#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "napl/napl.hpp"

using namespace napl;
namespace fs = std::filesystem;

namespace {

fs::path scratch_root() { return fs::temp_directory_path() / ("napl_trainer_test_" + std::to_string(::getpid())); }

struct RemoveScratch : ::testing::Environment {
  void TearDown() override { fs::remove_all(scratch_root()); }
};

const auto* const kCleanup = ::testing::AddGlobalTestEnvironment(new RemoveScratch);

fs::path scratch(const std::string& name) {
  const auto dir = scratch_root() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig tiny(const std::string& name) {
  RunConfig cfg;
  cfg.train_scenes = 4;
  cfg.val_scenes = 2;
  cfg.batch_size = 2;
  cfg.epochs = 1;
  cfg.pretrain_epochs = 1;
  cfg.stage_widths = {8, 12, 16, 16};
  cfg.feature_dim = 8;
  cfg.num_queries = 12;
  cfg.dropout_count = 4;
  cfg.decoder_layers = 1;
  cfg.decoder_heads = 2;
  cfg.query_dim = 16;
  cfg.out_dir = scratch(name).string();
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Trained : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    auto cfg = tiny("pwc");
    pwc_ = train_pwc(cfg, open_dataset(cfg)).checkpoint;
  }
  static fs::path pwc_;
};

fs::path Trained::pwc_;

int run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " \"" NAPL_CLI_PATH "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, JsonOverridesDefaults) {
  const auto cfg = config_from_json(Json{{"seed", 7}, {"num_queries", 20}, {"stage_widths", {4, 8}}});
  EXPECT_EQ(cfg.seed, 7u);
  EXPECT_EQ(cfg.num_queries, 20u);
  EXPECT_EQ(cfg.stage_widths, (std::vector<std::size_t>{4, 8}));
  EXPECT_EQ(cfg.dropout_count, RunConfig{}.dropout_count);
  EXPECT_EQ(cfg.dataset, DatasetKind::Synthetic);
}

TEST(Config, RoundTripsThroughJson) {
  auto cfg = tiny("round_trip");
  cfg.lr = 3e-4;
  cfg.use_prototype_dropout = false;
  const auto j = config_to_json(cfg);
  EXPECT_EQ(config_to_json(config_from_json(j)), j);
}

TEST(Config, RejectsUnknownKeysAndWrongTypes) {
  EXPECT_THROW(config_from_json(Json{{"num_querys", 3}}), ConfigError);
  EXPECT_THROW(config_from_json(Json{{"seed", "one"}}), ConfigError);
  EXPECT_THROW(config_from_json(Json::array()), ConfigError);
  EXPECT_THROW(config_from_json(Json{{"dataset", "nuscenes"}}), ConfigError);
  EXPECT_THROW(config_from_json(Json{{"ablation", "D"}}), ConfigError);
}

TEST(Config, AblationPresetSetsSwitchesAndExplicitSwitchesWin) {
  const auto b = config_from_json(Json{{"ablation", "B"}});
  EXPECT_TRUE(b.use_transformer);
  EXPECT_FALSE(b.use_pretrained_backbone);
  EXPECT_FALSE(b.use_prototype_dropout);
  EXPECT_EQ(b.ablation(), Ablation::B);
  const auto c = config_from_json(Json{{"ablation", "full"}, {"use_prototype_dropout", false}});
  EXPECT_EQ(c.ablation(), Ablation::C);
  for (auto a : {Ablation::A, Ablation::B, Ablation::C, Ablation::Full}) {
    RunConfig cfg;
    cfg.apply_ablation(a);
    EXPECT_EQ(cfg.ablation(), a);
    EXPECT_EQ(parse_ablation(to_string(a)), a);
  }
}

TEST(Config, KittiProfileUsesFullScaleSchedule) {
  const auto cfg = config_from_json(Json{{"dataset", "kitti"}, {"data_root", "/data"}});
  EXPECT_EQ(cfg.dataset, DatasetKind::Kitti);
  EXPECT_EQ(cfg.batch_size, 16u);
  EXPECT_EQ(cfg.epochs, 20u);
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, ValidationNamesTheOffendingField) {
  auto expect_message = [](RunConfig cfg, const std::string& fragment) {
    try {
      cfg.validate();
      ADD_FAILURE() << "expected a ConfigError mentioning " << fragment;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  };
  RunConfig cfg;
  cfg.dropout_count = cfg.num_queries;
  expect_message(cfg, "dropout_count");
  cfg = RunConfig{};
  cfg.lr = 0;
  expect_message(cfg, "learning rates");
  cfg = RunConfig{};
  cfg.use_transformer = false;
  expect_message(cfg, "require use_transformer");
  cfg = RunConfig{};
  cfg.val_scenes = 0;
  expect_message(cfg, "validation scene");
  cfg = RunConfig{};
  cfg.dataset = DatasetKind::Kitti;
  expect_message(cfg, "data_root");
  cfg = RunConfig{};
  cfg.query_dim = 10;
  cfg.decoder_heads = 4;
  expect_message(cfg, "divisible");
  EXPECT_NO_THROW(RunConfig{}.validate());
}

TEST(Schedule, StepPlanCoversEveryEpochOrStopsAtMaxSteps) {
  RunConfig cfg;
  cfg.batch_size = 4;
  auto p = detail::plan_steps(cfg, 10, 3);
  EXPECT_EQ(p.steps_per_epoch, 3u);
  EXPECT_EQ(p.total_steps, 9u);
  cfg.max_steps = 7;
  p = detail::plan_steps(cfg, 10, 3);
  EXPECT_EQ(p.total_steps, 7u);
  EXPECT_EQ(p.epochs, 3u);
  cfg.max_steps = 0;
  p = detail::plan_steps(cfg, 1, 2);
  EXPECT_EQ(p.batch, 1u);
  EXPECT_EQ(p.total_steps, 2u);
  EXPECT_THROW(detail::plan_steps(cfg, 0, 2), ContractError);
}

TEST(Schedule, EpochOrderIsASeededPermutation) {
  const auto a = detail::epoch_order(17, 3, 0);
  EXPECT_EQ(a, detail::epoch_order(17, 3, 0));
  EXPECT_NE(a, detail::epoch_order(17, 3, 1));
  EXPECT_NE(a, detail::epoch_order(17, 4, 0));
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 17u);
}

TEST_F(Trained, PwcRunWritesCheckpointAndLog) {
  ASSERT_TRUE(fs::exists(pwc_));
  ASSERT_TRUE(fs::exists(meta_path(pwc_)));
  const auto meta = load_meta(pwc_);
  EXPECT_EQ(meta.kind, ModelKind::Pwc);
  EXPECT_EQ(meta.num_classes, 6u);
  EXPECT_TRUE(fs::exists(pwc_.parent_path() / "pwc_log.jsonl"));
}

TEST_F(Trained, AblationBTrainsFromScratchWithoutDropout) {
  auto cfg = tiny("ablation_b");
  cfg.apply_ablation(Ablation::B);
  const auto s = train_napl(cfg, open_dataset(cfg), std::nullopt);
  EXPECT_EQ(s.pretrained_tensors, 0u);
  EXPECT_EQ(s.backbone_base_lr, cfg.lr);
  EXPECT_EQ(s.head_base_lr, cfg.lr);
  EXPECT_EQ(s.dropout_calls, 0u);
  EXPECT_EQ(s.steps, 2u);
}

TEST_F(Trained, AblationCLoadsTheWholeEncoderWithoutDropout) {
  auto cfg = tiny("ablation_c");
  cfg.apply_ablation(Ablation::C);
  const auto s = train_napl(cfg, open_dataset(cfg), pwc_);
  Rng rng(0);
  EXPECT_EQ(s.pretrained_tensors, EncoderParams<float>::init(cfg.encoder_config(), rng).params().size());
  EXPECT_EQ(s.backbone_base_lr, cfg.backbone_lr);
  EXPECT_EQ(s.head_base_lr, cfg.lr);
  EXPECT_EQ(s.dropout_calls, 0u);
}

TEST_F(Trained, FullModelDropsPrototypesOncePerSample) {
  auto cfg = tiny("ablation_full");
  cfg.apply_ablation(Ablation::Full);
  const auto s = train_napl(cfg, open_dataset(cfg), pwc_);
  EXPECT_GT(s.pretrained_tensors, 0u);
  EXPECT_EQ(s.dropout_calls, s.steps * cfg.batch_size);
}

TEST_F(Trained, NaplTrainingRejectsInvalidVariants) {
  auto cfg = tiny("invalid");
  cfg.apply_ablation(Ablation::A);
  EXPECT_THROW(train_napl(cfg, open_dataset(cfg), pwc_), ConfigError);
  cfg.apply_ablation(Ablation::C);
  EXPECT_THROW(train_napl(cfg, open_dataset(cfg), std::nullopt), ConfigError);
  EXPECT_THROW(train_napl(cfg, open_dataset(cfg), fs::path(cfg.out_dir) / "missing.ckpt"), ConfigError);
}

TEST_F(Trained, NaplCheckpointCannotInitializeTheBackbone) {
  auto cfg = tiny("napl_init");
  cfg.apply_ablation(Ablation::B);
  const auto napl_ckpt = train_napl(cfg, open_dataset(cfg), std::nullopt).checkpoint;
  cfg.apply_ablation(Ablation::C);
  EXPECT_THROW(train_napl(cfg, open_dataset(cfg), napl_ckpt), ConfigError);
  EXPECT_THROW(export_stats(pwc_, cfg, open_dataset(cfg)), ConfigError);
  EXPECT_NO_THROW(export_stats(napl_ckpt, cfg, open_dataset(cfg)));
  EXPECT_TRUE(fs::exists(fs::path(cfg.out_dir) / "prototype_stats.csv"));
}

TEST_F(Trained, SaveLoadEvaluateIsBitIdentical) {
  auto cfg = tiny("reload");
  cfg.apply_ablation(Ablation::Full);
  const auto ds = open_dataset(cfg);
  const auto ckpt = train_napl(cfg, ds, pwc_).checkpoint;
  const auto first = evaluate(ckpt, cfg, ds, "val");
  const auto first_csv = slurp(fs::path(cfg.out_dir) / "metrics_val.csv");

  const auto copy = fs::path(cfg.out_dir) / "copy.ckpt";
  save_model(copy, load_model(ckpt, cfg, ds.num_classes()), load_meta(ckpt));
  EXPECT_EQ(slurp(copy), slurp(ckpt));
  const auto second = evaluate(copy, cfg, ds, "val");
  EXPECT_EQ(first.dump(), second.dump());
  EXPECT_EQ(slurp(fs::path(cfg.out_dir) / "metrics_val.csv"), first_csv);
  EXPECT_EQ(first["model"], "napl");
  EXPECT_EQ(first["per_class"].size(), 6u);
}

TEST_F(Trained, SameSeedSameRunDifferentSeedDifferentRun) {
  auto a = tiny("det_a"), b = tiny("det_b"), c = tiny("det_c");
  c.seed = 2;
  const auto sa = train_napl(a, open_dataset(a), pwc_);
  const auto sb = train_napl(b, open_dataset(b), pwc_);
  const auto sc = train_napl(c, open_dataset(c), pwc_);
  EXPECT_EQ(sa.step_loss, sb.step_loss);
  EXPECT_EQ(sa.val_miou, sb.val_miou);
  EXPECT_EQ(slurp(fs::path(a.out_dir) / "napl_log.jsonl"), slurp(fs::path(b.out_dir) / "napl_log.jsonl"));
  EXPECT_EQ(slurp(sa.checkpoint), slurp(sb.checkpoint));
  EXPECT_NE(sa.step_loss, sc.step_loss);
}

TEST(Trainer, EmptySplitIsAnError) {
  auto cfg = tiny("empty");
  const auto ds = Dataset::synthetic(SyntheticSceneConfig::default_urban(), {1, 2}, {});
  EXPECT_THROW(train_pwc(cfg, ds), ConfigError);
  const auto no_train = Dataset::synthetic(SyntheticSceneConfig::default_urban(), {}, {1});
  EXPECT_THROW(train_pwc(cfg, no_train), ConfigError);
}

TEST(Trainer, OverfitModeUsesOneSceneAndEvaluatesOnce) {
  auto cfg = tiny("overfit");
  cfg.overfit = true;
  cfg.max_steps = 3;
  const auto s = train_pwc(cfg, open_dataset(cfg));
  EXPECT_EQ(s.steps, 3u);
  EXPECT_EQ(s.val_miou.size(), 1u);
  EXPECT_EQ(s.step_loss.size(), 3u);
}

TEST(Trainer, MissingCheckpointIsAConfigError) {
  auto cfg = tiny("missing");
  EXPECT_THROW(evaluate(fs::path(cfg.out_dir) / "nothing.ckpt", cfg, open_dataset(cfg), "val"), ConfigError);
  EXPECT_THROW(open_dataset(cfg).split("test"), ConfigError);
}

TEST(Cli, RepeatedRunsAndThreadCountsGiveIdenticalOutputs) {
  const auto root = scratch("cli");
  auto cfg = tiny("cli_cfg");
  cfg.max_steps = 2;
  const auto config = root / "config.json";
  write_text(config, config_to_json(cfg).dump(2));
  std::vector<fs::path> dirs;
  for (const std::string threads : {"1", "1", "3"}) {
    const auto out = root / ("run" + std::to_string(dirs.size()));
    ASSERT_EQ(run_cli("train-pwc --config " + config.string() + " --out-dir " + out.string(), "NAPL_THREADS=" + threads), 0);
    ASSERT_EQ(run_cli("eval --config " + config.string() + " --out-dir " + out.string() + " --checkpoint " +
                          (out / "pwc_best.ckpt").string(),
                      "NAPL_THREADS=" + threads),
              0);
    dirs.push_back(out);
  }
  for (const auto* name : {"pwc_log.jsonl", "metrics_val.json", "metrics_val.csv", "pwc_best.ckpt"}) {
    const auto reference = slurp(dirs[0] / name);
    EXPECT_FALSE(reference.empty()) << name;
    EXPECT_EQ(slurp(dirs[1] / name), reference) << name;
    EXPECT_EQ(slurp(dirs[2] / name), reference) << name;
  }
}

TEST(Cli, ReportsErrorsWithNonZeroExit) {
  const auto root = scratch("cli_errors");
  write_text(root / "bad.json", R"({"num_querys": 3})");
  EXPECT_EQ(run_cli("train-pwc --config " + (root / "bad.json").string()), 2);
  EXPECT_EQ(run_cli("eval --checkpoint " + (root / "none.ckpt").string() + " --out-dir " + root.string()), 2);
  EXPECT_NE(run_cli("train-pwc --ablation Z"), 0);
  EXPECT_NE(run_cli(""), 0);
}
