#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "stubs.hpp"
#include "svw/training.hpp"
#include "test_util.hpp"

namespace svw {
namespace {

class TrainingData : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(test::temp_dir("svw_train"));
    ds_ = new Dataset(test::tiny_dataset(*root_));
    ds16_ = new Dataset(test::tiny_dataset(*root_ / "f16", 10, "main", 5, 16));
  }
  // The tiny LSTM configuration works on 16x16 frames, the others on 8x8.
  static const Dataset& data_for(Arch a) { return a == Arch::lstm_baseline ? *ds16_ : *ds_; }
  static void TearDownTestSuite() {
    fs::remove_all(*root_);
    delete ds_;
    delete ds16_;
    delete root_;
  }
  static TrainConfig quick(Arch a) {
    TrainConfig c = TrainConfig::defaults(a);
    const auto m = test::tiny_config(a);
    c.n_in = m.n_in;
    c.n_out = m.n_out;
    c.clips_per_sequence = 2;
    c.batch = 4;
    c.lr = 1e-3;
    c.max_epochs = 2;
    c.val_horizon = 10;
    c.seed = 11;
    return c;
  }
  static inline fs::path* root_ = nullptr;
  static inline Dataset* ds_ = nullptr;
  static inline Dataset* ds16_ = nullptr;
};

TEST(TrainConfig, DefaultsPerArchitecture) {
  struct Row {
    Arch a;
    int n, m, k, b;
    double lr;
    int p;
  };
  for (const Row& r : {Row{Arch::lstm_baseline, 5, 20, 10, 16, 1e-4, 5}, Row{Arch::convlstm, 5, 10, 5, 8, 1e-3, 7},
                       Row{Arch::predrnnpp, 5, 20, 5, 4, 1e-4, 3}, Row{Arch::unet, 5, 20, 10, 16, 1e-4, 7}}) {
    const auto c = TrainConfig::defaults(r.a);
    EXPECT_EQ(c.n_in, r.n);
    EXPECT_EQ(c.n_out, r.m);
    EXPECT_EQ(c.clips_per_sequence, r.k);
    EXPECT_EQ(c.batch, r.b);
    EXPECT_EQ(c.lr, r.lr);
    EXPECT_EQ(c.patience, r.p);
    EXPECT_EQ(c.self_conditioning, r.a == Arch::unet);
    EXPECT_EQ(c.n_out, ModelConfig::desk(r.a).n_out);
  }
}

TEST(TrainConfig, ConfigRoundTripAndValidation) {
  auto c = TrainConfig::defaults(Arch::convlstm);
  c.seed = 18446744073709551615ULL;
  c.budget_seconds = 12.5;
  c.flips = false;
  EXPECT_EQ(TrainConfig::from_config(c.to_config(), TrainConfig{}), c);
  auto inf = TrainConfig::from_config(TrainConfig{}.to_config(), TrainConfig::defaults(Arch::unet));
  EXPECT_TRUE(std::isinf(inf.budget_seconds));
  EXPECT_THROW(TrainConfig::from_config(KeyValueConfig::from_string("batch = 0"), TrainConfig{}), UsageError);
  EXPECT_THROW(TrainConfig::from_config(KeyValueConfig::from_string("lr = -1"), TrainConfig{}), UsageError);
  EXPECT_THROW(TrainConfig::from_config(KeyValueConfig::from_string("seed = x"), TrainConfig{}), DataError);
}

TEST(History, CsvLayout) {
  TrainHistory h;
  h.epochs = {{1, 0.5, 0.25, 1e-4}, {2, 0.125, 0.0625, 1e-6}};
  EXPECT_EQ(h.to_csv(), "epoch,train_mse,val_rmse50,lr\n1,0.5,0.25,0.0001\n2,0.125,0.0625,1e-06\n");
}

TEST(Select, ArgminWithEarliestEpochTieBreak) {
  std::vector<Candidate> c{{"a", 4, 0.3}};
  EXPECT_EQ(select(c), 0u);
  c.push_back({"b", 2, 0.5});
  EXPECT_EQ(select(c), 0u);
  c.push_back({"c", 9, 0.2});
  c.push_back({"d", 3, 0.2});
  EXPECT_EQ(c[select(c)].label, "d");
  c.push_back({"e", 1, std::nan("")});
  EXPECT_EQ(c[select(c)].label, "d");
  auto perm = c;
  std::sort(perm.begin(), perm.end(), [](const auto& x, const auto& y) { return x.label > y.label; });
  do {
    EXPECT_EQ(perm[select(perm)].label, "d");
  } while (std::next_permutation(perm.begin(), perm.end(), [](const auto& x, const auto& y) { return x.label < y.label; }));
  EXPECT_THROW(select({}), UsageError);
}

TEST_F(TrainingData, OracleValidatesToZero) {
  auto cfg = test::tiny_config(Arch::unet);
  cfg.n_out = 10;
  const auto val = ds_->normalized("val", ds_->norm);
  test::LookupModel oracle(cfg, val, 10);
  oracle.eval();
  EXPECT_EQ(validate_rollout(oracle, val, 10), 0.0);
  test::LookupModel offset(cfg, val, 10, 0, 0.25f);
  offset.eval();
  EXPECT_NEAR(validate_rollout(offset, val, 10), 0.25, 1e-6);
  // Strictly larger error at every step gives a strictly larger mean.
  test::LookupModel worse(cfg, val, 10, 0, 0.5f);
  worse.eval();
  EXPECT_GT(validate_rollout(worse, val, 10), validate_rollout(offset, val, 10));
}

TEST_F(TrainingData, HoldModelMatchesHeldFrameCurve) {
  auto cfg = test::tiny_config(Arch::unet);
  const auto val = ds_->normalized("all", ds_->norm);
  test::HoldModel hold(cfg);
  hold.eval();
  const int n = cfg.n_in;
  const auto curve = mean_curve(predictor_curves(val, n, 30, [&](std::size_t s, int) { return val[s].frame(n - 1); }));
  double mean = 0;
  for (double v : curve) mean += v;
  EXPECT_DOUBLE_EQ(validate_rollout(hold, val, 30), mean / 30);
}

TEST_F(TrainingData, ValidationGuards) {
  auto cfg = test::tiny_config(Arch::unet);
  test::HoldModel hold(cfg);
  const auto val = ds_->normalized("val", ds_->norm);
  EXPECT_THROW(validate_rollout(hold, val, 10), UsageError);  // training mode
  hold.eval();
  EXPECT_THROW(validate_rollout(hold, val, 39), DataError);
  std::vector<SequenceRecord> raw{ds_->records.begin()->second};
  EXPECT_THROW(validate_rollout(hold, raw, 10), DataError);
}

TEST_F(TrainingData, SameSeedGivesIdenticalHistoryAndWeights) {
  for (Arch a : {Arch::unet, Arch::lstm_baseline}) {
    const auto mc = test::tiny_config(a);
    const auto tc = quick(a);
    auto m1 = make_model<float>(mc);
    auto m2 = make_model<float>(mc);
    const auto h1 = train(*m1, data_for(a), tc);
    const auto h2 = train(*m2, data_for(a), tc);
    EXPECT_EQ(h1, h2) << to_string(a);
    EXPECT_EQ(ad::encode_checkpoint(ad::checkpoint_entries(*m1)), ad::encode_checkpoint(ad::checkpoint_entries(*m2)));
    ASSERT_EQ(h1.epochs.size(), 2u);
    auto tc3 = tc;
    tc3.seed = 12;
    auto m3 = make_model<float>(mc);
    EXPECT_NE(train(*m3, data_for(a), tc3).epochs, h1.epochs);
  }
}

TEST_F(TrainingData, SingleSequenceOverfitLossDecreases) {
  Dataset one = *ds_;
  one.split.train = {ds_->split.train.front()};
  auto mc = test::tiny_config(Arch::unet);
  mc.n_out = 1;
  auto tc = quick(Arch::unet);
  tc.n_out = 1;
  tc.clips_per_sequence = 1;
  tc.batch = 1;
  tc.max_epochs = 60;
  tc.flips = false;
  tc.self_conditioning = false;
  auto model = make_model<float>(mc);
  const auto h = train(*model, one, tc);
  ASSERT_EQ(h.epochs.size(), 60u);
  std::vector<double> smooth;
  for (std::size_t w = 0; w + 10 <= h.epochs.size(); w += 10) {
    double s = 0;
    for (std::size_t i = w; i < w + 10; ++i) s += h.epochs[i].train_mse;
    smooth.push_back(s / 10);
  }
  for (std::size_t i = 1; i < smooth.size(); ++i) EXPECT_LT(smooth[i], smooth[i - 1]) << "window " << i;
}

TEST_F(TrainingData, StalledValidationDropsLearningRateOncePerPatience) {
  auto mc = test::tiny_config(Arch::unet);
  test::HoldModel model(mc);
  auto tc = quick(Arch::unet);
  tc.self_conditioning = false;
  tc.lr = 1e-30;  // far below the float spacing of the weight: nothing moves
  tc.patience = 2;
  tc.max_epochs = 8;
  const auto h = train(model, *ds_, tc);
  ASSERT_EQ(h.epochs.size(), 8u);
  for (const auto& e : h.epochs) EXPECT_EQ(e.val_rmse50, h.epochs[0].val_rmse50);
  const double lrs[8] = {1e-30, 1e-30, 1e-30, 1e-30, 1e-32, 1e-32, 1e-32, 1e-34};
  for (int i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(h.epochs[i].lr, lrs[i]) << "epoch " << i + 1;
  EXPECT_EQ(h.best_epoch, 1);
}

TEST_F(TrainingData, NonFiniteLossReportsIteration) {
  test::HoldModel model(test::tiny_config(Arch::unet));
  model.gain().weight.values()[0] = std::nanf("");
  auto tc = quick(Arch::unet);
  try {
    train(model, *ds_, tc);
    FAIL() << "expected LossDivergedError";
  } catch (const LossDivergedError& e) {
    EXPECT_EQ(e.iteration(), 1);
    EXPECT_NE(std::string(e.what()).find("iteration 1"), std::string::npos);
    EXPECT_EQ(e.category(), ErrorCategory::numeric);
  }
}

TEST_F(TrainingData, EmptySplitsAndMismatchedConfigAreRejected) {
  auto model = make_model<float>(test::tiny_config(Arch::unet));
  Dataset no_val = *ds_;
  no_val.split.val.clear();
  EXPECT_THROW(train(*model, no_val, quick(Arch::unet)), DataError);
  Dataset no_train = *ds_;
  no_train.split.train.clear();
  EXPECT_THROW(train(*model, no_train, quick(Arch::unet)), DataError);
  auto tc = quick(Arch::unet);
  tc.n_out = 3;
  EXPECT_THROW(train(*model, *ds_, tc), UsageError);
}

TEST_F(TrainingData, BestCheckpointReloadsToRecordedMetric) {
  const auto dir = *root_ / "run_best";
  auto mc = test::tiny_config(Arch::unet);
  auto model = make_model<float>(mc);
  auto tc = quick(Arch::unet);
  tc.max_epochs = 3;
  const auto h = train(*model, *ds_, tc, {dir, nullptr});
  ASSERT_GE(h.best_epoch, 1);
  EXPECT_EQ(h.best_val, h.epochs[h.best_epoch - 1].val_rmse50);
  const auto val = ds_->normalized("val", ds_->norm);
  auto loaded = load_model<float>(dir);
  EXPECT_EQ(loaded.norm, ds_->norm);
  EXPECT_NEAR(validate_rollout(*loaded.model, val, tc.val_horizon), h.best_val, 1e-6);
  // The returned model holds the best epoch's weights.
  EXPECT_NEAR(validate_rollout(*model, val, tc.val_horizon), h.best_val, 1e-6);
  EXPECT_EQ(io::read_file(dir / "history.csv"), h.to_csv());
}

TEST_F(TrainingData, BudgetStopKeepsWrittenCheckpoint) {
  const auto dir = *root_ / "run_budget";
  auto model = make_model<float>(test::tiny_config(Arch::unet));
  auto tc = quick(Arch::unet);
  tc.max_epochs = 50;
  tc.budget_seconds = 1e-9;
  const auto h = train(*model, *ds_, tc, {dir, nullptr});
  EXPECT_TRUE(h.budget_stop);
  EXPECT_EQ(h.epochs.size(), 1u);
  EXPECT_EQ(h.iterations, 1);
  EXPECT_TRUE(fs::exists(dir / "params.svwp"));
  auto loaded = load_model<float>(dir);
  EXPECT_NEAR(validate_rollout(*loaded.model, ds_->normalized("val", ds_->norm), tc.val_horizon), h.best_val, 1e-6);
}

TEST_F(TrainingData, SelfConditioningRollsOutAfterWarmup) {
  // Sequences hold 40 frames: enough for N + M = 22 teacher-forced clips but
  // not for the N + 2M = 42 frames a self-conditioned clip needs.
  auto mc = test::tiny_config(Arch::unet);
  mc.n_out = 20;
  auto tc = quick(Arch::unet);
  tc.n_out = 20;
  tc.self_conditioning = true;
  tc.warmup_epochs = 1;
  auto model = make_model<float>(mc);
  try {
    train(*model, *ds_, tc);
    FAIL() << "expected the second epoch to need longer clips";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("42"), std::string::npos) << e.what();
  }
  tc.self_conditioning = false;
  EXPECT_NO_THROW(train(*model, *ds_, tc));
  // With short outputs both phases fit and training proceeds.
  mc.n_out = 2;
  tc.n_out = 2;
  tc.self_conditioning = true;
  auto small = make_model<float>(mc);
  EXPECT_EQ(train(*small, *ds_, tc).epochs.size(), 2u);
}

TEST_F(TrainingData, EveryArchitectureTrains) {
  for (Arch a : all_archs()) {
    auto model = make_model<float>(test::tiny_config(a));
    const auto h = train(*model, data_for(a), quick(a));
    ASSERT_EQ(h.epochs.size(), 2u) << to_string(a);
    for (const auto& e : h.epochs) {
      EXPECT_TRUE(std::isfinite(e.train_mse));
      EXPECT_TRUE(std::isfinite(e.val_rmse50));
    }
  }
}

TEST_F(TrainingData, GridSearchSelectsLowestValidation) {
  GridSpace g;
  g.n_in = {2};
  g.n_out = {1, 2};
  g.clips_per_sequence = {1};
  g.batch = {4};
  g.lr = {1e-3};
  g.patience = {5};
  auto base = quick(Arch::unet);
  base.max_epochs = 1;
  base.self_conditioning = false;
  const auto res = grid_search<float>(test::tiny_config(Arch::unet), *ds_, g, base, {*root_ / "grid", nullptr});
  ASSERT_EQ(res.candidates.size(), 2u);
  EXPECT_EQ(res.configs[1].n_out, 2);
  for (const auto& c : res.candidates) EXPECT_LE(res.candidates[res.best].val_rmse, c.val_rmse);
  EXPECT_TRUE(fs::exists(*root_ / "grid" / "run_0001" / "params.svwp"));
  EXPECT_EQ(GridSpace{}.expand(TrainConfig{}).size(), 3u * 4 * 4 * 2 * 4 * 2);
}

}  // namespace
}  // namespace svw
