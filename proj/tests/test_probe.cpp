#include <gtest/gtest.h>

#include <cstring>

#include "stubs.hpp"
#include "svw/probe.hpp"
#include "test_util.hpp"

namespace svw {
namespace {

class ProbeData : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(test::temp_dir("svw_probe"));
    ds_ = new Dataset(test::tiny_dataset(*root_, 20));
  }
  static void TearDownTestSuite() {
    fs::remove_all(*root_);
    delete ds_;
    delete root_;
  }
  static ProbeConfig quick() {
    ProbeConfig c;
    c.epochs = 3;
    c.batch = 4;
    c.windows_per_sequence = 2;
    c.width = 4;
    c.seed = 3;
    return c;
  }
  static std::unique_ptr<UNet<float>> encoder() { return as_unet(make_model<float>(test::tiny_config(Arch::unet))); }

  static inline fs::path* root_ = nullptr;
  static inline Dataset* ds_ = nullptr;
};

TEST(Dummy, MeanOfUniformTankIsHalfQuarterRange) {
  Rng rng(12);
  std::vector<SequenceRecord> seqs(20000);
  for (auto& s : seqs) s.meta.tank_size_m = rng.uniform(10.0, 20.0);
  const auto d = DummyRegressor::fit(seqs);
  EXPECT_NEAR(d.mean, 15.0, 0.05);
  EXPECT_NEAR(d.mae(seqs), 2.5, 0.03);
}

TEST(Dummy, SingleSequenceAndFrameInvariance) {
  SequenceRecord r;
  r.meta.tank_size_m = 12.25;
  EXPECT_EQ(DummyRegressor::fit({r}).mean, 12.25);
  EXPECT_EQ(DummyRegressor::fit({r}).mae({r}), 0.0);
  SequenceRecord a = r, b = r;
  a.meta.tank_size_m = 10, b.meta.tank_size_m = 20;
  b.frames.assign(16, 0.5f);
  EXPECT_EQ(DummyRegressor::fit({a, b}).mean, 15.0);
  EXPECT_EQ(DummyRegressor::fit({a, b}).mae({a, b}), 5.0);
  SequenceRecord missing;
  EXPECT_THROW(DummyRegressor::fit({missing}), DataError);
  EXPECT_THROW(DummyRegressor::fit({}), DataError);
}

TEST_F(ProbeData, OracleStubHasZeroError) {
  const auto seqs = ds_->normalized("all", ds_->norm);
  const std::size_t hw = 64;
  auto oracle = [&](const Tensor<float>& x) {
    std::vector<double> out;
    for (int i = 0; i < x.shape().n; ++i) {
      const float* w = x.data() + static_cast<std::size_t>(i) * 2 * hw;
      for (const auto& s : seqs)
        if (std::memcmp(s.frame(0).data(), w, hw * sizeof(float)) == 0) out.push_back(s.meta.tank_size_m);
    }
    return out;
  };
  EXPECT_EQ(probe_mae<float>(seqs, 2, oracle, 3), 0.0);
  auto off = [&](const Tensor<float>& x) {
    auto v = oracle(x);
    for (double& y : v) y -= 0.75;
    return v;
  };
  EXPECT_NEAR(probe_mae<float>(seqs, 2, off, 3), 0.75, 1e-12);
}

TEST_F(ProbeData, EncoderBytesUnchangedByTraining) {
  auto enc = encoder();
  const auto before = ad::encode_checkpoint(ad::checkpoint_entries(*enc));
  auto head_before = ProbeHead<float>(enc->encoder_channels().back(), 4, child_seed(3, 0xE1));
  const auto head0 = ad::encode_checkpoint(ad::checkpoint_entries(head_before));
  ProbeHistory hist;
  auto probe = train_probe(std::move(enc), *ds_, ds_->norm, quick(), &hist);
  EXPECT_EQ(ad::encode_checkpoint(ad::checkpoint_entries(probe.encoder())), before);
  EXPECT_NE(ad::encode_checkpoint(ad::checkpoint_entries(probe.head())), head0);
  for (const auto& p : probe.encoder().parameters())
    for (float g : p.grad()) EXPECT_EQ(g, 0.0f);
  ASSERT_EQ(hist.val_mae.size(), 3u);
  EXPECT_GE(hist.best_epoch, 1);
  EXPECT_EQ(eval_probe(probe, ds_->normalized("val", ds_->norm)), hist.val_mae[hist.best_epoch - 1]);
}

TEST_F(ProbeData, SameSeedGivesIdenticalHead) {
  auto a = train_probe(encoder(), *ds_, ds_->norm, quick());
  auto b = train_probe(encoder(), *ds_, ds_->norm, quick());
  EXPECT_EQ(ad::encode_checkpoint(ad::checkpoint_entries(a.head())), ad::encode_checkpoint(ad::checkpoint_entries(b.head())));
  auto c = quick();
  c.seed = 4;
  auto d = train_probe(encoder(), *ds_, ds_->norm, c);
  EXPECT_NE(ad::encode_checkpoint(ad::checkpoint_entries(a.head())), ad::encode_checkpoint(ad::checkpoint_entries(d.head())));
}

TEST_F(ProbeData, HeadFitsSizesEncodedInTheFrames) {
  // Frames whose brightness encodes the tank size: even a random encoder
  // passes that through, so the head must drive the error well below the
  // spread of the labels.
  Dataset coded = *ds_;
  for (auto& [id, r] : coded.records) std::fill(r.frames.begin(), r.frames.end(), static_cast<float>(0.3 + 0.02 * (r.meta.tank_size_m - 15)));
  auto cfg = quick();
  cfg.epochs = 60;
  cfg.width = 16;
  cfg.lr = 3e-3;
  const NormStats norm{0.3, 0.1};
  auto probe = train_probe(encoder(), coded, norm, cfg);
  const auto val = coded.normalized("val", norm);
  EXPECT_LT(eval_probe(probe, val), 0.25 * DummyRegressor::fit(val).mae(val));
}

TEST_F(ProbeData, RandomEncoderMatchesShapeButNotWeights) {
  const auto cfg = test::tiny_config(Arch::unet);
  auto a = random_encoder<float>(cfg, 1), b = random_encoder<float>(cfg, 1), c = random_encoder<float>(cfg, 2);
  EXPECT_EQ(ad::encode_checkpoint(ad::checkpoint_entries(*a)), ad::encode_checkpoint(ad::checkpoint_entries(*b)));
  EXPECT_NE(ad::encode_checkpoint(ad::checkpoint_entries(*a)), ad::encode_checkpoint(ad::checkpoint_entries(*c)));
  EXPECT_EQ(a->parameter_count(), make_model<float>(cfg)->parameter_count());
  EXPECT_THROW(random_encoder<float>(test::tiny_config(Arch::convlstm), 1), UsageError);
  EXPECT_THROW(as_unet(make_model<float>(test::tiny_config(Arch::convlstm))), UsageError);
}

TEST_F(ProbeData, MissingMetadataAndBadInputsAreRejected) {
  Dataset broken = *ds_;
  for (auto& [id, r] : broken.records) r.meta.tank_size_m = 0.0;
  EXPECT_THROW(train_probe(encoder(), broken, ds_->norm, quick()), DataError);
  EXPECT_THROW(eval_probe(*std::make_unique<ProbeModel<float>>(encoder(), quick(), 15.0, 1.0), broken.normalized("all", ds_->norm)),
               DataError);
  auto bad = quick();
  bad.epochs = 0;
  EXPECT_THROW(train_probe(encoder(), *ds_, ds_->norm, bad), UsageError);
  EXPECT_THROW(parse_encoder_source("trained"), UsageError);
  EXPECT_EQ(parse_encoder_source("random"), EncoderSource::random);
}

TEST(ProbeReportCsv, Layout) {
  ProbeReport r;
  r.rows = {{"pretrained", "test", 0.5}, {"dummy", "small_tank", 2.25}};
  EXPECT_EQ(r.to_csv(), "encoder,dataset,mae_m\npretrained,test,0.5\ndummy,small_tank,2.25\n");
  EXPECT_EQ(r.row("dummy", "small_tank").mae_m, 2.25);
  EXPECT_THROW(r.row("dummy", "test"), UsageError);
}

}  // namespace
}  // namespace svw
