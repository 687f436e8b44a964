#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <set>

#include "svw/dataset.hpp"

namespace svw {
namespace {

DatasetSpec tiny_spec(const std::string& preset = "main", int n = 4) {
  auto s = DatasetSpec::preset(preset);
  s.n_sequences = n;
  s.grid_n = 32;
  s.frame_size = 16;
  s.n_frames = 12;
  s.seed = 17;
  return s;
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("svw_ds_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

using Generate = TempDir;

TEST_F(Generate, SameSeedGivesByteIdenticalFiles) {
  const auto spec = tiny_spec("main", 2);
  generate(spec, dir_ / "a");
  generate(spec, dir_ / "b");
  for (const char* f : {"seq_000000.svw", "seq_000001.svw", "norm.txt", "split.txt", "spec.cfg"}) {
    EXPECT_EQ(io::read_file(dir_ / "a" / "main" / f), io::read_file(dir_ / "b" / "main" / f)) << f;
  }
}

TEST_F(Generate, ParallelMatchesSerial) {
  const auto spec = tiny_spec("main", 3);
  generate(spec, dir_ / "a", 1);
  generate(spec, dir_ / "b", 3);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(io::read_file(dir_ / "a" / "main" / sequence_filename(i)),
              io::read_file(dir_ / "b" / "main" / sequence_filename(i)));
  }
}

TEST_F(Generate, MetadataFollowsVariant) {
  auto report = generate(tiny_spec("main", 6), dir_);
  auto ds = load_dataset(report.directory);
  ASSERT_EQ(ds.records.size(), 6u);
  for (const auto& [id, rec] : ds.records) {
    EXPECT_GE(rec.meta.tank_size_m, 10.0);
    EXPECT_LE(rec.meta.tank_size_m, 20.0);
    EXPECT_EQ(rec.meta.azimuth_deg, 45.0);
    EXPECT_EQ(rec.meta.n_frames, 12u);
    EXPECT_EQ(rec.meta.frame_size, 16u);
    EXPECT_FALSE(rec.meta.normalized);
    for (float x : rec.frames) {
      ASSERT_GE(x, 0.0f);
      ASSERT_LE(x, 1.0f);
    }
  }
  auto small = load_dataset(generate(tiny_spec("small_tank", 5), dir_).directory);
  for (const auto& [id, rec] : small.records) {
    EXPECT_GE(rec.meta.tank_size_m, 5.0);
    EXPECT_LE(rec.meta.tank_size_m, 10.0);
  }
  auto rnd = load_dataset(generate(tiny_spec("random_illum", 5), dir_).directory);
  std::set<double> azimuths;
  for (const auto& [id, rec] : rnd.records) azimuths.insert(rec.meta.azimuth_deg);
  EXPECT_EQ(azimuths.size(), 5u);
}

TEST_F(Generate, NormFitOnTrainingSplit) {
  auto report = generate(tiny_spec("main", 10), dir_);
  auto ds = load_dataset(report.directory);
  auto train = ds.normalized("train", ds.norm);
  double sum = 0, ss = 0;
  std::size_t count = 0;
  for (const auto& rec : train)
    for (float x : rec.frames) {
      sum += x;
      ++count;
    }
  const double mean = sum / count;
  for (const auto& rec : train)
    for (float x : rec.frames) ss += (x - mean) * (x - mean);
  EXPECT_LE(std::abs(mean), 1e-6);
  EXPECT_NEAR(std::sqrt(ss / count), 1.0, 1e-5);  // float pixels
  EXPECT_EQ(ds.split, report.split);
}

TEST(Record, RoundTripIsBitExact) {
  SequenceRecord rec;
  rec.meta = {3, 4, 12.5, 10.0, 135.0, 0.01, InitKind::double_droplet, 0xDEADBEEFCAFEULL, true};
  Rng rng(1);
  rec.frames.resize(3 * 16);
  for (float& x : rec.frames) x = static_cast<float>(rng.uniform(-3, 3));
  rec.frames[5] = -0.0f;
  const auto bytes = encode_record(rec);
  EXPECT_EQ(bytes.size(), 4u + 3 * 4 + 4 * 8 + 4 + 8 + 1 + rec.frames.size() * 4);
  const auto back = decode_record(bytes);
  EXPECT_EQ(back.meta, rec.meta);
  ASSERT_EQ(back.frames.size(), rec.frames.size());
  EXPECT_EQ(std::memcmp(back.frames.data(), rec.frames.data(), rec.frames.size() * 4), 0);
  EXPECT_EQ(encode_record(back), bytes);
}

TEST(Record, HeaderLayoutIsLittleEndian) {
  SequenceRecord rec;
  rec.meta = {1, 1, 1.0, 2.0, 3.0, 4.0, InitKind::line, 0x0102030405060708ULL, false};
  rec.frames = {1.0f};
  const auto b = encode_record(rec);
  EXPECT_EQ(b.substr(0, 4), "SVW1");
  EXPECT_EQ(static_cast<unsigned char>(b[4]), 1u);  // version
  EXPECT_EQ(static_cast<unsigned char>(b[8]), 1u);  // n_frames
  EXPECT_EQ(static_cast<unsigned char>(b[48]), 2u);  // init_kind = line
  EXPECT_EQ(static_cast<unsigned char>(b[52]), 0x08u);  // seed low byte
  EXPECT_EQ(static_cast<unsigned char>(b[59]), 0x01u);
  EXPECT_EQ(b[60], 0);  // normalized flag
  EXPECT_EQ(static_cast<unsigned char>(b[64]), 0x3Fu);  // 1.0f = 0x3F800000
}

TEST(Record, RejectsCorruptFiles) {
  SequenceRecord rec;
  rec.meta = {2, 2, 1.0, 2.0, 3.0, 4.0, InitKind::droplet, 1, false};
  rec.frames.assign(8, 0.5f);
  auto b = encode_record(rec);
  EXPECT_THROW(decode_record(b.substr(0, b.size() - 1)), DataError);
  auto bad = b;
  bad[0] = 'X';
  EXPECT_THROW(decode_record(bad), DataError);
  bad = b;
  bad[4] = 2;
  EXPECT_THROW(decode_record(bad), DataError);
}

TEST(Split, PaperProportions) {
  const auto s = split(3000, 1);
  EXPECT_EQ(s.train.size(), 2100u);
  EXPECT_EQ(s.val.size(), 450u);
  EXPECT_EQ(s.test.size(), 450u);
  const auto t = split(10, 1);
  EXPECT_EQ(t.train.size(), 7u);
  EXPECT_EQ(t.val.size(), 1u);
  EXPECT_EQ(t.test.size(), 2u);
}

TEST(Split, DisjointCoveringAndDeterministic) {
  for (int n : {1, 7, 60, 300}) {
    const auto s = split(n, 42);
    EXPECT_EQ(s, split(n, 42));
    std::set<int> all;
    for (const auto* part : {&s.train, &s.val, &s.test})
      for (int id : *part) EXPECT_TRUE(all.insert(id).second) << "duplicate id " << id;
    EXPECT_EQ(all.size(), static_cast<std::size_t>(n));
    const double expect_train = 0.7 * n;
    EXPECT_LE(std::abs(s.train.size() - expect_train), 1.0);
    EXPECT_LE(std::abs(s.val.size() - 0.15 * n), 1.0);
  }
  EXPECT_NE(split(300, 1), split(300, 2));
}

TEST(Split, TextRoundTrip) {
  const auto s = split(23, 5);
  EXPECT_EQ(SplitIndex::from_text(s.to_text()), s);
  EXPECT_THROW(SplitIndex::from_text("1 2\n3\n"), DataError);
}

SequenceRecord ramp_record(int frames, int size) {
  SequenceRecord rec;
  rec.meta.n_frames = frames;
  rec.meta.frame_size = size;
  for (int i = 0; i < frames * size * size; ++i) rec.frames.push_back(static_cast<float>(i));
  return rec;
}

TEST(Flip, Semantics) {
  const auto rec = ramp_record(3, 5);
  EXPECT_EQ(augment_flip(rec, FlipMode::none).frames, rec.frames);
  for (auto m : {FlipMode::h, FlipMode::v, FlipMode::hv}) {
    EXPECT_EQ(augment_flip(augment_flip(rec, m), m).frames, rec.frames);
  }
  const auto h = augment_flip(rec, FlipMode::h);
  const auto v = augment_flip(rec, FlipMode::v);
  for (int f = 0; f < 3; ++f)
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 5; ++c) {
        EXPECT_EQ(h.frame(f)[r * 5 + c], rec.frame(f)[r * 5 + (4 - c)]);
        EXPECT_EQ(v.frame(f)[r * 5 + c], rec.frame(f)[(4 - r) * 5 + c]);
      }
}

TEST(Flip, CommutesWithNormalization) {
  auto rec = ramp_record(2, 4);
  for (float& x : rec.frames) x = x / 32.0f;
  const NormStats st{0.3, 0.2};
  const auto a = Dataset::normalize(augment_flip(rec, FlipMode::hv), st);
  const auto b = augment_flip(Dataset::normalize(rec, st), FlipMode::hv);
  EXPECT_EQ(a.frames, b.frames);
}

TEST(Flip, ClipCopyMatchesFlippedSlice) {
  const auto rec = ramp_record(6, 5);
  for (auto m : {FlipMode::none, FlipMode::h, FlipMode::v, FlipMode::hv}) {
    const auto full = augment_flip(rec, m);
    std::vector<double> clip(3 * 25);
    copy_clip(rec, 2, 3, m, clip.data());
    for (std::size_t i = 0; i < clip.size(); ++i) EXPECT_EQ(clip[i], full.frames[2 * 25 + i]);
  }
  std::vector<float> buf(25 * 5);
  EXPECT_THROW(copy_clip(rec, 2, 5, FlipMode::none, buf.data()), DataError);
}

TEST(SampleClips, Bounds) {
  const auto rec = ramp_record(100, 1);
  Rng rng(3);
  const auto starts = sample_subsequences(rec, 5, 20, 500, rng);
  ASSERT_EQ(starts.size(), 500u);
  int lo = 1000, hi = -1;
  for (int s : starts) {
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  EXPECT_GE(lo, 0);
  EXPECT_LE(hi, 75);
  EXPECT_EQ(hi, 75);  // endpoint reachable with 500 draws
  EXPECT_TRUE(sample_subsequences(rec, 5, 20, 0, rng).empty());
  for (int s : sample_subsequences(rec, 40, 60, 7, rng)) EXPECT_EQ(s, 0);
  EXPECT_THROW(sample_subsequences(rec, 50, 51, 1, rng), DataError);
}

TEST(Spec, ConfigRoundTrip) {
  auto cfg = KeyValueConfig::from_string("preset = small_tank\nname = st\nseed = 9 # comment\nazimuth = random\n");
  const auto s = DatasetSpec::from_config(cfg);
  EXPECT_EQ(s.name, "st");
  EXPECT_EQ(s.tank_min_m, 5.0);
  EXPECT_EQ(s.azimuth_mode, AzimuthMode::random);
  EXPECT_EQ(s.seed, 9u);
  const auto again = DatasetSpec::from_config(s.to_config());
  EXPECT_EQ(again.to_config().to_string(), s.to_config().to_string());
  EXPECT_THROW(DatasetSpec::from_config(KeyValueConfig::from_string("preset = nope\n")), UsageError);
  EXPECT_THROW(DatasetSpec::from_config(KeyValueConfig::from_string("tank_min_m = 30\n")), UsageError);
}

}  // namespace
}  // namespace svw
