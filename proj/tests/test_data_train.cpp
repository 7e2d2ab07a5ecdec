#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mst/checkpoint.hpp"
#include "mst/dataset.hpp"
#include "mst/training.hpp"

using namespace mst;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mst_test_" + name + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

TrainConfig tiny_run() {
  TrainConfig c = TrainConfig::desk();
  c.epochs = 1;
  c.samples_per_epoch = 32;
  c.model.init_seed = 3;
  return c;
}

// Pixel (x, y) has a colour encoding (x, y), so a transformed image tells
// which source pixel every output pixel came from.
Sample coordinate_sample(std::size_t side) {
  Sample s;
  s.id = "coords";
  s.image = Image(side, side);
  s.mask = Mask(side, side);
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      s.image.at(x, y, 0) = float(x) / float(side);
      s.image.at(x, y, 1) = float(y) / float(side);
      s.image.at(x, y, 2) = 1.0f;
      s.mask.at(x, y) = (x * 7 + y * 3) % 5 < 2;
    }
  return s;
}

}  // namespace

TEST(Synthetic, SameSeedIsBitIdentical) {
  const auto a = gen_synthetic(7, 12, 112), b = gen_synthetic(7, 12, 112);
  ASSERT_EQ(a.size(), 12u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, b[i].id);
    EXPECT_EQ(a[i].image.data, b[i].image.data);
    EXPECT_EQ(a[i].mask, b[i].mask);
  }
  const auto c = gen_synthetic(8, 12, 112);
  EXPECT_NE(a[0].image.data, c[0].image.data);
}

TEST(Synthetic, MasksAreNonEmptyAndRatiosSpanTheRange) {
  const auto s = gen_synthetic(1, 100, 112);
  ASSERT_EQ(s.size(), 100u);
  double lo = 1, hi = 0;
  for (const auto& x : s) {
    EXPECT_GT(x.mask.area(), 0u) << x.id;
    EXPECT_DOUBLE_EQ(x.scale_ratio, double(x.mask.area()) / (112.0 * 112.0));
    for (float v : x.image.data) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
    lo = std::min(lo, x.scale_ratio);
    hi = std::max(hi, x.scale_ratio);
  }
  EXPECT_LT(lo, 0.1);
  EXPECT_GT(hi, 0.5);
}

TEST(Synthetic, RequestedRatioIsHonored) {
  Rng rng(2);
  int ok = 0;
  for (int i = 0; i < 200; ++i) ok += std::abs(generate_sample(rng, 112, 0.25).scale_ratio - 0.25) <= 0.05;
  EXPECT_GE(ok, 180);
}

TEST(Synthetic, AllShapeKindsOccur) {
  std::set<ShapeKind> kinds;
  for (const auto& s : gen_synthetic(3, 60, 112)) kinds.insert(s.kind);
  EXPECT_EQ(kinds.size(), 3u);
}

TEST(Augment, IdentityLeavesSampleUnchanged) {
  const auto s = gen_synthetic(4, 1, 112)[0];
  const auto a = augment(s, AugmentParams::identity());
  EXPECT_EQ(a.image.data, s.image.data);
  EXPECT_EQ(a.mask, s.mask);
}

TEST(Augment, FlipTwiceIsIdentity) {
  const auto s = gen_synthetic(5, 1, 112)[0];
  AugmentParams flip;
  flip.flip = true;
  const auto once = augment(s, flip);
  EXPECT_NE(once.mask, s.mask);
  const auto twice = augment(once, flip);
  EXPECT_EQ(twice.image.data, s.image.data);
  EXPECT_EQ(twice.mask, s.mask);
}

TEST(Augment, ImageAndMaskStayAligned) {
  const std::size_t side = 64;
  const auto src = coordinate_sample(side);
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = draw_augment(rng, side);
    EXPECT_GE(p.scale, 0.75);
    EXPECT_LE(p.scale, 1.4);
    const auto out = augment(src, p);
    ASSERT_EQ(out.image.width, side);
    ASSERT_EQ(out.mask.width, side);
    // Rebuild the mask from the source coordinates carried by the image.
    Mask rebuilt(side, side);
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) {
        const float fx = out.image.at(x, y, 0) * float(side), fy = out.image.at(x, y, 1) * float(side);
        // Padding holds the mean colour, which decodes to half-integer coordinates.
        if (std::abs(fx - std::round(fx)) > 1e-3f || std::abs(fy - std::round(fy)) > 1e-3f) continue;
        rebuilt.at(x, y) = src.mask.at(std::size_t(std::lround(fx)), std::size_t(std::lround(fy)));
      }
    EXPECT_DOUBLE_EQ(iou(rebuilt, out.mask), 1.0) << trial;
  }
}

TEST(Augment, SeededPathIsDeterministicAndNonEmpty) {
  const auto s = gen_synthetic(7, 4, 112);
  for (const auto& x : s) {
    const auto a = augment(x, 99), b = augment(x, 99);
    EXPECT_EQ(a.image.data, b.image.data);
    EXPECT_EQ(a.mask, b.mask);
    EXPECT_GT(a.mask.area(), 0u);
  }
}

TEST(TrainingClicks, ZeroDecayIsOneClick) {
  Rng rng(8);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(draw_click_count(rng, 24, 0.0), 1u);
}

TEST(TrainingClicks, CountIsCappedGeometric) {
  Rng rng(9);
  const int n = 100000;
  double sum = 0;
  std::size_t most = 0;
  for (int i = 0; i < n; ++i) {
    const auto k = draw_click_count(rng, 24, 0.8);
    sum += double(k);
    most = std::max(most, k);
  }
  double expect = 0;
  for (int i = 0; i < 24; ++i) expect += std::pow(0.8, i);
  EXPECT_NEAR(sum / n, 4.96, 0.05);
  EXPECT_NEAR(sum / n, expect, 0.05);
  EXPECT_LE(most, 24u);
}

TEST(TrainingClicks, FirstClickIsInteriorPositive) {
  const auto samples = gen_synthetic(10, 20, 112);
  Rng rng(11);
  for (const auto& s : samples) {
    const auto clicks = sample_training_clicks(s.mask, nullptr, rng, 24, 0.8);
    ASSERT_FALSE(clicks.empty());
    EXPECT_LE(clicks.size(), 24u);
    EXPECT_TRUE(clicks[0].positive);
    EXPECT_EQ(s.mask.at(std::size_t(clicks[0].point.x), std::size_t(clicks[0].point.y)), 1);
    for (const auto& c : clicks) EXPECT_EQ(s.mask.at(std::size_t(c.point.x), std::size_t(c.point.y)) == 1, c.positive);
  }
}

TEST(TrainingClicks, LaterClicksFollowPreviousErrors) {
  const auto s = gen_synthetic(12, 1, 112)[0];
  const Mask empty(112, 112);
  Rng rng(13);
  for (int i = 0; i < 20; ++i) {
    const auto clicks = sample_training_clicks(s.mask, &empty, rng, 24, 0.8);
    // Nothing was predicted, so every error is a false negative.
    for (const auto& c : clicks) EXPECT_TRUE(c.positive);
  }
}

TEST(Schedule, LrDropsByTenAtEachDropEpoch) {
  const auto c = TrainConfig::desk();
  EXPECT_EQ(c.lr_at(0), c.lr);
  EXPECT_EQ(c.lr_at(11), c.lr);
  EXPECT_EQ(c.lr_at(12), c.lr / 10);
  EXPECT_EQ(c.lr_at(15), c.lr / 10);
  EXPECT_DOUBLE_EQ(c.lr_at(16), c.lr / 100);
  const auto p = TrainConfig::full();
  EXPECT_EQ(p.epochs, 230u);
  EXPECT_EQ(p.samples_per_epoch, 30000u);
  EXPECT_EQ(p.lr_at(50), p.lr / 10);
}

TEST(Config, ParseRoundTrip) {
  std::istringstream in(
      "# desk variant\n"
      "epochs = 3\n"
      "lr = 1e-3   # faster\n"
      "lr_drops = [1, 2]\n"
      "contrastive = false\n"
      "model.mst_blocks = [0]\n"
      "model.depth = 2\n"
      "seed = \"17\"\n");
  const auto c = parse_train_config(in);
  EXPECT_EQ(c.epochs, 3u);
  EXPECT_EQ(c.lr, 1e-3);
  EXPECT_EQ(c.lr_drops, (std::vector<std::size_t>{1, 2}));
  EXPECT_FALSE(c.contrastive);
  EXPECT_EQ(c.model.mst_blocks, (std::vector<std::size_t>{0}));
  EXPECT_EQ(c.seed, 17u);
  std::istringstream again(format_train_config(c));
  EXPECT_EQ(format_train_config(parse_train_config(again)), format_train_config(c));
}

TEST(Config, RejectsBadInput) {
  auto parse = [](const std::string& s) {
    std::istringstream in(s);
    return parse_train_config(in);
  };
  EXPECT_THROW(parse("nonsense = 1\n"), ConfigError);
  EXPECT_THROW(parse("epochs 3\n"), ConfigError);
  EXPECT_THROW(parse("epochs = many\n"), ConfigError);
  EXPECT_THROW(parse("click_decay = 1.5\n"), ConfigError);
  EXPECT_THROW(parse("lr_drops = [5, 2]\n"), ConfigError);
  EXPECT_THROW(parse("model.mst_blocks = [9]\n"), ConfigError);
  EXPECT_NO_THROW(parse("preset = full\n"));
}

TEST(Training, SmokeRunWritesLogsAndLowersLoss) {
  const auto cfg = tiny_run();
  const auto data = gen_synthetic(14, 32, 112);
  MstModel<float> model(cfg.model);
  Trainer trainer(cfg, model);
  std::vector<std::vector<Click>> probe_clicks;
  Rng crng(15);
  for (std::size_t i = 0; i < 8; ++i) probe_clicks.push_back(sample_training_clicks(data[i].mask, nullptr, crng, 1, 0));
  auto probe = [&] {
    double s = 0;
    for (std::size_t i = 0; i < 8; ++i) s += trainer.evaluate_loss(data[i], probe_clicks[i], 16).seg;
    return s / 8;
  };
  // Segmentation loss on fixed inputs; the contrastive part depends on pair counts.
  const double before = probe();
  const auto dir = temp_dir("smoke");
  const auto hist = trainer.train(data, {dir, true, nullptr});
  const double after = probe();
  EXPECT_LT(after, before);
  ASSERT_EQ(hist.size(), 1u);
  EXPECT_EQ(hist[0].steps, 4u);
  EXPECT_EQ(trainer.step(), 4u);
  EXPECT_EQ(count_lines(dir / "loss.csv"), 5u);
  EXPECT_EQ(count_lines(dir / "epochs.csv"), 2u);
  EXPECT_TRUE(fs::exists(dir / "epoch_000" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "final" / "weights.bin"));
  EXPECT_TRUE(fs::exists(dir / "train_config.txt"));
  std::ifstream log(dir / "loss.csv");
  std::vector<double> totals;
  std::string line;
  std::getline(log, line);
  while (std::getline(log, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    ASSERT_EQ(f.size(), 8u);
    totals.push_back(std::stod(f[5]));
  }
  ASSERT_EQ(totals.size(), 4u);
  EXPECT_LT(totals.back(), totals.front());
  fs::remove_all(dir);
}

TEST(Training, DeterministicUnderSeed) {
  auto run = [] {
    auto cfg = tiny_run();
    cfg.samples_per_epoch = 16;
    const auto data = gen_synthetic(17, 16, 112);
    MstModel<float> model(cfg.model);
    Trainer trainer(cfg, model);
    return trainer.train(data)[0].total;
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, RoundTripReproducesNextStepLoss) {
  auto cfg = tiny_run();
  const auto data = gen_synthetic(18, 8, 112);
  MstModel<float> model(cfg.model);
  Trainer trainer(cfg, model);
  trainer.train_batch(std::span<const Sample>(data));
  const auto dir = temp_dir("ckpt");
  save_checkpoint(dir / "a", model, &trainer.optimizer());

  const auto ck = read_checkpoint(dir / "a");
  EXPECT_EQ(ck.dtype, "float32");
  ASSERT_TRUE(ck.optimizer);
  EXPECT_EQ(ck.optimizer->step, 1);
  auto cfg2 = cfg;
  cfg2.model = ck.config;
  cfg2.model.init_seed = 99;
  MstModel<float> restored(cfg2.model);
  load_weights(ck, restored);
  Trainer trainer2(cfg2, restored);
  load_optimizer(ck, trainer2.optimizer());
  save_checkpoint(dir / "b", restored, &trainer2.optimizer());
  EXPECT_EQ(checkpoint_hash(dir / "a"), checkpoint_hash(dir / "b"));

  Rng crng(19);
  const auto clicks = sample_training_clicks(data[0].mask, nullptr, crng, 24, 0.8);
  EXPECT_EQ(trainer.evaluate_loss(data[0], clicks, 20).total.item(),
            trainer2.evaluate_loss(data[0], clicks, 20).total.item());
  fs::remove_all(dir);
}

TEST(Checkpoint, CorruptManifestIsFormatError) {
  const auto dir = temp_dir("bad");
  std::ofstream(dir / "manifest.json") << "{\"format\": \"something-else\"}";
  EXPECT_THROW(read_checkpoint(dir), FormatError);
  EXPECT_THROW(read_checkpoint(dir / "missing"), FormatError);
  fs::remove_all(dir);
}

TEST(Checkpoint, Sha256KnownVector) {
  const std::string abc = "abc";
  EXPECT_EQ(sha256_hex({reinterpret_cast<const unsigned char*>(abc.data()), abc.size()}),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Dataset, SyntheticSourceMatchesGenerator) {
  const auto a = load_dataset("synthetic:21:3", 112);
  const auto b = gen_synthetic(21, 3, 112);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a[i].mask, b[i].mask);
}

TEST(Dataset, DirectoryRoundTrip) {
  const auto dir = temp_dir("dataset");
  const auto samples = gen_synthetic(22, 3, 64);
  save_dataset(dir, samples);
  const auto back = load_dataset(dir.string(), 112);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].id, samples[i].id);
    EXPECT_EQ(back[i].mask, samples[i].mask);
    EXPECT_DOUBLE_EQ(back[i].scale_ratio, samples[i].scale_ratio);
    for (std::size_t j = 0; j < samples[i].image.data.size(); ++j)
      ASSERT_NEAR(back[i].image.data[j], samples[i].image.data[j], 0.5f / 255.0f + 1e-6f);
  }
  fs::remove_all(dir);
}

TEST(Dataset, BadSourcesAreConfigErrors) {
  EXPECT_THROW(load_dataset("synthetic:1", 112), ConfigError);
  EXPECT_THROW(load_dataset("synthetic:a:3", 112), ConfigError);
  EXPECT_THROW(load_dataset("synthetic:1:0", 112), ConfigError);
  EXPECT_THROW(load_dataset("/nonexistent/dir", 112), ConfigError);
}
