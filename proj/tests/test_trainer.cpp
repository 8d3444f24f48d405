#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "json.hpp"
#include "psae/error.hpp"
#include "psae/trainer.hpp"

using namespace psae;

namespace {

const std::vector<std::size_t> kSmallChannels{16, 16, 12, 8, 8, 8, 4, 4, 4, 1};

EncoderConfig small_encoder(std::size_t inputs = 3) {
  EncoderConfig e;
  e.input_dim = inputs;
  e.hidden = {16, 16};
  e.latent_dim = 16;
  return e;
}

Autoencoder small_model(std::uint64_t seed = 1) {
  return Autoencoder::build(small_encoder(), DecoderConfig::make(16, kSmallChannels, 5), seed);
}

const Dataset& tiny_dataset() {
  static const Dataset ds = sample_dataset(WorkingPoint::WP1, 10, 21);
  return ds;
}

TrainConfig quick_config(std::size_t epochs = 1) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  cfg.seed = 9;
  return cfg;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("psae_test_" + name)).string();
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Parameter<float> p("p", Tensor<float>(Shape{3}, {1.0f, -2.0f, 0.5f}));
  AdamMoments m;
  const auto before = p.value;
  for (int i = 0; i < 3; ++i) adam_update(p, m, 1e-3);
  EXPECT_EQ(p.value, before);
  for (float v : m.m.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(m.step, 3u);
}

TEST(Adam, ZeroGradientDecaysMoments) {
  Parameter<float> p("p", Tensor<float>(Shape{2}, 1.0f));
  AdamMoments m{Tensor<float>(Shape{2}, 0.4f), Tensor<float>(Shape{2}, 0.04f), 5};
  adam_update(p, m, 1e-3);
  for (float v : m.m.data()) EXPECT_FLOAT_EQ(v, 0.36f);
  for (float v : m.v.data()) EXPECT_FLOAT_EQ(v, 0.03996f);
}

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  Parameter<float> p("p", Tensor<float>(Shape{2}, {0.25f, 0.25f}));
  p.grad = Tensor<float>(Shape{2}, {1.0f, -3.0f});
  AdamMoments m;
  adam_update(p, m, 1e-3);
  EXPECT_NEAR(p.value[0], 0.25 - 1e-3, 1e-7);
  EXPECT_NEAR(p.value[1], 0.25 + 1e-3, 1e-7);
  EXPECT_EQ(m.step, 1u);
  EXPECT_THROW(adam_update(p, m = AdamMoments{Tensor<float>(Shape{5}), Tensor<float>(Shape{5}), 0}, 1e-3),
               DimensionError);
}

TEST(TrainConfig, ValidationAndJson) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.batch_size = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.batch_size = 16;
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.epochs = 3;
  cfg.loss = LossKind::ssim;
  cfg.fine_tune_at = 2;
  cfg.freeze = {"decoder"};
  const auto back = train_config_from_json(to_json(cfg));
  EXPECT_EQ(back.loss, LossKind::ssim);
  EXPECT_EQ(back.fine_tune_at, std::optional<std::size_t>(2));
  EXPECT_EQ(back.freeze, cfg.freeze);
  EXPECT_EQ(back.ms_ssim, cfg.ms_ssim);
  EXPECT_EQ(parse_loss_kind("mse"), LossKind::mse);
  EXPECT_THROW(parse_loss_kind("l1"), ConfigError);
  const auto ssim = cfg.loss_ssim_config();
  EXPECT_EQ(ssim.top_scale, 0u);
  EXPECT_EQ(ssim.alphas, std::vector<double>{1.0});
}

TEST(Train, OneEpochGivesOneMetric) {
  auto model = small_model();
  AdamState opt;
  std::vector<EpochMetrics> seen;
  const auto result = train(model, opt, tiny_dataset(), quick_config(), [&](const EpochMetrics& m) { seen.push_back(m); });
  ASSERT_EQ(result.history.size(), 1u);
  EXPECT_EQ(seen.size(), 1u);
  EXPECT_TRUE(result.history[0].test_mean_h.has_value());
  EXPECT_EQ(result.steps, 2u);  // 8 train shots in batches of 4
  const auto line = nlohmann::json::parse(to_json_line(result.history[0]));
  EXPECT_EQ(line["epoch"].get<int>(), 0);
}

TEST(Train, SameSeedsGiveBitwiseIdenticalWeights) {
  auto a = small_model(), b = small_model();
  AdamState oa, ob;
  train(a, oa, tiny_dataset(), quick_config(2));
  train(b, ob, tiny_dataset(), quick_config(2));
  EXPECT_EQ(encode_checkpoint(a, oa, 2, "{}"), encode_checkpoint(b, ob, 2, "{}"));
  auto c = small_model();
  AdamState oc;
  auto cfg = quick_config(2);
  cfg.seed = 10;
  train(c, oc, tiny_dataset(), cfg);
  EXPECT_NE(group_digest(a, "decoder"), group_digest(c, "decoder"));
}

TEST(Train, EveryLossKindReducesItsLoss) {
  for (LossKind kind : {LossKind::ms_ssim, LossKind::ssim, LossKind::mse}) {
    auto model = small_model(3);
    AdamState opt;
    auto cfg = quick_config(15);
    cfg.loss = kind;
    cfg.eval_every = 100;
    const auto r = train(model, opt, tiny_dataset(), cfg);
    EXPECT_LT(r.history.back().train_loss, r.initial_train_loss) << to_string(kind);
    EXPECT_TRUE(r.history.back().test_mean_h.has_value());  // the last epoch is always evaluated
    EXPECT_FALSE(r.history.front().test_mean_h.has_value());
  }
}

TEST(Train, OverfitsASingleShot) {
  Dataset one;
  const Dataset& src = tiny_dataset();
  one.working_point = src.working_point;
  one.rows = src.rows;
  one.cols = src.cols;
  one.calibration = src.calibration;
  Shot s = src.shots[src.indices(Split::train).front()];
  one.shots = {s, s};  // a batch needs two samples for batch norm
  auto model = small_model(4);
  AdamState opt;
  auto cfg = quick_config(700);
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 2;
  cfg.eval_every = 1000;
  train(model, opt, one, cfg);
  EXPECT_GT(evaluate_mean_h(model, one, Split::train, "WP1"), 0.99);
}

TEST(Train, EmptyTrainSplitIsRefused) {
  Dataset ds = tiny_dataset();
  for (auto& s : ds.shots) s.split = Split::test;
  auto model = small_model();
  AdamState opt;
  EXPECT_THROW(train(model, opt, ds, quick_config()), TrainingError);
}

TEST(Train, NonFiniteLossAbortsWithLocation) {
  Dataset ds = tiny_dataset();
  for (auto& s : ds.shots) s.image.pixels[0] = std::numeric_limits<float>::quiet_NaN();
  auto model = small_model();
  AdamState opt;
  try {
    train(model, opt, ds, quick_config());
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch 0"), std::string::npos) << msg;
  }
}

TEST(Train, DivergedWeightsAbortWithLocation) {
  auto model = small_model();
  model.decoder().stages.back().bias.value[0] = std::numeric_limits<float>::quiet_NaN();
  AdamState opt;
  auto cfg = quick_config();
  cfg.loss = LossKind::mse;
  try {
    train(model, opt, tiny_dataset(), cfg);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 0, batch 0"), std::string::npos) << e.what();
  }
}

TEST(Train, IncompatibleModelIsAConfigError) {
  auto model = Autoencoder::build(small_encoder(), DecoderConfig::make(16, {8, 8, 4, 1}, 2), 0);
  AdamState opt;
  EXPECT_THROW(train(model, opt, tiny_dataset(), quick_config()), ConfigError);
  auto cfg = quick_config();
  cfg.encoder_id = "WP2";
  auto good = small_model();
  EXPECT_THROW(train(good, opt, tiny_dataset(), cfg), ConfigError);
}

TEST(Transfer, RefusesWithoutFrozenDecoder) {
  const Dataset wp2 = sample_dataset(WorkingPoint::WP2, 10, 4);
  auto model = small_model();
  model.attach_encoder("WP2", small_encoder(2), 5);
  AdamState opt;
  auto cfg = quick_config();
  cfg.encoder_id = "WP2";
  EXPECT_THROW(transfer_train(model, opt, wp2, cfg), TrainingError);

  const auto digest = group_digest(model, "decoder");
  const auto wp1_digest = group_digest(model, "encoder:WP1");
  model.freeze("decoder");
  cfg.epochs = 2;
  transfer_train(model, opt, wp2, cfg);
  EXPECT_EQ(group_digest(model, "decoder"), digest);
  EXPECT_EQ(group_digest(model, "encoder:WP1"), wp1_digest);
}

TEST(Transfer, FineTuneUnfreezesTheDecoder) {
  const Dataset wp2 = sample_dataset(WorkingPoint::WP2, 10, 4);
  auto model = small_model();
  model.attach_encoder("WP2", small_encoder(2), 5);
  model.freeze("decoder");
  AdamState opt;
  auto cfg = quick_config(3);
  cfg.encoder_id = "WP2";
  cfg.fine_tune_at = 2;
  std::vector<std::string> digests;
  transfer_train(model, opt, wp2, cfg, [&](const EpochMetrics&) { digests.push_back(group_digest(model, "decoder")); });
  ASSERT_EQ(digests.size(), 3u);
  EXPECT_EQ(digests[0], digests[1]);
  EXPECT_NE(digests[1], digests[2]);
  EXPECT_FALSE(model.is_frozen("decoder"));
}

TEST(Evaluate, ReportAndErrors) {
  auto model = small_model();
  const auto r = evaluate(model, tiny_dataset(), Split::test, "WP1");
  EXPECT_EQ(r.shots.size(), 2u);
  EXPECT_LE(r.min_h, r.mean_h);
  EXPECT_GE(r.max_h, r.mean_h);
  EXPECT_NEAR(r.mean_h, evaluate_mean_h(model, tiny_dataset(), Split::test, "WP1"), 1e-12);
  const auto j = nlohmann::json::parse(to_json(r));
  EXPECT_EQ(j["per_shot"].size(), 2u);

  Dataset empty = tiny_dataset();
  for (auto& s : empty.shots) s.split = Split::train;
  EXPECT_THROW(evaluate(model, empty, Split::test, "WP1"), DomainError);
  EXPECT_THROW(evaluate_mean_h(model, empty, Split::test, "WP1"), DomainError);
}

TEST(Evaluate, PeakHeightRatioFixture) {
  Tensor<float> truth(Shape{4, 5}), pred(Shape{4, 5});
  truth.at(2, 2) = 1.0f;
  pred.at(2, 2) = 0.8f;
  pred.at(2, 1) = 0.1f;
  pred.at(2, 3) = 0.1f;
  const auto cmp = compare(ScreenImage{pred, Calibration{}}, ScreenImage{truth, Calibration{}});
  EXPECT_NEAR(cmp.peak_height_ratio, 0.80, 1e-6);
}

TEST(Predict, DeterministicFullImage) {
  const auto model = small_model();
  const PhaseVector ph{1.0, 2.0, -3.0};
  const auto a = predict(model, ph, WorkingPoint::WP1, "WP1", Calibration{});
  const auto b = predict(model, ph, WorkingPoint::WP1, "WP1", Calibration{});
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_EQ(a.pixels.shape(), (Shape{96, 128}));
  EXPECT_THROW(predict(model, ph, WorkingPoint::WP2, "WP1", Calibration{}), ConfigError);
}

TEST(Checkpoint, RoundTripPreservesForwardBitwise) {
  auto model = small_model();
  AdamState opt;
  train(model, opt, tiny_dataset(), quick_config());
  model.attach_encoder("WP2", small_encoder(2), 3);
  model.freeze("decoder");
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(path, model, opt, 1, to_json(quick_config()));
  const auto back = load_checkpoint(path, model.decoder().config);
  std::filesystem::remove(path);

  Tensor<float> x(Shape{3, 3}, {0.1f, -0.5f, 0.9f, 1.0f, 0.0f, -1.0f, 0.3f, 0.3f, 0.3f});
  EXPECT_EQ(back.model.predict(x, "WP1"), model.predict(x, "WP1"));
  EXPECT_TRUE(back.model.is_frozen("decoder"));
  EXPECT_EQ(back.epoch, 1u);
  EXPECT_EQ(back.optimizer.moments.size(), opt.moments.size());
  EXPECT_EQ(encode_checkpoint(back.model, back.optimizer, back.epoch, back.train_config),
            encode_checkpoint(model, opt, 1, to_json(quick_config())));
}

TEST(Checkpoint, DamageIsDetected) {
  const auto model = small_model();
  const auto bytes = encode_checkpoint(model, {}, 0, "{}");
  EXPECT_NO_THROW(decode_checkpoint(bytes));

  auto corrupt = bytes;
  corrupt[bytes.size() / 2] ^= 0x01;
  EXPECT_THROW(decode_checkpoint(corrupt), IntegrityError);

  auto version = bytes;
  version[4] = 2;
  try {
    decode_checkpoint(version);
    FAIL() << "expected FormatError";
  } catch (const IntegrityError&) {
    FAIL() << "version mismatch must be reported as such";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }

  const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + static_cast<long>(bytes.size() - 100));
  try {
    decode_checkpoint(truncated);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }

  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), FormatError);
  EXPECT_THROW(load_checkpoint(temp_path("does-not-exist.ckpt")), FormatError);
}

TEST(Checkpoint, DecoderMismatchIsAConfigError) {
  const auto model = small_model();
  const auto bytes = encode_checkpoint(model, {}, 0, "{}");
  try {
    decode_checkpoint(bytes, DecoderConfig::desk());
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("decoder config mismatch"), std::string::npos);
  }
}
