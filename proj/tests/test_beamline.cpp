#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "psae/beamline.hpp"
#include "psae/diagnostics.hpp"
#include "psae/error.hpp"
#include "psae/loss.hpp"

using namespace psae;

namespace {

SimParams quiet(WorkingPoint wp) {
  SimParams p = SimParams::for_working_point(wp);
  p.jitter = false;
  return p;
}

ScreenImage processed(const PhaseVector& phases, const SimParams& params, std::uint64_t seed) {
  auto img = preprocess(simulate_shot(phases, params, seed), params);
  if (!img) throw std::runtime_error("empty shot");
  return *img;
}

}  // namespace

TEST(WorkingPoint, ParseAndPrint) {
  EXPECT_EQ(parse_working_point("WP1"), WorkingPoint::WP1);
  EXPECT_EQ(parse_working_point("WP2"), WorkingPoint::WP2);
  EXPECT_EQ(to_string(WorkingPoint::WP2), "WP2");
  EXPECT_THROW(parse_working_point("WP3"), ConfigError);
  EXPECT_EQ(phase_feature_count(WorkingPoint::WP1), 3u);
  EXPECT_EQ(phase_feature_count(WorkingPoint::WP2), 2u);
  const auto f = phase_features({1.5, -3.0, 6.0}, WorkingPoint::WP1);
  EXPECT_EQ(f, (std::vector<float>{0.5f, -0.5f, 1.0f}));
}

TEST(Geometry, PreprocessedSizes) {
  EXPECT_EQ(ScreenGeometry::for_scale(Scale::desk).rows(), 96u);
  EXPECT_EQ(ScreenGeometry::for_scale(Scale::desk).cols(), 128u);
  EXPECT_EQ(ScreenGeometry::for_scale(Scale::full).rows(), 768u);
  EXPECT_EQ(ScreenGeometry::for_scale(Scale::full).cols(), 1024u);
  // Camera pixels carry the nominal calibration; preprocessed pixels are 2x2 blocks of them.
  const auto full = ScreenGeometry::for_scale(Scale::full);
  EXPECT_NEAR(full.raw_calibration.time_per_px, 0.047, 1e-12);
  EXPECT_NEAR(full.raw_calibration.energy_per_px, 0.0031, 1e-12);
  EXPECT_DOUBLE_EQ(full.raw_calibration.charge_pc, 250.0);
  EXPECT_NEAR(full.image_calibration().time_per_px, 2 * 0.047, 1e-12);
  // The desk screen spans the same physical window with 8x fewer pixels per axis.
  const auto desk = ScreenGeometry::for_scale(Scale::desk);
  EXPECT_NEAR(desk.image_calibration().time_per_px, 16 * 0.047, 1e-12);
  EXPECT_NEAR(desk.image_calibration().energy_per_px, 16 * 0.0031, 1e-12);
}

TEST(Simulate, DeterministicInPhasesAndSeed) {
  const SimParams p = SimParams::wp1();
  const PhaseVector ph{1.0, -2.0, 3.0};
  const auto a = simulate_shot(ph, p, 42), b = simulate_shot(ph, p, 42), c = simulate_shot(ph, p, 43);
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_NE(a.pixels, c.pixels);
}

TEST(Simulate, ReferenceShotSitsAtVerticalCentre) {
  SimParams p = quiet(WorkingPoint::WP1);
  EXPECT_NEAR(reference_mean_energy(p), p.reference_energy_mev, 1e-9);
  const auto img = processed({}, p, 1);
  const auto com = center_of_mass(img.pixels);
  EXPECT_NEAR(com.row, (static_cast<double>(img.rows()) - 1.0) / 2.0, 1.0);
}

TEST(Simulate, Wp2RebalanceKeepsTheReferenceEnergy) {
  const SimParams wp1 = quiet(WorkingPoint::WP1), wp2 = quiet(WorkingPoint::WP2);
  EXPECT_EQ(wp2.ah1_voltage_mev, 0.0);
  EXPECT_NEAR(wp2.a1_voltage_mev, rebalanced_a1_voltage(wp1), 1e-12);
  EXPECT_NEAR(reference_mean_energy(wp2), reference_mean_energy(wp1), 1e-9);
  const auto c1 = center_of_mass(processed({}, wp1, 3).pixels);
  const auto c2 = center_of_mass(processed({}, wp2, 3).pixels);
  EXPECT_NEAR(c1.row, c2.row, 1.0);
}

TEST(Simulate, MeanRowRisesWithA1Voltage) {
  SimParams p = quiet(WorkingPoint::WP1);
  double last = -1.0;
  for (double v : {59.0, 59.5, 60.0, 60.5, 61.0}) {
    p.a1_voltage_mev = v;
    const double row = center_of_mass(processed({0.5, 1.0, -1.0}, p, 5).pixels).row;
    EXPECT_GT(row, last) << "V_A1 " << v;
    last = row;
  }
}

TEST(Simulate, DepositConservesParticleCount) {
  const SimParams p = SimParams::wp1();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto d = deposit_shot({2.0, 5.0, -5.0}, p, seed);
    const double total = std::accumulate(d.counts.data().begin(), d.counts.data().end(), 0.0);
    EXPECT_EQ(total, static_cast<double>(d.surviving));
    EXPECT_GE(d.surviving, p.macro_particles * 99 / 100);
  }
}

TEST(Simulate, BunchOffTheGridIsAnError) {
  SimParams p = quiet(WorkingPoint::WP1);
  p.a1_voltage_mev = 80.0;  // mean energy far above the screen
  EXPECT_THROW(simulate_shot({}, p, 0), DomainError);
}

TEST(Preprocess, ThresholdRule) {
  const Tensor<float> img(Shape{1, 3}, {1.0f, 0.005f, 0.5f});
  const auto out = clip_normalize_threshold(img);
  EXPECT_EQ(out, Tensor<float>(Shape{1, 3}, {1.0f, 0.0f, 0.5f}));
  const auto neg = clip_normalize_threshold(Tensor<float>(Shape{1, 2}, {-1.0f, 2.0f}));
  EXPECT_EQ(neg, Tensor<float>(Shape{1, 2}, {0.0f, 1.0f}));
}

TEST(Preprocess, BlockMeanPreservesConstants) {
  EXPECT_EQ(block_downsample(Tensor<float>(Shape{4, 4}, 1.0f), 2), Tensor<float>(Shape{2, 2}, 1.0f));
  EXPECT_EQ(block_downsample(Tensor<float>(Shape{2, 2}, {1, 2, 3, 6}), 2), Tensor<float>(Shape{1, 1}, {3.0f}));
  EXPECT_THROW(block_downsample(Tensor<float>(Shape{3, 4}), 2), DimensionError);
}

TEST(Preprocess, CropBoundsAreChecked) {
  Tensor<float> img(Shape{4, 5});
  img.at(2, 3) = 7.0f;
  const auto c = crop(img, 1, 2, 2, 3);
  EXPECT_EQ(c.shape(), (Shape{2, 3}));
  EXPECT_EQ(c.at(1, 1), 7.0f);
  EXPECT_THROW(crop(img, 3, 0, 2, 2), DimensionError);
}

TEST(Preprocess, OutputInvariantsAndIdempotence) {
  const SimParams p = SimParams::wp1();
  const auto img = processed({-1.0, 3.0, 2.0}, p, 9);
  EXPECT_EQ(img.rows(), 96u);
  EXPECT_EQ(img.cols(), 128u);
  float peak = 0.0f;
  for (float v : img.pixels.data()) {
    ASSERT_TRUE(v == 0.0f || (v >= 0.01f && v <= 1.0f));
    peak = std::max(peak, v);
  }
  EXPECT_EQ(peak, 1.0f);
  const auto again = clip_normalize_threshold(img.pixels);
  EXPECT_EQ(again, img.pixels);
  EXPECT_EQ(clip_normalize_threshold(again), again);
}

TEST(Preprocess, BackgroundIsSubtracted) {
  const SimParams p = quiet(WorkingPoint::WP1);
  const auto bg = background_frame(p);
  EXPECT_EQ(bg.shape(), (Shape{p.screen.raw_rows, p.screen.raw_cols}));
  EXPECT_EQ(bg, background_frame(p));
  const auto raw = subtract_background(bg, bg);
  for (float v : raw.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Preprocess, EmptyFrameIsFlagged) {
  const SimParams p = SimParams::wp1();
  ScreenImage raw{background_frame(p), p.screen.raw_calibration};
  EXPECT_FALSE(preprocess(raw, p).has_value());
}

TEST(SampleDataset, RangesSplitAndUniqueness) {
  const auto ds = sample_dataset(WorkingPoint::WP1, 40, 5);
  EXPECT_EQ(ds.shots.size(), 40u);
  EXPECT_EQ(ds.count(Split::train), 32u);
  EXPECT_EQ(ds.count(Split::test), 8u);
  std::set<std::tuple<double, double, double>> seen;
  for (const auto& s : ds.shots) {
    EXPECT_LE(std::abs(s.phases.gun), 3.0);
    EXPECT_LE(std::abs(s.phases.a1), 6.0);
    EXPECT_LE(std::abs(s.phases.ah1), 6.0);
    EXPECT_TRUE(seen.emplace(s.phases.gun, s.phases.a1, s.phases.ah1).second);
    EXPECT_EQ(s.image.rows(), 96u);
  }
  const auto qa = dataset_qa(ds);
  EXPECT_FALSE(qa.has_duplicates);
  EXPECT_GT(*std::min_element(qa.min_phase_distance.begin(), qa.min_phase_distance.end()), 0.0);
}

TEST(SampleDataset, SplitCountsForPaperSize) {
  // The split depends only on the shot count: 3000 shots -> 2400 / 600.
  EXPECT_EQ(std::llround(0.8 * 3000), 2400);
  const auto ds = sample_dataset(WorkingPoint::WP2, 10, 1);
  EXPECT_EQ(ds.count(Split::train), 8u);
  EXPECT_EQ(ds.count(Split::test), 2u);
  for (const auto& s : ds.shots) EXPECT_EQ(s.phases.ah1, 0.0);
}

TEST(SampleDataset, BitwiseDeterministic) {
  const auto a = encode_dataset(sample_dataset(WorkingPoint::WP1, 12, 77));
  const auto b = encode_dataset(sample_dataset(WorkingPoint::WP1, 12, 77));
  const auto c = encode_dataset(sample_dataset(WorkingPoint::WP1, 12, 78));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(SampleDataset, ZeroShotsIsAnError) { EXPECT_THROW(sample_dataset(WorkingPoint::WP1, 0, 1), ConfigError); }

TEST(Container, RoundTripAndValidation) {
  const auto ds = sample_dataset(WorkingPoint::WP2, 6, 3);
  const auto bytes = encode_dataset(ds);
  const auto back = decode_dataset(bytes);
  EXPECT_EQ(encode_dataset(back), bytes);
  EXPECT_EQ(back.working_point, WorkingPoint::WP2);
  EXPECT_EQ(back.shots[2].phases, ds.shots[2].phases);
  EXPECT_EQ(back.shots[2].image.pixels, ds.shots[2].image.pixels);

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_dataset(bad), FormatError);
  auto version = bytes;
  version[4] = 9;
  EXPECT_THROW(decode_dataset(version), FormatError);
  const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 5);
  EXPECT_THROW(decode_dataset(truncated), FormatError);
}

TEST(Simulate, NearbyPhasesLookMoreAlikeThanDistantOnes) {
  const SimParams p = SimParams::wp1();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> gun(-2.5, 2.5), rf(-5.0, 5.0), unit(-1.0, 1.0);
  double near = 0.0, far = 0.0;
  const int pairs = 100;
  for (int i = 0; i < pairs; ++i) {
    const PhaseVector a{gun(rng), rf(rng), rf(rng)};
    // Same seed for both members of a pair, so the hidden jitter is shared.
    const std::uint64_t seed = derive_seed(11, static_cast<std::uint64_t>(i));
    PhaseVector close = a, distant = a;
    close.gun += 0.05 * unit(rng);
    close.a1 += 0.05 * unit(rng);
    close.ah1 += 0.05 * unit(rng);
    distant.a1 = a.a1 > 0 ? a.a1 - 5.5 : a.a1 + 5.5;
    distant.ah1 = a.ah1 > 0 ? a.ah1 - 3.0 : a.ah1 + 3.0;
    const auto ia = processed(a, p, seed).pixels;
    near += ms_ssim(ia, processed(close, p, seed).pixels);
    far += ms_ssim(ia, processed(distant, p, seed).pixels);
  }
  EXPECT_GT(near / pairs, far / pairs);
}

TEST(DeriveSeed, DistinctStreams) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(5, i));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(derive_seed(5, 3), derive_seed(5, 3));
}
