#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "psae/error.hpp"
#include "psae/loss.hpp"
#include "support/gradient_suite.hpp"
#include "support/oracles.hpp"

using namespace psae;

namespace {

Tensor<double> constant(std::size_t h, std::size_t w, double v) { return Tensor<double>(Shape{h, w}, v); }

/// Image built from constant blocks of size `block`, values drawn from [0,1].
Tensor<double> blocky(std::size_t blocks_h, std::size_t blocks_w, std::size_t block, std::mt19937_64& rng,
                      Tensor<double>* block_values = nullptr) {
  const auto v = oracle::uniform({blocks_h, blocks_w}, rng, 0.0, 1.0);
  Tensor<double> img(Shape{blocks_h * block, blocks_w * block});
  for (std::size_t r = 0; r < img.dim(0); ++r) {
    for (std::size_t c = 0; c < img.dim(1); ++c) img.at(r, c) = v.at(r / block, c / block);
  }
  if (block_values) *block_values = v;
  return img;
}

/// Block image at 2^j granularity directly from the block values (no pooling).
Tensor<double> block_image(const Tensor<double>& values, std::size_t block) {
  Tensor<double> img(Shape{values.dim(0) * block, values.dim(1) * block});
  for (std::size_t r = 0; r < img.dim(0); ++r) {
    for (std::size_t c = 0; c < img.dim(1); ++c) img.at(r, c) = values.at(r / block, c / block);
  }
  return img;
}

}  // namespace

TEST(WindowStats, ConstantImage) {
  const auto s = window_stats(constant(12, 10, 0.3), constant(12, 10, 0.7), MsSsimConfig{});
  EXPECT_EQ(s.rows, 5u);
  EXPECT_EQ(s.cols, 3u);
  for (std::size_t i = 0; i < s.mean_ref.size(); ++i) {
    EXPECT_NEAR(s.mean_ref[i], 0.3, 1e-15);
    EXPECT_NEAR(s.mean_pred[i], 0.7, 1e-15);
    EXPECT_NEAR(s.std_ref[i], 0.0, 1e-7);
    EXPECT_NEAR(s.std_pred[i], 0.0, 1e-7);
  }
}

TEST(WindowStats, SelfCovarianceIsVariance) {
  std::mt19937_64 rng(1);
  const auto x = oracle::uniform({16, 16}, rng, 0.0, 1.0);
  const auto s = window_stats(x, x, MsSsimConfig{});
  for (std::size_t i = 0; i < s.covariance.size(); ++i) EXPECT_NEAR(s.covariance[i], s.std_ref[i] * s.std_ref[i], 1e-12);
}

TEST(WindowStats, MatchBruteForceWindowLoop) {
  for (const auto& cfg : {MsSsimConfig{}, MsSsimConfig::gaussian_window()}) {
    std::mt19937_64 rng(2);
    const auto x = oracle::uniform({16, 16}, rng, 0.0, 1.0), y = oracle::uniform({16, 16}, rng, 0.0, 1.0);
    const auto s = window_stats(x, y, cfg);
    const auto w1 = oracle::window_1d(cfg);
    ASSERT_EQ(s.rows, 16 - cfg.window_size + 1);
    for (std::size_t r = 0; r < s.rows; ++r) {
      for (std::size_t c = 0; c < s.cols; ++c) {
        const auto m = oracle::window_moments(x, y, r, c, w1);
        const std::size_t i = r * s.cols + c;
        EXPECT_NEAR(s.mean_ref[i], m.mu_x, 1e-6);
        EXPECT_NEAR(s.mean_pred[i], m.mu_y, 1e-6);
        EXPECT_NEAR(s.std_ref[i], m.sigma_x, 1e-6);
        EXPECT_NEAR(s.std_pred[i], m.sigma_y, 1e-6);
        EXPECT_NEAR(s.covariance[i], m.cov, 1e-6);
      }
    }
  }
}

TEST(WindowStats, ImageSmallerThanWindowIsAnError) {
  EXPECT_THROW(window_stats(constant(7, 20, 0), constant(7, 20, 0), MsSsimConfig{}), DomainError);
  EXPECT_THROW(window_stats(constant(8, 8, 0), constant(8, 9, 0), MsSsimConfig{}), DimensionError);
}

TEST(WindowWeights, SumToOne) {
  for (const auto& cfg : {MsSsimConfig{}, MsSsimConfig::gaussian_window()}) {
    const auto w = window_weights(cfg);
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-15);
    const auto o = oracle::window_1d(cfg);
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(w[i], o[i], 1e-15);
  }
}

TEST(SsimComponents, IdenticalWindowsGiveOnes) {
  std::mt19937_64 rng(3);
  const auto x = oracle::uniform({12, 12}, rng, 0.0, 1.0);
  const auto comp = ssim_components(window_stats(x, x, MsSsimConfig{}), MsSsimConfig{});
  for (std::size_t i = 0; i < comp.luminance.size(); ++i) {
    EXPECT_NEAR(comp.luminance[i], 1.0, 1e-12);
    EXPECT_NEAR(comp.contrast[i], 1.0, 1e-12);
    EXPECT_NEAR(comp.structure[i], 1.0, 1e-9);
  }
}

TEST(SsimComponents, ConstantOneVersusZero) {
  const auto comp = ssim_components(window_stats(constant(8, 8, 1.0), constant(8, 8, 0.0), MsSsimConfig{}),
                                    MsSsimConfig{});
  ASSERT_EQ(comp.luminance.size(), 1u);
  EXPECT_NEAR(comp.luminance[0], 1e-4 / (1.0 + 1e-4), 1e-15);
  EXPECT_NEAR(comp.contrast[0], 1.0, 1e-12);
  EXPECT_NEAR(comp.structure[0], 1.0, 1e-12);
}

TEST(SsimComponents, RandomWindowSweepStaysBounded) {
  // Luminance and contrast lie in [0,1] for non-negative data. Structure is a correlation
  // coefficient and lies in [-1,1]; it is negative for anti-correlated windows.
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> scale(0.0, 1.0);
  std::size_t windows = 0;
  double min_structure = 1.0;
  while (windows < 10000) {
    const double a = scale(rng), b = scale(rng);
    const auto x = oracle::uniform({8, 8}, rng, 0.0, a), y = oracle::uniform({8, 8}, rng, 0.0, b);
    const auto comp = ssim_components(window_stats(x, y, MsSsimConfig{}), MsSsimConfig{});
    for (std::size_t i = 0; i < comp.luminance.size(); ++i, ++windows) {
      ASSERT_GE(comp.luminance[i], 0.0);
      ASSERT_LE(comp.luminance[i], 1.0);
      ASSERT_GE(comp.contrast[i], 0.0);
      ASSERT_LE(comp.contrast[i], 1.0);
      ASSERT_GE(comp.structure[i], -1.0);
      ASSERT_LE(comp.structure[i], 1.0);
      min_structure = std::min(min_structure, comp.structure[i]);
    }
  }
  EXPECT_LT(min_structure, 0.0);
}

TEST(MsSsim, IdenticalImagesGiveOne) {
  std::mt19937_64 rng(5);
  const auto x = oracle::uniform({44, 48}, rng, 0.0, 1.0);
  EXPECT_NEAR(ms_ssim(x, x), 1.0, 1e-9);
  EXPECT_NEAR(ms_ssim(x, x, MsSsimConfig::gaussian_window()), 1.0, 1e-9);
}

TEST(MsSsim, ConstantOneVersusZeroClosedForm) {
  const double l = 1e-4 / (1.0 + 1e-4);
  EXPECT_NEAR(ms_ssim(constant(32, 32, 1.0), constant(32, 32, 0.0)), std::pow(l, 0.65), 1e-12);
}

TEST(MsSsim, MatchesStraightFromFormulaOracle) {
  for (const auto& cfg : {MsSsimConfig{}, MsSsimConfig::gaussian_window(), MsSsimConfig::single_scale()}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      std::mt19937_64 rng(seed);
      const auto x = oracle::uniform({64, 64}, rng, 0.0, 1.0);
      const auto y = gradcheck::correlated(x, rng);
      EXPECT_NEAR(ms_ssim(x, y, cfg), oracle::ms_ssim(x, y, cfg), 1e-6);
    }
  }
  std::mt19937_64 rng(9);
  const auto x = oracle::uniform({45, 67}, rng, 0.0, 1.0), y = oracle::uniform({45, 67}, rng, 0.0, 1.0);
  EXPECT_NEAR(ms_ssim(x, y), oracle::ms_ssim(x, y, MsSsimConfig{}), 1e-6);
}

TEST(MsSsim, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    EXPECT_LT(gradcheck::ms_ssim(seed), 1e-4) << "seed " << seed;
    EXPECT_LT(gradcheck::ms_ssim(seed, MsSsimConfig::gaussian_window(), 44), 1e-4) << "seed " << seed;
  }
  EXPECT_LT(gradcheck::ms_ssim_loss(0), 1e-4);
}

TEST(MsSsim, SymmetricAndBounded) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 50; ++i) {
    const auto x = oracle::uniform({32, 32}, rng, 0.0, 1.0), y = oracle::uniform({32, 32}, rng, 0.0, 1.0);
    const double h = ms_ssim(x, y);
    EXPECT_NEAR(h, ms_ssim(y, x), 1e-9);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, 1.0);
  }
}

TEST(MsSsim, TooSmallForTopScaleIsAnError) {
  EXPECT_THROW(ms_ssim(constant(27, 64, 0.1), constant(27, 64, 0.1)), DomainError);
  EXPECT_NO_THROW(ms_ssim(constant(29, 29, 0.1), constant(29, 29, 0.1)));
  MsSsimConfig bad;
  bad.alphas = {1.0};
  EXPECT_THROW(ms_ssim(constant(32, 32, 0.1), constant(32, 32, 0.1), bad), ConfigError);
}

TEST(MsSsim, ScaleConsistencyForBlockImages) {
  // With 4x4 blocks, pooling j <= 2 times is exact: scale j of the full image is scale 0 of the
  // block image at granularity 4 / 2^j, which is built here without any pooling.
  std::mt19937_64 rng(7);
  Tensor<double> vx, vy;
  const auto x = blocky(12, 12, 4, rng, &vx), y = blocky(12, 12, 4, rng, &vy);
  for (std::size_t j = 0; j <= 2; ++j) {
    const std::size_t block = 4 >> j;
    const auto bx = block_image(vx, block), by = block_image(vy, block);

    MsSsimConfig top;  // h = mean(l c s) at scale j
    top.top_scale = j;
    top.alphas.assign(j + 1, 0.0);
    top.alphas[j] = 1.0;
    EXPECT_NEAR(ms_ssim(x, y, top), ms_ssim(bx, by, MsSsimConfig::single_scale()), 1e-12) << "scale " << j;

    if (j < 2) {
      MsSsimConfig lower;  // h = mean(c s) at scale j
      lower.alphas = {0.0, 0.0, 0.0};
      lower.alphas[j] = 1.0;
      const auto comp = ssim_components(window_stats(bx, by, MsSsimConfig{}), MsSsimConfig{});
      double cs = 0.0;
      for (std::size_t i = 0; i < comp.contrast.size(); ++i) cs += comp.contrast[i] * comp.structure[i];
      cs /= static_cast<double>(comp.contrast.size());
      EXPECT_NEAR(ms_ssim(x, y, lower), std::max(cs, 0.0), 1e-12) << "scale " << j;
    }
  }
}

TEST(MsSsim, PaperExponentsNeverBelowAllOnes) {
  std::mt19937_64 rng(8);
  MsSsimConfig ones;
  ones.alphas = {1.0, 1.0, 1.0};
  for (int i = 0; i < 30; ++i) {
    const auto x = oracle::uniform({40, 40}, rng, 0.0, 1.0);
    const auto y = gradcheck::correlated(x, rng);
    EXPECT_GE(ms_ssim(x, y), ms_ssim(x, y, ones));
  }
}

TEST(BatchLoss, PerfectPredictionIsZero) {
  std::mt19937_64 rng(10);
  const auto y = oracle::uniform({3, 1, 32, 32}, rng, 0.0, 1.0);
  EXPECT_NEAR(batch_loss(y, y), 0.0, 1e-12);
}

TEST(BatchLoss, MeanOfOneMinusH) {
  // Image 0 is perfect (h = 1). Image 1 has h = 0.5 by choosing alphas so that h = l^a with a constant pair.
  MsSsimConfig cfg = MsSsimConfig::single_scale();
  Tensor<double> ref(Shape{2, 8, 8}, 0.4), pred(Shape{2, 8, 8}, 0.4);
  for (std::size_t i = 64; i < 128; ++i) pred[i] = 0.1;
  const double l = (2 * 0.4 * 0.1 + cfg.c1) / (0.16 + 0.01 + cfg.c1);
  cfg.alphas = {std::log(0.5) / std::log(l)};
  const auto h = ms_ssim_batch(ref, pred, cfg);
  ASSERT_EQ(h.size(), 2u);
  EXPECT_NEAR(h[0], 1.0, 1e-12);
  EXPECT_NEAR(h[1], 0.5, 1e-12);
  EXPECT_NEAR(batch_loss(ref, pred, cfg), 0.25, 1e-12);
}

TEST(BatchLoss, PermutationInvariant) {
  std::mt19937_64 rng(11);
  const auto y = oracle::uniform({4, 1, 32, 32}, rng, 0.0, 1.0);
  const auto p = gradcheck::correlated(y, rng);
  const double loss = batch_loss(y, p);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  Tensor<double> yp(y.shape()), pp(p.shape());
  for (std::size_t b = 0; b < 4; ++b) {
    std::copy_n(y.ptr() + perm[b] * 1024, 1024, yp.ptr() + b * 1024);
    std::copy_n(p.ptr() + perm[b] * 1024, 1024, pp.ptr() + b * 1024);
  }
  EXPECT_NEAR(batch_loss(yp, pp), loss, 1e-12);
}

TEST(BatchLoss, ShapeMismatchAndEmptyBatch) {
  EXPECT_THROW(batch_loss(Tensor<double>(Shape{2, 1, 16, 16}), Tensor<double>(Shape{3, 1, 16, 16})), DimensionError);
  EXPECT_THROW(batch_loss(Tensor<double>(Shape{0, 1, 16, 16}), Tensor<double>(Shape{0, 1, 16, 16})), DimensionError);
}

TEST(MseLoss, Examples) {
  EXPECT_DOUBLE_EQ(mse_loss(constant(4, 4, 0.0), constant(4, 4, 0.5)), 0.25);
  EXPECT_DOUBLE_EQ(mse_loss(constant(4, 4, 0.3), constant(4, 4, 0.3)), 0.0);
  EXPECT_THROW(mse_loss(constant(4, 4, 0.0), constant(4, 5, 0.0)), DimensionError);
}

TEST(MseLoss, TapedGradientIsTwiceResidualOverCount) {
  std::mt19937_64 rng(12);
  const auto y = oracle::uniform({2, 1, 3, 3}, rng, 0.0, 1.0);
  Tensor<double> p = oracle::uniform({2, 1, 3, 3}, rng, 0.0, 1.0);
  Tape<double> tape;
  const Var pv = tape.input(p);
  const Var loss = mse_loss(tape, y, pv);
  EXPECT_NEAR(tape.value(loss)[0], mse_loss(y, p), 1e-15);
  tape.backward(loss);
  const auto numeric = oracle::numeric_gradient(p, [&] { return mse_loss(y, p); });
  EXPECT_LT(oracle::relative_error(oracle::as_vector(tape.grad(pv)), numeric), 1e-8);
}

TEST(SingleScaleSsim, EqualsMsSsimAtScaleZero) {
  std::mt19937_64 rng(13);
  const auto x = oracle::uniform({24, 24}, rng, 0.0, 1.0), y = oracle::uniform({24, 24}, rng, 0.0, 1.0);
  MsSsimConfig cfg;
  cfg.top_scale = 0;
  cfg.alphas = {1.0};
  EXPECT_EQ(single_scale_ssim(x, y), ms_ssim(x, y, cfg));
  EXPECT_NEAR(single_scale_ssim(x, x), 1.0, 1e-9);
}
