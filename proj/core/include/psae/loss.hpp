#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "psae/tape.hpp"
#include "psae/tensor.hpp"

namespace psae {

enum class WindowKind { uniform, gaussian };

/// Multi-scale structural similarity settings.
///
/// Scale j in [0, top_scale] compares the images average-pooled j times.
/// The top scale contributes mean(l*c*s)^alpha_M, every lower scale mean(c*s)^alpha_j.
struct MsSsimConfig {
  std::size_t top_scale = 2;
  std::vector<double> alphas{0.05, 0.30, 0.65};
  WindowKind window = WindowKind::uniform;
  std::size_t window_size = 8;
  std::size_t window_stride = 1;
  double gaussian_sigma = 1.5;
  // (0.01 L)^2, (0.03 L)^2 and C2/2 for dynamic range L = 1.
  double c1 = 1e-4;
  double c2 = 9e-4;
  double c3 = 4.5e-4;

  /// Throws ConfigError on a malformed configuration.
  void validate() const;
  /// Throws DomainError when an h x w image is too small for the top scale.
  void validate_for(std::size_t h, std::size_t w) const;

  /// Single-scale SSIM (M = 0, alpha_0 = 1) with the uniform 8x8 window.
  static MsSsimConfig single_scale();
  /// Default multi-scale exponents with the 11x11 Gaussian window (sigma 1.5).
  static MsSsimConfig gaussian_window();

  bool operator==(const MsSsimConfig&) const = default;
};

/// Per-window statistics in valid mode, row-major over window positions.
struct WindowStats {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> mean_ref, mean_pred;
  std::vector<double> std_ref, std_pred;
  std::vector<double> covariance;
};

struct SsimComponents {
  std::vector<double> luminance, contrast, structure;
};

/// 1-D factor of the separable window; the 2-D weights are its outer product and sum to 1.
std::vector<double> window_weights(const MsSsimConfig& config);

/// Windowed means, deviations and covariance of two same-shape (H,W) images.
template <typename T>
WindowStats window_stats(const Tensor<T>& ref, const Tensor<T>& pred, const MsSsimConfig& config);

SsimComponents ssim_components(const WindowStats& stats, const MsSsimConfig& config);

/// Multi-scale SSIM h in [0,1] between a reference and a predicted (H,W) image.
template <typename T>
double ms_ssim(const Tensor<T>& ref, const Tensor<T>& pred, const MsSsimConfig& config = {});

/// Same as ms_ssim, additionally writing dh/dpred into grad_pred (H*W values, overwritten).
template <typename T>
double ms_ssim_with_grad(const Tensor<T>& ref, const Tensor<T>& pred, const MsSsimConfig& config,
                         std::span<double> grad_pred);

template <typename T>
double single_scale_ssim(const Tensor<T>& ref, const Tensor<T>& pred);

/// Per-image h for a (B,H,W) or (B,1,H,W) batch pair.
template <typename T>
std::vector<double> ms_ssim_batch(const Tensor<T>& ref, const Tensor<T>& pred, const MsSsimConfig& config = {});

/// Batch loss mean_i (1 - h(y_i, yhat_i)).
template <typename T>
double batch_loss(const Tensor<T>& ref, const Tensor<T>& pred, const MsSsimConfig& config = {});

/// Mean squared pixel difference.
template <typename T>
double mse_loss(const Tensor<T>& ref, const Tensor<T>& pred);

// Differentiable forms for training. `pred` is (B,1,H,W) or (B,H,W); result is a scalar.

template <typename T>
Var ms_ssim_loss(Tape<T>& tape, const Tensor<T>& ref, Var pred, const MsSsimConfig& config);

template <typename T>
Var mse_loss(Tape<T>& tape, const Tensor<T>& ref, Var pred);

}  // namespace psae
