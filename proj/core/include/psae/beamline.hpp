#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "psae/tensor.hpp"

namespace psae {

// Synthetic photoinjector used as a data oracle. The beam model is a stand-in
// that gives smooth, nonlinear, partly jitter-corrupted dependence of a
// longitudinal phase-space image on three RF phases. It is not a model of any
// real machine; every reference phase and amplitude below is an arbitrary constant.
//
// Axis convention: columns are time (later particles to the right), rows are
// energy (row index grows with energy).

enum class WorkingPoint : std::uint8_t { WP1 = 1, WP2 = 2 };

std::string to_string(WorkingPoint wp);
/// Throws ConfigError for anything other than "WP1" / "WP2".
WorkingPoint parse_working_point(const std::string& text);

/// RF phases in degrees relative to the reference phases. ah1 is ignored for WP2.
struct PhaseVector {
  double gun = 0.0;
  double a1 = 0.0;
  double ah1 = 0.0;

  bool operator==(const PhaseVector&) const = default;
};

/// Uniform sampling half-ranges in degrees.
struct PhaseRanges {
  double gun = 3.0;
  double a1 = 6.0;
  double ah1 = 6.0;
};

/// Encoder inputs for a working point: phases divided by their sampling half-range
/// (gun, a1, ah1 for WP1; gun, a1 for WP2).
std::vector<float> phase_features(const PhaseVector& phases, WorkingPoint wp);
std::size_t phase_feature_count(WorkingPoint wp);

struct Calibration {
  double time_per_px = 0.047;     // ps
  double energy_per_px = 0.0031;  // MeV
  double charge_pc = 250.0;

  bool operator==(const Calibration&) const = default;
};

/// Intensity grid (H,W) with its pixel calibration.
struct ScreenImage {
  Tensor<float> pixels;
  Calibration calibration;

  std::size_t rows() const { return pixels.dim(0); }
  std::size_t cols() const { return pixels.dim(1); }
};

enum class Scale { desk, full };

/// Camera grid and preprocessing geometry.
struct ScreenGeometry {
  std::size_t raw_rows, raw_cols;
  std::size_t crop_row, crop_col, crop_rows, crop_cols;
  std::size_t downsample;
  Calibration raw_calibration;

  static ScreenGeometry for_scale(Scale scale);
  std::size_t rows() const { return crop_rows / downsample; }
  std::size_t cols() const { return crop_cols / downsample; }
  /// Calibration of a preprocessed image.
  Calibration image_calibration() const;
};

struct SimParams {
  ScreenGeometry screen = ScreenGeometry::for_scale(Scale::desk);
  WorkingPoint working_point = WorkingPoint::WP1;

  std::size_t macro_particles = 200'000;
  double bunch_length_ps = 5.0;           // rms of the Gaussian time profile
  double slice_energy_spread_mev = 0.03;  // uncorrelated
  double initial_chirp_mev_per_ps = 0.0;
  double reference_energy_mev = 130.0;
  double rf_frequency_ghz = 1.3;
  double a1_voltage_mev = 60.0;
  double ah1_voltage_mev = 1.5;  // 3rd harmonic; 0 switches AH1 off
  double gun_energy_mev = 0.0;   // set by calibrate_energy()
  double gun_tof_ps_per_deg = 2.0;

  // Hidden per-shot jitter (standard deviations); not visible to the model.
  bool jitter = true;
  double arrival_jitter_ps = 0.25;
  double charge_jitter_rel = 0.02;
  double pointing_jitter_px = 0.25;  // in preprocessed-image pixels

  double psf_sigma_px = 1.0;  // raw pixels
  double background_level = 0.02;
  double camera_noise = 0.002;
  std::uint64_t background_seed = 0xBAC4;

  /// Working-point presets; WP2 switches AH1 off and re-balances A1.
  static SimParams wp1(Scale scale = Scale::desk);
  static SimParams wp2(Scale scale = Scale::desk);
  static SimParams for_working_point(WorkingPoint wp, Scale scale = Scale::desk);
};

/// Ensemble-mean energy (MeV) at zero phases, jitter off, from the closed-form Gaussian averages.
double reference_mean_energy(const SimParams& params);
/// Sets gun_energy_mev so the reference shot's mean energy equals reference_energy_mev.
void calibrate_energy(SimParams& params);
/// A1 amplitude that keeps the reference mean energy of `base` once AH1 is switched off.
double rebalanced_a1_voltage(const SimParams& base);

/// Fixed low-amplitude camera background texture (raw grid), same for every shot of a geometry.
Tensor<float> background_frame(const SimParams& params);

/// Nearest-pixel histogram of macro-particles on the raw grid.
struct Deposit {
  Tensor<float> counts;
  std::size_t surviving = 0;
};

/// Raw camera frame for one shot: binned particles blurred by the point-spread,
/// peak scaled to 1, plus background and read noise. Deterministic in (phases, params, seed).
ScreenImage simulate_shot(const PhaseVector& phases, const SimParams& params, std::uint64_t seed);

/// Particle binning stage of simulate_shot, exposed for conservation checks.
Deposit deposit_shot(const PhaseVector& phases, const SimParams& params, std::uint64_t seed);

// Preprocessing stages.
Tensor<float> subtract_background(const Tensor<float>& raw, const Tensor<float>& background);
/// Clip negatives, scale peak to 1, zero every pixel below `threshold`. Idempotent.
Tensor<float> clip_normalize_threshold(const Tensor<float>& img, float threshold = 0.01f);
Tensor<float> crop(const Tensor<float>& img, std::size_t row, std::size_t col, std::size_t rows, std::size_t cols);
/// Block mean over factor x factor tiles; extents must divide evenly.
Tensor<float> block_downsample(const Tensor<float>& img, std::size_t factor);

/// Full chain: background subtraction, clip/normalize/threshold, crop, downsample,
/// then clip/normalize/threshold again so the output keeps max 1 and no sub-threshold pixels.
/// Returns nullopt for an empty shot.
std::optional<ScreenImage> preprocess(const ScreenImage& raw, const SimParams& params);

enum class Split : std::uint8_t { train = 0, test = 1 };

struct Shot {
  PhaseVector phases;
  ScreenImage image;
  Split split = Split::train;
};

struct Dataset {
  WorkingPoint working_point = WorkingPoint::WP1;
  std::size_t rows = 0, cols = 0;
  Calibration calibration;
  std::vector<Shot> shots;

  std::vector<std::size_t> indices(Split split) const;
  std::size_t count(Split split) const { return indices(split).size(); }
};

struct SampleOptions {
  Scale scale = Scale::desk;
  PhaseRanges ranges;
  double train_fraction = 0.8;
  /// Overrides the working-point preset when set.
  std::optional<SimParams> params;
};

/// Uniformly sampled phases (duplicates rejected), simulated and preprocessed shots,
/// seeded 80/20 train/test split. Empty shots are redrawn.
Dataset sample_dataset(WorkingPoint wp, std::size_t n_shots, std::uint64_t seed, const SampleOptions& options = {});

/// Little-endian container: "PSAE", u16 version, u8 working point, u32 shots, u32 rows, u32 cols,
/// f64 time/energy calibration and charge, then per shot 3 x f64 phases, rows*cols f32, u8 split.
std::vector<std::uint8_t> encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

inline constexpr std::uint16_t kDatasetVersion = 1;

/// Stream of well-mixed 64-bit seeds derived from a base seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

}  // namespace psae
