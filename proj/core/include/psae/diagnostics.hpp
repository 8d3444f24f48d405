#pragma once

#include <optional>
#include <string>
#include <vector>

#include "psae/beamline.hpp"

namespace psae {

struct CenterOfMass {
  double row = 0.0;
  double col = 0.0;
};

/// Longitudinal phase-space observables of one image.
struct LpsSummary {
  std::vector<double> current_profile;                 // A per time column
  std::vector<double> energy_spectrum;                 // unit maximum, per energy row
  std::vector<std::optional<double>> slice_sigma_e;    // MeV per time column; nullopt below the floor
  CenterOfMass center_of_mass;
};

inline constexpr double kSliceFloorFraction = 1e-3;

/// I_k = colsum_k / total * Q / dt, in amperes (pC / ps). Throws DomainError on zero total intensity.
std::vector<double> current_profile(const ScreenImage& img);
/// Row sums scaled to unit maximum.
std::vector<double> energy_spectrum(const ScreenImage& img);
CenterOfMass center_of_mass(const Tensor<float>& pixels);
/// Per-column intensity-weighted RMS energy; columns holding less than floor_fraction of the
/// total intensity are undefined.
std::vector<std::optional<double>> slice_energy_spread(const ScreenImage& img,
                                                       double floor_fraction = kSliceFloorFraction);
LpsSummary summarize(const ScreenImage& img);

/// Mean |4-neighbour discrete Laplacian| over interior pixels: a high-frequency energy measure.
double mean_abs_laplacian(const Tensor<float>& pixels);
/// Same measure restricted to interior pixels where `support` is positive (e.g. the measured beam).
double mean_abs_laplacian(const Tensor<float>& pixels, const Tensor<float>& support);

/// Differences between a predicted and a measured image. The prediction is first passed through
/// clip_normalize_threshold, the rule measured images already went through.
struct LpsComparison {
  double current_max_error = 0.0;   // max_k |I_pred - I_true| in A
  double peak_height_ratio = 0.0;   // max(I_pred) / max(I_true)
  double sigma_e_ratio = 0.0;       // mean sigma_E(pred) / mean sigma_E(true) over commonly defined columns, NaN if none
};

LpsComparison compare(const ScreenImage& predicted, const ScreenImage& truth);

struct DatasetQa {
  std::vector<double> min_phase_distance;  // per shot, Euclidean in degrees
  double min_row = 0.0, max_row = 0.0, min_col = 0.0, max_col = 0.0;  // CoM bounding box
  bool has_duplicates = false;

  double com_extent_rows() const { return max_row - min_row; }
  double com_extent_cols() const { return max_col - min_col; }
};

/// Requires at least two shots.
DatasetQa dataset_qa(const Dataset& ds);

std::string to_json(const LpsSummary& s);
std::string to_json(const DatasetQa& qa);
/// Long format "quantity,index,value" for current_A, sigma_e_MeV (undefined slices omitted) and spectrum.
std::string profiles_csv(const LpsSummary& s);

}  // namespace psae
