#include "psae/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace psae {

namespace {

void require_image(const Tensor<float>& px, const char* what) {
  if (px.rank() != 2) throw DimensionError(std::string(what) + ": expected (H,W) image, got " + shape_str(px.shape()));
}

double total_intensity(const Tensor<float>& px, const char* what) {
  double total = 0.0;
  for (float v : px.data()) total += v;
  if (!(total > 0.0)) throw DomainError(std::string(what) + ": image has zero total intensity");
  return total;
}

}  // namespace

std::vector<double> current_profile(const ScreenImage& img) {
  const auto& px = img.pixels;
  require_image(px, "current_profile");
  const double total = total_intensity(px, "current_profile");
  const std::size_t h = px.dim(0), w = px.dim(1);
  std::vector<double> cols(w, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) cols[c] += px[r * w + c];
  }
  const double scale = img.calibration.charge_pc / img.calibration.time_per_px / total;
  for (double& v : cols) v *= scale;
  return cols;
}

std::vector<double> energy_spectrum(const ScreenImage& img) {
  const auto& px = img.pixels;
  require_image(px, "energy_spectrum");
  total_intensity(px, "energy_spectrum");
  const std::size_t h = px.dim(0), w = px.dim(1);
  std::vector<double> rows(h, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) rows[r] += px[r * w + c];
  }
  const double peak = *std::max_element(rows.begin(), rows.end());
  for (double& v : rows) v /= peak;
  return rows;
}

CenterOfMass center_of_mass(const Tensor<float>& px) {
  require_image(px, "center_of_mass");
  const double total = total_intensity(px, "center_of_mass");
  const std::size_t h = px.dim(0), w = px.dim(1);
  double sr = 0.0, sc = 0.0;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double v = px[r * w + c];
      sr += v * static_cast<double>(r);
      sc += v * static_cast<double>(c);
    }
  }
  return {sr / total, sc / total};
}

std::vector<std::optional<double>> slice_energy_spread(const ScreenImage& img, double floor_fraction) {
  const auto& px = img.pixels;
  require_image(px, "slice_energy_spread");
  const std::size_t h = px.dim(0), w = px.dim(1);
  double total = 0.0;
  for (float v : px.data()) total += v;
  std::vector<std::optional<double>> out(w);
  if (!(total > 0.0)) return out;
  const double floor = floor_fraction * total;
  for (std::size_t c = 0; c < w; ++c) {
    double s0 = 0.0, s1 = 0.0;
    for (std::size_t r = 0; r < h; ++r) {
      const double v = px[r * w + c];
      s0 += v;
      s1 += v * static_cast<double>(r);
    }
    if (s0 <= floor || s0 <= 0.0) continue;
    const double mean = s1 / s0;
    double s2 = 0.0;
    for (std::size_t r = 0; r < h; ++r) {
      const double d = static_cast<double>(r) - mean;
      s2 += px[r * w + c] * d * d;
    }
    out[c] = img.calibration.energy_per_px * std::sqrt(s2 / s0);
  }
  return out;
}

LpsSummary summarize(const ScreenImage& img) {
  return {current_profile(img), energy_spectrum(img), slice_energy_spread(img), center_of_mass(img.pixels)};
}

double mean_abs_laplacian(const Tensor<float>& px) {
  require_image(px, "mean_abs_laplacian");
  const std::size_t h = px.dim(0), w = px.dim(1);
  if (h < 3 || w < 3) throw DimensionError("mean_abs_laplacian: image " + shape_str(px.shape()) + " has no interior");
  double sum = 0.0;
  for (std::size_t r = 1; r + 1 < h; ++r) {
    for (std::size_t c = 1; c + 1 < w; ++c) {
      const double lap = static_cast<double>(px[(r - 1) * w + c]) + px[(r + 1) * w + c] + px[r * w + c - 1] +
                         px[r * w + c + 1] - 4.0 * px[r * w + c];
      sum += std::abs(lap);
    }
  }
  return sum / static_cast<double>((h - 2) * (w - 2));
}

double mean_abs_laplacian(const Tensor<float>& px, const Tensor<float>& support) {
  require_image(px, "mean_abs_laplacian");
  require_same_shape(px.shape(), support.shape(), "mean_abs_laplacian support");
  const std::size_t h = px.dim(0), w = px.dim(1);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 1; r + 1 < h; ++r) {
    for (std::size_t c = 1; c + 1 < w; ++c) {
      if (!(support[r * w + c] > 0.0f)) continue;
      const double lap = static_cast<double>(px[(r - 1) * w + c]) + px[(r + 1) * w + c] + px[r * w + c - 1] +
                         px[r * w + c + 1] - 4.0 * px[r * w + c];
      sum += std::abs(lap);
      ++count;
    }
  }
  if (count == 0) throw DomainError("mean_abs_laplacian: support has no interior pixel");
  return sum / static_cast<double>(count);
}

LpsComparison compare(const ScreenImage& raw_predicted, const ScreenImage& truth) {
  require_same_shape(raw_predicted.pixels.shape(), truth.pixels.shape(), "compare");
  const ScreenImage predicted{clip_normalize_threshold(raw_predicted.pixels), raw_predicted.calibration};
  const auto ip = current_profile(predicted), it = current_profile(truth);
  LpsComparison out;
  double peak_p = 0.0, peak_t = 0.0;
  for (std::size_t k = 0; k < ip.size(); ++k) {
    out.current_max_error = std::max(out.current_max_error, std::abs(ip[k] - it[k]));
    peak_p = std::max(peak_p, ip[k]);
    peak_t = std::max(peak_t, it[k]);
  }
  out.peak_height_ratio = peak_p / peak_t;
  const auto sp = slice_energy_spread(predicted), st = slice_energy_spread(truth);
  double sum_p = 0.0, sum_t = 0.0;
  for (std::size_t k = 0; k < sp.size(); ++k) {
    if (sp[k] && st[k]) {
      sum_p += *sp[k];
      sum_t += *st[k];
    }
  }
  out.sigma_e_ratio = sum_t > 0.0 ? sum_p / sum_t : std::numeric_limits<double>::quiet_NaN();
  return out;
}

DatasetQa dataset_qa(const Dataset& ds) {
  const std::size_t n = ds.shots.size();
  if (n < 2) throw DomainError("dataset_qa: needs at least 2 shots, got " + std::to_string(n));
  DatasetQa qa;
  qa.min_phase_distance.assign(n, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = ds.shots[i].phases;
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& b = ds.shots[j].phases;
      const double d = std::sqrt((a.gun - b.gun) * (a.gun - b.gun) + (a.a1 - b.a1) * (a.a1 - b.a1) +
                                 (a.ah1 - b.ah1) * (a.ah1 - b.ah1));
      qa.min_phase_distance[i] = std::min(qa.min_phase_distance[i], d);
      qa.min_phase_distance[j] = std::min(qa.min_phase_distance[j], d);
    }
  }
  qa.has_duplicates = std::any_of(qa.min_phase_distance.begin(), qa.min_phase_distance.end(),
                                  [](double d) { return d == 0.0; });
  qa.min_row = qa.min_col = std::numeric_limits<double>::infinity();
  qa.max_row = qa.max_col = -std::numeric_limits<double>::infinity();
  for (const Shot& s : ds.shots) {
    const CenterOfMass com = center_of_mass(s.image.pixels);
    qa.min_row = std::min(qa.min_row, com.row);
    qa.max_row = std::max(qa.max_row, com.row);
    qa.min_col = std::min(qa.min_col, com.col);
    qa.max_col = std::max(qa.max_col, com.col);
  }
  return qa;
}

namespace {

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

std::string to_json(const LpsSummary& s) {
  nlohmann::json sigma = nlohmann::json::array();
  for (const auto& v : s.slice_sigma_e) sigma.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  nlohmann::json j{{"current_profile_A", s.current_profile},
                   {"energy_spectrum", s.energy_spectrum},
                   {"slice_sigma_e_MeV", sigma},
                   {"center_of_mass", {{"row", s.center_of_mass.row}, {"col", s.center_of_mass.col}}}};
  return j.dump();
}

std::string to_json(const DatasetQa& qa) {
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0, mean = 0.0;
  for (double d : qa.min_phase_distance) {
    lo = std::min(lo, d);
    hi = std::max(hi, d);
    mean += d;
  }
  mean /= static_cast<double>(qa.min_phase_distance.size());
  nlohmann::json j{{"shots", qa.min_phase_distance.size()},
                   {"has_duplicates", qa.has_duplicates},
                   {"min_phase_distance", {{"min", finite_or_null(lo)}, {"mean", finite_or_null(mean)}, {"max", finite_or_null(hi)}}},
                   {"center_of_mass_box",
                    {{"row_min", qa.min_row},
                     {"row_max", qa.max_row},
                     {"col_min", qa.min_col},
                     {"col_max", qa.max_col},
                     {"extent_rows", qa.com_extent_rows()},
                     {"extent_cols", qa.com_extent_cols()}}},
                   {"per_shot_min_phase_distance", qa.min_phase_distance}};
  return j.dump();
}

std::string profiles_csv(const LpsSummary& s) {
  std::ostringstream out;
  out.precision(17);
  out << "quantity,index,value\n";
  for (std::size_t k = 0; k < s.current_profile.size(); ++k) out << "current_A," << k << ',' << s.current_profile[k] << '\n';
  for (std::size_t k = 0; k < s.slice_sigma_e.size(); ++k) {
    if (s.slice_sigma_e[k]) out << "sigma_e_MeV," << k << ',' << *s.slice_sigma_e[k] << '\n';
  }
  for (std::size_t r = 0; r < s.energy_spectrum.size(); ++r) out << "spectrum," << r << ',' << s.energy_spectrum[r] << '\n';
  return out.str();
}

}  // namespace psae
