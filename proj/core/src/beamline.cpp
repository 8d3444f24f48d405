#include "psae/beamline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "psae/io.hpp"
#include "psae/parallel.hpp"

namespace psae {

std::string to_string(WorkingPoint wp) { return wp == WorkingPoint::WP1 ? "WP1" : "WP2"; }

WorkingPoint parse_working_point(const std::string& text) {
  if (text == "WP1") return WorkingPoint::WP1;
  if (text == "WP2") return WorkingPoint::WP2;
  throw ConfigError("unknown working point '" + text + "' (expected WP1 or WP2)");
}

std::size_t phase_feature_count(WorkingPoint wp) { return wp == WorkingPoint::WP1 ? 3 : 2; }

std::vector<float> phase_features(const PhaseVector& phases, WorkingPoint wp) {
  const PhaseRanges r;
  std::vector<float> f{static_cast<float>(phases.gun / r.gun), static_cast<float>(phases.a1 / r.a1)};
  if (wp == WorkingPoint::WP1) f.push_back(static_cast<float>(phases.ah1 / r.ah1));
  return f;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t x = base ^ (index * 0x9E3779B97F4A7C15ull + 0x632BE59BD9B4E019ull);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

ScreenGeometry ScreenGeometry::for_scale(Scale scale) {
  if (scale == Scale::full) {
    // 1750 x 2330 camera frame, cropped and halved to 768 x 1024.
    return {1750, 2330, 107, 141, 1536, 2048, 2, Calibration{}};
  }
  // The same field of view binned 8x per axis, cropped and halved to 96 x 128.
  Calibration binned;
  binned.time_per_px *= 8.0;
  binned.energy_per_px *= 8.0;
  return {219, 291, 13, 17, 192, 256, 2, binned};
}

Calibration ScreenGeometry::image_calibration() const {
  Calibration c = raw_calibration;
  c.time_per_px *= static_cast<double>(downsample);
  c.energy_per_px *= static_cast<double>(downsample);
  return c;
}

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double omega_rad_per_ps(const SimParams& p) { return 2.0 * std::numbers::pi * p.rf_frequency_ghz * 1e-3; }

// <cos(k t)> for t ~ N(0, sigma^2)
double gaussian_cos_mean(double k, double sigma) { return std::exp(-0.5 * k * k * sigma * sigma); }

}  // namespace

double reference_mean_energy(const SimParams& p) {
  const double w = omega_rad_per_ps(p);
  // AH1 sits at zero crossing: <cos(pi/2 + 3 w t)> = -<sin(3 w t)> = 0 for a centred Gaussian bunch.
  return p.gun_energy_mev + p.a1_voltage_mev * gaussian_cos_mean(w, p.bunch_length_ps);
}

void calibrate_energy(SimParams& p) {
  p.gun_energy_mev = 0.0;
  p.gun_energy_mev = p.reference_energy_mev - reference_mean_energy(p);
}

double rebalanced_a1_voltage(const SimParams& base) {
  SimParams off = base;
  off.ah1_voltage_mev = 0.0;
  off.a1_voltage_mev = 0.0;
  const double without_a1 = reference_mean_energy(off);
  const double w = omega_rad_per_ps(base);
  return (base.reference_energy_mev - without_a1) / gaussian_cos_mean(w, base.bunch_length_ps);
}

SimParams SimParams::wp1(Scale scale) {
  SimParams p;
  p.screen = ScreenGeometry::for_scale(scale);
  p.working_point = WorkingPoint::WP1;
  calibrate_energy(p);
  return p;
}

SimParams SimParams::wp2(Scale scale) {
  SimParams p = wp1(scale);
  p.working_point = WorkingPoint::WP2;
  p.a1_voltage_mev = rebalanced_a1_voltage(p);
  p.ah1_voltage_mev = 0.0;
  return p;
}

SimParams SimParams::for_working_point(WorkingPoint wp, Scale scale) {
  return wp == WorkingPoint::WP1 ? wp1(scale) : wp2(scale);
}

namespace {

std::vector<float> gaussian_taps(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> taps(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i / sigma) * (i / sigma));
    taps[i + radius] = static_cast<float>(v);
    total += v;
  }
  for (float& t : taps) t = static_cast<float>(t / total);
  return taps;
}

// Separable blur with zero padding.
Tensor<float> blur(const Tensor<float>& img, double sigma) {
  if (sigma <= 0.0) return img;
  const auto taps = gaussian_taps(sigma);
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(taps.size() / 2);
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(img.dim(0)), w = static_cast<std::ptrdiff_t>(img.dim(1));
  Tensor<float> tmp(img.shape());
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    const float* src = img.ptr() + y * w;
    float* dst = tmp.ptr() + y * w;
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      const float v = src[x];
      if (v == 0.0f) continue;
      for (std::ptrdiff_t k = -r; k <= r; ++k) {
        const std::ptrdiff_t xx = x + k;
        if (xx >= 0 && xx < w) dst[xx] += v * taps[k + r];
      }
    }
  }
  Tensor<float> out(img.shape());
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    const float* src = tmp.ptr() + y * w;
    for (std::ptrdiff_t k = -r; k <= r; ++k) {
      const std::ptrdiff_t yy = y + k;
      if (yy < 0 || yy >= h) continue;
      float* dst = out.ptr() + yy * w;
      const float t = taps[k + r];
      for (std::ptrdiff_t x = 0; x < w; ++x) dst[x] += t * src[x];
    }
  }
  return out;
}

struct ShotJitter {
  double arrival_ps = 0.0;
  double charge_rel = 1.0;
  double pointing_row = 0.0;
  double pointing_col = 0.0;
};

}  // namespace

Tensor<float> background_frame(const SimParams& p) {
  const auto& g = p.screen;
  std::mt19937_64 rng(derive_seed(p.background_seed, g.raw_rows * 100003 + g.raw_cols));
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor<float> noise(Shape{g.raw_rows, g.raw_cols});
  for (float& v : noise.data()) v = u(rng);
  Tensor<float> smooth = blur(noise, 0.02 * static_cast<double>(g.raw_cols));
  float lo = smooth[0], hi = smooth[0];
  for (float v : smooth.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float span = hi > lo ? hi - lo : 1.0f;
  for (float& v : smooth.data()) v = static_cast<float>(p.background_level) * (v - lo) / span;
  return smooth;
}

Deposit deposit_shot(const PhaseVector& phases, const SimParams& p, std::uint64_t seed) {
  if (p.macro_particles == 0) throw ConfigError("simulate_shot: zero macro-particles");
  const auto& g = p.screen;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  ShotJitter j;
  if (p.jitter) {
    j.arrival_ps = p.arrival_jitter_ps * normal(rng);
    j.charge_rel = std::max(0.5, 1.0 + p.charge_jitter_rel * normal(rng));
    j.pointing_row = p.pointing_jitter_px * normal(rng);
    j.pointing_col = p.pointing_jitter_px * normal(rng);
  }

  const double w = omega_rad_per_ps(p);
  const double sigma_t = p.bunch_length_ps * std::cbrt(j.charge_rel);
  const double arrival = p.gun_tof_ps_per_deg * phases.gun + j.arrival_ps;
  const double gun_gain = p.gun_energy_mev * std::cos(phases.gun * kDeg);
  const double a1_phase = phases.a1 * kDeg;
  const double ah1_phase = std::numbers::pi / 2.0 + phases.ah1 * kDeg;
  const bool ah1_on = p.ah1_voltage_mev != 0.0;
  const double ds = static_cast<double>(g.downsample);
  const double row0 = static_cast<double>(g.crop_row) + 0.5 * static_cast<double>(g.crop_rows) - 0.5 + j.pointing_row * ds;
  const double col0 = static_cast<double>(g.crop_col) + 0.5 * static_cast<double>(g.crop_cols) - 0.5 + j.pointing_col * ds;

  Deposit d;
  d.counts = Tensor<float>(Shape{g.raw_rows, g.raw_cols});
  const auto rows = static_cast<std::ptrdiff_t>(g.raw_rows), cols = static_cast<std::ptrdiff_t>(g.raw_cols);
  for (std::size_t i = 0; i < p.macro_particles; ++i) {
    const double tau = sigma_t * normal(rng);
    const double t = arrival + tau;
    double e = gun_gain + p.a1_voltage_mev * std::cos(a1_phase + w * t) + p.initial_chirp_mev_per_ps * tau +
               p.slice_energy_spread_mev * normal(rng);
    if (ah1_on) e += p.ah1_voltage_mev * std::cos(ah1_phase + 3.0 * w * t);
    const double c = col0 + t / g.raw_calibration.time_per_px;
    const double r = row0 + (e - p.reference_energy_mev) / g.raw_calibration.energy_per_px;
    const auto ri = static_cast<std::ptrdiff_t>(std::floor(r + 0.5));
    const auto ci = static_cast<std::ptrdiff_t>(std::floor(c + 0.5));
    if (ri < 0 || ri >= rows || ci < 0 || ci >= cols) continue;
    d.counts[static_cast<std::size_t>(ri * cols + ci)] += 1.0f;
    ++d.surviving;
  }
  return d;
}

ScreenImage simulate_shot(const PhaseVector& phases, const SimParams& p, std::uint64_t seed) {
  Deposit d = deposit_shot(phases, p, seed);
  if (d.surviving * 100 < p.macro_particles * 99) {
    throw DomainError("simulate_shot: " + std::to_string(p.macro_particles - d.surviving) + " of " +
                std::to_string(p.macro_particles) + " particles fall outside the " + std::to_string(p.screen.raw_rows) +
                "x" + std::to_string(p.screen.raw_cols) + " grid");
  }
  Tensor<float> img = blur(d.counts, p.psf_sigma_px);
  float peak = 0.0f;
  for (float v : img.data()) peak = std::max(peak, v);
  const Tensor<float> bg = background_frame(p);
  std::mt19937_64 rng(derive_seed(seed, 0xCA3E4A));
  std::normal_distribution<float> noise(0.0f, static_cast<float>(p.camera_noise));
  const float gain = peak > 0.0f ? 0.9f / peak : 0.0f;
  for (std::size_t i = 0; i < img.size(); ++i) {
    img[i] = std::max(0.0f, img[i] * gain + bg[i] + noise(rng));
  }
  return ScreenImage{std::move(img), p.screen.raw_calibration};
}

Tensor<float> subtract_background(const Tensor<float>& raw, const Tensor<float>& background) {
  require_same_shape(raw.shape(), background.shape(), "subtract_background");
  Tensor<float> out(raw.shape());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] - background[i];
  return out;
}

Tensor<float> clip_normalize_threshold(const Tensor<float>& img, float threshold) {
  Tensor<float> out(img.shape());
  float peak = 0.0f;
  for (std::size_t i = 0; i < img.size(); ++i) {
    out[i] = std::max(0.0f, img[i]);
    peak = std::max(peak, out[i]);
  }
  if (peak <= 0.0f) return out;
  for (float& v : out.data()) {
    v /= peak;
    if (v < threshold) v = 0.0f;
  }
  return out;
}

Tensor<float> crop(const Tensor<float>& img, std::size_t row, std::size_t col, std::size_t rows, std::size_t cols) {
  if (img.rank() != 2 || row + rows > img.dim(0) || col + cols > img.dim(1)) {
    throw DimensionError("crop: window exceeds image " + shape_str(img.shape()));
  }
  Tensor<float> out(Shape{rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(img.ptr() + (row + r) * img.dim(1) + col, cols, out.ptr() + r * cols);
  }
  return out;
}

Tensor<float> block_downsample(const Tensor<float>& img, std::size_t factor) {
  if (img.rank() != 2 || factor == 0 || img.dim(0) % factor || img.dim(1) % factor) {
    throw DimensionError("block_downsample: " + shape_str(img.shape()) + " not divisible by " + std::to_string(factor));
  }
  const std::size_t h = img.dim(0) / factor, w = img.dim(1) / factor, wi = img.dim(1);
  Tensor<float> out(Shape{h, w});
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (std::size_t dy = 0; dy < factor; ++dy) {
        const float* src = img.ptr() + (r * factor + dy) * wi + c * factor;
        for (std::size_t dx = 0; dx < factor; ++dx) acc += src[dx];
      }
      out[r * w + c] = static_cast<float>(acc * inv);
    }
  }
  return out;
}

namespace {

std::optional<ScreenImage> preprocess_with(const ScreenImage& raw, const Tensor<float>& background,
                                           const ScreenGeometry& g) {
  Tensor<float> img = clip_normalize_threshold(subtract_background(raw.pixels, background));
  img = crop(img, g.crop_row, g.crop_col, g.crop_rows, g.crop_cols);
  img = clip_normalize_threshold(block_downsample(img, g.downsample));
  const bool empty = std::all_of(img.data().begin(), img.data().end(), [](float v) { return v == 0.0f; });
  if (empty) return std::nullopt;
  Calibration cal = g.image_calibration();
  cal.charge_pc = raw.calibration.charge_pc;
  return ScreenImage{std::move(img), cal};
}

}  // namespace

std::optional<ScreenImage> preprocess(const ScreenImage& raw, const SimParams& params) {
  return preprocess_with(raw, background_frame(params), params.screen);
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < shots.size(); ++i) {
    if (shots[i].split == split) out.push_back(i);
  }
  return out;
}

Dataset sample_dataset(WorkingPoint wp, std::size_t n_shots, std::uint64_t seed, const SampleOptions& options) {
  if (n_shots == 0) throw ConfigError("sample_dataset: n_shots must be positive");
  const SimParams params = options.params ? *options.params : SimParams::for_working_point(wp, options.scale);
  const Tensor<float> background = background_frame(params);
  const ScreenGeometry& g = params.screen;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> gun(-options.ranges.gun, options.ranges.gun);
  std::uniform_real_distribution<double> a1(-options.ranges.a1, options.ranges.a1);
  std::uniform_real_distribution<double> ah1(-options.ranges.ah1, options.ranges.ah1);
  std::set<std::array<double, 3>> seen;
  auto draw = [&] {
    for (;;) {
      PhaseVector p;
      p.gun = gun(rng);
      p.a1 = a1(rng);
      p.ah1 = wp == WorkingPoint::WP1 ? ah1(rng) : 0.0;
      if (seen.insert({p.gun, p.a1, p.ah1}).second) return p;
    }
  };

  Dataset ds;
  ds.working_point = wp;
  ds.rows = g.rows();
  ds.cols = g.cols();
  ds.calibration = g.image_calibration();
  ds.calibration.charge_pc = params.screen.raw_calibration.charge_pc;

  std::vector<PhaseVector> phases(n_shots);
  for (auto& p : phases) p = draw();
  std::vector<std::optional<ScreenImage>> images(n_shots);
  parallel_for(n_shots, [&](std::size_t i) {
    images[i] = preprocess_with(simulate_shot(phases[i], params, derive_seed(seed, i)), background, g);
  });
  std::uint64_t extra = n_shots;
  for (std::size_t i = 0; i < n_shots; ++i) {
    while (!images[i]) {
      phases[i] = draw();
      images[i] = preprocess_with(simulate_shot(phases[i], params, derive_seed(seed, extra++)), background, g);
    }
    ds.shots.push_back(Shot{phases[i], std::move(*images[i]), Split::test});
  }

  std::vector<std::size_t> order(n_shots);
  for (std::size_t i = 0; i < n_shots; ++i) order[i] = i;
  std::mt19937_64 split_rng(derive_seed(seed, 0x5B117));
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_train = static_cast<std::size_t>(std::llround(options.train_fraction * static_cast<double>(n_shots)));
  for (std::size_t k = 0; k < n_train && k < n_shots; ++k) ds.shots[order[k]].split = Split::train;
  return ds;
}

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  ByteWriter w;
  w.bytes({reinterpret_cast<const std::uint8_t*>("PSAE"), 4});
  w.u16(kDatasetVersion);
  w.u8(static_cast<std::uint8_t>(ds.working_point));
  w.u32(static_cast<std::uint32_t>(ds.shots.size()));
  w.u32(static_cast<std::uint32_t>(ds.rows));
  w.u32(static_cast<std::uint32_t>(ds.cols));
  w.f64(ds.calibration.time_per_px);
  w.f64(ds.calibration.energy_per_px);
  w.f64(ds.calibration.charge_pc);
  for (const Shot& s : ds.shots) {
    require_same_shape(s.image.pixels.shape(), Shape{ds.rows, ds.cols}, "encode_dataset");
    w.f64(s.phases.gun);
    w.f64(s.phases.a1);
    w.f64(s.phases.ah1);
    w.f32_array(s.image.pixels.data());
    w.u8(static_cast<std::uint8_t>(s.split));
  }
  return std::move(w.buffer());
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "dataset");
  const auto magic = r.bytes(4);
  if (std::string(magic.begin(), magic.end()) != "PSAE") throw FormatError("dataset: bad magic");
  const std::uint16_t version = r.u16();
  if (version != kDatasetVersion) {
    throw FormatError("dataset: unsupported version " + std::to_string(version));
  }
  Dataset ds;
  const std::uint8_t tag = r.u8();
  if (tag != 1 && tag != 2) throw FormatError("dataset: unknown working point tag " + std::to_string(tag));
  ds.working_point = static_cast<WorkingPoint>(tag);
  const std::uint32_t n = r.u32();
  ds.rows = r.u32();
  ds.cols = r.u32();
  ds.calibration.time_per_px = r.f64();
  ds.calibration.energy_per_px = r.f64();
  ds.calibration.charge_pc = r.f64();
  const std::size_t per_shot = 3 * 8 + ds.rows * ds.cols * 4 + 1;
  if (r.remaining() != per_shot * n) {
    throw FormatError("dataset: expected " + std::to_string(per_shot * n) + " payload bytes, found " +
                      std::to_string(r.remaining()));
  }
  ds.shots.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Shot s;
    s.phases.gun = r.f64();
    s.phases.a1 = r.f64();
    s.phases.ah1 = r.f64();
    s.image.pixels = Tensor<float>(Shape{ds.rows, ds.cols});
    r.f32_array(s.image.pixels.data());
    s.image.calibration = ds.calibration;
    const std::uint8_t split = r.u8();
    if (split > 1) throw FormatError("dataset: bad split flag in shot " + std::to_string(i));
    s.split = static_cast<Split>(split);
    ds.shots.push_back(std::move(s));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) { write_file(path, encode_dataset(ds)); }

Dataset load_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

}  // namespace psae
