#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "psae/beamline.hpp"
#include "psae/diagnostics.hpp"
#include "psae/loss.hpp"
#include "psae/model.hpp"

namespace psae {

enum class LossKind { ms_ssim, ssim, mse };

std::string to_string(LossKind kind);
/// Throws ConfigError for anything other than "ms_ssim", "ssim", "mse".
LossKind parse_loss_kind(const std::string& text);

struct TrainConfig {
  LossKind loss = LossKind::ms_ssim;
  /// Loss settings for ms_ssim; ssim uses the same window with M = 0, alpha_0 = 1.
  /// Test-set h is always measured with this configuration.
  MsSsimConfig ms_ssim;
  double learning_rate = 1e-3;
  std::size_t epochs = 600;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  std::vector<std::string> freeze;
  std::string encoder_id = "WP1";
  /// Epoch (0-based) at which the decoder is unfrozen during transfer training.
  std::optional<std::size_t> fine_tune_at;
  /// Test-set evaluation cadence in epochs; the last epoch is always evaluated.
  std::size_t eval_every = 1;

  /// Throws ConfigError on batch size < 2, zero epochs or non-positive learning rate.
  void validate() const;
  /// The structural-similarity settings the loss uses.
  MsSsimConfig loss_ssim_config() const;
};

std::string to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First and second moments of one parameter, with its own step count for bias correction.
struct AdamMoments {
  Tensor<float> m;
  Tensor<float> v;
  std::uint64_t step = 0;
};

struct AdamState {
  std::map<std::string, AdamMoments> moments;  // keyed by parameter name
};

/// One bias-corrected Adam update of a single parameter from its accumulated gradient.
void adam_update(Parameter<float>& param, AdamMoments& moments, double lr, const AdamOptions& options = {});

/// Updates every parameter of unfrozen groups; frozen parameters and their moments are untouched.
void adam_step(Autoencoder& model, AdamState& state, double lr, const AdamOptions& options = {});

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;                // mean over the epoch's mini-batches
  std::optional<double> test_mean_h;      // absent on epochs skipped by eval_every or without a test split
  double seconds = 0.0;
};

std::string to_json_line(const EpochMetrics& m);

struct TrainResult {
  std::vector<EpochMetrics> history;
  double initial_train_loss = 0.0;  // loss of the first mini-batch
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Mini-batch training on the dataset's train split with seeded per-epoch shuffles.
/// Groups listed in config.freeze are frozen first. Throws TrainingError on a non-finite loss.
TrainResult train(Autoencoder& model, AdamState& optimizer, const Dataset& ds, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Encoder-only training against a frozen decoder; refuses to run unless the decoder is frozen.
/// With config.fine_tune_at set, the decoder is unfrozen from that epoch on.
TrainResult transfer_train(Autoencoder& model, AdamState& optimizer, const Dataset& ds, const TrainConfig& config,
                           const EpochCallback& on_epoch = {});

/// Encoder inputs for a list of shots: (B, features).
Tensor<float> phase_batch(const Dataset& ds, const std::vector<std::size_t>& shots);

/// Inference-mode image for one phase vector.
ScreenImage predict(const Autoencoder& model, const PhaseVector& phases, WorkingPoint wp,
                    const std::string& encoder_id, const Calibration& calibration);

struct ShotEvaluation {
  std::size_t shot = 0;
  double h = 0.0;
  double laplacian = 0.0;       // mean |Laplacian| of the raw prediction
  double beam_laplacian = 0.0;  // the same, over pixels where the measured image is nonzero
  LpsComparison lps;
};

struct EvalReport {
  Split split = Split::test;
  double mean_h = 0.0, min_h = 0.0, max_h = 0.0;
  double mean_current_max_error = 0.0;
  double max_current_max_error = 0.0;
  double mean_peak_height_ratio = 0.0;
  double mean_sigma_e_ratio = 0.0;  // over shots where the ratio is defined
  double mean_laplacian = 0.0;
  double mean_beam_laplacian = 0.0;
  std::vector<ShotEvaluation> shots;
};

/// Per-shot h and LPS deltas on a split. Throws DomainError on an empty split.
EvalReport evaluate(const Autoencoder& model, const Dataset& ds, Split split, const std::string& encoder_id,
                    const MsSsimConfig& metric = {});
/// Mean h only.
double evaluate_mean_h(const Autoencoder& model, const Dataset& ds, Split split, const std::string& encoder_id,
                       const MsSsimConfig& metric = {});

std::string to_json(const EvalReport& report, bool per_shot = true);

/// SHA-256 over the named values of a parameter group (and, for the decoder, its running statistics).
std::string group_digest(const Autoencoder& model, const std::string& group);

struct Checkpoint {
  Autoencoder model;
  AdamState optimizer;
  std::uint64_t epoch = 0;
  std::string train_config;  // JSON echo
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// "PSCK", u16 version, u64 total length, JSON model config, named f32 tensors (weights, running
/// statistics), Adam moments, epoch, training-config echo, trailing SHA-256 of everything before it.
std::vector<std::uint8_t> encode_checkpoint(const Autoencoder& model, const AdamState& optimizer, std::uint64_t epoch,
                                            const std::string& train_config);
/// Throws FormatError (bad magic, version mismatch, truncation), IntegrityError (digest) or
/// ConfigError (decoder differs from `expected_decoder`).
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes,
                             const std::optional<DecoderConfig>& expected_decoder = std::nullopt);
void save_checkpoint(const std::string& path, const Autoencoder& model, const AdamState& optimizer = {},
                     std::uint64_t epoch = 0, const std::string& train_config = "{}");
Checkpoint load_checkpoint(const std::string& path,
                           const std::optional<DecoderConfig>& expected_decoder = std::nullopt);

}  // namespace psae
