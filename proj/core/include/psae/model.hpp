#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "psae/ops.hpp"
#include "psae/tape.hpp"

namespace psae {

/// Fully-connected phase encoder: input -> hidden[0] -> hidden[1] -> latent, leaky ReLU after each.
struct EncoderConfig {
  std::size_t input_dim = 3;
  std::array<std::size_t, 2> hidden{64, 128};
  std::size_t latent_dim = 64;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Transposed-convolution decoder.
///
/// Stage 1 (3x4 kernel, stride 1, no padding) turns the (c,1,1) latent into a 3x4 map,
/// stage 2 (3x3, pad 1) keeps 3x4, and every further stage is 5x5 with pad 2: stride 1
/// to keep the size or stride 2 with output padding 1 to double it. The stride-2 stages
/// come last. Every stage but the last is followed by batch norm and leaky ReLU; the
/// last by a sigmoid.
struct DecoderConfig {
  std::size_t latent_dim = 64;
  std::vector<ConvTransposeSpec> stages;
  std::size_t n_upsample = 0;

  /// Builds the stage list from per-stage output channels (at most 10 stages).
  static DecoderConfig make(std::size_t latent_dim, const std::vector<std::size_t>& channels,
                            std::size_t n_upsample);
  /// 10 stages, 5 upsampling stages: 96x128 output.
  static DecoderConfig desk();
  /// 10 stages, 8 upsampling stages: 768x1024 output.
  static DecoderConfig full_scale();

  /// Throws ConfigError naming the offending stage.
  void validate() const;
  /// (3 * 2^n_upsample, 4 * 2^n_upsample)
  std::array<std::size_t, 2> output_size() const;

  bool operator==(const DecoderConfig&) const = default;
};

inline const std::vector<std::size_t> kDeskChannels{64, 64, 48, 32, 24, 16, 12, 8, 4, 1};

struct DenseLayer {
  Parameter<float> weight;
  Parameter<float> bias;
};

struct Encoder {
  EncoderConfig config;
  std::array<DenseLayer, 3> layers;
};

struct DecoderStage {
  ConvTransposeSpec spec;
  Parameter<float> weight;
  Parameter<float> bias;
  // Present on every stage but the last.
  bool normalized = false;
  Parameter<float> gamma;
  Parameter<float> beta;
  BatchNormState<float> stats;
};

struct Decoder {
  DecoderConfig config;
  std::vector<DecoderStage> stages;
};

struct ParameterCounts {
  std::map<std::string, std::size_t> per_group;
  std::size_t trainable = 0;
  std::size_t frozen = 0;
  std::size_t total = 0;
};

/// A trainable parameter with the group it belongs to.
struct ParameterRef {
  std::string group;
  Parameter<float>* param;
};

struct ModelOptions {
  float leaky_slope = static_cast<float>(kDefaultLeakySlope);
  BatchNormOptions batch_norm;

  bool operator==(const ModelOptions&) const = default;
};

/// One decoder shared by any number of phase encoders keyed by working point.
///
/// Parameter groups are "decoder" and "encoder:<id>". Frozen groups still pass
/// gradients through; only the optimizer skips them.
class Autoencoder {
 public:
  static constexpr const char* kDecoderGroup = "decoder";
  static std::string encoder_group(const std::string& id) { return "encoder:" + id; }

  /// He-initialized model (std sqrt(2/fan_in), zero biases) with a single encoder.
  static Autoencoder build(const EncoderConfig& encoder, const DecoderConfig& decoder, std::uint64_t seed,
                           const std::string& encoder_id = "WP1", const ModelOptions& options = {});

  void attach_encoder(const std::string& id, const EncoderConfig& config, std::uint64_t seed);

  void freeze(const std::string& group);
  void unfreeze(const std::string& group);
  bool is_frozen(const std::string& group) const;

  bool has_encoder(const std::string& id) const { return encoders_.count(id) != 0; }
  std::vector<std::string> encoder_ids() const;
  const Encoder& encoder(const std::string& id) const;
  Encoder& encoder(const std::string& id);
  const Decoder& decoder() const { return decoder_; }
  Decoder& decoder() { return decoder_; }
  const ModelOptions& options() const { return options_; }
  const std::vector<std::string>& frozen_groups() const { return frozen_; }

  /// Phases (B, input_dim) -> images (B, 1, H, W). Train mode updates batch-norm running stats,
  /// except while the decoder is frozen: its batch norms then always use the running statistics.
  Var forward(Tape<float>& tape, Var phases, const std::string& encoder_id, BatchNormMode mode);

  /// Inference-mode forward without gradients.
  Tensor<float> predict(const Tensor<float>& phases, const std::string& encoder_id) const;

  /// Every parameter, including frozen ones, in a stable order.
  std::vector<ParameterRef> parameters();
  ParameterCounts count_parameters() const;

  /// Registers an already-populated encoder (checkpoint loading).
  void insert_encoder(const std::string& id, Encoder encoder);
  Autoencoder(Decoder decoder, ModelOptions options) : decoder_(std::move(decoder)), options_(options) {}

 private:
  Decoder decoder_;
  std::map<std::string, Encoder> encoders_;
  std::vector<std::string> frozen_;
  ModelOptions options_;
};

/// Shapes of the decoder's intermediate maps for one sample: (c,1,1), then each stage output.
std::vector<Shape> decoder_shape_chain(const DecoderConfig& config);

}  // namespace psae
