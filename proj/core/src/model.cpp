#include "psae/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace psae {

void EncoderConfig::validate() const {
  if (input_dim == 0 || hidden[0] == 0 || hidden[1] == 0 || latent_dim == 0) {
    throw ConfigError("encoder: layer widths must be positive");
  }
}

DecoderConfig DecoderConfig::make(std::size_t latent_dim, const std::vector<std::size_t>& channels,
                                  std::size_t n_upsample) {
  DecoderConfig cfg;
  cfg.latent_dim = latent_dim;
  cfg.n_upsample = n_upsample;
  const std::size_t n = channels.size();
  std::size_t in = latent_dim;
  for (std::size_t i = 0; i < n; ++i) {
    ConvTransposeSpec s;
    s.in_channels = in;
    s.out_channels = channels[i];
    if (i == 0) {
      s.kernel = {3, 4};
    } else if (i == 1) {
      s.kernel = {3, 3};
      s.padding = {1, 1};
    } else {
      s.kernel = {5, 5};
      s.padding = {2, 2};
      if (i + n_upsample >= n) {
        s.stride = {2, 2};
        s.output_padding = {1, 1};
      }
    }
    cfg.stages.push_back(s);
    in = channels[i];
  }
  return cfg;
}

DecoderConfig DecoderConfig::desk() { return make(64, kDeskChannels, 5); }

DecoderConfig DecoderConfig::full_scale() {
  return make(64, {192, 192, 128, 112, 96, 64, 32, 16, 8, 1}, 8);
}

void DecoderConfig::validate() const {
  if (latent_dim == 0) throw ConfigError("decoder: latent_dim must be positive");
  if (stages.empty() || stages.size() > 10) {
    throw ConfigError("decoder: expected 1 to 10 stages, got " + std::to_string(stages.size()));
  }
  std::size_t in = latent_dim, h = 1, w = 1, upsampling = 0;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const ConvTransposeSpec& s = stages[i];
    const std::string name = "decoder stage " + std::to_string(i + 1);
    try {
      s.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(name + ": " + e.what());
    }
    if (s.in_channels != in) {
      throw ConfigError(name + ": takes " + std::to_string(s.in_channels) + " channels, previous stage emits " +
                        std::to_string(in));
    }
    const std::array<std::size_t, 2> want = i == 0 ? std::array<std::size_t, 2>{3, 4}
                                            : i == 1 ? std::array<std::size_t, 2>{3, 3}
                                                     : std::array<std::size_t, 2>{5, 5};
    if (s.kernel != want) {
      throw ConfigError(name + ": kernel must be " + std::to_string(want[0]) + "x" + std::to_string(want[1]));
    }
    if (s.stride[0] != s.stride[1] || s.stride[0] > 2) throw ConfigError(name + ": stride must be 1 or 2");
    if (s.stride[0] == 2) ++upsampling;
    std::array<std::size_t, 2> out;
    try {
      out = s.output_size(h, w);
    } catch (const ConfigError& e) {
      throw ConfigError(name + ": " + e.what());
    }
    h = out[0];
    w = out[1];
    in = s.out_channels;
  }
  if (in != 1) throw ConfigError("decoder stage " + std::to_string(stages.size()) + ": must emit one channel");
  if (upsampling != n_upsample) {
    throw ConfigError("decoder: " + std::to_string(upsampling) + " stride-2 stages, n_upsample says " +
                      std::to_string(n_upsample));
  }
  const auto expect = output_size();
  if (h != expect[0] || w != expect[1]) {
    throw ConfigError("decoder: stages compose to " + std::to_string(h) + "x" + std::to_string(w) + ", expected " +
                      std::to_string(expect[0]) + "x" + std::to_string(expect[1]));
  }
}

std::array<std::size_t, 2> DecoderConfig::output_size() const {
  return {std::size_t{3} << n_upsample, std::size_t{4} << n_upsample};
}

std::vector<Shape> decoder_shape_chain(const DecoderConfig& config) {
  config.validate();
  std::vector<Shape> chain{{config.latent_dim, 1, 1}};
  std::size_t h = 1, w = 1;
  for (const auto& s : config.stages) {
    const auto out = s.output_size(h, w);
    h = out[0];
    w = out[1];
    chain.push_back({s.out_channels, h, w});
  }
  return chain;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

Parameter<float> he_normal(std::string name, Shape shape, std::size_t fan_in, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor<float> value(std::move(shape));
  for (float& v : value.data()) v = static_cast<float>(dist(rng));
  return Parameter<float>(std::move(name), std::move(value));
}

Encoder make_encoder(const std::string& id, const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Encoder enc;
  enc.config = cfg;
  const std::array<std::size_t, 4> widths{cfg.input_dim, cfg.hidden[0], cfg.hidden[1], cfg.latent_dim};
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string prefix = "encoder." + id + ".dense" + std::to_string(i);
    enc.layers[i].weight = he_normal(prefix + ".weight", {widths[i], widths[i + 1]}, widths[i],
                                     splitmix64(seed ^ splitmix64(0x100 + i)));
    enc.layers[i].bias = Parameter<float>(prefix + ".bias", Tensor<float>(Shape{widths[i + 1]}));
  }
  return enc;
}

Decoder make_decoder(const DecoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Decoder dec;
  dec.config = cfg;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const ConvTransposeSpec& s = cfg.stages[i];
    const std::string prefix = "decoder.stage" + std::to_string(i + 1);
    DecoderStage st;
    st.spec = s;
    st.weight = he_normal(prefix + ".weight", s.weight_shape(), s.in_channels * s.kernel[0] * s.kernel[1],
                          splitmix64(seed ^ splitmix64(0x200 + i)));
    st.bias = Parameter<float>(prefix + ".bias", Tensor<float>(Shape{s.out_channels}));
    st.normalized = i + 1 < cfg.stages.size();
    if (st.normalized) {
      st.gamma = Parameter<float>(prefix + ".gamma", Tensor<float>(Shape{s.out_channels}, 1.0f));
      st.beta = Parameter<float>(prefix + ".beta", Tensor<float>(Shape{s.out_channels}));
      st.stats = BatchNormState<float>(s.out_channels);
    }
    dec.stages.push_back(std::move(st));
  }
  return dec;
}

Var param_node(Tape<float>& tape, Parameter<float>& p) {
  return tape.grad_enabled() ? tape.parameter(p) : tape.borrow(p.value);
}

}  // namespace

Autoencoder Autoencoder::build(const EncoderConfig& encoder, const DecoderConfig& decoder, std::uint64_t seed,
                               const std::string& encoder_id, const ModelOptions& options) {
  if (encoder.latent_dim != decoder.latent_dim) {
    throw ConfigError("encoder latent_dim " + std::to_string(encoder.latent_dim) + " does not match decoder " +
                      std::to_string(decoder.latent_dim));
  }
  Autoencoder model(make_decoder(decoder, splitmix64(seed)), options);
  model.attach_encoder(encoder_id, encoder, seed);
  return model;
}

void Autoencoder::attach_encoder(const std::string& id, const EncoderConfig& config, std::uint64_t seed) {
  if (config.latent_dim != decoder_.config.latent_dim) {
    throw ConfigError("encoder '" + id + "' latent_dim " + std::to_string(config.latent_dim) +
                      " does not match decoder latent_dim " + std::to_string(decoder_.config.latent_dim));
  }
  if (has_encoder(id)) throw ConfigError("encoder '" + id + "' already attached");
  encoders_.emplace(id, make_encoder(id, config, splitmix64(seed ^ 0xE5C0DE)));
}

void Autoencoder::insert_encoder(const std::string& id, Encoder encoder) {
  if (encoder.config.latent_dim != decoder_.config.latent_dim) {
    throw ConfigError("encoder '" + id + "' latent_dim does not match decoder");
  }
  encoders_[id] = std::move(encoder);
}

namespace {
bool known_group(const Autoencoder& m, const std::string& group) {
  if (group == Autoencoder::kDecoderGroup) return true;
  for (const auto& id : m.encoder_ids()) {
    if (group == Autoencoder::encoder_group(id)) return true;
  }
  return false;
}
}  // namespace

void Autoencoder::freeze(const std::string& group) {
  if (!known_group(*this, group)) throw ConfigError("unknown parameter group '" + group + "'");
  if (!is_frozen(group)) frozen_.push_back(group);
}

void Autoencoder::unfreeze(const std::string& group) {
  if (!known_group(*this, group)) throw ConfigError("unknown parameter group '" + group + "'");
  frozen_.erase(std::remove(frozen_.begin(), frozen_.end(), group), frozen_.end());
}

bool Autoencoder::is_frozen(const std::string& group) const {
  return std::find(frozen_.begin(), frozen_.end(), group) != frozen_.end();
}

std::vector<std::string> Autoencoder::encoder_ids() const {
  std::vector<std::string> ids;
  for (const auto& [id, _] : encoders_) ids.push_back(id);
  return ids;
}

const Encoder& Autoencoder::encoder(const std::string& id) const {
  auto it = encoders_.find(id);
  if (it == encoders_.end()) throw ConfigError("unknown encoder id '" + id + "'");
  return it->second;
}

Encoder& Autoencoder::encoder(const std::string& id) {
  return const_cast<Encoder&>(static_cast<const Autoencoder&>(*this).encoder(id));
}

Var Autoencoder::forward(Tape<float>& tape, Var phases, const std::string& encoder_id, BatchNormMode mode) {
  Encoder& enc = encoder(encoder_id);
  const Tensor<float>& x = tape.value(phases);
  if (x.rank() != 2 || x.dim(1) != enc.config.input_dim) {
    throw DimensionError("forward: phases " + shape_str(x.shape()) + " do not match encoder input dim " +
                         std::to_string(enc.config.input_dim));
  }
  const std::size_t batch = x.dim(0);
  Var h = phases;
  for (auto& layer : enc.layers) {
    h = dense(tape, h, param_node(tape, layer.weight), param_node(tape, layer.bias));
    h = leaky_relu(tape, h, options_.leaky_slope);
  }
  h = reshape(tape, h, {batch, enc.config.latent_dim, 1, 1});
  const BatchNormMode decoder_mode = is_frozen(kDecoderGroup) ? BatchNormMode::infer : mode;
  for (auto& st : decoder_.stages) {
    h = conv_transpose2d(tape, h, param_node(tape, st.weight), param_node(tape, st.bias), st.spec);
    if (st.normalized) {
      h = batch_norm(tape, h, param_node(tape, st.gamma), param_node(tape, st.beta), st.stats, decoder_mode,
                     options_.batch_norm);
      h = leaky_relu(tape, h, options_.leaky_slope);
    } else {
      h = sigmoid(tape, h);
    }
  }
  return h;
}

Tensor<float> Autoencoder::predict(const Tensor<float>& phases, const std::string& encoder_id) const {
  Tape<float> tape(false);
  // Inference mode reads parameters and running statistics only.
  auto& self = const_cast<Autoencoder&>(*this);
  const Var out = self.forward(tape, tape.borrow(phases), encoder_id, BatchNormMode::infer);
  return tape.value(out);
}

std::vector<ParameterRef> Autoencoder::parameters() {
  std::vector<ParameterRef> out;
  for (auto& [id, enc] : encoders_) {
    const std::string group = encoder_group(id);
    for (auto& layer : enc.layers) {
      out.push_back({group, &layer.weight});
      out.push_back({group, &layer.bias});
    }
  }
  for (auto& st : decoder_.stages) {
    out.push_back({kDecoderGroup, &st.weight});
    out.push_back({kDecoderGroup, &st.bias});
    if (st.normalized) {
      out.push_back({kDecoderGroup, &st.gamma});
      out.push_back({kDecoderGroup, &st.beta});
    }
  }
  return out;
}

ParameterCounts Autoencoder::count_parameters() const {
  ParameterCounts counts;
  for (const auto& p : const_cast<Autoencoder&>(*this).parameters()) {
    const std::size_t n = p.param->value.size();
    counts.per_group[p.group] += n;
    counts.total += n;
    (is_frozen(p.group) ? counts.frozen : counts.trainable) += n;
  }
  return counts;
}

}  // namespace psae
