#include "psae/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "json.hpp"
#include "psae/io.hpp"
#include "psae/parallel.hpp"

namespace psae {

using nlohmann::json;

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::ms_ssim: return "ms_ssim";
    case LossKind::ssim: return "ssim";
    case LossKind::mse: return "mse";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& text) {
  if (text == "ms_ssim") return LossKind::ms_ssim;
  if (text == "ssim") return LossKind::ssim;
  if (text == "mse") return LossKind::mse;
  throw ConfigError("unknown loss '" + text + "' (expected ms_ssim, ssim or mse)");
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch size must be >= 2 for batch norm, got " + std::to_string(batch_size));
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  ms_ssim.validate();
}

MsSsimConfig TrainConfig::loss_ssim_config() const {
  MsSsimConfig c = ms_ssim;
  if (loss == LossKind::ssim) {
    c.top_scale = 0;
    c.alphas = {1.0};
  }
  return c;
}

namespace {

json ssim_to_json(const MsSsimConfig& c) {
  return {{"top_scale", c.top_scale},
          {"alphas", c.alphas},
          {"window", c.window == WindowKind::uniform ? "uniform" : "gaussian"},
          {"window_size", c.window_size},
          {"window_stride", c.window_stride},
          {"gaussian_sigma", c.gaussian_sigma},
          {"c1", c.c1},
          {"c2", c.c2},
          {"c3", c.c3}};
}

MsSsimConfig ssim_from_json(const json& j) {
  MsSsimConfig c;
  c.top_scale = j.value("top_scale", c.top_scale);
  c.alphas = j.value("alphas", c.alphas);
  const std::string window = j.value("window", std::string("uniform"));
  if (window != "uniform" && window != "gaussian") throw ConfigError("unknown window '" + window + "'");
  c.window = window == "uniform" ? WindowKind::uniform : WindowKind::gaussian;
  c.window_size = j.value("window_size", c.window == WindowKind::uniform ? std::size_t{8} : std::size_t{11});
  c.window_stride = j.value("window_stride", c.window_stride);
  c.gaussian_sigma = j.value("gaussian_sigma", c.gaussian_sigma);
  c.c1 = j.value("c1", c.c1);
  c.c2 = j.value("c2", c.c2);
  c.c3 = j.value("c3", c.c2 / 2.0);
  return c;
}

}  // namespace

std::string to_json(const TrainConfig& c) {
  json j{{"loss", to_string(c.loss)},
         {"ms_ssim", ssim_to_json(c.ms_ssim)},
         {"learning_rate", c.learning_rate},
         {"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"seed", c.seed},
         {"freeze", c.freeze},
         {"encoder_id", c.encoder_id},
         {"fine_tune_at", c.fine_tune_at ? json(*c.fine_tune_at) : json(nullptr)},
         {"eval_every", c.eval_every}};
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  TrainConfig c;
  try {
    c.loss = parse_loss_kind(j.value("loss", std::string("ms_ssim")));
    if (j.contains("ms_ssim")) c.ms_ssim = ssim_from_json(j["ms_ssim"]);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.freeze = j.value("freeze", c.freeze);
    c.encoder_id = j.value("encoder_id", c.encoder_id);
    if (j.contains("fine_tune_at") && !j["fine_tune_at"].is_null()) c.fine_tune_at = j["fine_tune_at"].get<std::size_t>();
    c.eval_every = j.value("eval_every", c.eval_every);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return c;
}

void adam_update(Parameter<float>& p, AdamMoments& s, double lr, const AdamOptions& o) {
  if (s.m.shape() != p.value.shape()) {
    if (s.step != 0 || s.m.size() != 0) {
      throw DimensionError("adam: moments " + shape_str(s.m.shape()) + " do not match parameter '" + p.name + "' " +
                           shape_str(p.value.shape()));
    }
    s.m = Tensor<float>(p.value.shape());
    s.v = Tensor<float>(p.value.shape());
  }
  require_same_shape(p.grad.shape(), p.value.shape(), "adam gradient");
  ++s.step;
  const double t = static_cast<double>(s.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  const float b1 = static_cast<float>(o.beta1), b2 = static_cast<float>(o.beta2);
  const float step = static_cast<float>(lr / c1);
  const float root_c2 = static_cast<float>(std::sqrt(c2));
  const float eps = static_cast<float>(o.epsilon);
  float* w = p.value.ptr();
  const float* g = p.grad.ptr();
  float* m = s.m.ptr();
  float* v = s.v.ptr();
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    m[i] = b1 * m[i] + (1.0f - b1) * g[i];
    v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
    w[i] -= step * m[i] / (std::sqrt(v[i]) / root_c2 + eps);
  }
}

void adam_step(Autoencoder& model, AdamState& state, double lr, const AdamOptions& options) {
  for (const ParameterRef& ref : model.parameters()) {
    if (model.is_frozen(ref.group)) continue;
    adam_update(*ref.param, state.moments[ref.param->name], lr, options);
  }
}

std::string to_json_line(const EpochMetrics& m) {
  json j{{"epoch", m.epoch},
         {"train_loss", m.train_loss},
         {"test_mean_h", m.test_mean_h ? json(*m.test_mean_h) : json(nullptr)},
         {"seconds", m.seconds}};
  return j.dump();
}

Tensor<float> phase_batch(const Dataset& ds, const std::vector<std::size_t>& shots) {
  const std::size_t f = phase_feature_count(ds.working_point);
  Tensor<float> x(Shape{shots.size(), f});
  for (std::size_t b = 0; b < shots.size(); ++b) {
    const auto feat = phase_features(ds.shots.at(shots[b]).phases, ds.working_point);
    std::copy(feat.begin(), feat.end(), x.ptr() + b * f);
  }
  return x;
}

namespace {

Tensor<float> image_batch(const Dataset& ds, const std::vector<std::size_t>& shots) {
  const std::size_t plane = ds.rows * ds.cols;
  Tensor<float> y(Shape{shots.size(), 1, ds.rows, ds.cols});
  for (std::size_t b = 0; b < shots.size(); ++b) {
    const auto& px = ds.shots.at(shots[b]).image.pixels;
    require_same_shape(px.shape(), Shape{ds.rows, ds.cols}, "dataset image");
    std::copy(px.ptr(), px.ptr() + plane, y.ptr() + b * plane);
  }
  return y;
}

void check_compatible(const Autoencoder& model, const Dataset& ds, const std::string& encoder_id) {
  if (!model.has_encoder(encoder_id)) throw ConfigError("no encoder registered for '" + encoder_id + "'");
  const std::size_t want = phase_feature_count(ds.working_point);
  const std::size_t have = model.encoder(encoder_id).config.input_dim;
  if (want != have) {
    throw ConfigError("encoder '" + encoder_id + "' takes " + std::to_string(have) + " phases but " +
                      to_string(ds.working_point) + " data provides " + std::to_string(want));
  }
  const auto out = model.decoder().config.output_size();
  if (out[0] != ds.rows || out[1] != ds.cols) {
    throw ConfigError("decoder emits " + std::to_string(out[0]) + "x" + std::to_string(out[1]) + " but dataset images are " +
                      std::to_string(ds.rows) + "x" + std::to_string(ds.cols));
  }
}

void zero_grads(Autoencoder& model) {
  for (const ParameterRef& ref : model.parameters()) ref.param->zero_grad();
}

Tensor<float> slice_image(const Tensor<float>& batch, std::size_t b) {
  const std::size_t h = batch.dim(2), w = batch.dim(3);
  Tensor<float> out(Shape{h, w});
  std::copy_n(batch.ptr() + b * h * w, h * w, out.ptr());
  return out;
}

constexpr std::size_t kEvalBatch = 32;

/// Inference-mode predictions for a list of shots, (B,1,H,W).
template <typename Fn>
void for_each_prediction(const Autoencoder& model, const Dataset& ds, const std::vector<std::size_t>& shots,
                         const std::string& encoder_id, Fn&& fn) {
  for (std::size_t start = 0; start < shots.size(); start += kEvalBatch) {
    const std::vector<std::size_t> chunk(shots.begin() + static_cast<std::ptrdiff_t>(start),
                                         shots.begin() + static_cast<std::ptrdiff_t>(std::min(shots.size(), start + kEvalBatch)));
    const Tensor<float> pred = model.predict(phase_batch(ds, chunk), encoder_id);
    parallel_for(chunk.size(), [&](std::size_t b) { fn(start + b, chunk[b], slice_image(pred, b)); });
  }
}

TrainResult run_training(Autoencoder& model, AdamState& optimizer, const Dataset& ds, const TrainConfig& cfg,
                         const EpochCallback& on_epoch) {
  cfg.validate();
  check_compatible(model, ds, cfg.encoder_id);
  const auto train_idx = ds.indices(Split::train);
  if (train_idx.empty()) throw TrainingError("training split is empty");
  const bool has_test = ds.count(Split::test) > 0;
  const MsSsimConfig loss_cfg = cfg.loss_ssim_config();
  if (cfg.loss != LossKind::mse) loss_cfg.validate_for(ds.rows, ds.cols);
  for (const auto& g : cfg.freeze) model.freeze(g);

  TrainResult result;
  zero_grads(model);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (cfg.fine_tune_at && epoch == *cfg.fine_tune_at) model.unfreeze(Autoencoder::kDecoderGroup);
    std::vector<std::size_t> order = train_idx;
    std::mt19937_64 rng(derive_seed(cfg.seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start < 2) break;  // batch norm needs two samples
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
      const Tensor<float> y = image_batch(ds, batch);
      Tape<float> tape;
      const Var out = model.forward(tape, tape.constant(phase_batch(ds, batch)), cfg.encoder_id, BatchNormMode::train);
      const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(n_batches);
      Var loss;
      try {
        loss = cfg.loss == LossKind::mse ? mse_loss(tape, y, out) : ms_ssim_loss(tape, y, out, loss_cfg);
      } catch (const DomainError& e) {
        throw TrainingError("non-finite loss at " + where + " (" + e.what() + ")");
      }
      const double value = tape.value(loss)[0];
      if (!std::isfinite(value)) throw TrainingError("non-finite loss at " + where);
      tape.backward(loss);
      adam_step(model, optimizer, cfg.learning_rate);
      zero_grads(model);
      if (result.steps == 0) result.initial_train_loss = value;
      ++result.steps;
      loss_sum += value;
      ++n_batches;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = n_batches ? loss_sum / static_cast<double>(n_batches) : 0.0;
    const bool last = epoch + 1 == cfg.epochs;
    if (has_test && ((epoch + 1) % cfg.eval_every == 0 || last)) {
      m.test_mean_h = evaluate_mean_h(model, ds, Split::test, cfg.encoder_id, cfg.ms_ssim);
    }
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

}  // namespace

TrainResult train(Autoencoder& model, AdamState& optimizer, const Dataset& ds, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  return run_training(model, optimizer, ds, config, on_epoch);
}

TrainResult transfer_train(Autoencoder& model, AdamState& optimizer, const Dataset& ds, const TrainConfig& config,
                           const EpochCallback& on_epoch) {
  const bool listed = std::find(config.freeze.begin(), config.freeze.end(), Autoencoder::kDecoderGroup) !=
                      config.freeze.end();
  if (!model.is_frozen(Autoencoder::kDecoderGroup) && !listed) {
    throw TrainingError("transfer training needs a frozen decoder; freeze it first or use plain training");
  }
  return run_training(model, optimizer, ds, config, on_epoch);
}

ScreenImage predict(const Autoencoder& model, const PhaseVector& phases, WorkingPoint wp, const std::string& encoder_id,
                    const Calibration& calibration) {
  const auto feat = phase_features(phases, wp);
  if (!model.has_encoder(encoder_id)) throw ConfigError("no encoder registered for '" + encoder_id + "'");
  if (model.encoder(encoder_id).config.input_dim != feat.size()) {
    throw ConfigError("encoder '" + encoder_id + "' does not take " + to_string(wp) + " phases");
  }
  Tensor<float> x(Shape{1, feat.size()});
  std::copy(feat.begin(), feat.end(), x.ptr());
  return ScreenImage{slice_image(model.predict(x, encoder_id), 0), calibration};
}

double evaluate_mean_h(const Autoencoder& model, const Dataset& ds, Split split, const std::string& encoder_id,
                       const MsSsimConfig& metric) {
  check_compatible(model, ds, encoder_id);
  const auto idx = ds.indices(split);
  if (idx.empty()) throw DomainError("evaluate: the " + std::string(split == Split::train ? "train" : "test") + " split is empty");
  std::vector<double> h(idx.size());
  for_each_prediction(model, ds, idx, encoder_id, [&](std::size_t k, std::size_t shot, const Tensor<float>& pred) {
    h[k] = ms_ssim(ds.shots[shot].image.pixels, pred, metric);
  });
  double sum = 0.0;
  for (double v : h) sum += v;
  return sum / static_cast<double>(h.size());
}

EvalReport evaluate(const Autoencoder& model, const Dataset& ds, Split split, const std::string& encoder_id,
                    const MsSsimConfig& metric) {
  check_compatible(model, ds, encoder_id);
  const auto idx = ds.indices(split);
  if (idx.empty()) throw DomainError("evaluate: the " + std::string(split == Split::train ? "train" : "test") + " split is empty");
  EvalReport r;
  r.split = split;
  r.shots.resize(idx.size());
  for_each_prediction(model, ds, idx, encoder_id, [&](std::size_t k, std::size_t shot, const Tensor<float>& pred) {
    const ScreenImage& truth = ds.shots[shot].image;
    r.shots[k] = {shot, ms_ssim(truth.pixels, pred, metric), mean_abs_laplacian(pred),
                  mean_abs_laplacian(pred, truth.pixels), compare(ScreenImage{pred, truth.calibration}, truth)};
  });
  r.min_h = r.max_h = r.shots.front().h;
  double sum_h = 0.0, sum_err = 0.0, sum_peak = 0.0, sum_sigma = 0.0, sum_lap = 0.0, sum_beam_lap = 0.0;
  std::size_t n_sigma = 0;
  for (const auto& s : r.shots) {
    sum_h += s.h;
    sum_lap += s.laplacian;
    sum_beam_lap += s.beam_laplacian;
    r.min_h = std::min(r.min_h, s.h);
    r.max_h = std::max(r.max_h, s.h);
    sum_err += s.lps.current_max_error;
    r.max_current_max_error = std::max(r.max_current_max_error, s.lps.current_max_error);
    sum_peak += s.lps.peak_height_ratio;
    if (std::isfinite(s.lps.sigma_e_ratio)) {
      sum_sigma += s.lps.sigma_e_ratio;
      ++n_sigma;
    }
  }
  const double n = static_cast<double>(r.shots.size());
  r.mean_h = sum_h / n;
  r.mean_current_max_error = sum_err / n;
  r.mean_peak_height_ratio = sum_peak / n;
  r.mean_laplacian = sum_lap / n;
  r.mean_beam_laplacian = sum_beam_lap / n;
  r.mean_sigma_e_ratio = n_sigma ? sum_sigma / static_cast<double>(n_sigma) : std::nan("");
  return r;
}

std::string to_json(const EvalReport& r, bool per_shot) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json j{{"split", r.split == Split::train ? "train" : "test"},
         {"shots", r.shots.size()},
         {"mean_h", r.mean_h},
         {"min_h", r.min_h},
         {"max_h", r.max_h},
         {"mean_current_max_error_A", r.mean_current_max_error},
         {"max_current_max_error_A", r.max_current_max_error},
         {"mean_peak_height_ratio", num(r.mean_peak_height_ratio)},
         {"mean_sigma_e_ratio", num(r.mean_sigma_e_ratio)},
         {"mean_abs_laplacian", r.mean_laplacian},
         {"mean_abs_laplacian_on_beam", r.mean_beam_laplacian}};
  if (per_shot) {
    json rows = json::array();
    for (const auto& s : r.shots) {
      rows.push_back({{"shot", s.shot},
                      {"h", s.h},
                      {"abs_laplacian", s.laplacian},
                      {"abs_laplacian_on_beam", s.beam_laplacian},
                      {"current_max_error_A", s.lps.current_max_error},
                      {"peak_height_ratio", num(s.lps.peak_height_ratio)},
                      {"sigma_e_ratio", num(s.lps.sigma_e_ratio)}});
    }
    j["per_shot"] = rows;
  }
  return j.dump();
}

namespace {

std::string stage_prefix(std::size_t i) { return "decoder.stage" + std::to_string(i + 1); }

void write_tensor(ByteWriter& w, const std::string& name, const Tensor<float>& t) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u64(d);
  w.f32_array(t.data());
}

Tensor<float> read_tensor(ByteReader& r, std::string& name) {
  name = r.str();
  const std::uint32_t rank = r.u32();
  if (rank > 8) throw FormatError("checkpoint: tensor '" + name + "' has implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = r.u64();
  const std::size_t n = shape_size(shape);
  if (n * sizeof(float) > r.remaining()) throw FormatError("checkpoint: truncated in tensor '" + name + "'");
  Tensor<float> t(shape);
  r.f32_array(t.data());
  return t;
}

}  // namespace

std::string group_digest(const Autoencoder& model, const std::string& group) {
  ByteWriter w;
  bool found = false;
  for (const ParameterRef& ref : const_cast<Autoencoder&>(model).parameters()) {
    if (ref.group != group) continue;
    found = true;
    write_tensor(w, ref.param->name, ref.param->value);
  }
  if (group == Autoencoder::kDecoderGroup) {
    const auto& stages = model.decoder().stages;
    for (std::size_t i = 0; i < stages.size(); ++i) {
      if (!stages[i].normalized) continue;
      write_tensor(w, stage_prefix(i) + ".running_mean", stages[i].stats.running_mean);
      write_tensor(w, stage_prefix(i) + ".running_var", stages[i].stats.running_var);
    }
  }
  if (!found) throw ConfigError("unknown parameter group '" + group + "'");
  return sha256_hex(w.buffer());
}

namespace {

json model_config_json(const Autoencoder& model) {
  const DecoderConfig& d = model.decoder().config;
  json stages = json::array();
  for (const auto& s : d.stages) {
    stages.push_back({{"in_channels", s.in_channels},
                      {"out_channels", s.out_channels},
                      {"kernel", s.kernel},
                      {"stride", s.stride},
                      {"padding", s.padding},
                      {"output_padding", s.output_padding}});
  }
  json encoders = json::object();
  for (const auto& id : model.encoder_ids()) {
    const EncoderConfig& e = model.encoder(id).config;
    encoders[id] = {{"input_dim", e.input_dim}, {"hidden", e.hidden}, {"latent_dim", e.latent_dim}};
  }
  const ModelOptions& o = model.options();
  return {{"decoder", {{"latent_dim", d.latent_dim}, {"n_upsample", d.n_upsample}, {"stages", stages}}},
          {"encoders", encoders},
          {"options",
           {{"leaky_slope", o.leaky_slope},
            {"batch_norm_epsilon", o.batch_norm.epsilon},
            {"batch_norm_momentum", o.batch_norm.momentum}}},
          {"frozen", model.frozen_groups()}};
}

std::string describe_difference(const DecoderConfig& want, const DecoderConfig& got) {
  if (want.latent_dim != got.latent_dim) {
    return "latent_dim " + std::to_string(got.latent_dim) + " vs expected " + std::to_string(want.latent_dim);
  }
  if (want.stages.size() != got.stages.size()) {
    return std::to_string(got.stages.size()) + " stages vs expected " + std::to_string(want.stages.size());
  }
  for (std::size_t i = 0; i < want.stages.size(); ++i) {
    if (!(want.stages[i] == got.stages[i])) return "stage " + std::to_string(i + 1) + " differs";
  }
  return "n_upsample " + std::to_string(got.n_upsample) + " vs expected " + std::to_string(want.n_upsample);
}

constexpr std::size_t kHeaderBytes = 4 + 2 + 8;
constexpr std::size_t kDigestBytes = 32;

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Autoencoder& model, const AdamState& optimizer, std::uint64_t epoch,
                                            const std::string& train_config) {
  ByteWriter w;
  w.bytes({reinterpret_cast<const std::uint8_t*>("PSCK"), 4});
  w.u16(kCheckpointVersion);
  w.u64(0);  // total length, patched below
  w.str(model_config_json(model).dump());

  auto params = const_cast<Autoencoder&>(model).parameters();
  const auto& stages = model.decoder().stages;
  std::size_t n_stats = 0;
  for (const auto& st : stages) n_stats += st.normalized ? 2 : 0;
  w.u32(static_cast<std::uint32_t>(params.size() + n_stats));
  for (const ParameterRef& ref : params) write_tensor(w, ref.param->name, ref.param->value);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (!stages[i].normalized) continue;
    write_tensor(w, stage_prefix(i) + ".running_mean", stages[i].stats.running_mean);
    write_tensor(w, stage_prefix(i) + ".running_var", stages[i].stats.running_var);
  }

  w.u32(static_cast<std::uint32_t>(optimizer.moments.size()));
  for (const auto& [name, mom] : optimizer.moments) {
    w.str(name);
    w.u64(mom.step);
    write_tensor(w, name + ".m", mom.m);
    write_tensor(w, name + ".v", mom.v);
  }
  w.u64(epoch);
  w.str(train_config);

  auto& buf = w.buffer();
  const std::uint64_t total = buf.size() + kDigestBytes;
  for (std::size_t i = 0; i < 8; ++i) buf[6 + i] = static_cast<std::uint8_t>(total >> (8 * i));
  const auto digest = sha256(buf);
  buf.insert(buf.end(), digest.begin(), digest.end());
  return std::move(buf);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::optional<DecoderConfig>& expected_decoder) {
  ByteReader header(bytes, "checkpoint");
  const auto magic = header.bytes(4);
  if (std::string(magic.begin(), magic.end()) != "PSCK") throw FormatError("checkpoint: bad magic");
  const std::uint16_t version = header.u16();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: version mismatch (file " + std::to_string(version) + ", supported " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t total = header.u64();
  if (bytes.size() < total) {
    throw FormatError("checkpoint: truncated (" + std::to_string(bytes.size()) + " of " + std::to_string(total) +
                      " bytes)");
  }
  if (bytes.size() != total || total < kHeaderBytes + kDigestBytes) {
    throw IntegrityError("checkpoint: length field does not match file size");
  }
  const auto body = bytes.first(total - kDigestBytes);
  const auto digest = sha256(body);
  if (!std::equal(digest.begin(), digest.end(), bytes.begin() + static_cast<std::ptrdiff_t>(body.size()))) {
    throw IntegrityError("checkpoint: content digest mismatch");
  }

  ByteReader r(body, "checkpoint");
  r.bytes(kHeaderBytes);
  json cfg;
  try {
    cfg = json::parse(r.str());
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: bad model config: ") + e.what());
  }

  DecoderConfig dec;
  std::map<std::string, EncoderConfig> encs;
  ModelOptions opts;
  std::vector<std::string> frozen;
  try {
    const json& d = cfg.at("decoder");
    dec.latent_dim = d.at("latent_dim").get<std::size_t>();
    dec.n_upsample = d.at("n_upsample").get<std::size_t>();
    for (const json& s : d.at("stages")) {
      ConvTransposeSpec spec;
      spec.in_channels = s.at("in_channels").get<std::size_t>();
      spec.out_channels = s.at("out_channels").get<std::size_t>();
      spec.kernel = s.at("kernel").get<std::array<std::size_t, 2>>();
      spec.stride = s.at("stride").get<std::array<std::size_t, 2>>();
      spec.padding = s.at("padding").get<std::array<std::size_t, 2>>();
      spec.output_padding = s.at("output_padding").get<std::array<std::size_t, 2>>();
      dec.stages.push_back(spec);
    }
    for (const auto& [id, e] : cfg.at("encoders").items()) {
      EncoderConfig ec;
      ec.input_dim = e.at("input_dim").get<std::size_t>();
      ec.hidden = e.at("hidden").get<std::array<std::size_t, 2>>();
      ec.latent_dim = e.at("latent_dim").get<std::size_t>();
      encs[id] = ec;
    }
    const json& o = cfg.at("options");
    opts.leaky_slope = o.at("leaky_slope").get<float>();
    opts.batch_norm.epsilon = o.at("batch_norm_epsilon").get<double>();
    opts.batch_norm.momentum = o.at("batch_norm_momentum").get<double>();
    frozen = cfg.at("frozen").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: bad model config: ") + e.what());
  }
  if (expected_decoder && !(*expected_decoder == dec)) {
    throw ConfigError("checkpoint decoder config mismatch: " + describe_difference(*expected_decoder, dec));
  }
  if (encs.empty()) throw FormatError("checkpoint: no encoders");

  auto it = encs.begin();
  Autoencoder model = Autoencoder::build(it->second, dec, 0, it->first, opts);
  for (++it; it != encs.end(); ++it) model.attach_encoder(it->first, it->second, 0);

  std::map<std::string, Tensor<float>*> slots;
  for (const ParameterRef& ref : model.parameters()) slots[ref.param->name] = &ref.param->value;
  auto& stages = model.decoder().stages;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (!stages[i].normalized) continue;
    slots[stage_prefix(i) + ".running_mean"] = &stages[i].stats.running_mean;
    slots[stage_prefix(i) + ".running_var"] = &stages[i].stats.running_var;
  }
  const std::uint32_t n_tensors = r.u32();
  if (n_tensors != slots.size()) {
    throw FormatError("checkpoint: " + std::to_string(n_tensors) + " tensors for a model with " +
                      std::to_string(slots.size()));
  }
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name;
    Tensor<float> t = read_tensor(r, name);
    auto slot = slots.find(name);
    if (slot == slots.end()) throw FormatError("checkpoint: unexpected tensor '" + name + "'");
    if (t.shape() != slot->second->shape()) {
      throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(t.shape()) + ", model expects " +
                        shape_str(slot->second->shape()));
    }
    *slot->second = std::move(t);
  }
  for (const auto& g : frozen) model.freeze(g);

  AdamState opt;
  const std::uint32_t n_moments = r.u32();
  for (std::uint32_t i = 0; i < n_moments; ++i) {
    const std::string name = r.str();
    AdamMoments m;
    m.step = r.u64();
    std::string tname;
    m.m = read_tensor(r, tname);
    m.v = read_tensor(r, tname);
    opt.moments[name] = std::move(m);
  }
  const std::uint64_t epoch = r.u64();
  std::string train_cfg = r.str();
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes before digest");
  return Checkpoint{std::move(model), std::move(opt), epoch, std::move(train_cfg)};
}

void save_checkpoint(const std::string& path, const Autoencoder& model, const AdamState& optimizer, std::uint64_t epoch,
                     const std::string& train_config) {
  write_file(path, encode_checkpoint(model, optimizer, epoch, train_config));
}

Checkpoint load_checkpoint(const std::string& path, const std::optional<DecoderConfig>& expected_decoder) {
  return decode_checkpoint(read_file(path), expected_decoder);
}

}  // namespace psae
