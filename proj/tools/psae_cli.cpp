#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "psae/beamline.hpp"
#include "psae/diagnostics.hpp"
#include "psae/error.hpp"
#include "psae/io.hpp"
#include "psae/parallel.hpp"
#include "psae/trainer.hpp"

namespace {

using nlohmann::json;
using namespace psae;

class UsageError : public Error {
 public:
  using Error::Error;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Values from a JSON config file fill every option not given on the command line.
class ConfigFile {
 public:
  void load(const std::string& path) {
    if (path.empty()) return;
    const auto bytes = read_file(path);
    try {
      json_ = json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
      throw ConfigError("config file '" + path + "': " + e.what());
    }
    if (!json_.is_object()) throw ConfigError("config file '" + path + "' must hold a JSON object");
  }

  template <typename T>
  void fill(const CLI::App& app, const std::string& flag, const std::string& key, T& target) const {
    if (app.count(flag) > 0 || !json_.contains(key)) return;
    try {
      target = json_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }

  bool has(const std::string& key) const { return json_.contains(key) && !json_.at(key).is_null(); }

 private:
  json json_ = json::object();
};

void require(bool ok, const std::string& what) {
  if (!ok) throw UsageError(what);
}

struct Manifest {
  json doc;

  Manifest(const std::string& command, json config) {
    doc["command"] = command;
    doc["config"] = std::move(config);
    doc["started"] = utc_now();
    doc["threads"] = worker_count();
  }

  void write(const std::string& path) {
    doc["finished"] = utc_now();
    const std::string text = doc.dump(2) + "\n";
    write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  }
};

std::string manifest_path(const std::string& artifact) { return artifact + ".manifest.json"; }

void write_text(const std::string& path, const std::string& text) {
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

DecoderConfig decoder_for(const Dataset& ds) {
  const DecoderConfig desk = DecoderConfig::desk(), full = DecoderConfig::full_scale();
  if (desk.output_size() == std::array<std::size_t, 2>{ds.rows, ds.cols}) return desk;
  if (full.output_size() == std::array<std::size_t, 2>{ds.rows, ds.cols}) return full;
  throw ConfigError("no decoder preset emits " + std::to_string(ds.rows) + "x" + std::to_string(ds.cols) + " images");
}

/// Refuses a dataset whose digest differs from the one its generation manifest recorded.
std::string verified_dataset_digest(const std::string& path) {
  const std::string digest = sha256_file(path);
  const std::string mpath = manifest_path(path);
  if (std::filesystem::exists(mpath)) {
    const auto bytes = read_file(mpath);
    const json m = json::parse(bytes.begin(), bytes.end(), nullptr, false);
    if (m.is_object() && m.contains("dataset_digest") && m["dataset_digest"] != digest) {
      throw IntegrityError("dataset '" + path + "' digest " + digest + " does not match its manifest (" +
                           m["dataset_digest"].get<std::string>() + ")");
    }
  }
  return digest;
}

void write_pgm16(const std::string& path, const Tensor<float>& img) {
  const std::string header = "P5\n" + std::to_string(img.dim(1)) + " " + std::to_string(img.dim(0)) + "\n65535\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + 2 * img.size());
  for (float v : img.data()) {
    const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 65535.0f));
    out.push_back(static_cast<std::uint8_t>(q >> 8));
    out.push_back(static_cast<std::uint8_t>(q & 0xFF));
  }
  write_file(path, out);
}

void print_metrics(std::ofstream& sink, const EpochMetrics& m) {
  const std::string line = to_json_line(m);
  sink << line << '\n';
  sink.flush();
  std::cout << line << std::endl;
}

// --- gen ---------------------------------------------------------------------------------------

struct GenArgs {
  std::string wp = "WP1";
  std::size_t shots = 3000;
  std::string out;
  std::uint64_t seed = 0;
  bool full_scale = false;
};

void run_gen(const GenArgs& a) {
  require(a.shots > 0, "--shots must be positive");
  require(!a.out.empty(), "--out is required");
  const WorkingPoint wp = parse_working_point(a.wp);
  SampleOptions opts;
  opts.scale = a.full_scale ? Scale::full : Scale::desk;
  Manifest manifest("gen", {{"wp", a.wp}, {"shots", a.shots}, {"out", a.out}, {"seed", a.seed}, {"full_scale", a.full_scale}});
  const Dataset ds = sample_dataset(wp, a.shots, a.seed, opts);
  save_dataset(ds, a.out);
  const DatasetQa qa = dataset_qa(ds);
  const std::string qa_path = a.out + ".qa.json";
  write_text(qa_path, to_json(qa) + "\n");
  manifest.doc["seeds"] = {{"dataset", a.seed}};
  manifest.doc["dataset_digest"] = sha256_file(a.out);
  manifest.doc["qa_digest"] = sha256_file(qa_path);
  manifest.doc["metrics"] = {{"train", ds.count(Split::train)},
                             {"test", ds.count(Split::test)},
                             {"has_duplicates", qa.has_duplicates},
                             {"com_extent_rows", qa.com_extent_rows()},
                             {"com_extent_cols", qa.com_extent_cols()}};
  manifest.write(manifest_path(a.out));
  std::cout << json{{"dataset", a.out}, {"train", ds.count(Split::train)}, {"test", ds.count(Split::test)}}.dump()
            << std::endl;
}

// --- train -------------------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string loss = "ms_ssim";
  std::size_t epochs = 600;
  std::string out;
  std::uint64_t seed = 0;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  std::size_t eval_every = 1;
  std::string encoder_id;
  std::string window = "uniform";
};

void run_train(const TrainArgs& a) {
  require(!a.data.empty(), "--data is required");
  require(!a.out.empty(), "--out is required");
  require(a.epochs >= 1, "--epochs must be >= 1");
  TrainConfig cfg;
  cfg.loss = parse_loss_kind(a.loss);
  if (a.window == "gaussian") {
    cfg.ms_ssim = MsSsimConfig::gaussian_window();
  } else {
    require(a.window == "uniform", "--window must be uniform or gaussian");
  }
  cfg.epochs = a.epochs;
  cfg.seed = a.seed;
  cfg.batch_size = a.batch_size;
  cfg.learning_rate = a.lr;
  cfg.eval_every = a.eval_every;
  cfg.validate();

  const std::string data_digest = verified_dataset_digest(a.data);
  const Dataset ds = load_dataset(a.data);
  cfg.encoder_id = a.encoder_id.empty() ? to_string(ds.working_point) : a.encoder_id;
  EncoderConfig enc;
  enc.input_dim = phase_feature_count(ds.working_point);
  Autoencoder model = Autoencoder::build(enc, decoder_for(ds), a.seed, cfg.encoder_id);

  json echo = json::parse(to_json(cfg));
  echo["data"] = a.data;
  Manifest manifest("train", echo);
  std::ofstream metrics(a.out + ".metrics.jsonl", std::ios::trunc);
  AdamState opt;
  const TrainResult result = train(model, opt, ds, cfg, [&](const EpochMetrics& m) { print_metrics(metrics, m); });
  save_checkpoint(a.out, model, opt, cfg.epochs, echo.dump());

  manifest.doc["seeds"] = {{"model", a.seed}, {"shuffle", a.seed}};
  manifest.doc["dataset_digest"] = data_digest;
  manifest.doc["checkpoint_digests"] = {{"out", sha256_file(a.out)}};
  manifest.doc["metrics"] = {{"initial_train_loss", result.initial_train_loss},
                             {"final_train_loss", result.history.back().train_loss},
                             {"final_test_mean_h", result.history.back().test_mean_h
                                                       ? json(*result.history.back().test_mean_h)
                                                       : json(nullptr)},
                             {"steps", result.steps}};
  manifest.write(manifest_path(a.out));
}

// --- eval --------------------------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, data, report;
  std::string split = "test";
  std::string encoder_id;
};

void run_eval(const EvalArgs& a) {
  require(!a.ckpt.empty() && !a.data.empty() && !a.report.empty(), "--ckpt, --data and --report are required");
  require(a.split == "test" || a.split == "train", "--split must be train or test");
  const std::string data_digest = verified_dataset_digest(a.data);
  const Dataset ds = load_dataset(a.data);
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const std::string id = a.encoder_id.empty() ? to_string(ds.working_point) : a.encoder_id;
  if (!ck.model.has_encoder(id)) {
    throw ConfigError("checkpoint has no encoder for " + id + " (has: " +
                      json(ck.model.encoder_ids()).dump() + ")");
  }
  Manifest manifest("eval", {{"ckpt", a.ckpt}, {"data", a.data}, {"report", a.report}, {"split", a.split}, {"encoder_id", id}});
  const EvalReport r = evaluate(ck.model, ds, a.split == "test" ? Split::test : Split::train, id);
  write_text(a.report, to_json(r) + "\n");
  manifest.doc["dataset_digest"] = data_digest;
  manifest.doc["checkpoint_digests"] = {{"in", sha256_file(a.ckpt)}};
  manifest.doc["report_digest"] = sha256_file(a.report);
  manifest.doc["metrics"] = json::parse(to_json(r, false));
  manifest.write(manifest_path(a.report));
  std::cout << to_json(r, false) << std::endl;
}

// --- predict -----------------------------------------------------------------------------------

struct PredictArgs {
  std::string ckpt, out;
  double gun = 0.0, a1 = 0.0, ah1 = 0.0;
  std::string wp = "WP1";
  std::string encoder_id;
};

void run_predict(const PredictArgs& a) {
  require(!a.ckpt.empty() && !a.out.empty(), "--ckpt and --out are required");
  const WorkingPoint wp = parse_working_point(a.wp);
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const std::string id = a.encoder_id.empty() ? a.wp : a.encoder_id;
  Calibration cal = ScreenGeometry::for_scale(Scale::desk).image_calibration();
  if (ck.model.decoder().config.output_size() == DecoderConfig::full_scale().output_size()) {
    cal = ScreenGeometry::for_scale(Scale::full).image_calibration();
  }
  Manifest manifest("predict", {{"ckpt", a.ckpt}, {"out", a.out}, {"gun", a.gun}, {"a1", a.a1}, {"ah1", a.ah1},
                                {"wp", a.wp}, {"encoder_id", id}});
  const ScreenImage img = predict(ck.model, PhaseVector{a.gun, a.a1, wp == WorkingPoint::WP1 ? a.ah1 : 0.0}, wp, id, cal);
  write_pgm16(a.out, img.pixels);
  const ScreenImage processed{clip_normalize_threshold(img.pixels), cal};
  const LpsSummary s = summarize(processed);
  const std::string csv = a.out + ".csv";
  write_text(csv, profiles_csv(s));
  manifest.doc["checkpoint_digests"] = {{"in", sha256_file(a.ckpt)}};
  manifest.doc["image_digest"] = sha256_file(a.out);
  manifest.doc["csv_digest"] = sha256_file(csv);
  manifest.doc["metrics"] = {{"center_of_mass", {s.center_of_mass.row, s.center_of_mass.col}}};
  manifest.write(manifest_path(a.out));
  std::cout << json{{"image", a.out}, {"profiles", csv}}.dump() << std::endl;
}

// --- transfer ----------------------------------------------------------------------------------

struct TransferArgs {
  std::string ckpt, data, out;
  bool freeze_decoder = false;
  std::optional<std::size_t> fine_tune_at;
  std::size_t epochs = 300;
  std::uint64_t seed = 0;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  std::size_t eval_every = 1;
  std::string encoder_id;
};

void run_transfer(const TransferArgs& a) {
  require(!a.ckpt.empty() && !a.data.empty() && !a.out.empty(), "--ckpt, --data and --out are required");
  if (!a.freeze_decoder) {
    throw UsageError("transfer trains a new encoder against the existing decoder; pass --freeze-decoder "
                     "(add --fine-tune-at E to unfreeze it later)");
  }
  require(a.epochs >= 1, "--epochs must be >= 1");
  const std::string data_digest = verified_dataset_digest(a.data);
  const Dataset ds = load_dataset(a.data);
  Checkpoint ck = load_checkpoint(a.ckpt);
  const std::string id = a.encoder_id.empty() ? to_string(ds.working_point) : a.encoder_id;
  if (ck.model.has_encoder(id)) {
    throw ConfigError("checkpoint already has an encoder for " + id + "; pick another --encoder-id");
  }
  EncoderConfig enc = ck.model.encoder(ck.model.encoder_ids().front()).config;
  enc.input_dim = phase_feature_count(ds.working_point);
  ck.model.attach_encoder(id, enc, a.seed);
  ck.model.freeze(Autoencoder::kDecoderGroup);

  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.seed = a.seed;
  cfg.batch_size = a.batch_size;
  cfg.learning_rate = a.lr;
  cfg.eval_every = a.eval_every;
  cfg.encoder_id = id;
  cfg.fine_tune_at = a.fine_tune_at;
  cfg.validate();
  json echo = json::parse(to_json(cfg));
  echo["data"] = a.data;
  echo["base_checkpoint"] = a.ckpt;
  Manifest manifest("transfer", echo);
  const std::string decoder_before = group_digest(ck.model, Autoencoder::kDecoderGroup);
  std::ofstream metrics(a.out + ".metrics.jsonl", std::ios::trunc);
  const TrainResult result =
      transfer_train(ck.model, ck.optimizer, ds, cfg, [&](const EpochMetrics& m) { print_metrics(metrics, m); });
  save_checkpoint(a.out, ck.model, ck.optimizer, ck.epoch + cfg.epochs, echo.dump());

  manifest.doc["seeds"] = {{"encoder", a.seed}, {"shuffle", a.seed}};
  manifest.doc["dataset_digest"] = data_digest;
  manifest.doc["checkpoint_digests"] = {{"in", sha256_file(a.ckpt)}, {"out", sha256_file(a.out)}};
  manifest.doc["decoder_digest"] = {{"before", decoder_before},
                                    {"after", group_digest(ck.model, Autoencoder::kDecoderGroup)}};
  manifest.doc["metrics"] = {{"initial_train_loss", result.initial_train_loss},
                             {"final_train_loss", result.history.back().train_loss},
                             {"final_test_mean_h", result.history.back().test_mean_h
                                                       ? json(*result.history.back().test_mean_h)
                                                       : json(nullptr)}};
  manifest.write(manifest_path(a.out));
}

const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  if (dynamic_cast<const IntegrityError*>(&e)) return "integrity";
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
  if (dynamic_cast<const DomainError*>(&e)) return "domain";
  if (dynamic_cast<const TrainingError*>(&e)) return "training";
  return "internal";
}

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Phase-to-screen autoencoder: data generation, training, evaluation and transfer"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON file with option values; command-line flags win");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "simulate a dataset");
  gen_cmd->add_option("--wp", gen.wp, "working point")->check(CLI::IsMember({"WP1", "WP2"}));
  gen_cmd->add_option("--shots", gen.shots, "number of shots");
  gen_cmd->add_option("--out", gen.out, "dataset path");
  gen_cmd->add_option("--seed", gen.seed, "dataset seed");
  gen_cmd->add_flag("--full-scale", gen.full_scale, "768x1024 images instead of 96x128");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train a model from scratch");
  train_cmd->add_option("--data", tr.data, "dataset path");
  train_cmd->add_option("--loss", tr.loss, "ms_ssim | ssim | mse");
  train_cmd->add_option("--epochs", tr.epochs, "training epochs");
  train_cmd->add_option("--out", tr.out, "checkpoint path");
  train_cmd->add_option("--seed", tr.seed, "initialization and shuffle seed");
  train_cmd->add_option("--batch-size", tr.batch_size, "mini-batch size (>= 2)");
  train_cmd->add_option("--lr", tr.lr, "Adam learning rate");
  train_cmd->add_option("--eval-every", tr.eval_every, "test-set evaluation cadence in epochs");
  train_cmd->add_option("--encoder-id", tr.encoder_id, "encoder name (default: the dataset's working point)");
  train_cmd->add_option("--window", tr.window, "uniform (8x8) | gaussian (11x11)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  eval_cmd->add_option("--ckpt", ev.ckpt, "checkpoint path");
  eval_cmd->add_option("--data", ev.data, "dataset path");
  eval_cmd->add_option("--report", ev.report, "JSON report path");
  eval_cmd->add_option("--split", ev.split, "train | test");
  eval_cmd->add_option("--encoder-id", ev.encoder_id, "encoder name (default: the dataset's working point)");

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "predict one image");
  predict_cmd->add_option("--ckpt", pr.ckpt, "checkpoint path");
  predict_cmd->add_option("--gun", pr.gun, "gun phase (deg)");
  predict_cmd->add_option("--a1", pr.a1, "A1 phase (deg)");
  predict_cmd->add_option("--ah1", pr.ah1, "AH1 phase (deg, WP1 only)");
  predict_cmd->add_option("--wp", pr.wp, "working point")->check(CLI::IsMember({"WP1", "WP2"}));
  predict_cmd->add_option("--encoder-id", pr.encoder_id, "encoder name (default: --wp)");
  predict_cmd->add_option("--out", pr.out, "16-bit PGM output; profiles go to <out>.csv");

  TransferArgs tf;
  std::size_t fine_tune_at = 0;
  auto* transfer_cmd = app.add_subcommand("transfer", "train a new encoder against a frozen decoder");
  transfer_cmd->add_option("--ckpt", tf.ckpt, "base checkpoint");
  transfer_cmd->add_option("--data", tf.data, "dataset of the new working point");
  transfer_cmd->add_option("--out", tf.out, "output checkpoint");
  transfer_cmd->add_flag("--freeze-decoder", tf.freeze_decoder, "required: keep the decoder fixed");
  transfer_cmd->add_option("--fine-tune-at", fine_tune_at, "epoch at which the decoder is unfrozen");
  transfer_cmd->add_option("--epochs", tf.epochs, "training epochs");
  transfer_cmd->add_option("--seed", tf.seed, "encoder initialization and shuffle seed");
  transfer_cmd->add_option("--batch-size", tf.batch_size, "mini-batch size (>= 2)");
  transfer_cmd->add_option("--lr", tf.lr, "Adam learning rate");
  transfer_cmd->add_option("--eval-every", tf.eval_every, "test-set evaluation cadence in epochs");
  transfer_cmd->add_option("--encoder-id", tf.encoder_id, "new encoder name (default: the dataset's working point)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    ConfigFile cfg;
    cfg.load(config_path);
    if (*gen_cmd) {
      cfg.fill(*gen_cmd, "--wp", "wp", gen.wp);
      cfg.fill(*gen_cmd, "--shots", "shots", gen.shots);
      cfg.fill(*gen_cmd, "--out", "out", gen.out);
      cfg.fill(*gen_cmd, "--seed", "seed", gen.seed);
      cfg.fill(*gen_cmd, "--full-scale", "full_scale", gen.full_scale);
      run_gen(gen);
    } else if (*train_cmd) {
      cfg.fill(*train_cmd, "--data", "data", tr.data);
      cfg.fill(*train_cmd, "--loss", "loss", tr.loss);
      cfg.fill(*train_cmd, "--epochs", "epochs", tr.epochs);
      cfg.fill(*train_cmd, "--out", "out", tr.out);
      cfg.fill(*train_cmd, "--seed", "seed", tr.seed);
      cfg.fill(*train_cmd, "--batch-size", "batch_size", tr.batch_size);
      cfg.fill(*train_cmd, "--lr", "learning_rate", tr.lr);
      cfg.fill(*train_cmd, "--eval-every", "eval_every", tr.eval_every);
      cfg.fill(*train_cmd, "--encoder-id", "encoder_id", tr.encoder_id);
      cfg.fill(*train_cmd, "--window", "window", tr.window);
      run_train(tr);
    } else if (*eval_cmd) {
      cfg.fill(*eval_cmd, "--ckpt", "ckpt", ev.ckpt);
      cfg.fill(*eval_cmd, "--data", "data", ev.data);
      cfg.fill(*eval_cmd, "--report", "report", ev.report);
      cfg.fill(*eval_cmd, "--split", "split", ev.split);
      cfg.fill(*eval_cmd, "--encoder-id", "encoder_id", ev.encoder_id);
      run_eval(ev);
    } else if (*predict_cmd) {
      cfg.fill(*predict_cmd, "--ckpt", "ckpt", pr.ckpt);
      cfg.fill(*predict_cmd, "--gun", "gun", pr.gun);
      cfg.fill(*predict_cmd, "--a1", "a1", pr.a1);
      cfg.fill(*predict_cmd, "--ah1", "ah1", pr.ah1);
      cfg.fill(*predict_cmd, "--wp", "wp", pr.wp);
      cfg.fill(*predict_cmd, "--encoder-id", "encoder_id", pr.encoder_id);
      cfg.fill(*predict_cmd, "--out", "out", pr.out);
      run_predict(pr);
    } else if (*transfer_cmd) {
      cfg.fill(*transfer_cmd, "--ckpt", "ckpt", tf.ckpt);
      cfg.fill(*transfer_cmd, "--data", "data", tf.data);
      cfg.fill(*transfer_cmd, "--out", "out", tf.out);
      cfg.fill(*transfer_cmd, "--freeze-decoder", "freeze_decoder", tf.freeze_decoder);
      cfg.fill(*transfer_cmd, "--epochs", "epochs", tf.epochs);
      cfg.fill(*transfer_cmd, "--seed", "seed", tf.seed);
      cfg.fill(*transfer_cmd, "--batch-size", "batch_size", tf.batch_size);
      cfg.fill(*transfer_cmd, "--lr", "learning_rate", tf.lr);
      cfg.fill(*transfer_cmd, "--eval-every", "eval_every", tf.eval_every);
      cfg.fill(*transfer_cmd, "--encoder-id", "encoder_id", tf.encoder_id);
      if (transfer_cmd->count("--fine-tune-at") > 0 || cfg.has("fine_tune_at")) {
        cfg.fill(*transfer_cmd, "--fine-tune-at", "fine_tune_at", fine_tune_at);
        tf.fine_tune_at = fine_tune_at;
      }
      run_transfer(tf);
    }
  } catch (const std::exception& e) {
    return fail(error_kind(e), e.what(), dynamic_cast<const UsageError*>(&e) ? 2 : 1);
  }
  return 0;
}
