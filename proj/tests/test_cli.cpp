#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "psae/beamline.hpp"
#include "psae/io.hpp"
#include "psae/loss.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace psae;

namespace {

struct CliRun {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Cli : public ::testing::Test {
 protected:
  static fs::path dir() {
    static const fs::path d = [] {
      fs::path p = fs::temp_directory_path() / ("psae_cli_" + std::to_string(::getpid()));
      fs::create_directories(p);
      return p;
    }();
    return d;
  }

  static std::string path(const std::string& name) { return (dir() / name).string(); }

  static CliRun run(const std::string& args) {
    const std::string out = path("stdout.txt"), err = path("stderr.txt");
    const std::string cmd = std::string("\"") + PSAE_CLI_PATH + "\" " + args + " >" + out + " 2>" + err;
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  static void expect_error(const CliRun& r, const std::string& kind) {
    EXPECT_NE(r.code, 0);
    ASSERT_FALSE(r.err.empty());
    std::string line = r.err;
    while (!line.empty() && line.back() == '\n') line.pop_back();
    EXPECT_EQ(line.find('\n'), std::string::npos) << r.err;
    const json j = json::parse(line, nullptr, false);
    ASSERT_TRUE(j.is_object()) << r.err;
    EXPECT_EQ(j.value("error", ""), kind) << r.err;
    EXPECT_FALSE(j.value("message", "").empty());
  }

  static void TearDownTestSuite() { fs::remove_all(dir()); }
};

std::string exact(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

Tensor<float> read_pgm16(const std::string& p) {
  const std::string bytes = slurp(p);
  std::size_t pos = 0;
  auto token = [&] {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  EXPECT_EQ(token(), "P5");
  const std::size_t w = std::stoul(token()), h = std::stoul(token());
  EXPECT_EQ(token(), "65535");
  ++pos;
  Tensor<float> img({h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    const auto hi = static_cast<std::uint8_t>(bytes[pos + 2 * i]);
    const auto lo = static_cast<std::uint8_t>(bytes[pos + 2 * i + 1]);
    img[i] = static_cast<float>((hi << 8) | lo) / 65535.0f;
  }
  return img;
}

}  // namespace

TEST_F(Cli, GenIsByteIdenticalForTheSameSeed) {
  const CliRun a = run("gen --wp WP2 --shots 20 --seed 7 --out " + path("a.psae"));
  const CliRun b = run("gen --wp WP2 --shots 20 --seed 7 --out " + path("b.psae"));
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(slurp(path("a.psae")), slurp(path("b.psae")));
  EXPECT_EQ(slurp(path("a.psae.qa.json")), slurp(path("b.psae.qa.json")));
  const json j = json::parse(a.out);
  EXPECT_EQ(j["train"], 16);
  EXPECT_EQ(j["test"], 4);
}

TEST_F(Cli, UnknownWorkingPointIsAUsageError) {
  const CliRun r = run("gen --wp WP3 --shots 5 --out " + path("x.psae"));
  EXPECT_EQ(r.code, 2);
  expect_error(r, "usage");
  EXPECT_FALSE(fs::exists(path("x.psae")));
}

TEST_F(Cli, TrainFlagValidation) {
  expect_error(run("train --bogus 1 --data d --out o"), "usage");
  expect_error(run("train --epochs 3 --out " + path("o.ckpt")), "usage");
  expect_error(run("train --data d --epochs 0 --out " + path("o.ckpt")), "usage");
  expect_error(run("frobnicate"), "usage");
}

TEST_F(Cli, MissingDatasetIsReported) {
  const CliRun r = run("train --data " + path("missing.psae") + " --epochs 1 --out " + path("o.ckpt"));
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("missing.psae"), std::string::npos) << r.err;
}

TEST_F(Cli, EvalOnAnEmptySplitIsAnError) {
  ASSERT_EQ(run("gen --wp WP1 --shots 2 --seed 3 --out " + path("two.psae")).code, 0);
  const CliRun t = run("train --data " + path("two.psae") + " --epochs 1 --batch-size 2 --out " + path("two.ckpt"));
  ASSERT_EQ(t.code, 0) << t.err;
  const CliRun r = run("eval --ckpt " + path("two.ckpt") + " --data " + path("two.psae") + " --report " + path("r.json"));
  expect_error(r, "domain");
  EXPECT_NE(r.err.find("empty"), std::string::npos);
}

TEST_F(Cli, TransferWithoutFrozenDecoderIsRefused) {
  const CliRun r = run("transfer --ckpt c --data d --out " + path("t.ckpt"));
  expect_error(r, "usage");
  EXPECT_NE(r.err.find("--freeze-decoder"), std::string::npos) << r.err;
}

TEST_F(Cli, TamperedDatasetFailsItsManifest) {
  ASSERT_EQ(run("gen --wp WP1 --shots 4 --seed 5 --out " + path("t.psae")).code, 0);
  {
    std::fstream f(path("t.psae"), std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-1, std::ios::end);
    f.put('\x7f');
  }
  const CliRun r = run("train --data " + path("t.psae") + " --epochs 1 --batch-size 2 --out " + path("t.ckpt"));
  expect_error(r, "integrity");
}

TEST_F(Cli, PredictAgreesWithTheEvalReport) {
  ASSERT_EQ(run("gen --wp WP1 --shots 20 --seed 11 --out " + path("p.psae")).code, 0);
  const CliRun t = run("train --data " + path("p.psae") + " --epochs 40 --batch-size 4 --lr 3e-3 --seed 2 --eval-every 40 --out " +
                    path("p.ckpt"));
  ASSERT_EQ(t.code, 0) << t.err;
  const CliRun e = run("eval --split train --ckpt " + path("p.ckpt") + " --data " + path("p.psae") + " --report " +
                    path("p.json"));
  ASSERT_EQ(e.code, 0) << e.err;
  const double mean_h = json::parse(e.out)["mean_h"].get<double>();

  const Dataset ds = load_dataset(path("p.psae"));
  const Shot& shot = ds.shots[ds.indices(Split::train).front()];
  const CliRun p = run("predict --ckpt " + path("p.ckpt") + " --wp WP1 --gun " + exact(shot.phases.gun) +
                    " --a1 " + exact(shot.phases.a1) + " --ah1 " + exact(shot.phases.ah1) +
                    " --out " + path("p.pgm"));
  ASSERT_EQ(p.code, 0) << p.err;
  const Tensor<float> img = read_pgm16(path("p.pgm"));
  ASSERT_EQ(img.dim(0), ds.rows);
  ASSERT_EQ(img.dim(1), ds.cols);
  const double h = ms_ssim(shot.image.pixels, img);
  EXPECT_GE(h, mean_h - 0.05) << "mean " << mean_h;
  EXPECT_TRUE(fs::exists(path("p.pgm.csv")));
}
