#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <unistd.h>

#include "cli.hpp"
#include "oracles.hpp"
#include "vitloss/image_io.hpp"
#include "vitloss/losses.hpp"
#include "vitloss/vit.hpp"
#include "vitloss/weights_io.hpp"

using namespace vitloss;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// One temp directory per test suite with toy weights and a sharp/blurred pair.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("vitloss_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    ASSERT_EQ(run_cli({"gen-toy", "--seed", "0", "--out", path("toy.vpw")}).code, 0);
    const auto sharp = fixture::sharp(32);
    image::write_png(sharp, path("sharp.png"), 16);
    image::write_png(fixture::gaussian_blur(sharp, 1.5), path("blur.png"), 16);
  }

  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string path(const std::string& name) { return (dir_ / name).string(); }

  static inline fs::path dir_;
};

}  // namespace

TEST_F(CliTest, GenToyIsByteIdenticalAcrossRuns) {
  ASSERT_EQ(run_cli({"gen-toy", "--seed", "0", "--out", path("again.vpw")}).code, 0);
  EXPECT_EQ(slurp(path("toy.vpw")), slurp(path("again.vpw")));
  ASSERT_EQ(run_cli({"gen-toy", "--seed", "1", "--out", path("other.vpw")}).code, 0);
  EXPECT_NE(slurp(path("toy.vpw")), slurp(path("other.vpw")));
}

TEST_F(CliTest, GenToyRejectsIndivisibleHeads) {
  EXPECT_EQ(run_cli({"gen-toy", "--dim", "10", "--heads", "3", "--out", path("bad.vpw")}).code, 3);
  EXPECT_FALSE(fs::exists(path("bad.vpw")));
}

TEST_F(CliTest, LossOfImageWithItselfIsZero) {
  const auto r = run_cli({"loss", path("sharp.png"), path("sharp.png"), "--weights", path("toy.vpw")});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["percep_term"].get<double>(), 0.0);
  EXPECT_EQ(j["deblur_term"].get<double>(), 0.0);
}

TEST_F(CliTest, LambdaZeroLeavesOnlyDeblurTerm) {
  const auto r = run_cli({"loss", path("blur.png"), path("sharp.png"), "--weights", path("toy.vpw"),
                          "--lambda", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["total"].get<double>(), j["deblur_term"].get<double>());
  EXPECT_GT(j["percep_term"].get<double>(), 0.0);
}

TEST_F(CliTest, LossMatchesLibraryOnDecodedImages) {
  for (const std::string kind : {"local", "global"}) {
    const auto r = run_cli({"loss", path("blur.png"), path("sharp.png"), "--weights",
                            path("toy.vpw"), "--loss", kind});
    ASSERT_EQ(r.code, 0) << r.err;
    const json j = json::parse(r.out);
    const auto w = weights::load(path("toy.vpw")).cast<double>();
    const auto x = image::fit_to_encoder(image::read(path("blur.png")), w.config);
    const auto y = image::fit_to_encoder(image::read(path("sharp.png")), w.config);
    LossConfig cfg = LossConfig::defaults_for(parse_loss_kind(kind));
    cfg.layer = 5;
    const auto expected = total_loss(x, y, w, cfg, false);
    EXPECT_EQ(j["total"].get<double>(), expected.total) << kind;
    EXPECT_EQ(j["percep_term"].get<double>(), expected.percep_term) << kind;
  }
}

TEST_F(CliTest, LossValueIsFrozen) {
  // Reference run of the default local loss on the blurred/sharp fixture pair
  // (seed-0 toy weights, 16-bit PNGs).
  const auto r = run_cli({"loss", path("blur.png"), path("sharp.png"), "--weights", path("toy.vpw")});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_NEAR(j["deblur_term"].get<double>(),
              oracle::mean_abs(image::read(path("blur.png")), image::read(path("sharp.png"))), 1e-15);
  // Independent recomputation: pixel loops, per-head attention loops, same mask.
  const auto w = fixture::toy_weights(fixture::cli_toy_config(), 0);
  const auto mask = make_mask(w.config.num_patches(), 0.5, 0);
  auto features = [&](const std::string& file) {
    const auto tokens = oracle::embed(oracle::patchify(image::read(path(file)), w.config), w);
    oracle::Matrix kept;
    for (std::size_t i : mask.kept_indices) kept.push_back(tokens[i]);
    return oracle::forward(kept, w, 5).tokens;
  };
  const double percep = oracle::local_l1(features("blur.png"), features("sharp.png"));
  EXPECT_NEAR(j["percep_term"].get<double>(), percep, 1e-9 * percep);
  EXPECT_NEAR(j["deblur_term"].get<double>(), 0.21659895475699997, 1e-12);
  EXPECT_NEAR(j["percep_term"].get<double>(), 37.34540459038856, 1e-9);
  EXPECT_NEAR(j["total"].get<double>(), 37.56200354514556, 1e-9);
}

TEST_F(CliTest, HeatmapOutputs) {
  const std::string prefix = path("heat");
  const auto r = run_cli({"heatmap", path("sharp.png"), "--query-row", "4", "--query-col", "4",
                          "--weights", path("toy.vpw"), "--out-prefix", prefix});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(slurp(prefix + ".csv"));
  std::string line;
  std::vector<std::vector<std::string>> cells;
  while (std::getline(csv, line)) {
    std::vector<std::string> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(cell);
    cells.push_back(row);
  }
  ASSERT_EQ(cells.size(), 8u);
  ASSERT_EQ(cells[4].size(), 8u);
  EXPECT_EQ(cells[4][4], "1.000000000");

  const std::string pgm = slurp(prefix + ".pgm");
  EXPECT_EQ(pgm.rfind("P5\n8 8\n255\n", 0), 0u);
  EXPECT_EQ(pgm.size(), std::string("P5\n8 8\n255\n").size() + 64);
  EXPECT_EQ(static_cast<unsigned char>(pgm[11 + 4 * 8 + 4]), 255);

  const json j = json::parse(slurp(prefix + ".json"));
  EXPECT_EQ(j["query_index"].get<int>(), 37);
  EXPECT_FALSE(j.contains("mean_delta"));
}

TEST_F(CliTest, HeatmapCompareReportsPositiveDelta) {
  const std::string prefix = path("heat_cmp");
  const auto r = run_cli({"heatmap", path("sharp.png"), "--query-row", "4", "--query-col", "4",
                          "--weights", path("toy.vpw"), "--compare", path("blur.png"),
                          "--out-prefix", prefix});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_GT(json::parse(r.out)["mean_delta"].get<double>(), 0.0);
  EXPECT_TRUE(fs::exists(prefix + "_delta.csv"));
}

TEST_F(CliTest, HeatmapQueryOutsideGrid) {
  const auto r = run_cli({"heatmap", path("sharp.png"), "--query-row", "8", "--query-col", "0",
                          "--weights", path("toy.vpw"), "--out-prefix", path("nope")});
  EXPECT_EQ(r.code, 3);
}

TEST_F(CliTest, OptimizeFromTargetStaysPut) {
  const std::string prefix = path("opt_same");
  const auto r = run_cli({"optimize", path("sharp.png"), path("sharp.png"), "--weights",
                          path("toy.vpw"), "--steps", "3", "--step-size", "0.01", "--out-prefix",
                          prefix});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream trace(slurp(prefix + "_trace.csv"));
  std::string line;
  std::getline(trace, line);
  EXPECT_EQ(line, "step,deblur,percep,total,psnr");
  int rows = 0;
  while (std::getline(trace, line)) {
    EXPECT_EQ(line, std::to_string(rows) + ",0,0,0,identical");
    ++rows;
  }
  EXPECT_EQ(rows, 4);
}

TEST_F(CliTest, OptimizeDeblurOnlyDecreasesStrictly) {
  const std::string prefix = path("opt_l2");
  const auto r = run_cli({"optimize", path("blur.png"), path("sharp.png"), "--weights",
                          path("toy.vpw"), "--lambda", "0", "--metric", "l2", "--steps", "10",
                          "--step-size", "100", "--out-prefix", prefix});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream trace(slurp(prefix + "_trace.csv"));
  std::string line;
  std::getline(trace, line);
  double prev = INFINITY;
  while (std::getline(trace, line)) {
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    const double total = std::stod(f[3]);
    EXPECT_LT(total, prev) << line;
    prev = total;
  }
}

TEST_F(CliTest, OptimizeDivergenceExitsFour) {
  const auto r = run_cli({"optimize", path("blur.png"), path("sharp.png"), "--weights",
                          path("toy.vpw"), "--metric", "l2", "--steps", "50", "--step-size",
                          "1e300", "--out-prefix", path("opt_boom")});
  EXPECT_EQ(r.code, 4) << r.out << r.err;
}

TEST_F(CliTest, GradcheckExitCodes) {
  EXPECT_EQ(run_cli({"gradcheck", "--instances", "2"}).code, 0);
  EXPECT_EQ(run_cli({"gradcheck", "--instances", "2", "--corrupt-gradient"}).code, 1);
  EXPECT_EQ(run_cli({"gradcheck", "--instances", "2", "--precision", "f32"}).code, 3);
}

TEST_F(CliTest, IoAndContractErrors) {
  EXPECT_EQ(run_cli({"loss", path("missing.png"), path("sharp.png"), "--weights", path("toy.vpw")})
                .code,
            2);
  EXPECT_EQ(run_cli({"loss", path("sharp.png"), path("sharp.png"), "--weights", path("none.vpw")})
                .code,
            2);
  const std::string junk = path("junk.vpw");
  std::ofstream(junk, std::ios::binary) << "VPW1 but not really";
  EXPECT_EQ(run_cli({"loss", path("sharp.png"), path("sharp.png"), "--weights", junk}).code, 2);

  image::write_png(fixture::sharp(40), path("big.png"), 8);
  EXPECT_EQ(run_cli({"loss", path("big.png"), path("big.png"), "--weights", path("toy.vpw"),
                     "--no-crop"})
                .code,
            3);
  EXPECT_EQ(run_cli({"loss", path("big.png"), path("big.png"), "--weights", path("toy.vpw")}).code,
            0);
  EXPECT_EQ(run_cli({"loss", path("sharp.png"), path("sharp.png"), "--weights", path("toy.vpw"),
                     "--layer", "7"})
                .code,
            3);
  EXPECT_EQ(run_cli({"loss", "--bogus"}).code, 3);
  EXPECT_EQ(run_cli({}).code, 3);
}

TEST_F(CliTest, ReplayIsByteIdenticalForEveryCommand) {
  ASSERT_EQ(run_cli({"gen-toy", "--seed", "3", "--layers", "2", "--out", path("r_toy.vpw")}).code, 0);
  ASSERT_EQ(run_cli({"loss", path("blur.png"), path("sharp.png"), "--weights", path("toy.vpw"),
                     "--loss", "global", "--out", path("r_loss.json")})
                .code,
            0);
  ASSERT_EQ(run_cli({"heatmap", path("blur.png"), "--query-row", "1", "--query-col", "2",
                     "--weights", path("toy.vpw"), "--compare", path("sharp.png"),
                     "--out-prefix", path("r_heat")})
                .code,
            0);
  ASSERT_EQ(run_cli({"optimize", path("blur.png"), path("sharp.png"), "--weights",
                     path("toy.vpw"), "--steps", "3", "--step-size", "0.005", "--out-prefix",
                     path("r_opt")})
                .code,
            0);
  ASSERT_EQ(run_cli({"gradcheck", "--instances", "1", "--out", path("r_grad.json")}).code, 0);

  const std::vector<std::pair<std::string, std::vector<std::string>>> runs = {
      {"r_toy.vpw.manifest.json", {"r_toy.vpw", "r_toy.vpw.manifest.json"}},
      {"r_loss.json.manifest.json", {"r_loss.json", "r_loss.json.manifest.json"}},
      {"r_heat.manifest.json",
       {"r_heat.pgm", "r_heat.csv", "r_heat_delta.csv", "r_heat.json", "r_heat.manifest.json"}},
      {"r_opt.manifest.json",
       {"r_opt.png", "r_opt_trace.csv", "r_opt.json", "r_opt.manifest.json"}},
      {"r_grad.json.manifest.json", {"r_grad.json", "r_grad.json.manifest.json"}},
  };
  const fs::path replay_dir = dir_ / "replayed";
  for (const auto& [manifest, outputs] : runs) {
    const auto r = run_cli({"replay", path(manifest), "--out-dir", replay_dir.string()});
    ASSERT_EQ(r.code, 0) << manifest << ": " << r.err;
    for (const auto& name : outputs) {
      const std::string original = slurp(path(name));
      const std::string replayed = slurp(replay_dir / name);
      ASSERT_FALSE(original.empty()) << name;
      if (name.find("manifest") != std::string::npos) {
        // Output paths point into the replay directory; everything else matches.
        json a = json::parse(original), b = json::parse(replayed);
        a.erase("outputs");
        b.erase("outputs");
        a.erase("args");
        b.erase("args");
        EXPECT_EQ(a, b) << name;
      } else {
        EXPECT_EQ(original, replayed) << name;
      }
    }
  }
}

TEST_F(CliTest, ReplayRefusesChangedInputs) {
  const std::string img = path("mutable.png");
  image::write_png(fixture::sharp(32), img, 8);
  ASSERT_EQ(run_cli({"heatmap", img, "--query-row", "0", "--query-col", "0", "--weights",
                     path("toy.vpw"), "--out-prefix", path("mut")})
                .code,
            0);
  image::write_png(fixture::gaussian_blur(fixture::sharp(32), 1.0), img, 8);
  EXPECT_EQ(run_cli({"replay", path("mut.manifest.json")}).code, 3);
}

TEST_F(CliTest, VersionAndHelp) {
  const auto v = run_cli({"--version"});
  EXPECT_EQ(v.code, 0);
  EXPECT_EQ(v.out, std::string(cli::kToolVersion) + "\n");
  EXPECT_EQ(run_cli({"--help"}).code, 0);
}
