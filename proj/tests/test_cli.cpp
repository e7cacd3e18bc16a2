#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "wdsc/bitstream.hpp"
#include "wdsc/bytes.hpp"
#include "wdsc/checkpoint.hpp"
#include "wdsc/image_io.hpp"

using namespace wdsc;
namespace fs = std::filesystem;

namespace {

const fs::path kCli = WDSC_CLI_PATH;

int run(const std::string& args, const fs::path& dir) {
  const std::string cmd = "cd '" + dir.string() + "' && '" + kCli.string() + "' " + args + " > out.txt 2> err.txt";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

// One small trained model shared by the tests in this file.
class Cli : public ::testing::Test {
 protected:
  static fs::path dir_;

  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("wdsc_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    ASSERT_EQ(run("synth --out data --count 5 --seed 3", dir_), 0);
    std::ofstream(dir_ / "cfg.json") << R"({"channels": 4, "lambda": 256, "lr": 1e-3, "max_iters": 150,
      "log_every": 50, "validate_every": 50, "data": {"synth_count": 16, "validation_pairs": 2}})";
    ASSERT_EQ(run("train --config cfg.json --out m.wdck --log log.csv --quiet", dir_), 0);
  }

  static void TearDownTestSuite() { fs::remove_all(dir_); }
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, TrainWritesCheckpointAndLog) {
  EXPECT_TRUE(load_checkpoint(dir_ / "m.wdck").has_tables());
  const auto rows = read_csv(dir_ / "log.csv");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"iter", "loss", "R_x", "D_x", "R_y", "D_y", "R_w", "lr"}));
  EXPECT_EQ(rows[3][0], "150");
}

TEST_F(Cli, CompressDecompressIsDeterministic) {
  ASSERT_EQ(run("compress --ckpt m.wdck --input data/synth0_L.png --out a.wdsc", dir_), 0);
  ASSERT_EQ(run("compress --ckpt m.wdck --input data/synth0_L.png --out b.wdsc", dir_), 0);
  EXPECT_EQ(read_file(dir_ / "a.wdsc"), read_file(dir_ / "b.wdsc"));
  ASSERT_EQ(run("decompress --ckpt m.wdck --side data/synth0_R.png --input a.wdsc --out a.png", dir_), 0);
  ASSERT_EQ(run("decompress --ckpt m.wdck --side data/synth0_R.png --input b.wdsc --out b.png", dir_), 0);
  EXPECT_EQ(read_file(dir_ / "a.png"), read_file(dir_ / "b.png"));
  EXPECT_EQ(read_png(dir_ / "a.png").height, 32u);
}

TEST_F(Cli, InspectWritesBothDecompositions) {
  ASSERT_EQ(run("compress --ckpt m.wdck --input data/synth1_L.png --out c.wdsc", dir_), 0);
  ASSERT_EQ(run("inspect --ckpt m.wdck --side data/synth1_R.png --input c.wdsc --mode common --out common.png", dir_), 0);
  ASSERT_EQ(run("inspect --ckpt m.wdck --side data/synth1_R.png --input c.wdsc --mode private --out private.png", dir_),
            0);
  EXPECT_NE(read_file(dir_ / "common.png"), read_file(dir_ / "private.png"));
  EXPECT_NE(run("inspect --ckpt m.wdck --side data/synth1_R.png --input c.wdsc --mode both --out x.png", dir_), 0);
}

TEST_F(Cli, EvalRowPerPairAndExactBpp) {
  ASSERT_EQ(run("eval --ckpt m.wdck --dataset data --out rd.csv", dir_), 0);
  const auto rows = read_csv(dir_ / "rd.csv");
  ASSERT_EQ(rows.size(), 1u + 5u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"bpp", "psnr", "msssim", "lambda", "alpha", "beta", "variant"}));
  // first row is pair "synth0"; its bpp must equal that bitstream's payload bits / (H*W)
  ASSERT_EQ(run("compress --ckpt m.wdck --input data/synth0_L.png --out e.wdsc", dir_), 0);
  const Bitstream b = unpack(read_file(dir_ / "e.wdsc"));
  EXPECT_DOUBLE_EQ(std::stod(rows[1][0]), 8.0 * double(b.payload_bytes()) / (32.0 * 64.0));
  EXPECT_EQ(rows[1][6], "factorized");
}

TEST_F(Cli, ContractViolationsExitNonZero) {
  EXPECT_NE(run("compress --ckpt m.wdck --input missing.png --out x.wdsc", dir_), 0);
  EXPECT_NE(run("decompress --ckpt m.wdck --side data/synth0_R.png --input cfg.json --out x.png", dir_), 0);
  EXPECT_NE(run("compress --ckpt cfg.json --input data/synth0_L.png --out x.wdsc", dir_), 0);
  EXPECT_NE(run("frobnicate", dir_), 0);
  EXPECT_NE(run("", dir_), 0);
  // a bitstream from one checkpoint does not decode under another
  std::ofstream(dir_ / "cfg2.json") << R"({"channels": 4, "lambda": 256, "lr": 1e-3, "max_iters": 5, "seed": 9,
      "data": {"synth_count": 4, "validation_pairs": 1}})";
  ASSERT_EQ(run("train --config cfg2.json --out other.wdck --quiet", dir_), 0);
  ASSERT_EQ(run("compress --ckpt m.wdck --input data/synth0_L.png --out f.wdsc", dir_), 0);
  EXPECT_EQ(run("decompress --ckpt other.wdck --side data/synth0_R.png --input f.wdsc --out x.png", dir_), 1);
  std::ifstream err(dir_ / "err.txt");
  std::string msg((std::istreambuf_iterator<char>(err)), {});
  EXPECT_NE(msg.find("checkpoint"), std::string::npos) << msg;
  // unknown config keys are rejected
  std::ofstream(dir_ / "bad.json") << R"({"lamda": 3})";
  EXPECT_EQ(run("train --config bad.json --out z.wdck", dir_), 1);
}

// Larger lambda weights distortion more: more bits, less distortion.
TEST_F(Cli, SweepIsMonotoneInLambda) {
  std::ofstream(dir_ / "sweep.json") << R"({"channels": 8, "lr": 1e-3, "max_iters": 1500, "log_every": 500,
      "validate_every": 500, "data": {"synth_count": 64, "validation_pairs": 4}})";
  ASSERT_EQ(run("sweep --config sweep.json --lambdas 16,256,4096 --test-pairs 16 --out curve.csv --quiet", dir_), 0);
  const auto rows = read_csv(dir_ / "curve.csv");
  ASSERT_EQ(rows.size(), 4u);
  for (std::size_t k = 2; k <= 3; ++k) {
    EXPECT_GT(std::stod(rows[k][0]), std::stod(rows[k - 1][0])) << "bpp row " << k;
    EXPECT_GT(std::stod(rows[k][1]), std::stod(rows[k - 1][1])) << "psnr row " << k;
  }
}
