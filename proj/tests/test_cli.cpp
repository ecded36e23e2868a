#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_util.hpp"
#include "vtpt/image.hpp"

using namespace vtpt;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

CmdResult run_cli(const std::string& args) {
  static int counter = 0;
  std::string base = fs::temp_directory_path() / ("vtpt-cli-" + std::to_string(counter++));
  std::string cmd = std::string(VTPT_CLI_PATH) + " " + args + " >" + base + ".out 2>" + base +
                    ".err";
  int rc = std::system(cmd.c_str());
  CmdResult r;
  r.code = WEXITSTATUS(rc);
  r.out = slurp(base + ".out");
  r.err = slurp(base + ".err");
  fs::remove(base + ".out");
  fs::remove(base + ".err");
  return r;
}

void write_config(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::trunc);
  f << body;
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("tags prints the factor table byte-for-byte") {
  CmdResult r = run_cli("tags");
  CHECK(r.code == 0);
  CHECK(r.out ==
        "(m) masked: IM=Y ST=N SC=N\n"
        "(a) zoomed-in: IM=Y ST=Y SC=N\n"
        "(b) zoomed-out: IM=N ST=Y SC=N\n"
        "(c) distorted: IM=N ST=Y SC=Y\n"
        "(d) blurred: IM=N ST=N SC=Y\n"
        "(e) de-colorized: IM=N ST=N SC=Y\n");
}

TEST_CASE("degrade: golden zoomed_in output, pinned bytes") {
  std::string dir = testutil::scratch_dir("cli-golden");
  save_ppm(testutil::pattern_image(224), dir + "/src.ppm");
  CmdResult r = run_cli("degrade --task zoomed_in --param S=160 --in " + dir +
                        "/src.ppm --out " + dir + "/out.ppm --seed 7");
  REQUIRE(r.code == 0);
  std::string golden_path = std::string(VTPT_TEST_DATA_DIR) + "/golden_zoomed_in_s160.ppm";
  REQUIRE_MESSAGE(fs::exists(golden_path), "golden file missing from tests/data");
  CHECK(slurp(dir + "/out.ppm") == slurp(golden_path));
}

TEST_CASE("degrade: zero twist reproduces the input exactly") {
  std::string dir = testutil::scratch_dir("cli-twist");
  save_ppm(testutil::pattern_image(64), dir + "/src.ppm");
  CmdResult r = run_cli("degrade --task distorted --param twist=0 --in " + dir +
                        "/src.ppm --out " + dir + "/out.ppm");
  REQUIRE(r.code == 0);
  // Zero twist samples integer positions, so even the quantized bytes match.
  CHECK(slurp(dir + "/out.ppm") == slurp(dir + "/src.ppm"));
}

TEST_CASE("degrade: masked writes a token sidecar") {
  std::string dir = testutil::scratch_dir("cli-mask");
  save_ppm(testutil::pattern_image(32), dir + "/src.ppm");
  CmdResult r = run_cli("degrade --task masked --param patch=4 --in " + dir +
                        "/src.ppm --out " + dir + "/out.ppm --seed 3");
  REQUIRE(r.code == 0);
  std::string sidecar = slurp(dir + "/out.ppm.mask.txt");
  int lines = 0;
  std::istringstream ss(sidecar);
  std::string line;
  while (std::getline(ss, line)) {
    int idx = std::stoi(line);
    CHECK(idx >= 0);
    CHECK(idx < 64);
    ++lines;
  }
  CHECK(lines == 48);  // floor(0.75 * 64)
}

TEST_CASE("degrade: usage and validation exits") {
  CmdResult missing = run_cli("degrade --task masked --out /tmp/x.ppm");
  CHECK(missing.code == 1);  // usage: --in is required

  std::string dir = testutil::scratch_dir("cli-bad");
  save_ppm(testutil::pattern_image(32), dir + "/src.ppm");
  CmdResult bad = run_cli("degrade --task masked --param patch=4 --param mask_ratio=2 --in " +
                          dir + "/src.ppm --out " + dir + "/out.ppm");
  CHECK(bad.code == 2);  // validation, before any file write
  CHECK_FALSE(fs::exists(dir + "/out.ppm"));

  CmdResult unknown = run_cli("degrade --task nonsense --in " + dir + "/src.ppm --out " +
                              dir + "/out.ppm");
  CHECK(unknown.code == 2);
}

TEST_CASE("gradcheck subcommand passes on a pristine build") {
  CmdResult r = run_cli("gradcheck --seeds 1");
  CHECK(r.code == 0);
  CHECK(r.out.find("[PASS] matmul") != std::string::npos);
  CHECK(r.out.find("all checks passed") != std::string::npos);
}

TEST_CASE("pipeline: synth -> pretrain -> finetune/probe/recover") {
  std::string dir = testutil::scratch_dir("cli-pipe");
  CmdResult synth = run_cli("synth --out " + dir + "/train.vtpk --count 40 --side 32 --seed 5");
  REQUIRE(synth.code == 0);
  CmdResult synth2 = run_cli("synth --out " + dir + "/test.vtpk --count 20 --side 32 --seed 6");
  REQUIRE(synth2.code == 0);

  write_config(dir + "/pt.cfg",
               "model.preset = toy\n"
               "task.name = blurred\n"
               "train.epochs = 25\n"
               "train.batch_size = 16\n"
               "train.base_lr = 2e-3\n"
               "train.log_wall_time = false\n"
               "data.train = " + dir + "/train.vtpk\n"
               "seed = 2\n");
  CmdResult pt = run_cli("pretrain --config " + dir + "/pt.cfg --out " + dir + "/pt");
  REQUIRE_MESSAGE(pt.code == 0, pt.err);
  CHECK(fs::exists(dir + "/pt/checkpoint-final.vtpt"));
  CHECK(fs::exists(dir + "/pt/config.resolved"));
  CHECK(fs::exists(dir + "/pt/metrics.csv"));

  // Re-running with the same config and seed reproduces the CSV bitwise.
  CmdResult pt2 = run_cli("pretrain --config " + dir + "/pt.cfg --out " + dir + "/pt2");
  REQUIRE(pt2.code == 0);
  CHECK(slurp(dir + "/pt/metrics.csv") == slurp(dir + "/pt2/metrics.csv"));
  CHECK(slurp(dir + "/pt/checkpoint-final.vtpt") ==
        slurp(dir + "/pt2/checkpoint-final.vtpt"));

  // Fine-tuning consumes the produced checkpoint without surgery.
  write_config(dir + "/ft.cfg",
               "model.preset = toy\n"
               "train.epochs = 2\n"
               "train.batch_size = 16\n"
               "train.log_wall_time = false\n"
               "data.train = " + dir + "/train.vtpk\n"
               "data.test = " + dir + "/test.vtpk\n"
               "seed = 2\n");
  CmdResult ft = run_cli("finetune --config " + dir + "/ft.cfg --init " + dir +
                         "/pt/checkpoint-final.vtpt --out " + dir + "/ft");
  REQUIRE_MESSAGE(ft.code == 0, ft.err);
  CHECK(ft.out.find("top-1 accuracy") != std::string::npos);

  // Probing, nonlinear with 2 blocks.
  write_config(dir + "/pb.cfg",
               "model.preset = toy\n"
               "train.epochs = 3\n"
               "train.batch_size = 16\n"
               "train.log_wall_time = false\n"
               "data.train = " + dir + "/train.vtpk\n"
               "data.test = " + dir + "/test.vtpk\n"
               "seed = 2\n");
  CmdResult pb = run_cli("probe --config " + dir + "/pb.cfg --init " + dir +
                         "/pt/checkpoint-final.vtpt --out " + dir + "/pb --mode nonlinear "
                         "--blocks 2");
  REQUIRE_MESSAGE(pb.code == 0, pb.err);
  CHECK(fs::exists(dir + "/pb/probe-head.vtpt"));

  // Recovery: trained beats the untrained baseline on the same inputs, and
  // the outputs are valid P6 files.
  fs::create_directories(dir + "/imgs");
  for (int i = 0; i < 3; ++i) {
    Rng rng(40 + i);
    save_ppm(testutil::random_image(32, rng), dir + "/imgs/i" + std::to_string(i) + ".ppm");
  }
  write_config(dir + "/pt0.cfg",
               "model.preset = toy\n"
               "task.name = blurred\n"
               "train.epochs = 1\n"
               "train.batch_size = 40\n"
               "train.base_lr = 1e-9\n"  // effectively untrained
               "train.log_wall_time = false\n"
               "data.train = " + dir + "/train.vtpk\n"
               "seed = 2\n");
  CmdResult pt0 = run_cli("pretrain --config " + dir + "/pt0.cfg --out " + dir + "/pt0");
  REQUIRE(pt0.code == 0);

  auto avg_mse = [&](const std::string& ckpt, const std::string& out) {
    CmdResult r = run_cli("recover --init " + ckpt + " --in " + dir + "/imgs --out " + out +
                          " --seed 9");
    REQUIRE_MESSAGE(r.code == 0, r.err);
    size_t pos = r.out.find("average MSE over 3 images: ");
    REQUIRE(pos != std::string::npos);
    return std::stod(r.out.substr(pos + 27));
  };
  double trained = avg_mse(dir + "/pt/checkpoint-final.vtpt", dir + "/rec1");
  double untrained = avg_mse(dir + "/pt0/checkpoint-final.vtpt", dir + "/rec0");
  CHECK(untrained > trained);

  Image reopened = load_ppm(dir + "/rec1/i0.recon.ppm");
  CHECK(reopened.height == 32);
  CHECK(fs::exists(dir + "/rec1/i0.degraded.ppm"));
}

TEST_SUITE_END();
