#include <gtest/gtest.h>

#ifdef ALIKE_CLI_PATH

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <Eigen/Dense>

#include "alike/backbone.hpp"
#include "alike/image.hpp"
#include "alike/text_io.hpp"

using namespace alike;
namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           (std::string("alike_cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path path(const std::string& name) const { return dir_ / name; }

  int run(const std::string& args) const {
    const std::string cmd = std::string(ALIKE_CLI_PATH) + " " + args + " > " + path("stdout").string() +
                            " 2> " + path("stderr").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string output() const { return slurp(path("stdout")); }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  // Score = sigmoid(8 * red - 4) at every pixel; descriptor channel 0 carries
  // the red value, everything else is zero.
  fs::path pass_through_checkpoint() const {
    Model<float> m(ModelConfig::preset("tiny"));
    m.set_zero();
    const int dim = m.config().dim;
    m.parameter("block1.conv1.weight").value[4] = 1.0f;  // centre tap, channel 0 -> 0
    m.parameter("block1.conv2.weight").value[4] = 1.0f;
    m.parameter("agg1.weight").value[0] = 1.0f;
    m.parameter("head.0.weight").value[0] = 1.0f;
    m.parameter("head.0.weight").value[std::size_t(dim) * dim] = 8.0f;
    m.parameter("head.0.bias").value[dim] = -4.0f;
    const auto p = path("pass.bin");
    m.save(p);
    return p;
  }

  fs::path dots(const std::string& name, const std::vector<std::pair<int, int>>& at) const {
    Image img(64, 64, 3, 0);
    for (auto [x, y] : at) img.at(x, y, 0) = 255;
    const auto p = path(name);
    write_pnm(p, img);
    return p;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, ModelInfo) {
  ASSERT_EQ(run("model-info --config tiny"), 0);
  EXPECT_NE(output().find("params: 82617\n"), std::string::npos);
  EXPECT_NE(output().find("receptive_field: 204\n"), std::string::npos);
  EXPECT_EQ(run("model-info --config huge"), 2);
  EXPECT_EQ(run("no-such-command"), 2);
}

TEST_F(Cli, DetectDeltaPeak) {
  const auto ckpt = pass_through_checkpoint();
  const auto img = dots("a.ppm", {{20, 30}});
  ASSERT_EQ(run("detect --image " + img.string() + " --checkpoint " + ckpt.string() + " --out " +
                path("k.txt").string()),
            0);
  const auto k = read_keypoints(path("k.txt"));
  ASSERT_EQ(k.keypoints.size(), 1u);
  EXPECT_NEAR(k.keypoints[0].u, 20.0, 1e-5);
  EXPECT_NEAR(k.keypoints[0].v, 30.0, 1e-5);
  EXPECT_NEAR(k.keypoints[0].score, 1.0 / (1.0 + std::exp(-4.0)), 1e-5);
  EXPECT_EQ(k.dim, 64);
  EXPECT_EQ(k.keypoints[0].descriptor[0], 1.0f);

  const std::string args = " --checkpoint " + ckpt.string() + " --image " +
                           dots("b.ppm", {{10, 10}, {30, 40}, {50, 20}}).string();
  ASSERT_EQ(run("detect --top-k 2 --out " + path("k2.txt").string() + args), 0);
  EXPECT_EQ(read_keypoints(path("k2.txt")).keypoints.size(), 2u);
  ASSERT_EQ(run("detect --out " + path("k3.txt").string() + args), 0);
  ASSERT_EQ(run("detect --out " + path("k4.txt").string() + args), 0);
  EXPECT_EQ(read_keypoints(path("k3.txt")).keypoints.size(), 3u);
  EXPECT_EQ(slurp(path("k3.txt")), slurp(path("k4.txt")));

  write_pnm(path("odd.ppm"), Image(50, 64, 3));
  EXPECT_EQ(run("detect --image " + path("odd.ppm").string() + " --checkpoint " + ckpt.string() +
                " --out " + path("k5.txt").string()),
            1);
  EXPECT_EQ(run("detect --window 4 --out " + path("k6.txt").string() + args), 1);
}

TEST_F(Cli, MatchSelfEmptyAndViz) {
  const auto ckpt = pass_through_checkpoint();
  const auto img = dots("a.ppm", {{10, 10}, {30, 40}, {50, 20}});
  ASSERT_EQ(run("detect --image " + img.string() + " --checkpoint " + ckpt.string() + " --out " +
                path("k.txt").string()),
            0);
  // descriptors of the three dots coincide, so break ties by editing them
  auto k = read_keypoints(path("k.txt"));
  ASSERT_EQ(k.keypoints.size(), 3u);
  for (int i = 0; i < 3; ++i) k.keypoints[i].descriptor.assign(64, 0.0f), k.keypoints[i].descriptor[i] = 1.0f;
  write_keypoints(path("k.txt"), k);

  ASSERT_EQ(run("match --kpts-a " + path("k.txt").string() + " --kpts-b " + path("k.txt").string() +
                " --image-a " + img.string() + " --image-b " + img.string() + " --viz-out " +
                path("viz.ppm").string() + " --out " + path("m.txt").string()),
            0);
  const auto m = read_matches(path("m.txt"));
  ASSERT_EQ(m.size(), 3u);
  for (const auto& x : m) {
    EXPECT_EQ(x.index_a, x.index_b);
    EXPECT_EQ(x.similarity, 1.0f);
  }
  const auto viz = read_pnm(path("viz.ppm"));
  EXPECT_EQ(viz.width, 128);
  EXPECT_EQ(viz.height, 64);

  std::ofstream(path("empty.txt")) << "# alike-kpts v1 dim=64\n";
  ASSERT_EQ(run("match --kpts-a " + path("empty.txt").string() + " --kpts-b " + path("k.txt").string() +
                " --out " + path("m2.txt").string()),
            0);
  EXPECT_EQ(slurp(path("m2.txt")), "");

  std::ofstream(path("d8.txt")) << "# alike-kpts v1 dim=8\n";
  EXPECT_EQ(run("match --kpts-a " + path("d8.txt").string() + " --kpts-b " + path("k.txt").string() +
                " --out " + path("m3.txt").string()),
            1);
}

TEST_F(Cli, SynthGenAndEval) {
  ASSERT_EQ(run("synth-gen --seed 3 --count 2 --size 64 --out " + path("s1").string()), 0);
  ASSERT_EQ(run("synth-gen --seed 3 --count 2 --size 64 --out " + path("s2").string()), 0);
  for (const char* f : {"manifest.txt", "pair_0001/imageA.ppm", "pair_0001/imageB.ppm", "pair_0001/H.txt"}) {
    EXPECT_EQ(slurp(path("s1") / f), slurp(path("s2") / f)) << f;
  }
  const Eigen::Matrix3d h = read_homography(path("s1/pair_0000/H.txt"));
  EXPECT_GT(std::abs(h.determinant()), 1e-3);

  Model<float>(ModelConfig::preset("tiny"), 1).save(path("m.bin"));
  std::ofstream(path("empty.txt")) << "# nothing\n";
  EXPECT_EQ(run("eval-homography --pairs " + path("empty.txt").string() + " --checkpoint " +
                path("m.bin").string() + " --out " + path("e.csv").string()),
            1);

  // the identity pair: B is A
  write_pnm(path("a.ppm"), read_pnm(path("s1/pair_0000/imageA.ppm")));
  write_homography(path("I.txt"), Eigen::Matrix3d::Identity());
  std::ofstream(path("id.txt")) << "a.ppm a.ppm I.txt\n";
  ASSERT_EQ(run("eval-homography --threshold 0 --pairs " + path("id.txt").string() + " --checkpoint " +
                path("m.bin").string() + " --out " + path("e.csv").string()),
            0);
  std::istringstream csv(slurp(path("e.csv")));
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  EXPECT_EQ(header.substr(0, 26), "pair_id,n_cov,n_gt,n_putat");
  std::vector<std::string> cells;
  std::stringstream rs(row);
  for (std::string c; std::getline(rs, c, ',');) cells.push_back(c);
  ASSERT_GE(cells.size(), 11u);
  EXPECT_EQ(cells[7], "1");   // rep
  EXPECT_EQ(cells[10], "1");  // mma@2
}

TEST_F(Cli, TrainZeroStepsIsInitialisation) {
  std::ofstream(path("cfg.txt")) << "model = tiny\nsteps = 0\nseed = 5\n";
  ASSERT_EQ(run("train-toy --quiet --config " + path("cfg.txt").string() + " --out " + path("run").string()), 0);
  Model<float>(ModelConfig::preset("tiny"), 5).save(path("init.bin"));
  EXPECT_EQ(slurp(path("run/final.bin")), slurp(path("init.bin")));
  std::ofstream(path("bad.txt")) << "stepz = 1\n";
  EXPECT_EQ(run("train-toy --config " + path("bad.txt").string() + " --out " + path("run2").string()), 1);
}

#endif
