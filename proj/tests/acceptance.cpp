// Acceptance harness: one PASS/FAIL line per criterion, exit status 1 when
// any criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "alike/backbone.hpp"
#include "alike/synthetic.hpp"
#include "alike/trainer.hpp"
#include "gradient_cases.hpp"
#include "oracles.hpp"

using namespace alike;
using namespace alike::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome receptive_fields() {
  bool ok = true;
  std::string d;
  for (const auto& name : ModelConfig::preset_names()) {
    const int rf = receptive_field(ModelConfig::preset(name));
    ok = ok && rf == 204;
    d += fmt("%s=%d ", name.c_str(), rf);
  }
  return {ok, d};
}

Outcome model_sizes() {
  struct Ref {
    const char* name;
    double params_m;
    double gflops;  // 0 when not published
  };
  const Ref refs[] = {{"tiny", 0.080, 2.109}, {"small", 0.142, 0}, {"normal", 0.318, 7.909}, {"large", 0.653, 19.685}};
  bool ok = true;
  std::string d;
  for (const auto& r : refs) {
    const auto cfg = ModelConfig::preset(r.name);
    const double p = double(count_params(cfg)) * 1e-6;
    const double dp = p / r.params_m - 1.0;
    ok = ok && std::abs(dp) <= 0.15;
    d += fmt("%s params %.4fM (%+.1f%%)", r.name, p, 100 * dp);
    if (r.gflops > 0) {
      const double g = double(count_flops(cfg, 480, 640)) * 1e-9;
      const double dg = g / r.gflops - 1.0;
      ok = ok && std::abs(dg) <= 0.25;
      d += fmt(" gflops %.3f (%+.1f%%)", g, 100 * dg);
    }
    d += "; ";
  }
  return {ok, d};
}

Outcome gradients() {
  const std::pair<const char*, std::function<double(Rng&)>> cases[] = {
      {"conv2d", conv2d_case},           {"softargmax", softargmax_case}, {"sample_descriptors", sample_descriptors_case},
      {"reprojection", reprojection_case}, {"peak", peak_case},           {"nre", nre_case},
      {"reliability", reliability_case}};
  bool ok = true;
  std::string d;
  std::uint64_t stream = 0;
  for (const auto& [name, fn] : cases) {
    Rng rng(mix_seed(2024, stream++));
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) worst = std::max(worst, fn(rng));
    ok = ok && worst < 1e-4;
    d += fmt("%s %.1e; ", name, worst);
  }
  return {ok, "worst relative error over 200 cases: " + d};
}

Outcome sharp_limit() {
  DetectorConfig det;
  det.t_det = 1e-3;
  det.threshold = 0.0;
  Rng rng(404);
  double worst = 0.0;
  std::size_t total = 0;
  for (int m = 0; m < 100; ++m) {
    const int h = int(rng.integer(12, 48)), w = int(rng.integer(12, 48));
    Tensor<double> map({h, w});
    for (auto& v : map.values()) v = rng.uniform();
    const auto seeds = nms(map, det);
    const auto kps = detect_keypoints(map, det);
    total += kps.size();
    for (std::size_t i = 0; i < kps.size(); ++i) {
      worst = std::max(worst, std::hypot(kps[i].u - seeds[i].x, kps[i].v - seeds[i].y));
    }
  }
  double sym = 0.0;
  for (int n : {3, 5, 7}) {
    for (int trial = 0; trial < 50; ++trial) {
      // point-symmetric patch around the centre
      std::vector<double> p(std::size_t(n * n));
      for (int i = 0; i < n * n; ++i) {
        if (i <= n * n / 2) p[std::size_t(i)] = p[std::size_t(n * n - 1 - i)] = rng.uniform();
      }
      const auto o = softargmax_offset<double>(p, n, 0.1);
      sym = std::max({sym, std::abs(o[0]), std::abs(o[1])});
    }
  }
  return {worst < 0.01 && sym < 1e-9,
          fmt("t=1e-3: max |kp - seed| %.3g px over %zu keypoints of 100 uniform maps; t=0.1 symmetric offset %.1e",
              worst, total, sym)};
}

Outcome nre_equivalence() {
  Rng rng(505);
  double worst = 0.0;
  for (int m = 0; m < 20; ++m) {
    const int dim = 8, k = 6;
    auto map = random_tensor(rng, {dim, 12, 12});
    for (int px = 0; px < 144; ++px) {
      double s = 0;
      for (int c = 0; c < dim; ++c) s += map[c * 144 + px] * map[c * 144 + px];
      for (int c = 0; c < dim; ++c) map[c * 144 + px] /= std::sqrt(s);
    }
    auto query = random_tensor(rng, {k, dim});
    Tensor<double> sim({k, 144});
    for (int r = 0; r < k; ++r) {
      double s = 0;
      for (int c = 0; c < dim; ++c) s += query[r * dim + c] * query[r * dim + c];
      for (int px = 0; px < 144; ++px) {
        double dot = 0;
        for (int c = 0; c < dim; ++c) dot += query[r * dim + c] * map[c * 144 + px];
        sim[r * 144 + px] = dot / std::sqrt(s);
      }
    }
    const auto q = random_targets(rng, k, 12, 12);
    const double t = rng.uniform(0.02, 0.5);
    Graph<double> g;
    const double sparse = nre_sum(g.constant(sim), q, t, 0.0).value()[0];
    worst = std::max(worst, std::abs(sparse - dense_nre(sim, q, t, 0.0)));
  }
  return {worst <= 1e-9, fmt("max |sparse - dense| %.2e over 20 maps", worst)};
}

Outcome probability_sums() {
  Rng rng(606);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int h = int(rng.integer(2, 64)), w = int(rng.integer(2, 64));
    const Point2 p{rng.uniform(0, w - 1), rng.uniform(0, h - 1)};
    const auto q = reprojection_probability(p, h, w);
    double s = 0;
    for (double x : q.weights) s += x;
    worst = std::max(worst, std::abs(s - 1.0));
  }
  double worst_qm = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto sim = random_tensor(rng, {5, 100});
    const auto qm = matching_probability(sim, rng.uniform(0.01, 1.0), 0.0);
    for (int r = 0; r < 5; ++r) {
      double s = 0;
      for (int j = 0; j < 101; ++j) s += qm[r * 101 + j];
      worst_qm = std::max(worst_qm, std::abs(s - 1.0));
    }
  }
  return {worst <= 1e-9 && worst_qm <= 1e-9,
          fmt("q_r max |sum - 1| %.1e over 1000 points; q_m %.1e", worst, worst_qm)};
}

Outcome metric_counts() {
  Rng rng(707);
  int agree = 0;
  for (int i = 0; i < 100; ++i) {
    const auto inst = random_metric_instance(rng);
    const auto spec = WarpSpec::from_homography(inst.h, {inst.width, inst.height}, {inst.width, inst.height});
    agree += same_counts(compute_metrics(inst.a, inst.b, inst.matches, spec),
                         brute_force_metrics(inst, kDefaultThresholds, 3.0));
  }
  return {agree == 100, fmt("%d/100 instances agree exactly", agree)};
}

Outcome homography_estimation() {
  Rng rng(808);
  double exact = 0.0;
  for (int t = 0; t < 20; ++t) {
    Eigen::Matrix3d h;
    h << 1 + rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-50, 50), rng.uniform(-0.3, 0.3),
        1 + rng.uniform(-0.3, 0.3), rng.uniform(-50, 50), rng.uniform(-5e-4, 5e-4), rng.uniform(-5e-4, 5e-4), 1;
    std::vector<Point2> src, dst;
    for (int i = 0; i < 50; ++i) {
      src.push_back({rng.uniform(0, 639), rng.uniform(0, 479)});
      dst.push_back(*apply_homography(h, src.back()));
    }
    const auto est = estimate_homography(src, dst);
    exact = std::max(exact, est.success ? mean_corner_error(est.h, h, 640, 480) : 1e9);
  }
  int good = 0;
  for (int t = 0; t < 50; ++t) good += ransac_trial(mix_seed(888, t)) < 3.0;
  return {exact < 1e-6 && good >= 49,
          fmt("exact max corner error %.1e; noisy %d/50 trials under 3 px", exact, good)};
}

TrainConfig acceptance_training() {
  TrainConfig c;
  c.model = "tiny";
  c.image_size = 96;
  c.steps = 2000;
  c.seed = 0;
  c.accumulation = 4;
  c.top_k_train = 200;
  c.n_random = 200;
  c.warmup_steps = 500;
  return c;
}

Outcome toy_training() {
  const auto start = std::chrono::steady_clock::now();
  const TrainConfig cfg = acceptance_training();
  auto result = train(cfg, std::nullopt);
  const auto summary = evaluate_held_out(result.model, 50, cfg.image_size, DetectorConfig{});
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60;

  double head = 0.0, tail = 0.0;
  const auto& c = result.curve;
  const std::size_t n = std::min<std::size_t>(50, c.size());
  for (std::size_t i = 0; i < n; ++i) {
    head += c[i].report.total / double(n);
    tail += c[c.size() - n + i].report.total / double(n);
  }
  std::printf("       info: mean total loss steps 1-50 %.3f, last 50 steps %.3f (ratio %.2f)\n", head, tail,
              head > 0 ? tail / head : 0.0);
  // Reprojection error is the distance to the corresponding detection, so
  // it is averaged over correct (<= 3 px) matches; the all-match mean mixes
  // in outlier distances and is only reported.
  std::printf("       info: mean error over all matches %.3f px\n", summary.mean_match_error.value_or(-1));

  const double err = summary.mean_inlier_error.value_or(1e9);
  const double mma = summary.mma3.value_or(0), mha = summary.mha3.value_or(0);
  return {err < 1.5 && mma > 0.8 && mha > 0.9 && minutes < 30,
          fmt("mean reprojection error %.3f px, MMA@3 %.3f, MHA@3 %.3f, %.1f min (%d steps x %d pairs)", err, mma, mha,
              minutes, cfg.steps, cfg.accumulation)};
}

#ifdef ALIKE_CLI_PATH
int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(ALIKE_CLI_PATH) + " " + args + " >> " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Console output echoes paths, which differ between the two run directories.
std::string without_root(std::string text, const fs::path& root) {
  const std::string r = root.string();
  for (auto at = text.find(r); at != std::string::npos; at = text.find(r, at)) text.replace(at, r.size(), "$RUN");
  return text;
}

// Every CLI subcommand into `dir`; returns false when one exits non-zero.
bool cli_session(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto log = dir / "log.txt";
  const std::string d = dir.string() + "/";
  Model<float>(ModelConfig::preset("tiny"), 3).save(dir / "model.bin");
  std::ofstream(dir / "cfg.txt") << "model = tiny\nimage_size = 64\nsteps = 3\naccumulation = 2\n"
                                    "top_k_train = 30\nn_random = 30\nwarmup_steps = 2\nseed = 9\n";
  const std::string cmds[] = {
      "model-info --config normal",
      "synth-gen --seed 5 --count 2 --size 64 --out " + d + "synth",
      "detect --threshold 0 --image " + d + "synth/pair_0000/imageA.ppm --checkpoint " + d + "model.bin --out " + d + "a.txt",
      "detect --threshold 0 --image " + d + "synth/pair_0000/imageB.ppm --checkpoint " + d + "model.bin --out " + d + "b.txt",
      "match --kpts-a " + d + "a.txt --kpts-b " + d + "b.txt --image-a " + d + "synth/pair_0000/imageA.ppm --image-b " +
          d + "synth/pair_0000/imageB.ppm --viz-out " + d + "viz.ppm --out " + d + "m.txt",
      "eval-homography --estimate --threshold 0 --pairs " + d + "synth/manifest.txt --checkpoint " + d +
          "model.bin --out " + d + "eval.csv",
      "train-toy --quiet --config " + d + "cfg.txt --out " + d + "train",
  };
  for (const auto& c : cmds) {
    if (run_cli(c, log) != 0) return false;
  }
  return true;
}

Outcome determinism() {
  const auto base = fs::temp_directory_path() / "alike_acceptance_determinism";
  const auto d1 = base / "run1", d2 = base / "run2";
  if (!cli_session(d1) || !cli_session(d2)) return {false, "a CLI command failed; see " + base.string()};
  int files = 0, differing = 0;
  std::string which;
  for (const auto& e : fs::recursive_directory_iterator(d1)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), d1);
    ++files;
    if (without_root(slurp(e.path()), d1) != without_root(slurp(d2 / rel), d2)) {
      ++differing;
      which += " " + rel.string();
    }
  }
  if (differing == 0) fs::remove_all(base);
  return {differing == 0 && files > 10, fmt("%d output files compared, %d differ", files, differing) + which};
}
#else
Outcome determinism() { return {false, "command-line tool not built"}; }
#endif

}  // namespace

int main() {
  const std::pair<const char*, Outcome (*)()> criteria[] = {
      {"receptive field", receptive_fields},
      {"model size and complexity", model_sizes},
      {"finite-difference gradients", gradients},
      {"detection sharp limit", sharp_limit},
      {"sparse NRE equals dense", nre_equivalence},
      {"probability normalisation", probability_sums},
      {"metric counts vs brute force", metric_counts},
      {"homography estimation", homography_estimation},
      {"toy training", toy_training},
      {"byte-identical reruns", determinism},
  };
  int failed = 0, index = 1;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] %2d %s: %s\n", o.pass ? "PASS" : "FAIL", index++, name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria passed\n", 10 - failed, 10);
  return failed ? 1 : 0;
}
