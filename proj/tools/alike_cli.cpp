// alike: command-line front end for detection, matching, evaluation and toy training.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "alike/backbone.hpp"
#include "alike/detect.hpp"
#include "alike/image.hpp"
#include "alike/matching.hpp"
#include "alike/synthetic.hpp"
#include "alike/text_io.hpp"
#include "alike/trainer.hpp"

namespace fs = std::filesystem;
using namespace alike;

namespace {

constexpr int kExitData = 1;
constexpr int kExitUsage = 2;

struct DetectOptions {
  std::string image, checkpoint, out;
  int top_k = 5000;
  double threshold = 0.2;
  int window = 5;
  double t_det = 0.1;
  int margin = 2;
};

DetectorConfig detector_from(int top_k, double threshold, int window, double t_det, int margin) {
  DetectorConfig d;
  d.top_k = top_k;
  d.threshold = threshold;
  d.window = window;
  d.t_det = t_det;
  d.margin = margin;
  d.validate();
  return d;
}

int cmd_model_info(const std::string& name) {
  const ModelConfig cfg = ModelConfig::preset(name);
  char gflops[32];
  std::snprintf(gflops, sizeof gflops, "%.3f", double(count_flops(cfg, 480, 640)) * 1e-9);
  std::cout << "name: " << cfg.name << '\n'
            << "channels: " << cfg.c1 << ' ' << cfg.c2 << ' ' << cfg.c3 << ' ' << cfg.c4 << '\n'
            << "dim: " << cfg.dim << '\n'
            << "n_head: " << cfg.n_head << '\n'
            << "params: " << count_params(cfg) << '\n'
            << "gflops@640x480: " << gflops << '\n'
            << "receptive_field: " << receptive_field(cfg) << '\n';
  return 0;
}

int cmd_detect(const DetectOptions& o) {
  const DetectorConfig det = detector_from(o.top_k, o.threshold, o.window, o.t_det, o.margin);
  Model<float> model = Model<float>::load(o.checkpoint);
  const Image img = read_pnm(fs::path(o.image));
  const auto out = model.infer(image_to_tensor<float>(img));
  KeypointFile f;
  f.dim = model.config().dim;
  f.keypoints = detect_keypoints(out.score_map, det);
  attach_descriptors(f.keypoints, out.descriptor_map);
  write_keypoints(fs::path(o.out), f);
  std::cerr << o.image << ": " << f.keypoints.size() << " keypoints\n";
  return 0;
}


Tensor<float> descriptors(const KeypointFile& f) {
  if (f.keypoints.empty()) return Tensor<float>({0, f.dim});
  return descriptor_matrix(f.keypoints);
}

int cmd_match(const std::string& kpts_a, const std::string& kpts_b, const std::string& image_a,
              const std::string& image_b, const std::string& viz_out, const std::string& out) {
  const KeypointFile a = read_keypoints(fs::path(kpts_a));
  const KeypointFile b = read_keypoints(fs::path(kpts_b));
  if (a.dim != b.dim) {
    throw InputError("descriptor dimensions differ: " + kpts_a + " has dim=" + std::to_string(a.dim) +
                     ", " + kpts_b + " has dim=" + std::to_string(b.dim));
  }
  const auto matches = mutual_match(descriptors(a), descriptors(b));
  write_matches(fs::path(out), matches);
  if (!viz_out.empty()) {
    if (image_a.empty() || image_b.empty()) throw UsageError("--viz-out needs --image-a and --image-b");
    const Image ia = read_pnm(fs::path(image_a));
    const Image ib = read_pnm(fs::path(image_b));
    Image canvas = side_by_side(ia, ib);
    for (const auto& m : matches) {
      const auto& p = a.keypoints[static_cast<std::size_t>(m.index_a)];
      const auto& q = b.keypoints[static_cast<std::size_t>(m.index_b)];
      draw_line(canvas, p.u, p.v, q.u + ia.width, q.v, {0, 255, 0});
    }
    write_pnm(fs::path(viz_out), canvas);
  }
  std::cerr << matches.size() << " mutual matches\n";
  return 0;
}

std::string opt_field(const std::optional<double>& v) { return v ? format_g9(*v) : std::string(); }

int cmd_eval_homography(const std::string& manifest, const std::string& checkpoint, const std::string& out,
                        bool estimate, int top_k, double threshold, std::uint64_t seed) {
  const auto entries = read_manifest(fs::path(manifest));
  if (entries.empty()) throw InputError(manifest + ": manifest lists no pairs");
  Model<float> model = Model<float>::load(checkpoint);
  DetectorConfig det = detector_from(top_k, threshold, 5, 0.1, 2);
  RansacConfig ransac;
  ransac.seed = seed;

  std::ofstream csv(out, std::ios::binary);
  if (!csv) throw InputError(out + ": cannot open for writing");
  csv << "pair_id,n_cov,n_gt,n_putative,n_inlier@1,n_inlier@2,n_inlier@3,rep,ms,mma@1,mma@2,mma@3,"
         "mha_correct@1,mha_correct@2,mha_correct@3\n";

  constexpr int kCols = 14;
  std::vector<double> sums(kCols, 0.0);
  std::vector<int> counts(kCols, 0);
  int evaluated = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    PairEvaluation ev;
    try {
      const Image a = read_pnm(e.image_a);
      const Image b = read_pnm(e.image_b);
      const Eigen::Matrix3d h = read_homography(e.homography);
      ev = evaluate_pair(model, a, b, h, det, ransac);
    } catch (const Error& err) {
      std::cerr << manifest << ":" << e.line << ": skipping pair: " << err.what() << '\n';
      continue;
    }
    ++evaluated;
    const auto& c = ev.counts;
    std::vector<std::optional<double>> row{c.n_cov, c.n_gt, double(c.n_putative),
                                           double(c.n_inlier[0]), double(c.n_inlier[1]),
                                           double(c.n_inlier[2]), c.rep, c.ms, c.mma[0], c.mma[1], c.mma[2]};
    for (const auto& m : c.mha_correct) {
      row.push_back(estimate && m ? std::optional<double>(*m ? 1.0 : 0.0) : std::nullopt);
    }
    csv << i;
    for (int k = 0; k < kCols; ++k) {
      csv << ',' << opt_field(row[static_cast<std::size_t>(k)]);
      if (row[static_cast<std::size_t>(k)]) {
        sums[static_cast<std::size_t>(k)] += *row[static_cast<std::size_t>(k)];
        ++counts[static_cast<std::size_t>(k)];
      }
    }
    csv << '\n';
  }
  csv << "mean";
  for (int k = 0; k < kCols; ++k) {
    const auto n = counts[static_cast<std::size_t>(k)];
    csv << ',' << (n ? format_g9(sums[static_cast<std::size_t>(k)] / n) : std::string());
  }
  csv << '\n';
  if (!csv) throw InputError(out + ": write failed");
  if (evaluated == 0) {
    std::cerr << "no pair of " << manifest << " could be evaluated\n";
    return kExitData;
  }
  return 0;
}

int cmd_train_toy(const std::string& config_path, const std::string& out_dir, bool quiet) {
  const TrainConfig cfg = TrainConfig::from_file(config_path);
  fs::create_directories(out_dir);
  const auto t0 = std::chrono::steady_clock::now();
  auto result = train(cfg, fs::path(out_dir), [&](const LossRow& row) {
    if (quiet || (row.step % 50 != 0 && row.step != cfg.steps)) return;
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(stderr, "step %d lr %.3g total %.4f (rp %.3f pk %.3f rl %.3f de %.3f) %.0fs\n", row.step,
                 row.lr, row.report.total, row.report.rp, row.report.pk, row.report.rl, row.report.de, sec);
  });
  std::cerr << "wrote " << (fs::path(out_dir) / "final.bin").string() << '\n';
  return 0;
}

int cmd_synth_gen(std::uint64_t seed, int count, int size, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream manifest(fs::path(out_dir) / "manifest.txt", std::ios::binary);
  if (!manifest) throw InputError(out_dir + ": cannot write manifest.txt");
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "pair_%04d", i);
    const fs::path dir = fs::path(out_dir) / name;
    fs::create_directories(dir);
    const SyntheticPair p = generate_pair(mix_seed(seed, static_cast<std::uint64_t>(i)), size);
    write_pnm(dir / "imageA.ppm", p.image_a);
    write_pnm(dir / "imageB.ppm", p.image_b);
    write_homography(dir / "H.txt", p.homography);
    manifest << name << "/imageA.ppm " << name << "/imageB.ppm " << name << "/H.txt\n";
  }
  if (!manifest) throw InputError(out_dir + ": write failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ALIKE keypoint detection, description and matching"};
  app.require_subcommand(1);

  std::string preset;
  auto* info = app.add_subcommand("model-info", "Print parameter count, GFLOPs and receptive field");
  info->add_option("--config", preset, "Preset name")
      ->required()
      ->check(CLI::IsMember(ModelConfig::preset_names()));

  DetectOptions det;
  auto* detect = app.add_subcommand("detect", "Detect keypoints and descriptors in an image");
  detect->add_option("--image", det.image, "PGM/PPM image")->required();
  detect->add_option("--checkpoint", det.checkpoint, "Weight checkpoint")->required();
  detect->add_option("--out", det.out, "Keypoint file to write")->required();
  detect->add_option("--top-k", det.top_k, "Maximum number of keypoints")->check(CLI::PositiveNumber);
  detect->add_option("--threshold", det.threshold, "Score threshold")->check(CLI::Range(0.0, 0.999999));
  detect->add_option("--window", det.window, "NMS/softargmax window (odd)");
  detect->add_option("--t-det", det.t_det, "Softargmax temperature");
  detect->add_option("--margin", det.margin, "Border margin in pixels");

  std::string kpts_a, kpts_b, image_a, image_b, viz_out, match_out;
  auto* match = app.add_subcommand("match", "Mutual nearest-neighbour matching of two keypoint files");
  match->add_option("--kpts-a", kpts_a)->required();
  match->add_option("--kpts-b", kpts_b)->required();
  match->add_option("--image-a", image_a);
  match->add_option("--image-b", image_b);
  match->add_option("--viz-out", viz_out, "Side-by-side PPM with match lines");
  match->add_option("--out", match_out)->required();

  std::string manifest, eval_ckpt, eval_out;
  bool estimate = false;
  int eval_top_k = 5000;
  double eval_threshold = 0.2;
  std::uint64_t ransac_seed = 0;
  auto* eval = app.add_subcommand("eval-homography", "Rep/MS/MMA (and MHA) over a pair manifest");
  eval->add_option("--pairs", manifest, "Manifest of 'imageA imageB H' lines")->required();
  eval->add_option("--checkpoint", eval_ckpt)->required();
  eval->add_option("--out", eval_out, "Metrics CSV")->required();
  eval->add_flag("--estimate", estimate, "Estimate homographies with RANSAC and report MHA");
  eval->add_option("--top-k", eval_top_k)->check(CLI::PositiveNumber);
  eval->add_option("--threshold", eval_threshold)->check(CLI::Range(0.0, 0.999999));
  eval->add_option("--ransac-seed", ransac_seed);

  std::string train_cfg, train_out;
  bool quiet = false;
  auto* train_cmd = app.add_subcommand("train-toy", "Train on synthetic homography pairs");
  train_cmd->add_option("--config", train_cfg, "key = value config file")->required();
  train_cmd->add_option("--out", train_out, "Output directory")->required();
  train_cmd->add_flag("--quiet", quiet);

  std::uint64_t synth_seed = 0;
  int synth_count = 1, synth_size = 96;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth-gen", "Write synthetic image pairs with ground truth");
  synth->add_option("--seed", synth_seed);
  synth->add_option("--count", synth_count)->check(CLI::NonNegativeNumber);
  synth->add_option("--size", synth_size);
  synth->add_option("--out", synth_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*info) return cmd_model_info(preset);
    if (*detect) return cmd_detect(det);
    if (*match) return cmd_match(kpts_a, kpts_b, image_a, image_b, viz_out, match_out);
    if (*eval) {
      return cmd_eval_homography(manifest, eval_ckpt, eval_out, estimate, eval_top_k, eval_threshold,
                                 ransac_seed);
    }
    if (*train_cmd) return cmd_train_toy(train_cfg, train_out, quiet);
    if (*synth) return cmd_synth_gen(synth_seed, synth_count, synth_size, synth_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
