#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "alike/detect.hpp"
#include "alike/matching.hpp"

namespace alike {

/// `key = value` lines; `#` starts a comment, blank lines are ignored.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::istream& in,
                                                                  const std::string& source);
std::vector<std::pair<std::string, std::string>> read_key_values(const std::filesystem::path& path);

/// Shortest round-trip-safe text of a float at 9 significant digits.
std::string format_g9(double v);

struct KeypointFile {
  int dim = 0;
  std::vector<Keypoint> keypoints;
};

/// Header `# alike-kpts v1 dim=<dim>`, then `u v score d_0 ... d_{dim-1}`.
void write_keypoints(std::ostream& out, const KeypointFile& file);
void write_keypoints(const std::filesystem::path& path, const KeypointFile& file);
KeypointFile read_keypoints(std::istream& in, const std::string& source);
KeypointFile read_keypoints(const std::filesystem::path& path);

/// One `i j similarity` line per match.
void write_matches(const std::filesystem::path& path, const std::vector<Match>& matches);
std::vector<Match> read_matches(const std::filesystem::path& path);

/// Nine whitespace-separated values, row-major.
Eigen::Matrix3d read_homography(const std::filesystem::path& path);
void write_homography(const std::filesystem::path& path, const Eigen::Matrix3d& h);

struct ManifestEntry {
  std::filesystem::path image_a;
  std::filesystem::path image_b;
  std::filesystem::path homography;
  int line = 0;
};

/// `imageA imageB homographyFile` per line; relative paths resolve against
/// the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

}  // namespace alike
