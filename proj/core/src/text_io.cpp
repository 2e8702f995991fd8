#include "alike/text_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace alike {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(path.string() + ": cannot open for reading");
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError(path.string() + ": cannot open for writing");
  return out;
}

[[noreturn]] void bad_line(const std::string& source, int line, const std::string& why) {
  throw InputError(source + ":" + std::to_string(line) + ": " + why);
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_key_values(std::istream& in,
                                                                  const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string text = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) bad_line(source, line, "expected 'key = value'");
    std::string key = trim(text.substr(0, eq));
    std::string value = trim(text.substr(eq + 1));
    if (key.empty()) bad_line(source, line, "empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> read_key_values(const std::filesystem::path& path) {
  auto in = open_in(path);
  return parse_key_values(in, path.string());
}

std::string format_g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_keypoints(std::ostream& out, const KeypointFile& file) {
  out << "# alike-kpts v1 dim=" << file.dim << '\n';
  for (const auto& k : file.keypoints) {
    if (static_cast<int>(k.descriptor.size()) != file.dim) {
      throw UsageError("keypoint descriptor length does not match dim=" + std::to_string(file.dim));
    }
    out << format_g9(k.u) << ' ' << format_g9(k.v) << ' ' << format_g9(k.score);
    for (float d : k.descriptor) out << ' ' << format_g9(d);
    out << '\n';
  }
}

void write_keypoints(const std::filesystem::path& path, const KeypointFile& file) {
  auto out = open_out(path);
  write_keypoints(out, file);
  if (!out) throw InputError(path.string() + ": write failed");
}

KeypointFile read_keypoints(std::istream& in, const std::string& source) {
  KeypointFile f;
  std::string raw;
  int line = 0;
  if (!std::getline(in, raw)) throw InputError(source + ": empty keypoint file");
  ++line;
  constexpr std::string_view kHeader = "# alike-kpts v1 dim=";
  if (raw.rfind(kHeader, 0) != 0) bad_line(source, line, "missing '# alike-kpts v1 dim=' header");
  try {
    std::size_t used = 0;
    const std::string num = trim(raw.substr(kHeader.size()));
    f.dim = std::stoi(num, &used);
    if (used != num.size() || f.dim < 0) throw std::invalid_argument("dim");
  } catch (const std::exception&) {
    bad_line(source, line, "invalid dim in header");
  }
  while (std::getline(in, raw)) {
    ++line;
    if (trim(raw).empty()) continue;
    std::istringstream ss(raw);
    Keypoint k;
    if (!(ss >> k.u >> k.v >> k.score)) bad_line(source, line, "expected 'u v score'");
    k.descriptor.resize(static_cast<std::size_t>(f.dim));
    for (auto& d : k.descriptor) {
      if (!(ss >> d)) bad_line(source, line, "expected " + std::to_string(f.dim) + " descriptor values");
    }
    std::string extra;
    if (ss >> extra) bad_line(source, line, "trailing values");
    f.keypoints.push_back(std::move(k));
  }
  return f;
}

KeypointFile read_keypoints(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_keypoints(in, path.string());
}

void write_matches(const std::filesystem::path& path, const std::vector<Match>& matches) {
  auto out = open_out(path);
  for (const auto& m : matches) out << m.index_a << ' ' << m.index_b << ' ' << format_g9(m.similarity) << '\n';
  if (!out) throw InputError(path.string() + ": write failed");
}

std::vector<Match> read_matches(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<Match> out;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (trim(raw).empty()) continue;
    std::istringstream ss(raw);
    Match m;
    if (!(ss >> m.index_a >> m.index_b >> m.similarity)) bad_line(path.string(), line, "expected 'i j similarity'");
    out.push_back(m);
  }
  return out;
}

Eigen::Matrix3d read_homography(const std::filesystem::path& path) {
  auto in = open_in(path);
  Eigen::Matrix3d h;
  for (int i = 0; i < 9; ++i) {
    if (!(in >> h(i / 3, i % 3))) {
      throw InputError(path.string() + ": expected 9 homography values, found " + std::to_string(i));
    }
  }
  std::string extra;
  if (in >> extra) throw InputError(path.string() + ": more than 9 homography values");
  return h;
}

void write_homography(const std::filesystem::path& path, const Eigen::Matrix3d& h) {
  auto out = open_out(path);
  char buf[40];
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", h(r, c));
      out << buf << (c == 2 ? '\n' : ' ');
    }
  }
  if (!out) throw InputError(path.string() + ": write failed");
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  auto in = open_in(path);
  const auto base = path.parent_path();
  std::vector<ManifestEntry> out;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string text = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (text.empty()) continue;
    std::istringstream ss(text);
    std::string a, b, h, extra;
    if (!(ss >> a >> b >> h) || (ss >> extra)) {
      bad_line(path.string(), line, "expected 'imageA imageB homographyFile'");
    }
    auto resolve = [&](const std::string& p) {
      const std::filesystem::path fp(p);
      return fp.is_absolute() ? fp : base / fp;
    };
    out.push_back({resolve(a), resolve(b), resolve(h), line});
  }
  return out;
}

}  // namespace alike
