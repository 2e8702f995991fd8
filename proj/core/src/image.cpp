#include "alike/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include <Eigen/Dense>

namespace alike {

Image::Image(int w, int h, int c, std::uint8_t fill) : width(w), height(h), channels(c) {
  if (w < 0 || h < 0 || (c != 1 && c != 3)) throw ConfigError("invalid image dimensions");
  data.assign(static_cast<std::size_t>(w) * h * c, fill);
}

namespace {

class PnmReader {
 public:
  PnmReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  [[noreturn]] void fail(const std::string& why) const {
    throw InputError(source_ + ": " + why + " at byte offset " + std::to_string(offset_));
  }

  int get() {
    const int c = in_.get();
    if (c != EOF) ++offset_;
    return c;
  }

  void skip_space() {
    for (;;) {
      const int c = in_.peek();
      if (c == '#') {
        while (get() != '\n') {
          if (in_.eof()) fail("unterminated header comment");
        }
      } else if (c != EOF && std::isspace(c)) {
        get();
      } else {
        return;
      }
    }
  }

  int number(const char* what) {
    skip_space();
    long long v = 0;
    int digits = 0;
    while (std::isdigit(in_.peek())) {
      v = v * 10 + (get() - '0');
      if (v > (1 << 24)) fail(std::string(what) + " is too large");
      ++digits;
    }
    if (digits == 0) fail(std::string("expected ") + what);
    return static_cast<int>(v);
  }

  Image read() {
    if (get() != 'P') fail("not a PNM file");
    const int kind = get();
    if (kind != '5' && kind != '6') fail("unsupported PNM type (only binary P5/P6)");
    const int w = number("width");
    const int h = number("height");
    const int maxval = number("maxval");
    if (w <= 0 || h <= 0) fail("image dimensions must be positive");
    if (maxval <= 0 || maxval > 255) fail("maxval must lie in 1..255");
    if (!std::isspace(get())) fail("expected whitespace after maxval");
    Image img(w, h, kind == '5' ? 1 : 3);
    in_.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
    const auto got = static_cast<std::size_t>(in_.gcount());
    offset_ += got;
    if (got != img.data.size()) {
      fail("truncated raster (" + std::to_string(got) + " of " + std::to_string(img.data.size()) + " bytes)");
    }
    if (maxval != 255) {
      for (auto& v : img.data) {
        if (v > maxval) fail("sample exceeds maxval");
        v = static_cast<std::uint8_t>(std::lround(v * 255.0 / maxval));
      }
    }
    return img;
  }

 private:
  std::istream& in_;
  std::string source_;
  std::size_t offset_ = 0;
};

}  // namespace

Image read_pnm(std::istream& in, const std::string& source) {
  return PnmReader(in, source).read();
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(path.string() + ": cannot open for reading");
  return read_pnm(in, path.string());
}

void write_pnm(std::ostream& out, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw ConfigError("write_pnm: 1 or 3 channels required");
  out << (image.channels == 1 ? "P5" : "P6") << '\n'
      << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.data.data()), static_cast<std::streamsize>(image.data.size()));
}

void write_pnm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError(path.string() + ": cannot open for writing");
  write_pnm(out, image);
  if (!out) throw InputError(path.string() + ": write failed");
}

template <typename T>
Tensor<T> image_to_tensor(const Image& image) {
  const std::int64_t h = image.height, w = image.width;
  Tensor<T> t({1, 3, h, w});
  for (int c = 0; c < 3; ++c) {
    const int src = image.channels == 1 ? 0 : c;
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x)
        t[static_cast<std::size_t>((c * h + y) * w + x)] = T(image.at(x, y, src)) / T(255);
  }
  return t;
}

template Tensor<float> image_to_tensor(const Image&);
template Tensor<double> image_to_tensor(const Image&);

Image to_rgb(const Image& image) {
  if (image.channels == 3) return image;
  Image out(image.width, image.height, 3);
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    std::fill_n(out.data.begin() + static_cast<std::ptrdiff_t>(i * 3), 3, image.data[i]);
  }
  return out;
}

Image side_by_side(const Image& a, const Image& b) {
  const Image ra = to_rgb(a), rb = to_rgb(b);
  Image out(a.width + b.width, std::max(a.height, b.height), 3);
  auto blit = [&out](const Image& src, int x0) {
    for (int y = 0; y < src.height; ++y)
      std::copy_n(src.data.begin() + static_cast<std::ptrdiff_t>(y) * src.width * 3, src.width * 3,
                  out.data.begin() + (static_cast<std::ptrdiff_t>(y) * out.width + x0) * 3);
  };
  blit(ra, 0);
  blit(rb, a.width);
  return out;
}

void draw_line(Image& image, double x0, double y0, double x1, double y1,
               std::array<std::uint8_t, 3> color) {
  // Bresenham on rounded endpoints
  int ax = static_cast<int>(std::lround(x0)), ay = static_cast<int>(std::lround(y0));
  const int bx = static_cast<int>(std::lround(x1)), by = static_cast<int>(std::lround(y1));
  const int dx = std::abs(bx - ax), dy = -std::abs(by - ay);
  const int sx = ax < bx ? 1 : -1, sy = ay < by ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    if (ax >= 0 && ay >= 0 && ax < image.width && ay < image.height) {
      for (int c = 0; c < image.channels; ++c) image.at(ax, ay, c) = color[static_cast<std::size_t>(c)];
    }
    if (ax == bx && ay == by) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      ax += sx;
    }
    if (e2 <= dx) {
      err += dx;
      ay += sy;
    }
  }
}

Image warp_image(const Image& source, const Eigen::Matrix3d& h, int width, int height) {
  const Eigen::Matrix3d inv = h.inverse();
  Image out(width, height, source.channels);
  const int w = source.width, hh = source.height;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Eigen::Vector3d p = inv * Eigen::Vector3d(x, y, 1.0);
      double sx = p.x() / p.z(), sy = p.y() / p.z();
      if (!std::isfinite(sx) || !std::isfinite(sy)) sx = sy = 0.0;
      sx = std::clamp(sx, 0.0, double(w - 1));
      sy = std::clamp(sy, 0.0, double(hh - 1));
      const int x0 = std::min(static_cast<int>(sx), std::max(w - 2, 0));
      const int y0 = std::min(static_cast<int>(sy), std::max(hh - 2, 0));
      const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, hh - 1);
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < source.channels; ++c) {
        const double v = (1 - fx) * (1 - fy) * source.at(x0, y0, c) + fx * (1 - fy) * source.at(x1, y0, c) +
                         (1 - fx) * fy * source.at(x0, y1, c) + fx * fy * source.at(x1, y1, c);
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

}  // namespace alike
