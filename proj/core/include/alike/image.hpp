#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "alike/tensor.hpp"

namespace alike {

/// 8-bit image, rows top to bottom, channels interleaved.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;  // 1 or 3
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0);

  std::uint8_t& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Binary PGM (P5) or PPM (P6) with maxval <= 255. Throws InputError naming
/// the source and the byte offset of the problem.
Image read_pnm(std::istream& in, const std::string& source = "<stream>");
Image read_pnm(const std::filesystem::path& path);

/// P5 for one channel, P6 for three.
void write_pnm(std::ostream& out, const Image& image);
void write_pnm(const std::filesystem::path& path, const Image& image);

/// [1,3,H,W] with samples mapped to [0,1]; grey images are replicated.
template <typename T>
Tensor<T> image_to_tensor(const Image& image);

/// Three-channel copy of a grey or colour image.
Image to_rgb(const Image& image);

/// A and B side by side on a black canvas of width W_A+W_B and height
/// max(H_A,H_B).
Image side_by_side(const Image& a, const Image& b);

/// 1 px line with endpoints rounded to the nearest pixel; clipped to the image.
void draw_line(Image& image, double x0, double y0, double x1, double y1,
               std::array<std::uint8_t, 3> color);

/// Output pixel x samples the source at h^-1 * x with bilinear interpolation
/// and replicated borders.
Image warp_image(const Image& source, const Eigen::Matrix3d& h, int width, int height);

}  // namespace alike
