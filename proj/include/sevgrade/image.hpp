#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace sevgrade {

/// Single-channel image with intensities in [0, 1], row-major.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, float fill = 0.0f)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

  float& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * width + c]; }
  float at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }

  bool square() const { return height == width; }
  bool operator==(const Image&) const = default;
};

/// Reads an 8-bit grayscale PGM (P5) or PNG file. Colour PNGs are reduced to
/// luminance.
Image read_image(const std::filesystem::path& path);

/// Writes an 8-bit binary PGM. Intensities are clamped and rounded.
void write_pgm(const std::filesystem::path& path, const Image& image);

std::uint8_t to_byte(float v);

/// Bilinear resample to an arbitrary output size.
Image resize_bilinear(const Image& src, int out_h, int out_w);

/// Bilinear sample with zero fill outside the image.
float sample_bilinear(const Image& src, double r, double c);

double mean_abs_difference(const Image& a, const Image& b);

}  // namespace sevgrade
