#include "sevgrade/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "sevgrade/error.hpp"

namespace sevgrade {
namespace {

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open image " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5") throw Error(ErrorKind::io, path.string() + ": not a binary PGM");
  auto next_int = [&]() {
    int v = 0;
    while (true) {
      in >> std::ws;
      if (in.peek() == '#') {
        std::string comment;
        std::getline(in, comment);
        continue;
      }
      break;
    }
    if (!(in >> v)) throw Error(ErrorKind::io, path.string() + ": truncated PGM header");
    return v;
  };
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw Error(ErrorKind::io, path.string() + ": unsupported PGM geometry");
  }
  in.get();
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw Error(ErrorKind::io, path.string() + ": truncated PGM data");
  }
  Image img(h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = bytes[i] / static_cast<float>(maxval);
  return img;
}

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw Error(ErrorKind::io, path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    throw Error(ErrorKind::io, path.string() + ": " + msg);
  }
  Image img(static_cast<int>(png.height), static_cast<int>(png.width));
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = buffer[i] / 255.0f;
  return img;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  if (ext == ".png") return read_png(path);
  return read_pgm(path);
}

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

void write_pgm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write image " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<std::uint8_t> bytes(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), bytes.begin(), to_byte);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

float sample_bilinear(const Image& src, double r, double c) {
  const int r0 = static_cast<int>(std::floor(r));
  const int c0 = static_cast<int>(std::floor(c));
  const double fr = r - r0;
  const double fc = c - c0;
  auto px = [&](int rr, int cc) -> double {
    if (rr < 0 || cc < 0 || rr >= src.height || cc >= src.width) return 0.0;
    return src.at(rr, cc);
  };
  const double top = px(r0, c0) * (1 - fc) + px(r0, c0 + 1) * fc;
  const double bot = px(r0 + 1, c0) * (1 - fc) + px(r0 + 1, c0 + 1) * fc;
  return static_cast<float>(top * (1 - fr) + bot * fr);
}

Image resize_bilinear(const Image& src, int out_h, int out_w) {
  Image dst(out_h, out_w);
  const double sy = static_cast<double>(src.height) / out_h;
  const double sx = static_cast<double>(src.width) / out_w;
  for (int r = 0; r < out_h; ++r) {
    // align_corners=false convention, clamped at the border
    const double y = std::clamp((r + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
    for (int c = 0; c < out_w; ++c) {
      const double x = std::clamp((c + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
      const int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
      const int y1 = std::min(y0 + 1, src.height - 1), x1 = std::min(x0 + 1, src.width - 1);
      const double fy = y - y0, fx = x - x0;
      const double v = (src.at(y0, x0) * (1 - fx) + src.at(y0, x1) * fx) * (1 - fy) +
                       (src.at(y1, x0) * (1 - fx) + src.at(y1, x1) * fx) * fy;
      dst.at(r, c) = static_cast<float>(v);
    }
  }
  return dst;
}

double mean_abs_difference(const Image& a, const Image& b) {
  if (a.pixels.size() != b.pixels.size()) {
    throw Error(ErrorKind::geometry, "image size mismatch");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) s += std::abs(a.pixels[i] - b.pixels[i]);
  return a.pixels.empty() ? 0.0 : s / static_cast<double>(a.pixels.size());
}

}  // namespace sevgrade
