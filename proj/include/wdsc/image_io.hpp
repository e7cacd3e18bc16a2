// 8-bit RGB PNG reading and writing as [3, H, W] tensors in [0, 1].
#pragma once

#include <png.h>

#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "wdsc/tensor.hpp"

namespace wdsc {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Rgb8 {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major
};

inline Rgb8 read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw ImageError("cannot read " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  Rgb8 out{img.height, img.width, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(img))};
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw ImageError("cannot decode " + path.string() + ": " + msg);
  }
  return out;
}

inline void write_png(const std::filesystem::path& path, const Rgb8& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw ImageError("cannot write " + path.string() + ": " + img.message);
  }
}

template <class Real = float>
Tensor<Real> to_tensor(const Rgb8& image) {
  const std::size_t h = image.height, w = image.width;
  std::vector<Real> v(3 * h * w);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < h * w; ++i) v[c * h * w + i] = Real(image.pixels[i * 3 + c]) / Real(255);
  return Tensor<Real>::from({3, h, w}, std::move(v));
}

template <class Real>
Rgb8 to_rgb8(const Tensor<Real>& t) {
  if (t.rank() != 3 || t.dim(0) != 3) throw ShapeError("expected a [3,H,W] image, got " + to_string(t.shape()));
  const std::size_t h = t.dim(1), w = t.dim(2);
  Rgb8 out{h, w, std::vector<std::uint8_t>(3 * h * w)};
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < h * w; ++i) {
      const double v = std::clamp(double(t[c * h * w + i]), 0.0, 1.0);
      out.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255));
    }
  return out;
}

template <class Real = float>
Tensor<Real> load_image(const std::filesystem::path& path) {
  return to_tensor<Real>(read_png(path));
}

template <class Real>
void save_image(const std::filesystem::path& path, const Tensor<Real>& t) {
  write_png(path, to_rgb8(t));
}

}  // namespace wdsc
