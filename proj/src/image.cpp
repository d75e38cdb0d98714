#include "hanerf/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "hanerf/errors.hpp"

namespace hanerf {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

uint8_t to_byte(float v) {
  float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<uint8_t>(std::lround(c * 255.0f));
}

// Decodes any PNG into 8-bit rows with `channels` components per pixel
// (3 = RGB, 1 = gray).
void read_png(const std::string& path, int channels, int64_t& h, int64_t& w,
              std::vector<uint8_t>& pixels) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path);
  png_byte header[8];
  if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw FormatError(path + " is not a PNG file");
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("failed to decode " + path);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  int color = png_get_color_type(png, info);
  if (channels == 3) {
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
      png_set_gray_to_rgb(png);
  } else {
    if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_GRAY_ALPHA)
      png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);

  h = png_get_image_height(png, info);
  w = png_get_image_width(png, info);
  size_t rowbytes = png_get_rowbytes(png, info);
  if (rowbytes != static_cast<size_t>(w * channels)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("unexpected row layout in " + path);
  }
  pixels.resize(static_cast<size_t>(h) * rowbytes);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int64_t y = 0; y < h; ++y)
    rows[static_cast<size_t>(y)] = pixels.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
}

void write_png(const std::string& path, int channels, int64_t h, int64_t w,
               const std::vector<uint8_t>& pixels) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot write " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed to encode " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w),
               static_cast<png_uint_32>(h), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int64_t y = 0; y < h; ++y)
    rows[static_cast<size_t>(y)] =
        const_cast<png_bytep>(pixels.data() + y * w * channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Tensor<float> read_png_rgb(const std::string& path) {
  int64_t h = 0, w = 0;
  std::vector<uint8_t> px;
  read_png(path, 3, h, w, px);
  Tensor<float> out({h, w, 3});
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = px[static_cast<size_t>(i)] / 255.0f;
  return out;
}

void write_png_rgb(const std::string& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.shape[2] != 3)
    throw ConfigError("write_png_rgb expects [H,W,3]");
  std::vector<uint8_t> px(static_cast<size_t>(image.numel()));
  for (int64_t i = 0; i < image.numel(); ++i)
    px[static_cast<size_t>(i)] = to_byte(image[i]);
  write_png(path, 3, image.shape[0], image.shape[1], px);
}

Tensor<float> read_png_gray(const std::string& path) {
  int64_t h = 0, w = 0;
  std::vector<uint8_t> px;
  read_png(path, 1, h, w, px);
  Tensor<float> out({h, w});
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = px[static_cast<size_t>(i)] / 255.0f;
  return out;
}

void write_png_gray(const std::string& path, const Tensor<float>& image) {
  if (image.rank() != 2) throw ConfigError("write_png_gray expects [H,W]");
  std::vector<uint8_t> px(static_cast<size_t>(image.numel()));
  for (int64_t i = 0; i < image.numel(); ++i)
    px[static_cast<size_t>(i)] = to_byte(image[i]);
  write_png(path, 1, image.shape[0], image.shape[1], px);
}

Tensor<float> luminance(const Tensor<float>& image) {
  if (image.rank() != 3 || image.shape[2] != 3)
    throw ConfigError("luminance expects [H,W,3]");
  Tensor<float> out({image.shape[0], image.shape[1]});
  for (int64_t p = 0; p < out.numel(); ++p) {
    const float* c = image.ptr() + p * 3;
    out[p] = 0.2126f * c[0] + 0.7152f * c[1] + 0.0722f * c[2];
  }
  return out;
}

}  // namespace hanerf
