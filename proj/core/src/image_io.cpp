#include "latent_atlas/image_io.hpp"

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <vector>

#include "latent_atlas/errors.hpp"

namespace latent_atlas {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void png_quiet_warn(png_structp, png_const_charp) {}

}  // namespace

int quantize_unit(float v) {
  const double scaled = (static_cast<double>(v) + 1.0) * 127.5;
  const double rounded = std::nearbyint(scaled);
  if (rounded < 0.0) return 0;
  if (rounded > 255.0) return 255;
  return static_cast<int>(rounded);
}

float dequantize_unit(int byte) {
  return static_cast<float>(byte / 127.5 - 1.0);
}

void write_png(const std::filesystem::path& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw UsageError("write_png: expected a [3, H, W] image, got " +
                     Tensor<float>::shape_string(image.shape()));
  }
  const int h = image.dim(1);
  const int w = image.dim(2);

  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw IoError("cannot open " + path.string() + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                            png_quiet_warn);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }

  std::vector<png_byte> rows(static_cast<std::size_t>(h) * w * 3);
  std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) {
    png_bytep row = rows.data() + static_cast<std::size_t>(y) * w * 3;
    row_ptrs[static_cast<std::size_t>(y)] = row;
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        row[x * 3 + c] = static_cast<png_byte>(quantize_unit(image(c, y, x)));
      }
    }
  }

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor<float> read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string() + " for reading");

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw IoError(path.string() + " is not a PNG file");
  }

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                           png_quiet_warn);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }

  std::vector<png_byte> rows;
  std::vector<png_bytep> row_ptrs;
  int w = 0, h = 0;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng failed reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  w = static_cast<int>(png_get_image_width(png, info));
  h = static_cast<int>(png_get_image_height(png, info));
  if (png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string() + ": unsupported channel layout after expansion");
  }

  rows.resize(static_cast<std::size_t>(h) * w * 3);
  row_ptrs.resize(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) {
    row_ptrs[static_cast<std::size_t>(y)] = rows.data() + static_cast<std::size_t>(y) * w * 3;
  }
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor<float> out({3, h, w});
  for (int y = 0; y < h; ++y) {
    const png_bytep row = row_ptrs[static_cast<std::size_t>(y)];
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        out(c, y, x) = dequantize_unit(row[x * 3 + c]);
      }
    }
  }
  return out;
}

}  // namespace latent_atlas
