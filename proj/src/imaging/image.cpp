#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <numeric>

#include "meshdens/image.hpp"

namespace meshdens {

GrayImage::GrayImage(int width, int height, float fill) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) throw ImageError("image dimensions must be positive");
  data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
}

bool GrayImage::in_unit_range() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
}

double GrayImage::mean() const {
  if (data_.empty()) return 0.0;
  return std::accumulate(data_.begin(), data_.end(), 0.0) / static_cast<double>(data_.size());
}

namespace {

static_assert(std::endian::native == std::endian::little, "GIMG IO assumes a little-endian host");

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

}  // namespace

void save_gimg(const std::string& path, const GrayImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ImageError("cannot write " + path);
  os.write("GIMG", 4);
  put_u32(os, static_cast<std::uint32_t>(img.width()));
  put_u32(os, static_cast<std::uint32_t>(img.height()));
  os.write(reinterpret_cast<const char*>(img.data().data()), static_cast<std::streamsize>(img.size() * sizeof(float)));
  if (!os) throw ImageError("write failed: " + path);
}

GrayImage load_gimg(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ImageError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "GIMG", 4) != 0) throw ImageError(path + ": not a GIMG file");
  const std::uint32_t w = get_u32(is), h = get_u32(is);
  if (!is || w == 0 || h == 0 || w > 65536 || h > 65536) throw ImageError(path + ": bad GIMG header");
  GrayImage img(static_cast<int>(w), static_cast<int>(h));
  is.read(reinterpret_cast<char*>(img.data().data()), static_cast<std::streamsize>(img.size() * sizeof(float)));
  if (!is) throw ImageError(path + ": truncated GIMG data");
  return img;
}

void save_png(const std::string& path, const GrayImage& img) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw ImageError("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw ImageError("libpng initialisation failed");
  }
  std::vector<png_byte> row(static_cast<std::size_t>(img.width()));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageError("libpng write error: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()), static_cast<png_uint_32>(img.height()), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < img.height(); ++r) {
    for (int c = 0; c < img.width(); ++c)
      row[static_cast<std::size_t>(c)] = static_cast<png_byte>(std::lround(255.0f * std::clamp(img.at(r, c), 0.0f, 1.0f)));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

GrayImage load_png(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) throw ImageError(path + ": " + image.message);
  image.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw ImageError(path + ": " + image.message);
  }
  GrayImage img(static_cast<int>(image.width), static_cast<int>(image.height));
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(buf[i]) / 255.0f;
  return img;
}

GrayImage load_image(const std::string& path) {
  auto ends_with = [&](const char* ext) {
    const std::size_t n = std::strlen(ext);
    return path.size() >= n && path.compare(path.size() - n, n, ext) == 0;
  };
  if (ends_with(".gimg")) return load_gimg(path);
  if (ends_with(".png")) return load_png(path);
  throw ImageError(path + ": unknown image extension (expected .gimg or .png)");
}

}  // namespace meshdens
