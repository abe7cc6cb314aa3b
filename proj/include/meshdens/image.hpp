#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "meshdens/geometry.hpp"

namespace meshdens {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-major scalar image over the unit square. Row 0 is the top edge
/// (y = 1), column 0 the left edge (x = 0).
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, float fill = 0.0f);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(int row, int col) { return data_[index(row, col)]; }
  float at(int row, int col) const { return data_[index(row, col)]; }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  /// Center of pixel (row, col) in domain coordinates.
  Vec2 pixel_center(int row, int col) const {
    return {(col + 0.5) / width_, 1.0 - (row + 0.5) / height_};
  }

  bool same_shape(const GrayImage& o) const { return width_ == o.width_ && height_ == o.height_; }
  /// True when every value lies in [0, 1].
  bool in_unit_range() const;
  double mean() const;

  bool operator==(const GrayImage&) const = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(col);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

// GIMG raw format: "GIMG", u32 width, u32 height, f32 little-endian data.
void save_gimg(const std::string& path, const GrayImage& img);
GrayImage load_gimg(const std::string& path);
/// 8-bit grayscale preview (values clamped to [0, 1]).
void save_png(const std::string& path, const GrayImage& img);
GrayImage load_png(const std::string& path);
/// Dispatches on extension (.gimg or .png).
GrayImage load_image(const std::string& path);

}  // namespace meshdens
