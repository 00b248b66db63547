#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace pal {

/// Axis-aligned pixel region, top-left corner plus extent.
struct Rect {
  int x0 = 0;
  int y0 = 0;
  int w = 0;
  int h = 0;

  bool operator==(const Rect&) const = default;
  bool contains(int x, int y) const { return x >= x0 && y >= y0 && x < x0 + w && y < y0 + h; }
};

/// Single-channel intensity grid, row-major, values in [0,1].
class Image {
 public:
  Image() = default;
  Image(int width, int height, float fill = 0.0f);
  Image(int width, int height, std::vector<float> data);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  void set(int x, int y, float v) { data_[static_cast<std::size_t>(y) * width_ + x] = v; }
  std::span<const float> data() const { return data_; }

  bool operator==(const Image&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

/// Per-pixel {0,1} labels.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height, bool fill = false);
  BinaryMask(int width, int height, std::vector<std::uint8_t> bits);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return bits_.size(); }

  bool at(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int x, int y, bool v) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
  std::span<const std::uint8_t> bits() const { return bits_; }
  std::size_t count() const;

  bool operator==(const BinaryMask&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Foreground Jaccard index TP/(TP+FN+FP); 1.0 when both masks are empty.
double iou(const BinaryMask& pred, const BinaryMask& gt);

/// Arithmetic mean of pairwise iou. Throws UsageError on empty input.
double mean_iou(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts);

Image crop(const Image& img, const Rect& r);
BinaryMask crop(const BinaryMask& mask, const Rect& r);

/// Binary P5 PGM, 8-bit.
void write_pgm(const std::filesystem::path& path, const Image& img);
Image read_pgm(const std::filesystem::path& path);

/// "PSM1" mask file: 16-byte header (magic, width, height, reserved; little-endian u32) then one byte per pixel.
void write_psm(const std::filesystem::path& path, const BinaryMask& mask);
BinaryMask read_psm(const std::filesystem::path& path);

}  // namespace pal
