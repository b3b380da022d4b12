#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "blobforge/field.hpp"

namespace blobforge {

// 8-bit interleaved image, row-major, 1 (gray) or 3 (RGB) channels.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  static Raster zeros(int width, int height, int channels);

  bool empty() const { return width == 0 || height == 0; }
  std::size_t index(int h, int w, int c = 0) const {
    return (static_cast<std::size_t>(h) * static_cast<std::size_t>(width) +
            static_cast<std::size_t>(w)) *
               static_cast<std::size_t>(channels) +
           static_cast<std::size_t>(c);
  }
  std::uint8_t at(int h, int w, int c = 0) const { return pixels[index(h, w, c)]; }
  std::uint8_t& at(int h, int w, int c = 0) { return pixels[index(h, w, c)]; }

  friend bool operator==(const Raster&, const Raster&) = default;
};

struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // 0 or 1

  static BinaryMask zeros(int width, int height);

  std::size_t index(int h, int w) const {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(width) +
           static_cast<std::size_t>(w);
  }
  bool at(int h, int w) const { return bits[index(h, w)] != 0; }
  void set(int h, int w, bool v = true) { bits[index(h, w)] = v ? 1 : 0; }
  std::size_t count() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

// A pixel is set when any channel exceeds the threshold.
BinaryMask binarize(const Raster& r, std::uint8_t threshold = 127);
BinaryMask mask_from_field(const FieldMap& f);
FieldMap field_from_mask(const BinaryMask& m);
// 0/255 grayscale rendering of a mask.
Raster mask_to_raster(const BinaryMask& m);

// Filled ellipse in pixel coordinates: pixel (h, w) is set when its center
// (w + 0.5, h + 0.5) lies inside. theta is measured from +x towards +y.
BinaryMask rasterize_ellipse(int width, int height, double cx_px, double cy_px,
                             double a_px, double b_px, double theta);

}  // namespace blobforge
