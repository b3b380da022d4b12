#include "blobforge/raster.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace blobforge {

Raster Raster::zeros(int width, int height, int channels) {
  return Raster{width, height, channels,
                std::vector<std::uint8_t>(static_cast<std::size_t>(width) *
                                              static_cast<std::size_t>(height) *
                                              static_cast<std::size_t>(channels),
                                          0)};
}

BinaryMask BinaryMask::zeros(int width, int height) {
  return BinaryMask{width, height,
                    std::vector<std::uint8_t>(static_cast<std::size_t>(width) *
                                                  static_cast<std::size_t>(height),
                                              0)};
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(
      std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

BinaryMask binarize(const Raster& r, std::uint8_t threshold) {
  BinaryMask m = BinaryMask::zeros(r.width, r.height);
  for (int h = 0; h < r.height; ++h) {
    for (int w = 0; w < r.width; ++w) {
      for (int c = 0; c < r.channels; ++c) {
        if (r.at(h, w, c) > threshold) {
          m.set(h, w);
          break;
        }
      }
    }
  }
  return m;
}

BinaryMask mask_from_field(const FieldMap& f) {
  BinaryMask m = BinaryMask::zeros(f.width, f.height);
  for (std::size_t i = 0; i < f.values.size(); ++i) {
    m.bits[i] = f.values[i] > 0.5 ? 1 : 0;
  }
  return m;
}

FieldMap field_from_mask(const BinaryMask& m) {
  FieldMap f = FieldMap::filled(m.width, m.height, FieldKind::kMask, 0.0);
  for (std::size_t i = 0; i < m.bits.size(); ++i) {
    f.values[i] = m.bits[i] ? 1.0 : 0.0;
  }
  return f;
}

Raster mask_to_raster(const BinaryMask& m) {
  Raster r = Raster::zeros(m.width, m.height, 1);
  for (std::size_t i = 0; i < m.bits.size(); ++i) {
    r.pixels[i] = m.bits[i] ? 255 : 0;
  }
  return r;
}

BinaryMask rasterize_ellipse(int width, int height, double cx_px, double cy_px,
                             double a_px, double b_px, double theta) {
  BinaryMask m = BinaryMask::zeros(width, height);
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  for (int h = 0; h < height; ++h) {
    for (int w = 0; w < width; ++w) {
      const double dx = w + 0.5 - cx_px;
      const double dy = h + 0.5 - cy_px;
      const double u = (c * dx + s * dy) / a_px;
      const double v = (-s * dx + c * dy) / b_px;
      if (u * u + v * v <= 1.0) m.set(h, w);
    }
  }
  return m;
}

}  // namespace blobforge
