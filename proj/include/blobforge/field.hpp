#pragma once

// Dense field computation over the normalized image grid.
//
// Storage is row-major: values[h * width + w] holds the cell whose grid
// coordinate is ((w + 1) / W, (h + 1) / H), i.e. x runs horizontally along
// the width and y vertically along the height, both with 1-based indices.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "blobforge/blob.hpp"
#include "blobforge/scene.hpp"

namespace blobforge {

class CoordGrid {
 public:
  CoordGrid(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }

  // Coordinate of cell (h, w), 0-based indices.
  Vec2 at(int h, int w) const { return {xs_[w], ys_[h]}; }

 private:
  int width_;
  int height_;
  std::vector<double> xs_;
  std::vector<double> ys_;
};

CoordGrid make_grid(int width, int height);

enum class FieldKind { kDistance, kOpacity, kComposedOpacity, kMask, kLatent };

std::string_view to_string(FieldKind kind);
FieldKind field_kind_from_string(std::string_view name);

struct FieldMap {
  int width = 0;
  int height = 0;
  FieldKind kind = FieldKind::kLatent;
  std::vector<double> values;

  static FieldMap filled(int width, int height, FieldKind kind, double v);

  double at(int h, int w) const { return values[index(h, w)]; }
  double& at(int h, int w) { return values[index(h, w)]; }
  std::size_t index(int h, int w) const {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(width) +
           static_cast<std::size_t>(w);
  }
  double max_value() const;
};

// H x W x d, channel-innermost.
struct FeatureMap {
  int width = 0;
  int height = 0;
  int depth = 0;
  std::vector<double> values;

  static FeatureMap zeros(int width, int height, int depth);

  double at(int h, int w, int k) const { return values[index(h, w, k)]; }
  double& at(int h, int w, int k) { return values[index(h, w, k)]; }
  std::size_t index(int h, int w, int k) const {
    return (static_cast<std::size_t>(h) * static_cast<std::size_t>(width) +
            static_cast<std::size_t>(w)) *
               static_cast<std::size_t>(depth) +
           static_cast<std::size_t>(k);
  }
};

// Precomputed inverse covariance for repeated distance queries.
class MahalanobisForm {
 public:
  // Throws DegeneracyError for singular or indefinite covariances.
  explicit MahalanobisForm(const BlobGaussian& g);

  double operator()(Vec2 x) const;

 private:
  Vec2 mu_;
  double ixx_;
  double ixy_;
  double iyy_;
};

FieldMap mahalanobis_map(const CoordGrid& grid, const BlobGaussian& g);

// The default is the literal logistic(-d). With a sharpness s the map
// becomes logistic(s * (chi2(p) - d)), which peaks above 0.5.
struct OpacityOptions {
  std::optional<double> sharpness;
  ConfidenceLevel level = kDefaultLevel;
};

double logistic(double x);

FieldMap opacity_map(const FieldMap& distance, const OpacityOptions& opts = {});

// Raw opacity of every blob, in scene order.
std::vector<FieldMap> opacity_maps(const BlobScene& scene,
                                   const CoordGrid& grid,
                                   const OpacityOptions& opts = {});

// Occlusion-composed opacity of every blob: blob i is attenuated by
// (1 - O_j) for all j in front of it (larger index).
std::vector<FieldMap> composed_opacities(const BlobScene& scene,
                                         const CoordGrid& grid,
                                         const OpacityOptions& opts = {});

FeatureMap splat(std::span<const double> feature, const FieldMap& oc);

// Sum of per-blob splats. Throws ValidationError on an empty scene and
// ShapeError when feature dimensions differ.
FeatureMap scene_feature_map(const BlobScene& scene, const CoordGrid& grid,
                             const OpacityOptions& opts = {});

// 1 inside the p-confidence ellipse (d_M <= chi2(p)), 0 outside.
FieldMap blob_mask(const BlobGaussian& g, const CoordGrid& grid,
                   ConfidenceLevel p = kDefaultLevel);

// Pointwise maximum of masks of equal shape.
FieldMap mask_union(const FieldMap& a, const FieldMap& b);

}  // namespace blobforge
