#include "blobforge/field.hpp"

#include <algorithm>
#include <cmath>

namespace blobforge {

CoordGrid::CoordGrid(int width, int height) : width_(width), height_(height) {
  if (width < 1 || height < 1) {
    throw DomainError("grid dimensions must be at least 1x1");
  }
  xs_.resize(static_cast<std::size_t>(width));
  ys_.resize(static_cast<std::size_t>(height));
  for (int w = 0; w < width; ++w) {
    xs_[w] = static_cast<double>(w + 1) / static_cast<double>(width);
  }
  for (int h = 0; h < height; ++h) {
    ys_[h] = static_cast<double>(h + 1) / static_cast<double>(height);
  }
}

CoordGrid make_grid(int width, int height) { return CoordGrid(width, height); }

std::string_view to_string(FieldKind kind) {
  switch (kind) {
    case FieldKind::kDistance:
      return "distance";
    case FieldKind::kOpacity:
      return "opacity";
    case FieldKind::kComposedOpacity:
      return "composed-opacity";
    case FieldKind::kMask:
      return "mask";
    case FieldKind::kLatent:
      return "latent";
  }
  return "latent";
}

FieldKind field_kind_from_string(std::string_view name) {
  for (FieldKind k : {FieldKind::kDistance, FieldKind::kOpacity,
                      FieldKind::kComposedOpacity, FieldKind::kMask,
                      FieldKind::kLatent}) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("unknown field kind '" + std::string(name) + "'");
}

FieldMap FieldMap::filled(int width, int height, FieldKind kind, double v) {
  return FieldMap{width, height, kind,
                  std::vector<double>(static_cast<std::size_t>(width) *
                                          static_cast<std::size_t>(height),
                                      v)};
}

double FieldMap::max_value() const {
  if (values.empty()) return 0.0;
  return *std::max_element(values.begin(), values.end());
}

FeatureMap FeatureMap::zeros(int width, int height, int depth) {
  return FeatureMap{width, height, depth,
                    std::vector<double>(static_cast<std::size_t>(width) *
                                            static_cast<std::size_t>(height) *
                                            static_cast<std::size_t>(depth),
                                        0.0)};
}

MahalanobisForm::MahalanobisForm(const BlobGaussian& g) : mu_(g.mu) {
  const double sxx = g.sigma.xx;
  const double syy = g.sigma.yy;
  const double sxy = 0.5 * (g.sigma.xy + g.sigma.yx);
  const double det = sxx * syy - sxy * sxy;
  if (!std::isfinite(det) || !(sxx > 0.0) || !(det > 0.0)) {
    throw DegeneracyError("covariance is singular or not positive definite");
  }
  ixx_ = syy / det;
  iyy_ = sxx / det;
  ixy_ = -sxy / det;
}

double MahalanobisForm::operator()(Vec2 x) const {
  const double dx = x.x - mu_.x;
  const double dy = x.y - mu_.y;
  const double d = ixx_ * dx * dx + 2.0 * ixy_ * dx * dy + iyy_ * dy * dy;
  return d > 0.0 ? d : 0.0;
}

FieldMap mahalanobis_map(const CoordGrid& grid, const BlobGaussian& g) {
  const MahalanobisForm form(g);
  FieldMap out = FieldMap::filled(grid.width(), grid.height(),
                                  FieldKind::kDistance, 0.0);
  for (int h = 0; h < grid.height(); ++h) {
    for (int w = 0; w < grid.width(); ++w) {
      out.at(h, w) = form(grid.at(h, w));
    }
  }
  return out;
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

FieldMap opacity_map(const FieldMap& distance, const OpacityOptions& opts) {
  FieldMap out = distance;
  out.kind = FieldKind::kOpacity;
  if (opts.sharpness) {
    const double s = *opts.sharpness;
    const double q = chi2_quantile_2dof(opts.level);
    for (double& v : out.values) v = logistic(s * (q - v));
  } else {
    for (double& v : out.values) v = logistic(-v);
  }
  return out;
}

std::vector<FieldMap> opacity_maps(const BlobScene& scene,
                                   const CoordGrid& grid,
                                   const OpacityOptions& opts) {
  std::vector<FieldMap> maps;
  maps.reserve(scene.blobs.size());
  for (const auto& blob : scene.blobs) {
    maps.push_back(opacity_map(mahalanobis_map(grid, blob.gaussian), opts));
  }
  return maps;
}

std::vector<FieldMap> composed_opacities(const BlobScene& scene,
                                         const CoordGrid& grid,
                                         const OpacityOptions& opts) {
  std::vector<FieldMap> composed = opacity_maps(scene, grid, opts);
  std::vector<double> transmittance(grid.size(), 1.0);
  // Front to back: the frontmost blob sees an empty product.
  for (std::size_t i = composed.size(); i-- > 0;) {
    FieldMap& oc = composed[i];
    for (std::size_t c = 0; c < oc.values.size(); ++c) {
      const double o = oc.values[c];
      oc.values[c] = o * transmittance[c];
      transmittance[c] *= 1.0 - o;
    }
    oc.kind = FieldKind::kComposedOpacity;
  }
  return composed;
}

FeatureMap splat(std::span<const double> feature, const FieldMap& oc) {
  const int depth = static_cast<int>(feature.size());
  FeatureMap out = FeatureMap::zeros(oc.width, oc.height, depth);
  for (int h = 0; h < oc.height; ++h) {
    for (int w = 0; w < oc.width; ++w) {
      const double o = oc.at(h, w);
      for (int k = 0; k < depth; ++k) out.at(h, w, k) = o * feature[k];
    }
  }
  return out;
}

FeatureMap scene_feature_map(const BlobScene& scene, const CoordGrid& grid,
                             const OpacityOptions& opts) {
  if (scene.blobs.empty()) {
    throw ValidationError("scene feature map needs at least one blob");
  }
  const std::size_t depth = scene.blobs.front().feature.size();
  for (const auto& b : scene.blobs) {
    if (b.feature.size() != depth) {
      throw ShapeError("blob '" + b.id + "' has feature dimension " +
                       std::to_string(b.feature.size()) + ", expected " +
                       std::to_string(depth));
    }
  }
  const auto composed = composed_opacities(scene, grid, opts);
  FeatureMap out =
      FeatureMap::zeros(grid.width(), grid.height(), static_cast<int>(depth));
  for (std::size_t i = 0; i < composed.size(); ++i) {
    const FeatureMap f = splat(scene.blobs[i].feature, composed[i]);
    for (std::size_t c = 0; c < out.values.size(); ++c) {
      out.values[c] += f.values[c];
    }
  }
  return out;
}

FieldMap blob_mask(const BlobGaussian& g, const CoordGrid& grid,
                   ConfidenceLevel p) {
  const double q = chi2_quantile_2dof(p);
  FieldMap out = mahalanobis_map(grid, g);
  out.kind = FieldKind::kMask;
  for (double& v : out.values) v = v <= q ? 1.0 : 0.0;
  return out;
}

FieldMap mask_union(const FieldMap& a, const FieldMap& b) {
  if (a.width != b.width || a.height != b.height) {
    throw ShapeError("mask union needs equal shapes");
  }
  FieldMap out = a;
  out.kind = FieldKind::kMask;
  for (std::size_t c = 0; c < out.values.size(); ++c) {
    out.values[c] = std::max(a.values[c], b.values[c]);
  }
  return out;
}

}  // namespace blobforge
