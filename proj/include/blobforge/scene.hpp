#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "blobforge/blob.hpp"

namespace blobforge {

// One blob of a scene. The ellipse is the authored geometry; the Gaussian is
// always derived from it at the scene's confidence level.
struct BlobEntry {
  std::string id;
  std::string label;
  std::vector<double> feature;
  BlobEllipse ellipse;
  BlobGaussian gaussian;

  static BlobEntry make(std::string id, std::string label,
                        std::vector<double> feature, const BlobEllipse& e,
                        ConfidenceLevel p = kDefaultLevel);

  friend bool operator==(const BlobEntry&, const BlobEntry&) = default;
};

// Depth-ordered blobs: index 0 is the backmost, the last entry the frontmost.
struct BlobScene {
  int width = 512;
  int height = 512;
  ConfidenceLevel confidence = kDefaultLevel;
  std::vector<BlobEntry> blobs;

  std::optional<std::size_t> find(const std::string& id) const;
  // Shared feature dimension; nullopt for an empty scene.
  std::optional<std::size_t> feature_dim() const;

  // Throws ValidationError on duplicate ids, mixed feature dimensions,
  // non-positive canvas or Gaussians out of sync with their ellipses.
  void validate() const;

  friend bool operator==(const BlobScene& a, const BlobScene& b) {
    return a.width == b.width && a.height == b.height &&
           a.confidence.p() == b.confidence.p() && a.blobs == b.blobs;
  }
};

void to_json(nlohmann::json& j, const BlobEntry& e);
// Accepts either "ellipse" or "gaussian" geometry; the Gaussian is always
// re-derived so both forms agree.
BlobEntry blob_entry_from_json(const nlohmann::json& j, ConfidenceLevel p);

void to_json(nlohmann::json& j, const BlobScene& s);
BlobScene scene_from_json(const nlohmann::json& j);

}  // namespace blobforge
