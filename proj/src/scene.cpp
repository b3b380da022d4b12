#include "blobforge/scene.hpp"

#include <set>

namespace blobforge {

BlobEntry BlobEntry::make(std::string id, std::string label,
                          std::vector<double> feature, const BlobEllipse& e,
                          ConfidenceLevel p) {
  return BlobEntry{std::move(id), std::move(label), std::move(feature), e,
                   ellipse_to_gaussian(e, p)};
}

std::optional<std::size_t> BlobScene::find(const std::string& id) const {
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    if (blobs[i].id == id) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> BlobScene::feature_dim() const {
  if (blobs.empty()) return std::nullopt;
  return blobs.front().feature.size();
}

void BlobScene::validate() const {
  if (width < 1 || height < 1) {
    throw ValidationError("scene canvas must be at least 1x1");
  }
  std::set<std::string> seen;
  for (const auto& b : blobs) {
    if (b.id.empty()) throw ValidationError("blob id must be non-empty");
    if (!seen.insert(b.id).second) {
      throw ValidationError("duplicate blob id '" + b.id + "'");
    }
    if (b.feature.size() != blobs.front().feature.size()) {
      throw ValidationError("blob '" + b.id +
                            "' feature dimension differs from the scene");
    }
    if (!(b.gaussian == ellipse_to_gaussian(b.ellipse, confidence))) {
      throw ValidationError("blob '" + b.id +
                            "' gaussian does not match its ellipse");
    }
  }
}

void to_json(nlohmann::json& j, const BlobEntry& e) {
  j = nlohmann::json{{"id", e.id},
                     {"label", e.label},
                     {"feature", e.feature},
                     {"ellipse", e.ellipse},
                     {"gaussian", e.gaussian}};
}

BlobEntry blob_entry_from_json(const nlohmann::json& j, ConfidenceLevel p) {
  if (!j.is_object()) throw ValidationError("blob entry must be an object");
  try {
    std::string id = j.at("id").get<std::string>();
    std::string label = j.value("label", std::string{});
    std::vector<double> feature =
        j.value("feature", std::vector<double>{});
    if (j.contains("ellipse")) {
      return BlobEntry::make(std::move(id), std::move(label),
                             std::move(feature),
                             ellipse_from_json(j.at("ellipse")), p);
    }
    if (j.contains("gaussian")) {
      const BlobGaussian g = gaussian_from_json(j.at("gaussian"));
      const Verdict v = validate_gaussian(g, 0.0);
      if (!v) throw ValidationError("blob '" + id + "': " + v.reason);
      return BlobEntry::make(std::move(id), std::move(label),
                             std::move(feature), gaussian_to_ellipse(g, p), p);
    }
    throw ValidationError("blob '" + id + "' has no geometry");
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("malformed blob entry: ") + ex.what());
  } catch (const DegeneracyError& ex) {
    throw ValidationError(std::string("degenerate blob: ") + ex.what());
  }
}

void to_json(nlohmann::json& j, const BlobScene& s) {
  j = nlohmann::json{{"width", s.width},
                     {"height", s.height},
                     {"confidence", s.confidence.p()},
                     {"blobs", s.blobs}};
}

BlobScene scene_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("scene must be a JSON object");
  BlobScene scene;
  try {
    scene.width = j.value("width", 512);
    scene.height = j.value("height", 512);
    scene.confidence = ConfidenceLevel(j.value("confidence", kDefaultConfidence));
    if (j.contains("blobs")) {
      for (const auto& b : j.at("blobs")) {
        scene.blobs.push_back(blob_entry_from_json(b, scene.confidence));
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("malformed scene: ") + ex.what());
  } catch (const DomainError& ex) {
    throw ValidationError(ex.what());
  }
  scene.validate();
  return scene;
}

}  // namespace blobforge
