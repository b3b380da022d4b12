#include "blobforge/edit.hpp"

#include <cmath>
#include <numbers>

#include "blobforge/random.hpp"

namespace blobforge {

namespace {

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw ValidationError(std::string(what) + " must be finite");
}

std::size_t require_target(const BlobScene& scene, const std::string& id) {
  const auto index = scene.find(id);
  if (!index) throw NotFoundError("no blob with id '" + id + "'");
  return *index;
}

void set_geometry(BlobEntry& entry, const BlobEllipse& e, ConfidenceLevel p) {
  entry.ellipse = e;
  entry.gaussian = ellipse_to_gaussian(e, p);
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace

EditOp::EditOp(std::string target, Payload payload)
    : target_(std::move(target)), payload_(std::move(payload)) {}

EditOp EditOp::add(BlobEntry entry, std::optional<std::size_t> index) {
  if (entry.id.empty()) throw ValidationError("added blob needs an id");
  return EditOp({}, AddBlob{std::move(entry), index});
}

EditOp EditOp::remove(std::string target) {
  return EditOp(std::move(target), RemoveBlob{});
}

EditOp EditOp::translate(std::string target, double dx, double dy) {
  require_finite(dx, "dx");
  require_finite(dy, "dy");
  return EditOp(std::move(target), TranslateBlob{dx, dy});
}

EditOp EditOp::scale(std::string target, double sa, double sb) {
  if (!(sa > 0.0) || !(sb > 0.0) || !std::isfinite(sa) || !std::isfinite(sb)) {
    throw ValidationError("scale factors must be positive and finite");
  }
  return EditOp(std::move(target), ScaleBlob{sa, sb});
}

EditOp EditOp::rotate(std::string target, double dtheta) {
  require_finite(dtheta, "dtheta");
  return EditOp(std::move(target), RotateBlob{dtheta});
}

EditOp EditOp::replace(std::string target, ReplaceBlob payload) {
  if (!payload.feature && !payload.geometry && !payload.label) {
    throw ValidationError("replace needs a feature, geometry or label");
  }
  return EditOp(std::move(target), std::move(payload));
}

std::string_view to_string(EditKind kind) {
  switch (kind) {
    case EditKind::kAdd:
      return "add";
    case EditKind::kRemove:
      return "remove";
    case EditKind::kTranslate:
      return "translate";
    case EditKind::kScale:
      return "scale";
    case EditKind::kRotate:
      return "rotate";
    case EditKind::kReplace:
      return "replace";
  }
  return "unknown";
}

EditOp edit_op_from_json(const nlohmann::json& j, ConfidenceLevel p) {
  if (!j.is_object()) throw ValidationError("edit op must be a JSON object");
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "add") {
      std::optional<std::size_t> index;
      if (j.contains("index") && !j.at("index").is_null()) {
        index = j.at("index").get<std::size_t>();
      }
      return EditOp::add(blob_entry_from_json(j.at("blob"), p), index);
    }
    const std::string target = j.at("target_id").get<std::string>();
    if (kind == "remove") return EditOp::remove(target);
    if (kind == "translate") {
      return EditOp::translate(target, j.at("dx").get<double>(),
                               j.at("dy").get<double>());
    }
    if (kind == "scale") {
      return EditOp::scale(target, j.at("sa").get<double>(), j.at("sb").get<double>());
    }
    if (kind == "rotate") return EditOp::rotate(target, j.at("dtheta").get<double>());
    if (kind == "replace") {
      ReplaceBlob payload;
      if (j.contains("feature")) payload.feature = j.at("feature").get<std::vector<double>>();
      if (j.contains("ellipse")) payload.geometry = ellipse_from_json(j.at("ellipse"));
      if (j.contains("label")) payload.label = j.at("label").get<std::string>();
      return EditOp::replace(target, std::move(payload));
    }
    throw ValidationError("unknown edit kind '" + kind + "'");
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("malformed edit op: ") + ex.what());
  }
}

void to_json(nlohmann::json& j, const EditOp& op) {
  j = nlohmann::json{{"kind", std::string(to_string(op.kind()))}};
  std::visit(Overloaded{
                 [&](const AddBlob& a) {
                   j["blob"] = a.entry;
                   if (a.index) j["index"] = *a.index;
                 },
                 [&](const RemoveBlob&) { j["target_id"] = op.target_id(); },
                 [&](const TranslateBlob& t) {
                   j["target_id"] = op.target_id();
                   j["dx"] = t.dx;
                   j["dy"] = t.dy;
                 },
                 [&](const ScaleBlob& s) {
                   j["target_id"] = op.target_id();
                   j["sa"] = s.sa;
                   j["sb"] = s.sb;
                 },
                 [&](const RotateBlob& r) {
                   j["target_id"] = op.target_id();
                   j["dtheta"] = r.dtheta;
                 },
                 [&](const ReplaceBlob& r) {
                   j["target_id"] = op.target_id();
                   if (r.feature) j["feature"] = *r.feature;
                   if (r.geometry) j["ellipse"] = *r.geometry;
                   if (r.label) j["label"] = *r.label;
                 },
             },
             op.payload());
}

BlobScene apply_edit(const BlobScene& scene, const EditOp& op) {
  BlobScene out = scene;
  const ConfidenceLevel p = scene.confidence;

  std::visit(
      Overloaded{
          [&](const AddBlob& a) {
            if (scene.find(a.entry.id)) {
              throw ValidationError("blob id '" + a.entry.id + "' already exists");
            }
            if (const auto d = scene.feature_dim(); d && *d != a.entry.feature.size()) {
              throw ValidationError("added blob feature dimension " +
                                    std::to_string(a.entry.feature.size()) +
                                    " differs from the scene's " + std::to_string(*d));
            }
            const std::size_t index = a.index.value_or(scene.blobs.size());
            if (index > scene.blobs.size()) {
              throw ValidationError("depth index " + std::to_string(index) +
                                    " is out of range");
            }
            BlobEntry entry = a.entry;
            set_geometry(entry, entry.ellipse, p);
            out.blobs.insert(out.blobs.begin() + static_cast<std::ptrdiff_t>(index),
                             std::move(entry));
          },
          [&](const RemoveBlob&) {
            const std::size_t i = require_target(scene, op.target_id());
            out.blobs.erase(out.blobs.begin() + static_cast<std::ptrdiff_t>(i));
          },
          [&](const TranslateBlob& t) {
            BlobEntry& b = out.blobs[require_target(scene, op.target_id())];
            const BlobEllipse& e = b.ellipse;
            const double cx = e.cx() + t.dx;
            const double cy = e.cy() + t.dy;
            set_geometry(b, BlobEllipse(cx, cy, e.a(), e.b(), e.theta()), p);
          },
          [&](const ScaleBlob& s) {
            BlobEntry& b = out.blobs[require_target(scene, op.target_id())];
            const BlobEllipse& e = b.ellipse;
            set_geometry(b, BlobEllipse(e.cx(), e.cy(), e.a() * s.sa, e.b() * s.sb,
                                        e.theta()),
                         p);
          },
          [&](const RotateBlob& r) {
            BlobEntry& b = out.blobs[require_target(scene, op.target_id())];
            const BlobEllipse& e = b.ellipse;
            set_geometry(b, BlobEllipse(e.cx(), e.cy(), e.a(), e.b(),
                                        e.theta() + r.dtheta),
                         p);
          },
          [&](const ReplaceBlob& r) {
            const std::size_t i = require_target(scene, op.target_id());
            BlobEntry& b = out.blobs[i];
            if (r.feature) {
              if (scene.blobs.size() > 1 && r.feature->size() != b.feature.size()) {
                throw ValidationError("replacement feature dimension differs from the scene's");
              }
              b.feature = *r.feature;
            }
            if (r.geometry) set_geometry(b, *r.geometry, p);
            if (r.label) b.label = *r.label;
          },
      },
      op.payload());
  return out;
}

// ---- Pre-edit perturbation ------------------------------------------------

void PerturbConfig::validate() const {
  if (!(max_center_shift >= 0.0) || !(max_rotation >= 0.0)) {
    throw ValidationError("perturbation ranges must be non-negative");
  }
  if (!(scale_lo > 0.0) || !(scale_lo <= scale_hi) || !std::isfinite(scale_hi)) {
    throw ValidationError("scale range must satisfy 0 < lo <= hi");
  }
}

void to_json(nlohmann::json& j, const PerturbConfig& c) {
  j = nlohmann::json{{"max_center_shift", c.max_center_shift},
                     {"scale_range", {c.scale_lo, c.scale_hi}},
                     {"max_rotation", c.max_rotation},
                     {"seed", c.seed},
                     {"min_cov_eig", c.min_cov_eig}};
}

PerturbConfig perturb_config_from_json(const nlohmann::json& j) {
  PerturbConfig c;
  try {
    c.max_center_shift = j.value("max_center_shift", c.max_center_shift);
    if (j.contains("scale_range")) {
      const auto range = j.at("scale_range").get<std::vector<double>>();
      if (range.size() != 2) throw ValidationError("scale_range needs two values");
      c.scale_lo = range[0];
      c.scale_hi = range[1];
    }
    c.max_rotation = j.value("max_rotation", c.max_rotation);
    c.seed = j.value("seed", c.seed);
    c.min_cov_eig = j.value("min_cov_eig", c.min_cov_eig);
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("malformed perturb config: ") + ex.what());
  }
  c.validate();
  return c;
}

BlobGaussian sample_pre_edit_blob(const BlobGaussian& g, const PerturbConfig& cfg,
                                  ConfidenceLevel p) {
  cfg.validate();
  const BlobEllipse e = gaussian_to_ellipse(g, p);
  Rng rng(cfg.seed);
  for (int attempt = 0; attempt < kMaxPerturbAttempts; ++attempt) {
    // sqrt of a uniform radius fraction gives a uniform density in the disc.
    const double radius = cfg.max_center_shift * std::sqrt(rng.uniform());
    const double phi = 2.0 * std::numbers::pi * rng.uniform();
    const double sa = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    const double sb = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    const double dtheta = cfg.max_rotation * (2.0 * rng.uniform() - 1.0);

    if (radius == 0.0 && sa == 1.0 && sb == 1.0 && dtheta == 0.0) return g;

    const BlobEllipse moved(e.cx() + radius * std::cos(phi),
                            e.cy() + radius * std::sin(phi), e.a() * sa, e.b() * sb,
                            e.theta() + dtheta);
    BlobGaussian out = ellipse_to_gaussian(moved, p);
    if (validate_gaussian(out, cfg.min_cov_eig)) return out;
  }
  throw DegeneracyError("no valid pre-edit blob after " +
                        std::to_string(kMaxPerturbAttempts) + " attempts");
}

FieldMap dual_mask(const BlobGaussian& source, const BlobGaussian& target,
                   const CoordGrid& grid, ConfidenceLevel p) {
  return mask_union(blob_mask(source, grid, p), blob_mask(target, grid, p));
}

}  // namespace blobforge
