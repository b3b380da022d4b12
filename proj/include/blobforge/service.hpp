#pragma once

// REST front end over a SceneStore.
//
//   GET    /healthz
//   GET    /schema, /schema/<name>
//   GET    /scenes                      list ids
//   POST   /scenes                      create, id optional
//   POST   /scenes/<id>                 create with id
//   GET    /scenes/<id>
//   PUT    /scenes/<id>                 replace (If-Match optional)
//   DELETE /scenes/<id>                 (If-Match optional)
//   POST   /scenes/<id>/edit            apply one EditOp (If-Match optional)
//   GET    /scenes/<id>/render?kind=&w=&h=&p=&blob=&format=png|raw
//   POST   /samples                     multipart image + mask -> tar
//   POST   /curate                      multipart image + mask, or a JSON
//                                       directory job; its paths are relative
//                                       to the store directory's parent

#include <filesystem>
#include <optional>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "blobforge/field.hpp"
#include "blobforge/scene.hpp"
#include "blobforge/store.hpp"

namespace blobforge {

enum class RenderKind { kOpacity, kComposed, kMask, kFeaturePreview };

RenderKind render_kind_from_string(std::string_view s);

struct RenderRequest {
  RenderKind kind = RenderKind::kOpacity;
  int width = 0;
  int height = 0;
  std::optional<double> p;  // re-derives every Gaussian from its ellipse
  std::optional<std::string> blob;
};

inline constexpr int kMaxRenderSide = 4096;

// Without `blob`: opacity is the per-cell maximum over blobs, composed the
// sum of composed opacities, mask the union of blob masks. feature-preview is
// the per-cell L2 norm of the splatted feature map. An empty scene renders to
// zeros.
FieldMap render_scene(const BlobScene& scene, const RenderRequest& req);

// JSON Schemas (draft 2020-12 subset) keyed by name.
const nlohmann::json& api_schemas();

void install_routes(httplib::Server& server, SceneStore& store);

}  // namespace blobforge
