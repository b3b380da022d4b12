#include "blobforge/service.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "blobforge/curation.hpp"
#include "blobforge/edit.hpp"
#include "blobforge/io.hpp"

namespace blobforge {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- Rendering ------------------------------------------------------------

RenderKind render_kind_from_string(std::string_view s) {
  if (s == "opacity") return RenderKind::kOpacity;
  if (s == "composed") return RenderKind::kComposed;
  if (s == "mask") return RenderKind::kMask;
  if (s == "feature-preview") return RenderKind::kFeaturePreview;
  throw ValidationError("unknown render kind '" + std::string(s) + "'");
}

namespace {

FieldKind field_kind(RenderKind k) {
  switch (k) {
    case RenderKind::kOpacity:
      return FieldKind::kOpacity;
    case RenderKind::kComposed:
      return FieldKind::kComposedOpacity;
    case RenderKind::kMask:
      return FieldKind::kMask;
    case RenderKind::kFeaturePreview:
      return FieldKind::kLatent;
  }
  return FieldKind::kLatent;
}

}  // namespace

FieldMap render_scene(const BlobScene& scene, const RenderRequest& req) {
  if (req.width < 1 || req.height < 1 || req.width > kMaxRenderSide ||
      req.height > kMaxRenderSide) {
    throw DomainError("render dims must lie in [1, " + std::to_string(kMaxRenderSide) + "]");
  }
  BlobScene s = scene;
  if (req.p) {
    const ConfidenceLevel level(*req.p);
    s.confidence = level;
    for (auto& b : s.blobs) b.gaussian = ellipse_to_gaussian(b.ellipse, level);
  }
  const ConfidenceLevel level = s.confidence;
  const CoordGrid grid(req.width, req.height);
  const FieldKind kind = field_kind(req.kind);
  FieldMap out = FieldMap::filled(req.width, req.height, kind, 0.0);

  std::optional<std::size_t> only;
  if (req.blob) {
    only = s.find(*req.blob);
    if (!only) throw NotFoundError("no blob with id '" + *req.blob + "'");
  }
  if (s.blobs.empty()) return out;

  switch (req.kind) {
    case RenderKind::kOpacity: {
      OpacityOptions opts;
      opts.level = level;
      const auto maps = opacity_maps(s, grid, opts);
      for (std::size_t i = 0; i < maps.size(); ++i) {
        if (only && i != *only) continue;
        for (std::size_t k = 0; k < out.values.size(); ++k) {
          out.values[k] = std::max(out.values[k], maps[i].values[k]);
        }
      }
      break;
    }
    case RenderKind::kComposed: {
      OpacityOptions opts;
      opts.level = level;
      const auto maps = composed_opacities(s, grid, opts);
      for (std::size_t i = 0; i < maps.size(); ++i) {
        if (only && i != *only) continue;
        for (std::size_t k = 0; k < out.values.size(); ++k) out.values[k] += maps[i].values[k];
      }
      break;
    }
    case RenderKind::kMask:
      for (std::size_t i = 0; i < s.blobs.size(); ++i) {
        if (only && i != *only) continue;
        out = mask_union(out, blob_mask(s.blobs[i].gaussian, grid, level));
      }
      break;
    case RenderKind::kFeaturePreview: {
      if (only) {
        BlobEntry b = s.blobs[*only];
        s.blobs.assign(1, std::move(b));
      }
      const FeatureMap f = scene_feature_map(s, grid);
      for (int h = 0; h < f.height; ++h) {
        for (int w = 0; w < f.width; ++w) {
          double acc = 0.0;
          for (int k = 0; k < f.depth; ++k) acc += f.at(h, w, k) * f.at(h, w, k);
          out.at(h, w) = std::sqrt(acc);
        }
      }
      break;
    }
  }
  out.kind = kind;
  return out;
}

// ---- Schemas --------------------------------------------------------------

namespace {

json number() { return {{"type", "number"}}; }
json integer(int min) { return {{"type", "integer"}, {"minimum", min}}; }
json string() { return {{"type", "string"}}; }
json array_of(json items, std::optional<int> n = {}) {
  json j = {{"type", "array"}, {"items", std::move(items)}};
  if (n) {
    j["minItems"] = *n;
    j["maxItems"] = *n;
  }
  return j;
}
json object(json properties, std::vector<std::string> required) {
  return {{"type", "object"}, {"properties", std::move(properties)}, {"required", required}};
}

json build_schemas() {
  const json ellipse = object({{"cx", number()},
                               {"cy", number()},
                               {"a", {{"type", "number"}, {"exclusiveMinimum", 0}}},
                               {"b", {{"type", "number"}, {"exclusiveMinimum", 0}}},
                               {"theta", number()}},
                              {"cx", "cy", "a", "b", "theta"});
  const json gaussian = object({{"mu", array_of(number(), 2)},
                                {"sigma", array_of(array_of(number(), 2), 2)}},
                               {"mu", "sigma"});
  const json blob = object({{"id", string()},
                            {"label", string()},
                            {"feature", array_of(number())},
                            {"ellipse", ellipse},
                            {"gaussian", gaussian}},
                           {"id", "label", "feature", "ellipse", "gaussian"});
  const json scene = object({{"width", integer(1)},
                             {"height", integer(1)},
                             {"confidence", {{"type", "number"}, {"exclusiveMinimum", 0}, {"exclusiveMaximum", 1}}},
                             {"blobs", array_of(blob)}},
                            {"width", "height", "confidence", "blobs"});
  const json edit_op = object(
      {{"kind", {{"type", "string"},
                 {"enum", {"add", "remove", "translate", "scale", "rotate", "replace"}}}},
       {"target_id", string()},
       {"dx", number()},
       {"dy", number()},
       {"sa", {{"type", "number"}, {"exclusiveMinimum", 0}}},
       {"sb", {{"type", "number"}, {"exclusiveMinimum", 0}}},
       {"dtheta", number()},
       {"feature", array_of(number())},
       {"ellipse", ellipse},
       {"label", string()},
       {"blob", {{"type", "object"}}},
       {"index", integer(0)}},
      {"kind"});
  return {
      {"ellipse", ellipse},
      {"gaussian", gaussian},
      {"blob", blob},
      {"scene", scene},
      {"stored_scene", object({{"id", string()}, {"revision", integer(1)}, {"scene", scene}},
                              {"id", "revision", "scene"})},
      {"scene_list", object({{"scenes", array_of(string())}}, {"scenes"})},
      {"edit_op", edit_op},
      {"error", object({{"error", string()}, {"reason", string()}, {"detail", string()}},
                       {"error", "reason"})},
      {"health", object({{"status", {{"type", "string"}, {"enum", {"ok"}}}}}, {"status"})},
      {"blob_record", object({{"image_ref", string()},
                              {"mask_ref", string()},
                              {"ellipse", ellipse},
                              {"gaussian", gaussian},
                              {"caption", string()},
                              {"confidence", number()},
                              {"provenance", {{"type", {"object", "null"}}}}},
                             {"image_ref", "mask_ref", "ellipse", "gaussian", "confidence"})},
      {"curation_summary", object({{"total", integer(0)},
                                   {"accepted", integer(0)},
                                   {"rejected", {{"type", "object"}}},
                                   {"io_failures", integer(0)}},
                                  {"total", "accepted", "rejected", "io_failures"})},
  };
}

}  // namespace

const json& api_schemas() {
  static const json schemas = build_schemas();
  return schemas;
}

// ---- Routes ---------------------------------------------------------------

namespace {

struct HttpError {
  int status;
  std::string code;
  std::string reason;
  std::string detail;
};

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const HttpError& e) {
  json body = {{"error", e.code}, {"reason", e.reason}};
  if (!e.detail.empty()) body["detail"] = e.detail;
  send_json(res, e.status, body);
}

void send_scene(httplib::Response& res, int status, const StoredScene& s) {
  res.set_header("ETag", "\"" + std::to_string(s.revision) + "\"");
  send_json(res, status, to_json(s));
}

// Runs a handler, mapping library errors onto HTTP statuses. `invalid` is
// the status for validation failures of the request payload.
template <class F>
httplib::Server::Handler guarded(F f, int invalid = 422) {
  return [f = std::move(f), invalid](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const HttpError& e) {
      send_error(res, e);
    } catch (const NotFoundError& e) {
      send_error(res, {404, "not_found", e.what(), {}});
    } catch (const ConflictError& e) {
      send_error(res, {409, "conflict", e.what(), {}});
    } catch (const IoError& e) {
      send_error(res, {500, "io", e.what(), {}});
    } catch (const Error& e) {
      send_error(res, {invalid, "invalid", e.what(), {}});
    } catch (const json::exception& e) {
      send_error(res, {400, "bad_request", e.what(), {}});
    } catch (const std::exception& e) {
      send_error(res, {500, "internal", e.what(), {}});
    }
  };
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw HttpError{400, "bad_request", std::string("malformed JSON: ") + e.what(), {}};
  }
}

template <class T>
std::optional<T> parse_number(std::string_view s) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<std::uint64_t> if_match(const httplib::Request& req) {
  if (!req.has_header("If-Match")) return std::nullopt;
  std::string v = req.get_header_value("If-Match");
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
  const auto rev = parse_number<std::uint64_t>(v);
  if (!rev) throw HttpError{400, "bad_request", "If-Match must be a revision number", {}};
  return rev;
}

BlobScene scene_body(const json& j) {
  try {
    return scene_from_json(j);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed scene: ") + e.what());
  }
}

std::string form_text(const httplib::Request& req, const std::string& key) {
  return req.has_file(key) ? req.get_file_value(key).content : std::string{};
}

std::uint64_t required_seed(const httplib::Request& req, const std::string& key) {
  if (!req.has_file(key)) throw HttpError{400, "bad_request", "missing " + key, {}};
  const auto v = parse_number<std::uint64_t>(form_text(req, key));
  if (!v) throw HttpError{400, "bad_request", key + " must be an unsigned integer", {}};
  return *v;
}

Raster form_png(const httplib::Request& req, const std::string& key) {
  if (!req.has_file(key)) throw HttpError{400, "bad_request", "missing upload '" + key + "'", {}};
  try {
    return decode_png(req.get_file_value(key).content);
  } catch (const Error& e) {
    throw HttpError{400, "bad_request", key + ": " + e.what(), {}};
  }
}

json form_config(const httplib::Request& req) {
  const std::string text = form_text(req, "config");
  if (text.empty()) return json::object();
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw HttpError{400, "bad_request", std::string("malformed config: ") + e.what(), {}};
  }
}

void send_rejection(httplib::Response& res, const Rejection& r) {
  send_error(res, {r.io_failure ? 400 : 422, "rejected", r.reason, r.detail});
}

// Resolves a client-supplied relative path inside the data directory.
fs::path inside(const fs::path& root, const std::string& rel) {
  const fs::path p = fs::path(rel).lexically_normal();
  if (rel.empty() || p.is_absolute() || (!p.empty() && *p.begin() == "..")) {
    throw HttpError{400, "bad_request", "path '" + rel + "' must stay inside the data dir", {}};
  }
  return root / p;
}

void handle_render(SceneStore& store, const httplib::Request& req, httplib::Response& res) {
  const StoredScene s = store.get(req.matches[1]);
  RenderRequest r;
  if (!req.has_param("kind")) throw HttpError{400, "bad_request", "missing kind", {}};
  try {
    r.kind = render_kind_from_string(req.get_param_value("kind"));
  } catch (const ValidationError& e) {
    throw HttpError{400, "bad_request", e.what(), {}};
  }
  auto dim = [&](const char* key, int fallback) {
    if (!req.has_param(key)) return fallback;
    const auto v = parse_number<int>(req.get_param_value(key));
    if (!v || *v < 1 || *v > kMaxRenderSide) {
      throw HttpError{400, "bad_request",
                      std::string(key) + " must be an integer in [1, " +
                          std::to_string(kMaxRenderSide) + "]",
                      {}};
    }
    return *v;
  };
  r.width = dim("w", s.scene.width);
  r.height = dim("h", s.scene.height);
  if (req.has_param("p")) {
    const auto p = parse_number<double>(req.get_param_value("p"));
    if (!p || !(*p > 0.0 && *p < 1.0)) {
      throw HttpError{400, "bad_request", "p must lie in (0, 1)", {}};
    }
    r.p = *p;
  }
  if (req.has_param("blob")) r.blob = req.get_param_value("blob");
  const std::string format = req.has_param("format") ? req.get_param_value("format") : "png";
  if (format != "png" && format != "raw") {
    throw HttpError{400, "bad_request", "format must be png or raw", {}};
  }

  const FieldMap field = render_scene(s.scene, r);
  res.set_header("X-Blobforge-Revision", std::to_string(s.revision));
  if (format == "raw") {
    res.set_content(encode_field(field), "application/octet-stream");
    return;
  }
  const Preview preview = make_preview(field);
  std::ostringstream vmax;
  vmax.precision(17);
  vmax << preview.v_max;
  res.set_header("X-Blobforge-Vmax", vmax.str());
  res.set_content(encode_png(preview.image), "image/png");
}

void handle_samples(const httplib::Request& req, httplib::Response& res) {
  if (!req.is_multipart_form_data()) {
    throw HttpError{400, "bad_request", "expected multipart/form-data", {}};
  }
  const Raster image = form_png(req, "image");
  const BinaryMask mask = binarize(form_png(req, "mask"));
  const json config = form_config(req);

  SampleRequest sr;
  sr.perturb = perturb_config_from_json(config.value("perturb", json::object()));
  sr.perturb.seed = required_seed(req, "perturb_seed");
  sr.augment_seed = required_seed(req, "augment_seed");
  sr.augment = augment_config_from_json(config.value("augment", json::object()));
  sr.rules = curation_rules_from_json(config.value("rules", json::object()));
  sr.level = ConfidenceLevel(config.value("confidence", kDefaultConfidence));
  sr.caption = form_text(req, "caption");

  SampleResult result = build_training_sample(image, mask, sr);
  if (const auto* rej = std::get_if<Rejection>(&result)) return send_rejection(res, *rej);
  const auto& sample = std::get<TrainingSample>(result);
  res.set_header("X-Blobforge-Perturb-Seed", std::to_string(sample.perturb_seed));
  res.set_header("X-Blobforge-Augment-Seed", std::to_string(sample.augment_seed));
  res.set_content(make_tar(sample_files(sample)), "application/x-tar");
}

void handle_curate(SceneStore& store, const httplib::Request& req, httplib::Response& res) {
  if (req.is_multipart_form_data()) {
    const Raster image = form_png(req, "image");
    const BinaryMask mask = binarize(form_png(req, "mask"));
    const json config = form_config(req);
    const CurationRules rules = curation_rules_from_json(config.value("rules", json::object()));
    const ConfidenceLevel p(config.value("confidence", kDefaultConfidence));
    const auto name = [&](const char* key) {
      return req.has_file(key) ? req.get_file_value(key).filename : std::string{};
    };
    CurationResult r =
        curate_record(image, mask, rules, p, name("image"), name("mask"), form_text(req, "caption"));
    if (const auto* rej = std::get_if<Rejection>(&r)) return send_rejection(res, *rej);
    return send_json(res, 200, json(std::get<BlobRecord>(r)));
  }
  const json j = parse_body(req);
  const fs::path root = store.dir().parent_path();
  const fs::path in_dir = inside(root, j.at("in_dir").get<std::string>());
  const fs::path manifest = inside(root, j.at("manifest").get<std::string>());
  const CurationRules rules = curation_rules_from_json(j.value("rules", json::object()));
  const ConfidenceLevel p(j.value("confidence", kDefaultConfidence));
  if (!fs::is_directory(in_dir)) throw HttpError{404, "not_found", "no input directory", {}};
  fs::create_directories(manifest.parent_path());
  const CurationSummary summary =
      curate_directory(in_dir, manifest, rules, p, j.value("threads", 0u));
  send_json(res, 200, json(summary));
}

}  // namespace

void install_routes(httplib::Server& server, SceneStore& store) {
  constexpr const char* kScene = R"(/scenes/([A-Za-z0-9_-]{1,64}))";

  server.Get("/healthz", guarded([](const auto&, auto& res) {
               send_json(res, 200, {{"status", "ok"}});
             }));
  server.Get("/schema", guarded([](const auto&, auto& res) { send_json(res, 200, api_schemas()); }));
  server.Get(R"(/schema/([a-z_]+))", guarded([](const httplib::Request& req, auto& res) {
               const std::string name = req.matches[1];
               if (!api_schemas().contains(name)) throw NotFoundError("no schema '" + name + "'");
               send_json(res, 200, api_schemas().at(name));
             }));

  server.Get("/scenes", guarded([&store](const auto&, auto& res) {
               send_json(res, 200, {{"scenes", store.list()}});
             }));
  server.Post("/scenes", guarded([&store](const httplib::Request& req, auto& res) {
                const json j = parse_body(req);
                std::optional<std::string> id;
                if (j.contains("scene")) {
                  if (j.contains("id")) id = j.at("id").get<std::string>();
                  return send_scene(res, 201, store.create(scene_body(j.at("scene")), id));
                }
                send_scene(res, 201, store.create(scene_body(j)));
              }));
  server.Post(kScene, guarded([&store](const httplib::Request& req, auto& res) {
                send_scene(res, 201, store.create(scene_body(parse_body(req)), req.matches[1]));
              }));
  server.Get(kScene, guarded([&store](const httplib::Request& req, auto& res) {
               send_scene(res, 200, store.get(req.matches[1]));
             }));
  server.Put(kScene, guarded([&store](const httplib::Request& req, auto& res) {
               const auto rev = if_match(req);
               send_scene(res, 200, store.replace(req.matches[1], scene_body(parse_body(req)), rev));
             }));
  server.Delete(kScene, guarded([&store](const httplib::Request& req, auto& res) {
                  store.remove(req.matches[1], if_match(req));
                  res.status = 204;
                }));
  server.Post(std::string(kScene) + "/edit",
              guarded([&store](const httplib::Request& req, auto& res) {
                const auto rev = if_match(req);
                const json j = parse_body(req);
                const StoredScene current = store.get(req.matches[1]);
                const EditOp op = edit_op_from_json(j, current.scene.confidence);
                try {
                  send_scene(res, 200, store.edit(req.matches[1], op, rev));
                } catch (const NotFoundError& e) {
                  store.get(req.matches[1]);
                  throw HttpError{422, "invalid", e.what(), {}};
                }
              }));
  server.Get(std::string(kScene) + "/render",
             guarded([&store](const httplib::Request& req, auto& res) {
               handle_render(store, req, res);
             },
                     400));
  server.Post("/samples", guarded([](const httplib::Request& req, auto& res) {
                handle_samples(req, res);
              }));
  server.Post("/curate", guarded([&store](const httplib::Request& req, auto& res) {
                handle_curate(store, req, res);
              }));
}

}  // namespace blobforge
