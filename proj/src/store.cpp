#include "blobforge/store.hpp"

#include <algorithm>

#include "blobforge/io.hpp"

namespace blobforge {

namespace fs = std::filesystem;

nlohmann::json to_json(const StoredScene& s) {
  return {{"id", s.id}, {"revision", s.revision}, {"scene", s.scene}};
}

bool valid_scene_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
           c == '_' || c == '-';
  });
}

SceneStore::SceneStore(fs::path dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
  for (const auto& entry : fs::directory_iterator(dir_)) {
    const fs::path& path = entry.path();
    if (path.extension() != ".json" || !valid_scene_id(path.stem().string())) continue;
    try {
      const auto j = nlohmann::json::parse(read_file(path));
      auto s = std::make_shared<Slot>();
      s->current = StoredScene{path.stem().string(), j.at("revision").get<std::uint64_t>(),
                               scene_from_json(j.at("scene"))};
      slots_.emplace(path.stem().string(), std::move(s));
    } catch (const nlohmann::json::exception& ex) {
      throw IoError("corrupt scene file " + path.string() + ": " + ex.what());
    }
  }
}

std::shared_ptr<SceneStore::Slot> SceneStore::slot(const std::string& id) const {
  std::shared_lock lock(index_mutex_);
  const auto it = slots_.find(id);
  if (it == slots_.end()) throw NotFoundError("no scene '" + id + "'");
  return it->second;
}

void SceneStore::persist(const StoredScene& s) const {
  const nlohmann::json j = {{"revision", s.revision}, {"scene", s.scene}};
  write_file_atomic(dir_ / (s.id + ".json"), j.dump(2) + "\n");
}

StoredScene SceneStore::create(BlobScene scene, std::optional<std::string> id) {
  scene.validate();
  auto s = std::make_shared<Slot>();
  std::lock_guard slot_lock(s->mutex);
  {
    std::unique_lock lock(index_mutex_);
    if (id) {
      if (!valid_scene_id(*id)) throw ValidationError("invalid scene id '" + *id + "'");
      const auto it = slots_.find(*id);
      if (it != slots_.end()) {
        std::lock_guard existing(it->second->mutex);
        if (it->second->current) throw ConflictError("scene '" + *id + "' already exists");
      }
    } else {
      do {
        id = "scene-" + std::to_string(next_id_++);
      } while (slots_.contains(*id));
    }
    s->current = StoredScene{*id, 1, std::move(scene)};
    slots_[*id] = s;
  }
  persist(*s->current);
  return *s->current;
}

StoredScene SceneStore::get(const std::string& id) const {
  const auto s = slot(id);
  std::lock_guard lock(s->mutex);
  if (!s->current) throw NotFoundError("no scene '" + id + "'");
  return *s->current;
}

std::vector<std::string> SceneStore::list() const {
  std::vector<std::pair<std::string, std::shared_ptr<Slot>>> copy;
  {
    std::shared_lock lock(index_mutex_);
    copy.assign(slots_.begin(), slots_.end());
  }
  std::vector<std::string> ids;
  for (const auto& [id, s] : copy) {
    std::lock_guard lock(s->mutex);
    if (s->current) ids.push_back(id);
  }
  return ids;
}

template <class F>
StoredScene SceneStore::mutate(const std::string& id, std::optional<std::uint64_t> if_match,
                               F&& f) {
  const auto s = slot(id);
  std::lock_guard lock(s->mutex);
  if (!s->current) throw NotFoundError("no scene '" + id + "'");
  if (if_match && *if_match != s->current->revision) {
    throw ConflictError("revision precondition " + std::to_string(*if_match) +
                        " does not match current revision " +
                        std::to_string(s->current->revision));
  }
  StoredScene next = *s->current;
  next.scene = f(s->current->scene);
  next.revision += 1;
  persist(next);
  s->current = next;
  return next;
}

StoredScene SceneStore::replace(const std::string& id, BlobScene scene,
                                std::optional<std::uint64_t> if_match) {
  scene.validate();
  return mutate(id, if_match, [&](const BlobScene&) { return scene; });
}

StoredScene SceneStore::edit(const std::string& id, const EditOp& op,
                             std::optional<std::uint64_t> if_match) {
  return mutate(id, if_match, [&](const BlobScene& current) {
    BlobScene out = apply_edit(current, op);
    out.validate();
    return out;
  });
}

void SceneStore::remove(const std::string& id, std::optional<std::uint64_t> if_match) {
  const auto s = slot(id);
  std::lock_guard lock(s->mutex);
  if (!s->current) throw NotFoundError("no scene '" + id + "'");
  if (if_match && *if_match != s->current->revision) {
    throw ConflictError("revision precondition " + std::to_string(*if_match) +
                        " does not match current revision " +
                        std::to_string(s->current->revision));
  }
  fs::remove(dir_ / (id + ".json"));
  s->current.reset();
}

}  // namespace blobforge
