#pragma once

// Directory-backed scene store with per-scene revisions.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "blobforge/edit.hpp"
#include "blobforge/scene.hpp"

namespace blobforge {

struct StoredScene {
  std::string id;
  std::uint64_t revision = 0;
  BlobScene scene;
};

nlohmann::json to_json(const StoredScene& s);

// Ids are 1-64 characters from [A-Za-z0-9_-].
bool valid_scene_id(const std::string& id);

// Each scene lives in "<dir>/<id>.json" as {"revision": n, "scene": {...}},
// replaced by atomic rename on every mutation. Mutations of one scene are
// serialized; reads return a consistent snapshot.
class SceneStore {
 public:
  explicit SceneStore(std::filesystem::path dir);

  // Throws ConflictError if the id exists; a fresh id is chosen when absent.
  StoredScene create(BlobScene scene, std::optional<std::string> id = {});
  StoredScene get(const std::string& id) const;
  std::vector<std::string> list() const;

  // `if_match` is a revision precondition; a mismatch throws ConflictError.
  StoredScene replace(const std::string& id, BlobScene scene,
                      std::optional<std::uint64_t> if_match = {});
  StoredScene edit(const std::string& id, const EditOp& op,
                   std::optional<std::uint64_t> if_match = {});
  void remove(const std::string& id, std::optional<std::uint64_t> if_match = {});

  const std::filesystem::path& dir() const { return dir_; }

 private:
  struct Slot {
    std::mutex mutex;
    std::optional<StoredScene> current;  // empty once deleted
  };

  std::shared_ptr<Slot> slot(const std::string& id) const;
  void persist(const StoredScene& s) const;
  template <class F>
  StoredScene mutate(const std::string& id, std::optional<std::uint64_t> if_match, F&& f);

  std::filesystem::path dir_;
  mutable std::shared_mutex index_mutex_;
  std::map<std::string, std::shared_ptr<Slot>> slots_;
  std::uint64_t next_id_ = 1;
};

}  // namespace blobforge
