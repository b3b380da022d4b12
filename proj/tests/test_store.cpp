#include <doctest.h>

#include <thread>

#include "blobforge/io.hpp"
#include "blobforge/store.hpp"
#include "support.hpp"

using namespace blobforge;
using namespace testing;

TEST_SUITE("store") {

TEST_CASE("scene ids") {
  CHECK(valid_scene_id("a"));
  CHECK(valid_scene_id("Scene_01-x"));
  CHECK(valid_scene_id(std::string(64, 'z')));
  CHECK_FALSE(valid_scene_id(""));
  CHECK_FALSE(valid_scene_id(std::string(65, 'z')));
  CHECK_FALSE(valid_scene_id("../etc"));
  CHECK_FALSE(valid_scene_id("a b"));
}

TEST_CASE("create, get and list") {
  TempDir dir;
  SceneStore store(dir.path());
  Gen gen(91);
  const BlobScene s = gen.scene(3, 2);
  const StoredScene a = store.create(s, "alpha");
  CHECK(a.revision == 1);
  CHECK(store.get("alpha").scene == s);
  const StoredScene b = store.create(s);
  CHECK(b.id != "alpha");
  CHECK(valid_scene_id(b.id));
  CHECK(store.list() == std::vector<std::string>{"alpha", b.id});
  CHECK_THROWS_AS(store.create(s, "alpha"), ConflictError);
  CHECK_THROWS_AS(store.create(s, "no/slash"), ValidationError);
  CHECK_THROWS_AS(store.get("missing"), NotFoundError);
  CHECK(to_json(a).at("revision") == 1);
}

TEST_CASE("mutations bump revisions and honour preconditions") {
  TempDir dir;
  SceneStore store(dir.path());
  Gen gen(92);
  const BlobScene s = gen.scene(2, 2);
  store.create(s, "x");
  const StoredScene e = store.edit("x", EditOp::translate("b0", 0.0, 0.0));
  CHECK(e.revision == 2);
  CHECK(e.scene == s);
  CHECK_THROWS_AS(store.edit("x", EditOp::translate("b0", 0.1, 0.0), 1), ConflictError);
  CHECK(store.get("x").revision == 2);
  CHECK(store.edit("x", EditOp::translate("b0", 0.1, 0.0), 2).revision == 3);
  CHECK_THROWS_AS(store.edit("x", EditOp::translate("zz", 0.1, 0.0)), NotFoundError);
  CHECK(store.get("x").revision == 3);

  const BlobScene other = gen.scene(1, 2);
  CHECK(store.replace("x", other, 3).revision == 4);
  CHECK(store.get("x").scene == other);
  CHECK_THROWS_AS(store.remove("x", 1), ConflictError);
  store.remove("x", 4);
  CHECK_THROWS_AS(store.get("x"), NotFoundError);
  CHECK_THROWS_AS(store.edit("x", EditOp::translate("b0", 0.0, 0.0)), NotFoundError);
  CHECK(store.list().empty());
}

TEST_CASE("scenes persist across store instances") {
  TempDir dir;
  Gen gen(93);
  const BlobScene s = gen.scene(3, 4);
  {
    SceneStore store(dir.path());
    store.create(s, "keep");
    store.edit("keep", EditOp::rotate("b1", 0.2));
    store.create(s, "gone");
    store.remove("gone");
  }
  SceneStore again(dir.path());
  CHECK(again.list() == std::vector<std::string>{"keep"});
  const StoredScene k = again.get("keep");
  CHECK(k.revision == 2);
  CHECK(k.scene == apply_edit(s, EditOp::rotate("b1", 0.2)));
  const StoredScene fresh = again.create(s);
  CHECK(fresh.id != "keep");
}

TEST_CASE("concurrent edits serialize") {
  TempDir dir;
  SceneStore store(dir.path());
  Gen gen(94);
  store.create(gen.scene(4, 2), "c");
  std::atomic<int> accepted{0};
  std::atomic<int> conflicts{0};
  {
    std::vector<std::jthread> threads;
    for (int t = 0; t < 8; ++t) {
      threads.emplace_back([&, t] {
        for (int i = 0; i < 25; ++i) {
          try {
            if (i % 5 == 4) {
              store.edit("c", EditOp::rotate("b" + std::to_string(t % 4), 0.01), 1);
            } else {
              store.edit("c", EditOp::translate("b" + std::to_string(t % 4), 1e-4, 0.0));
            }
            ++accepted;
          } catch (const ConflictError&) {
            ++conflicts;
          }
        }
      });
    }
  }
  CHECK(accepted + conflicts == 200);
  CHECK(store.get("c").revision == 1u + static_cast<unsigned>(accepted.load()));
  CHECK(SceneStore(dir.path()).get("c").revision == store.get("c").revision);
}

}  // TEST_SUITE
