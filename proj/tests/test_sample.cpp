#include <doctest.h>

#include "blobforge/edit.hpp"
#include "blobforge/io.hpp"
#include "support.hpp"

using namespace blobforge;
using namespace testing;

namespace {

Raster noise_image(Gen& gen, int w, int h, int channels) {
  Raster r = Raster::zeros(w, h, channels);
  for (auto& p : r.pixels) p = static_cast<std::uint8_t>(gen.integer(0, 255));
  return r;
}

SampleRequest fixture_request() {
  SampleRequest req;
  req.perturb.seed = 11;
  req.augment = AugmentConfig::standard();
  req.augment_seed = 12;
  req.caption = "a white ellipse";
  return req;
}

}  // namespace

TEST_SUITE("sample") {

TEST_CASE("augmentation with zero probabilities is the identity") {
  Gen gen(61);
  const Raster r = noise_image(gen, 17, 9, 3);
  const auto [out, log] = augment_foreground(r, 5, AugmentConfig::none());
  CHECK(out == r);
  CHECK(log.empty());
}

TEST_CASE("rotation by 90 degrees") {
  Raster r = Raster::zeros(2, 2, 1);
  r.pixels = {1, 2, 3, 4};  // [[A, B], [C, D]]
  AugmentConfig cfg;
  cfg.rotate_prob = 1.0;
  cfg.rotate_min_deg = 90.0;
  cfg.rotate_max_deg = 90.0;
  const auto [out, log] = augment_foreground(r, 0, cfg);
  CHECK(out.pixels == std::vector<std::uint8_t>{3, 1, 4, 2});
  REQUIRE(log.size() == 1);
  CHECK(log[0].name == "rotate");
  CHECK(log[0].params.at("degrees").get<double>() == 90.0);
}

TEST_CASE("random erase zeroes a rectangle") {
  Raster r = Raster::zeros(20, 20, 1);
  for (auto& p : r.pixels) p = 200;
  AugmentConfig cfg;
  cfg.erase_prob = 1.0;
  const auto [out, log] = augment_foreground(r, 3, cfg);
  REQUIRE(log.size() == 1);
  const auto& p = log[0].params;
  const int x = p.at("x"), y = p.at("y"), w = p.at("width"), h = p.at("height");
  for (int row = 0; row < 20; ++row) {
    for (int col = 0; col < 20; ++col) {
      const bool inside = col >= x && col < x + w && row >= y && row < y + h;
      CHECK(out.at(row, col) == (inside ? 0 : 200));
    }
  }
}

TEST_CASE("augmentation determinism and replay") {
  Gen gen(62);
  AugmentConfig cfg;
  cfg.jitter_prob = cfg.scale_prob = cfg.rotate_prob = cfg.perspective_prob = cfg.erase_prob = 0.7;
  for (int trial = 0; trial < 40; ++trial) {
    const Raster r = noise_image(gen, gen.integer(4, 40), gen.integer(4, 40), trial % 2 ? 3 : 1);
    const auto seed = static_cast<std::uint64_t>(gen.integer(0, 1 << 30));
    const auto [a, log_a] = augment_foreground(r, seed, cfg);
    const auto [b, log_b] = augment_foreground(r, seed, cfg);
    CHECK(a == b);
    CHECK(log_a == log_b);
    CHECK(replay_augmentation(r, log_a) == a);
    CHECK(a.width == r.width);
    CHECK(a.height == r.height);
  }
}

TEST_CASE("augment config json") {
  const AugmentConfig cfg = AugmentConfig::standard();
  const nlohmann::json j = cfg;
  const nlohmann::json back = augment_config_from_json(j);
  CHECK(back == j);
  AugmentConfig bad;
  bad.rotate_prob = 1.5;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  CHECK_THROWS_AS(augment_config_from_json({{"rotate", {{"prob", -1}}}}), ValidationError);
}

TEST_CASE("zero perturbation keeps source equal to target") {
  const Raster image = ellipse_image(560, 560, 300, 260, 120, 70, 0.4);
  const BinaryMask mask = binarize(image);
  SampleRequest req;
  req.perturb = PerturbConfig::none(9);
  const SampleResult result = build_training_sample(image, mask, req);
  REQUIRE(std::holds_alternative<TrainingSample>(result));
  const TrainingSample& s = std::get<TrainingSample>(result);
  CHECK(s.source == s.target);
  CHECK(s.dual_mask.values == s.fg_mask.values);
  CHECK(check_sample_invariants(s).empty());
}

TEST_CASE("fixture sample") {
  const Raster image = ellipse_image(560, 560, 300, 260, 120, 70, 0.4);
  const BinaryMask mask = binarize(image);
  const SampleResult result = build_training_sample(image, mask, fixture_request());
  REQUIRE(std::holds_alternative<TrainingSample>(result));
  const TrainingSample& s = std::get<TrainingSample>(result);
  CHECK(check_sample_invariants(s).empty());

  const BlobEllipse fit = gaussian_to_ellipse(s.target);
  CHECK(rel_err(fit.cx(), 300.5 / 560.0) <= 0.02);
  CHECK(rel_err(fit.cy(), 260.5 / 560.0) <= 0.02);
  CHECK(angle_dist(fit.theta(), 0.4) <= 2.0 * kPi / 180.0);

  REQUIRE_FALSE(s.augmentation_log.empty());
  CHECK(s.augmentation_log[0].name == "crop");
  CHECK(s.caption == "a white ellipse");

  const auto files_a = sample_files(s);
  const auto files_b = sample_files(std::get<TrainingSample>(build_training_sample(image, mask, fixture_request())));
  CHECK(files_a == files_b);
  std::vector<std::string> names;
  for (const auto& [name, bytes] : files_a) names.push_back(name);
  CHECK(names == std::vector<std::string>{"fg.png", "bg.png", "dual_mask.blobf", "fg_mask.blobf",
                                          "blobs.json", "augmentation_log.json", "caption.txt"});

  TempDir dir;
  write_sample(dir.path(), s);
  for (const auto& [name, bytes] : files_a) CHECK(read_file(dir / name) == bytes);
}

TEST_CASE("sample invariants property") {
  const Raster image = ellipse_image(520, 500, 250, 260, 100, 60, 1.1);
  const BinaryMask mask = binarize(image);
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    SampleRequest req = fixture_request();
    req.perturb.seed = seed;
    req.augment_seed = seed * 31;
    const SampleResult result = build_training_sample(image, mask, req);
    REQUIRE(std::holds_alternative<TrainingSample>(result));
    CHECK(check_sample_invariants(std::get<TrainingSample>(result)).empty());
  }
}

TEST_CASE("invariant checker catches violations") {
  const Raster image = ellipse_image(520, 500, 250, 260, 100, 60, 1.1);
  const SampleResult result = build_training_sample(image, binarize(image), fixture_request());
  REQUIRE(std::holds_alternative<TrainingSample>(result));
  TrainingSample s = std::get<TrainingSample>(result);

  TrainingSample leaked = s;
  leaked.background.at(250, 260, 0) = 7;
  CHECK_FALSE(check_sample_invariants(leaked).empty());

  TrainingSample shrunk = s;
  shrunk.dual_mask = shrunk.fg_mask;
  shrunk.source = ellipse_to_gaussian(BlobEllipse(0.1, 0.1, 0.05, 0.05, 0.0));
  CHECK_FALSE(check_sample_invariants(shrunk).empty());
}

TEST_CASE("rejected inputs") {
  const Raster small = ellipse_image(400, 400, 200, 200, 80, 50, 0.0);
  const SampleResult r = build_training_sample(small, binarize(small), fixture_request());
  REQUIRE(std::holds_alternative<Rejection>(r));
  CHECK(std::get<Rejection>(r).reason == "short_side");
}

}  // TEST_SUITE
