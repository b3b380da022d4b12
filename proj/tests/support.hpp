#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "blobforge/blob.hpp"
#include "blobforge/curation.hpp"
#include "blobforge/field.hpp"
#include "blobforge/raster.hpp"
#include "blobforge/scene.hpp"
#include "blobforge/store.hpp"

namespace testing {

inline constexpr double kPi = 3.14159265358979323846;

// ---- Generators -----------------------------------------------------------

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

  blobforge::BlobEllipse ellipse(double min_axis = 0.02, double max_axis = 0.4);
  std::vector<double> feature(std::size_t d);
  blobforge::BlobScene scene(int blobs, std::size_t d, int width = 64, int height = 64);

 private:
  std::mt19937_64 engine_;
};

// ---- Oracles --------------------------------------------------------------

struct M2 {
  double a, b, c, d;  // [[a, b], [c, d]]
};

M2 mul(const M2& x, const M2& y);
M2 transpose(const M2& x);

// R(theta) diag(a^2, b^2) R(theta)^T / q, by explicit matrix products.
M2 oracle_sigma(double a, double b, double theta, double q);
// (x - mu)^T sigma^{-1} (x - mu) with the cofactor inverse.
double oracle_mahalanobis(double x, double y, const blobforge::BlobGaussian& g);
double oracle_logistic(double x);
// Per-cell O_c^i, computed cell by cell straight from the product formula.
double oracle_composed(const blobforge::BlobScene& scene, std::size_t i, double x, double y);

// Relative error with an absolute floor.
double rel_err(double got, double want, double floor = 1e-300);
double angle_dist(double a, double b);  // on the circle of period pi

// ---- Fixtures -------------------------------------------------------------

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// White ellipse on black, drawn with rasterize_ellipse; axes in pixels.
blobforge::Raster ellipse_image(int width, int height, double cx, double cy, double a, double b,
                                double theta, int channels = 3);
blobforge::BinaryMask rect_mask(int width, int height, int x0, int y0, int w, int h);

// ---- Curation corpus -------------------------------------------------------

struct CurationCase {
  std::string name;
  blobforge::Raster image;
  blobforge::BinaryMask mask;
  blobforge::CurationRules rules;
  std::string expected;  // "accept" or the rejection reason
};

// Thirty crafted (image, mask, rules) cases with hand-assigned verdicts.
std::vector<CurationCase> curation_corpus();

// n pixels filling a near-square block from (1, 1), row by row.
blobforge::BinaryMask interior_fill(int width, int height, std::size_t n);
// Straight band of the given pixel width between two points.
blobforge::BinaryMask band_mask(int width, int height, double x0, double y0, double x1,
                                double y1, double band);

// ---- JSON schema subset ---------------------------------------------------

// Supports type, properties, required, items, enum, minimum,
// exclusiveMinimum, exclusiveMaximum, minItems, maxItems. Returns a list of
// violations (empty when valid).
std::vector<std::string> schema_errors(const nlohmann::json& schema, const nlohmann::json& v,
                                       const std::string& path = "$");

// ---- Service ---------------------------------------------------------------

class TestServer {
 public:
  explicit TestServer(const std::filesystem::path& data_dir);
  ~TestServer();
  httplib::Client client() const;
  blobforge::SceneStore& store() { return *store_; }

 private:
  std::unique_ptr<blobforge::SceneStore> store_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace testing
