#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <tuple>

#include "blobforge/service.hpp"

namespace testing {

namespace fs = std::filesystem;
using namespace blobforge;

blobforge::BlobEllipse Gen::ellipse(double min_axis, double max_axis) {
  return BlobEllipse(uniform(0.1, 0.9), uniform(0.1, 0.9), uniform(min_axis, max_axis),
                     uniform(min_axis, max_axis), uniform(0.0, kPi));
}

std::vector<double> Gen::feature(std::size_t d) {
  std::vector<double> f(d);
  for (double& v : f) v = normal();
  return f;
}

blobforge::BlobScene Gen::scene(int blobs, std::size_t d, int width, int height) {
  BlobScene s;
  s.width = width;
  s.height = height;
  for (int i = 0; i < blobs; ++i) {
    s.blobs.push_back(BlobEntry::make("b" + std::to_string(i), "blob", feature(d), ellipse(0.05, 0.4)));
  }
  return s;
}

M2 mul(const M2& x, const M2& y) {
  return {x.a * y.a + x.b * y.c, x.a * y.b + x.b * y.d, x.c * y.a + x.d * y.c,
          x.c * y.b + x.d * y.d};
}

M2 transpose(const M2& x) { return {x.a, x.c, x.b, x.d}; }

M2 oracle_sigma(double a, double b, double theta, double q) {
  const M2 r{std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta)};
  const M2 d{a * a / q, 0.0, 0.0, b * b / q};
  return mul(mul(r, d), transpose(r));
}

double oracle_mahalanobis(double x, double y, const BlobGaussian& g) {
  const double det = g.sigma.xx * g.sigma.yy - g.sigma.xy * g.sigma.yx;
  const double dx = x - g.mu.x;
  const double dy = y - g.mu.y;
  // inverse = [[yy, -xy], [-yx, xx]] / det
  const double ix = (g.sigma.yy * dx - g.sigma.xy * dy) / det;
  const double iy = (-g.sigma.yx * dx + g.sigma.xx * dy) / det;
  return dx * ix + dy * iy;
}

double oracle_logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double oracle_composed(const BlobScene& scene, std::size_t i, double x, double y) {
  double v = oracle_logistic(-oracle_mahalanobis(x, y, scene.blobs[i].gaussian));
  for (std::size_t j = i + 1; j < scene.blobs.size(); ++j) {
    v *= 1.0 - oracle_logistic(-oracle_mahalanobis(x, y, scene.blobs[j].gaussian));
  }
  return v;
}

double rel_err(double got, double want, double floor) {
  return std::abs(got - want) / std::max(std::abs(want), floor);
}

double angle_dist(double a, double b) {
  double d = std::fmod(std::abs(a - b), kPi);
  return std::min(d, kPi - d);
}

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  path_ = fs::temp_directory_path() /
          ("blobforge-test-" + std::to_string(stamp) + "-" + std::to_string(counter++));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

Raster ellipse_image(int width, int height, double cx, double cy, double a, double b,
                     double theta, int channels) {
  const BinaryMask m = rasterize_ellipse(width, height, cx, cy, a, b, theta);
  Raster r = Raster::zeros(width, height, channels);
  for (int h = 0; h < height; ++h) {
    for (int w = 0; w < width; ++w) {
      if (!m.at(h, w)) continue;
      for (int c = 0; c < channels; ++c) r.at(h, w, c) = 255;
    }
  }
  return r;
}

BinaryMask rect_mask(int width, int height, int x0, int y0, int w, int h) {
  BinaryMask m = BinaryMask::zeros(width, height);
  for (int y = y0; y < y0 + h; ++y) {
    for (int x = x0; x < x0 + w; ++x) m.set(y, x);
  }
  return m;
}

BinaryMask interior_fill(int width, int height, std::size_t n) {
  BinaryMask m = BinaryMask::zeros(width, height);
  const int row = std::min(width - 2, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n)))));
  for (int h = 1; h < height - 1 && n > 0; ++h) {
    for (int w = 1; w <= row && n > 0; ++w, --n) m.set(h, w);
  }
  return m;
}

BinaryMask band_mask(int width, int height, double x0, double y0, double x1, double y1,
                     double band) {
  BinaryMask m = BinaryMask::zeros(width, height);
  const double dx = x1 - x0;
  const double dy = y1 - y0;
  const double len = std::hypot(dx, dy);
  for (int h = 0; h < height; ++h) {
    for (int w = 0; w < width; ++w) {
      const double px = w + 0.5 - x0;
      const double py = h + 0.5 - y0;
      const double along = (px * dx + py * dy) / len;
      const double across = (px * dy - py * dx) / len;
      if (along >= 0.0 && along <= len && std::abs(across) <= band / 2.0) m.set(h, w);
    }
  }
  return m;
}

std::vector<CurationCase> curation_corpus() {
  std::vector<CurationCase> out;
  const CurationRules defaults;
  auto gray = [](int w, int h) {
    Raster r = Raster::zeros(w, h, 3);
    for (std::size_t i = 0; i < r.pixels.size(); ++i) r.pixels[i] = static_cast<std::uint8_t>(i % 251);
    return r;
  };
  auto blob = [](int w, int h) {
    return rasterize_ellipse(w, h, w / 2.0, h / 2.0, 0.2 * w, 0.2 * h, 0.3);
  };
  auto add = [&](std::string name, int w, int h, BinaryMask m, std::string expected,
                 CurationRules rules) {
    out.push_back({std::move(name), gray(w, h), std::move(m), rules, std::move(expected)});
  };

  // Short side: accept iff min(W, H) > 480.
  for (auto [w, h, expected] : std::vector<std::tuple<int, int, const char*>>{
           {479, 1000, "short_side"},
           {1000, 479, "short_side"},
           {480, 480, "short_side"},
           {640, 480, "short_side"},
           {480, 640, "short_side"},
           {400, 400, "short_side"},
           {481, 481, "accept"},
           {640, 481, "accept"},
           {481, 640, "accept"}}) {
    add("short side " + std::to_string(w) + "x" + std::to_string(h), w, h, blob(w, h), expected,
        defaults);
  }

  // Area ratio on a 500 x 500 canvas (250000 pixels), closed interval.
  for (auto [n, expected] : std::vector<std::pair<std::size_t, const char*>>{
           {2250, "area"},      // 0.009
           {2499, "area"},      // just below 0.01
           {2500, "accept"},    // 0.01
           {125000, "accept"},  // 0.5
           {225000, "accept"},  // 0.9
           {225001, "area"},    // just above 0.9
           {227500, "area"}}) { // 0.91
    add("area " + std::to_string(n), 500, 500, interior_fill(500, 500, n), expected, defaults);
  }

  // Boundary contact.
  for (auto [h, w, name] : std::vector<std::tuple<int, int, const char*>>{
           {0, 250, "top row"}, {499, 250, "bottom row"}, {250, 0, "left column"},
           {250, 499, "right column"}}) {
    BinaryMask m = blob(500, 500);
    m.set(h, w);
    add(std::string("boundary ") + name, 500, 500, m, "boundary", defaults);
  }
  add("boundary margin row 1", 500, 500, rect_mask(500, 500, 1, 1, 100, 100), "accept", defaults);
  {
    BinaryMask m = blob(500, 500);
    m.set(0, 250);
    CurationRules zero = defaults;
    zero.boundary_margin = 0;
    add("boundary margin 0", 500, 500, m, "accept", zero);
  }
  {
    BinaryMask m = blob(500, 500);
    m.set(2, 250);
    CurationRules wide = defaults;
    wide.boundary_margin = 3;
    add("boundary margin 3", 500, 500, m, "boundary", wide);
  }

  // Empty and mismatched masks.
  add("empty mask", 500, 500, BinaryMask::zeros(500, 500), "empty", defaults);
  add("mask size mismatch", 500, 500, blob(499, 500), "mask_size", defaults);

  // Degenerate covariance.
  CurationRules relaxed = defaults;
  relaxed.area_lo = 1e-5;
  add("one-pixel slanted line", 500, 500, band_mask(500, 500, 20, 100, 480, 253, 1.0),
      "ill-conditioned", relaxed);
  add("five-pixel band", 500, 500, band_mask(500, 500, 10, 10, 490, 490, 5.0), "ill-conditioned",
      defaults);
  add("ten-pixel band", 500, 500, band_mask(500, 500, 10, 10, 490, 490, 10.0), "accept", defaults);
  add("horizontal line", 500, 500, rect_mask(500, 500, 50, 250, 400, 1), "fit", relaxed);
  add("four pixels", 500, 500, rect_mask(500, 500, 100, 100, 2, 2), "fit", relaxed);
  return out;
}

namespace {

bool has_type(const nlohmann::json& v, const std::string& t) {
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "number") return v.is_number();
  if (t == "integer") return v.is_number_integer() || v.is_number_unsigned();
  if (t == "boolean") return v.is_boolean();
  if (t == "null") return v.is_null();
  return false;
}

}  // namespace

std::vector<std::string> schema_errors(const nlohmann::json& schema, const nlohmann::json& v,
                                       const std::string& path) {
  std::vector<std::string> errs;
  auto fail = [&](const std::string& msg) { errs.push_back(path + ": " + msg); };

  if (schema.contains("type")) {
    const auto& t = schema.at("type");
    bool ok = false;
    if (t.is_array()) {
      for (const auto& each : t) ok = ok || has_type(v, each.get<std::string>());
    } else {
      ok = has_type(v, t.get<std::string>());
    }
    if (!ok) {
      fail("expected type " + t.dump() + ", got " + v.type_name());
      return errs;
    }
  }
  if (schema.contains("enum")) {
    const auto& e = schema.at("enum");
    if (std::find(e.begin(), e.end(), v) == e.end()) fail("not in enum " + e.dump());
  }
  if (v.is_number()) {
    const double x = v.get<double>();
    if (schema.contains("minimum") && x < schema.at("minimum").get<double>()) fail("below minimum");
    if (schema.contains("exclusiveMinimum") && !(x > schema.at("exclusiveMinimum").get<double>())) {
      fail("not above exclusiveMinimum");
    }
    if (schema.contains("exclusiveMaximum") && !(x < schema.at("exclusiveMaximum").get<double>())) {
      fail("not below exclusiveMaximum");
    }
  }
  if (v.is_object()) {
    if (schema.contains("required")) {
      for (const auto& key : schema.at("required")) {
        if (!v.contains(key.get<std::string>())) fail("missing " + key.get<std::string>());
      }
    }
    if (schema.contains("properties")) {
      for (const auto& [key, sub] : schema.at("properties").items()) {
        if (!v.contains(key)) continue;
        auto more = schema_errors(sub, v.at(key), path + "." + key);
        errs.insert(errs.end(), more.begin(), more.end());
      }
    }
  }
  if (v.is_array()) {
    if (schema.contains("minItems") && v.size() < schema.at("minItems").get<std::size_t>()) {
      fail("too few items");
    }
    if (schema.contains("maxItems") && v.size() > schema.at("maxItems").get<std::size_t>()) {
      fail("too many items");
    }
    if (schema.contains("items")) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        auto more = schema_errors(schema.at("items"), v[i], path + "[" + std::to_string(i) + "]");
        errs.insert(errs.end(), more.begin(), more.end());
      }
    }
  }
  return errs;
}

TestServer::TestServer(const fs::path& data_dir)
    : store_(std::make_unique<SceneStore>(data_dir / "scenes")) {
  install_routes(server_, *store_);
  port_ = server_.bind_to_any_port("127.0.0.1");
  thread_ = std::thread([this] { server_.listen_after_bind(); });
  server_.wait_until_ready();
}

TestServer::~TestServer() {
  server_.stop();
  if (thread_.joinable()) thread_.join();
}

httplib::Client TestServer::client() const {
  httplib::Client c("127.0.0.1", port_);
  c.set_read_timeout(30, 0);
  return c;
}

}  // namespace testing
