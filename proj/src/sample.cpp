#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "blobforge/edit.hpp"
#include "blobforge/io.hpp"
#include "blobforge/random.hpp"

namespace blobforge {

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp<long>(std::lround(v), 0, 255));
}

// Maps an output pixel center to a source location.
template <class InverseMap>
Raster warp_nearest(const Raster& in, InverseMap&& inverse) {
  Raster out = Raster::zeros(in.width, in.height, in.channels);
  for (int h = 0; h < in.height; ++h) {
    for (int w = 0; w < in.width; ++w) {
      const auto [u, v] = inverse(w + 0.5, h + 0.5);
      if (!std::isfinite(u) || !std::isfinite(v)) continue;
      const double fu = std::floor(u);
      const double fv = std::floor(v);
      if (fu < 0 || fv < 0 || fu >= in.width || fv >= in.height) continue;
      for (int c = 0; c < in.channels; ++c) {
        out.at(h, w, c) = in.at(static_cast<int>(fv), static_cast<int>(fu), c);
      }
    }
  }
  return out;
}

Raster apply_jitter(const Raster& in, double brightness, double contrast,
                    double saturation) {
  std::vector<double> px(in.pixels.begin(), in.pixels.end());
  for (double& v : px) v *= brightness;

  const std::size_t n = static_cast<std::size_t>(in.width) * in.height;
  auto luma = [&](std::size_t i) {
    if (in.channels < 3) return px[i * in.channels];
    const double* p = &px[i * in.channels];
    return 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
  };
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += luma(i);
  mean /= static_cast<double>(std::max<std::size_t>(n, 1));
  for (double& v : px) v = (v - mean) * contrast + mean;

  if (in.channels >= 3) {
    for (std::size_t i = 0; i < n; ++i) {
      const double gray = luma(i);
      for (int c = 0; c < in.channels; ++c) {
        double& v = px[i * in.channels + c];
        v = gray + (v - gray) * saturation;
      }
    }
  }
  Raster out = in;
  for (std::size_t i = 0; i < px.size(); ++i) out.pixels[i] = to_byte(px[i]);
  return out;
}

Raster apply_scale(const Raster& in, double factor) {
  const double cx = 0.5 * in.width;
  const double cy = 0.5 * in.height;
  return warp_nearest(in, [&](double x, double y) {
    return std::pair{cx + (x - cx) / factor, cy + (y - cy) / factor};
  });
}

Raster apply_rotation(const Raster& in, double degrees) {
  const double phi = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(phi);
  const double s = std::sin(phi);
  const double cx = 0.5 * in.width;
  const double cy = 0.5 * in.height;
  return warp_nearest(in, [&](double x, double y) {
    const double rx = x - cx;
    const double ry = y - cy;
    return std::pair{cx + c * rx + s * ry, cy - s * rx + c * ry};
  });
}

// offsets: displacement of the source corners (top-left, top-right,
// bottom-right, bottom-left) in pixels.
Raster apply_perspective(const Raster& in, const std::array<double, 8>& offsets) {
  const double W = in.width;
  const double H = in.height;
  const std::array<std::array<double, 2>, 4> dst = {{{0, 0}, {W, 0}, {W, H}, {0, H}}};
  Eigen::Matrix<double, 8, 8> A;
  Eigen::Matrix<double, 8, 1> rhs;
  for (int k = 0; k < 4; ++k) {
    const double x = dst[k][0];
    const double y = dst[k][1];
    const double u = x + offsets[2 * k];
    const double v = y + offsets[2 * k + 1];
    A.row(2 * k) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    A.row(2 * k + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    rhs(2 * k) = u;
    rhs(2 * k + 1) = v;
  }
  const Eigen::Matrix<double, 8, 1> hm = A.fullPivLu().solve(rhs);
  return warp_nearest(in, [&](double x, double y) {
    const double den = hm(6) * x + hm(7) * y + 1.0;
    return std::pair{(hm(0) * x + hm(1) * y + hm(2)) / den,
                     (hm(3) * x + hm(4) * y + hm(5)) / den};
  });
}

Raster apply_erase(const Raster& in, int x0, int y0, int w, int h) {
  Raster out = in;
  for (int y = std::max(0, y0); y < std::min(in.height, y0 + h); ++y) {
    for (int x = std::max(0, x0); x < std::min(in.width, x0 + w); ++x) {
      for (int c = 0; c < in.channels; ++c) out.at(y, x, c) = 0;
    }
  }
  return out;
}

Raster apply_step(const Raster& in, const AugmentStep& step) {
  const auto& p = step.params;
  if (step.name == "color_jitter") {
    return apply_jitter(in, p.at("brightness").get<double>(),
                        p.at("contrast").get<double>(), p.at("saturation").get<double>());
  }
  if (step.name == "scale") return apply_scale(in, p.at("factor").get<double>());
  if (step.name == "rotate") return apply_rotation(in, p.at("degrees").get<double>());
  if (step.name == "perspective") {
    return apply_perspective(in, p.at("corner_offsets").get<std::array<double, 8>>());
  }
  if (step.name == "random_erase") {
    return apply_erase(in, p.at("x").get<int>(), p.at("y").get<int>(),
                       p.at("width").get<int>(), p.at("height").get<int>());
  }
  return in;
}

}  // namespace

AugmentConfig AugmentConfig::standard() {
  AugmentConfig c;
  c.jitter_prob = 0.5;
  c.scale_prob = 0.5;
  c.rotate_prob = 0.5;
  c.perspective_prob = 0.3;
  c.erase_prob = 0.3;
  return c;
}

void AugmentConfig::validate() const {
  for (double prob : {jitter_prob, scale_prob, rotate_prob, perspective_prob, erase_prob}) {
    if (!(prob >= 0.0 && prob <= 1.0)) {
      throw ValidationError("augmentation probabilities must lie in [0, 1]");
    }
  }
  if (!(brightness >= 0.0 && brightness < 1.0) || !(contrast >= 0.0 && contrast < 1.0) ||
      !(saturation >= 0.0 && saturation < 1.0)) {
    throw ValidationError("jitter magnitudes must lie in [0, 1)");
  }
  if (!(scale_lo > 0.0 && scale_lo <= scale_hi)) {
    throw ValidationError("augmentation scale range must satisfy 0 < lo <= hi");
  }
  if (!(rotate_min_deg <= rotate_max_deg)) {
    throw ValidationError("rotation range must satisfy min <= max");
  }
  if (!(perspective_distortion >= 0.0 && perspective_distortion < 0.5)) {
    throw ValidationError("perspective distortion must lie in [0, 0.5)");
  }
  if (!(erase_area_lo > 0.0 && erase_area_lo <= erase_area_hi && erase_area_hi <= 1.0)) {
    throw ValidationError("erase area range must satisfy 0 < lo <= hi <= 1");
  }
}

void to_json(nlohmann::json& j, const AugmentConfig& c) {
  j = nlohmann::json{
      {"color_jitter",
       {{"prob", c.jitter_prob},
        {"brightness", c.brightness},
        {"contrast", c.contrast},
        {"saturation", c.saturation}}},
      {"scale", {{"prob", c.scale_prob}, {"range", {c.scale_lo, c.scale_hi}}}},
      {"rotate",
       {{"prob", c.rotate_prob}, {"degrees", {c.rotate_min_deg, c.rotate_max_deg}}}},
      {"perspective",
       {{"prob", c.perspective_prob}, {"distortion", c.perspective_distortion}}},
      {"random_erase",
       {{"prob", c.erase_prob}, {"area", {c.erase_area_lo, c.erase_area_hi}}}}};
}

AugmentConfig augment_config_from_json(const nlohmann::json& j) {
  AugmentConfig c;
  try {
    if (j.contains("color_jitter")) {
      const auto& s = j.at("color_jitter");
      c.jitter_prob = s.value("prob", c.jitter_prob);
      c.brightness = s.value("brightness", c.brightness);
      c.contrast = s.value("contrast", c.contrast);
      c.saturation = s.value("saturation", c.saturation);
    }
    auto range = [](const nlohmann::json& s, const char* key, double& lo, double& hi) {
      if (!s.contains(key)) return;
      const auto r = s.at(key).get<std::vector<double>>();
      if (r.size() != 2) throw ValidationError(std::string(key) + " needs two values");
      lo = r[0];
      hi = r[1];
    };
    if (j.contains("scale")) {
      const auto& s = j.at("scale");
      c.scale_prob = s.value("prob", c.scale_prob);
      range(s, "range", c.scale_lo, c.scale_hi);
    }
    if (j.contains("rotate")) {
      const auto& s = j.at("rotate");
      c.rotate_prob = s.value("prob", c.rotate_prob);
      range(s, "degrees", c.rotate_min_deg, c.rotate_max_deg);
    }
    if (j.contains("perspective")) {
      const auto& s = j.at("perspective");
      c.perspective_prob = s.value("prob", c.perspective_prob);
      c.perspective_distortion = s.value("distortion", c.perspective_distortion);
    }
    if (j.contains("random_erase")) {
      const auto& s = j.at("random_erase");
      c.erase_prob = s.value("prob", c.erase_prob);
      range(s, "area", c.erase_area_lo, c.erase_area_hi);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("malformed augment config: ") + ex.what());
  }
  c.validate();
  return c;
}

nlohmann::json log_to_json(const AugmentationLog& log) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& step : log) {
    out.push_back({{"name", step.name}, {"params", step.params}});
  }
  return out;
}

std::pair<Raster, AugmentationLog> augment_foreground(const Raster& raster,
                                                      std::uint64_t seed,
                                                      const AugmentConfig& cfg) {
  if (raster.empty()) throw ValidationError("cannot augment an empty raster");
  cfg.validate();
  Rng rng(seed);
  AugmentationLog log;

  // One decision draw per transform keeps later draws aligned when earlier
  // probabilities change.
  if (rng.bernoulli(cfg.jitter_prob)) {
    log.push_back({"color_jitter",
                   {{"brightness", rng.uniform(1.0 - cfg.brightness, 1.0 + cfg.brightness)},
                    {"contrast", rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast)},
                    {"saturation", rng.uniform(1.0 - cfg.saturation, 1.0 + cfg.saturation)}}});
  }
  if (rng.bernoulli(cfg.scale_prob)) {
    log.push_back({"scale", {{"factor", rng.uniform(cfg.scale_lo, cfg.scale_hi)}}});
  }
  if (rng.bernoulli(cfg.rotate_prob)) {
    log.push_back(
        {"rotate", {{"degrees", rng.uniform(cfg.rotate_min_deg, cfg.rotate_max_deg)}}});
  }
  if (rng.bernoulli(cfg.perspective_prob)) {
    std::array<double, 8> offsets{};
    for (int k = 0; k < 8; ++k) {
      const double extent = (k % 2 == 0 ? raster.width : raster.height) *
                            cfg.perspective_distortion;
      offsets[k] = rng.uniform(-extent, extent);
    }
    log.push_back({"perspective", {{"corner_offsets", offsets}}});
  }
  if (rng.bernoulli(cfg.erase_prob)) {
    const double area = rng.uniform(cfg.erase_area_lo, cfg.erase_area_hi) *
                        raster.width * raster.height;
    const double aspect = std::exp(rng.uniform(std::log(1.0 / 3.0), std::log(3.0)));
    const int w = std::clamp<int>(static_cast<int>(std::lround(std::sqrt(area * aspect))),
                                  1, raster.width);
    const int h = std::clamp<int>(static_cast<int>(std::lround(std::sqrt(area / aspect))),
                                  1, raster.height);
    const int x = static_cast<int>(std::floor(rng.uniform() * (raster.width - w + 1)));
    const int y = static_cast<int>(std::floor(rng.uniform() * (raster.height - h + 1)));
    log.push_back({"random_erase", {{"x", x}, {"y", y}, {"width", w}, {"height", h}}});
  }
  return {replay_augmentation(raster, log), std::move(log)};
}

Raster replay_augmentation(const Raster& raster, const AugmentationLog& log) {
  Raster out = raster;
  for (const auto& step : log) out = apply_step(out, step);
  return out;
}

// ---- Training samples -----------------------------------------------------

SampleResult build_training_sample(const Raster& image, const BinaryMask& fg_mask,
                                   const SampleRequest& req) {
  CurationResult curated = curate_record(image, fg_mask, req.rules, req.level);
  if (auto* rej = std::get_if<Rejection>(&curated)) return std::move(*rej);
  const BlobRecord& record = std::get<BlobRecord>(curated);

  TrainingSample s;
  s.target = record.gaussian;
  try {
    s.source = sample_pre_edit_blob(s.target, req.perturb, req.level);
  } catch (const DegeneracyError& ex) {
    return Rejection{"degenerate", ex.what(), false};
  }
  s.perturb_seed = req.perturb.seed;
  s.augment_seed = req.augment_seed;
  s.confidence = req.level.p();
  s.caption = req.caption;

  const CoordGrid grid(image.width, image.height);
  s.fg_mask = blob_mask(s.target, grid, req.level);
  s.dual_mask = mask_union(blob_mask(s.source, grid, req.level), s.fg_mask);

  // Crop the element to its mask's bounding box, then augment.
  int x0 = image.width;
  int y0 = image.height;
  int x1 = -1;
  int y1 = -1;
  for (int h = 0; h < fg_mask.height; ++h) {
    for (int w = 0; w < fg_mask.width; ++w) {
      if (!fg_mask.at(h, w)) continue;
      x0 = std::min(x0, w);
      y0 = std::min(y0, h);
      x1 = std::max(x1, w);
      y1 = std::max(y1, h);
    }
  }
  Raster crop = Raster::zeros(x1 - x0 + 1, y1 - y0 + 1, image.channels);
  for (int h = y0; h <= y1; ++h) {
    for (int w = x0; w <= x1; ++w) {
      if (!fg_mask.at(h, w)) continue;
      for (int c = 0; c < image.channels; ++c) crop.at(h - y0, w - x0, c) = image.at(h, w, c);
    }
  }
  s.augmentation_log.push_back(
      {"crop", {{"x", x0}, {"y", y0}, {"width", crop.width}, {"height", crop.height}}});
  auto [augmented, log] = augment_foreground(crop, req.augment_seed, req.augment);
  s.foreground = std::move(augmented);
  s.augmentation_log.insert(s.augmentation_log.end(), log.begin(), log.end());

  s.background = image;
  for (int h = 0; h < image.height; ++h) {
    for (int w = 0; w < image.width; ++w) {
      if (s.dual_mask.at(h, w) == 0.0) continue;
      for (int c = 0; c < image.channels; ++c) s.background.at(h, w, c) = 0;
    }
  }
  return s;
}

std::string check_sample_invariants(const TrainingSample& s) {
  const FieldMap& dual = s.dual_mask;
  if (dual.width != s.background.width || dual.height != s.background.height ||
      s.fg_mask.width != dual.width || s.fg_mask.height != dual.height) {
    return "mask and background shapes disagree";
  }
  const CoordGrid grid(dual.width, dual.height);
  const ConfidenceLevel p(s.confidence);
  const FieldMap expected =
      mask_union(blob_mask(s.source, grid, p), blob_mask(s.target, grid, p));
  if (expected.values != dual.values) return "dual mask is not the union of source and target masks";
  for (int h = 0; h < dual.height; ++h) {
    for (int w = 0; w < dual.width; ++w) {
      if (s.fg_mask.at(h, w) > dual.at(h, w)) return "foreground mask escapes the dual mask";
      if (dual.at(h, w) == 0.0) continue;
      for (int c = 0; c < s.background.channels; ++c) {
        if (s.background.at(h, w, c) != 0) return "background is non-zero inside the dual mask";
      }
    }
  }
  return {};
}

std::vector<std::pair<std::string, std::string>> sample_files(const TrainingSample& s) {
  const ConfidenceLevel p(s.confidence);
  nlohmann::json blobs = {
      {"source", {{"gaussian", s.source}, {"ellipse", gaussian_to_ellipse(s.source, p)}}},
      {"target", {{"gaussian", s.target}, {"ellipse", gaussian_to_ellipse(s.target, p)}}},
      {"confidence", s.confidence},
      {"perturb_seed", s.perturb_seed},
      {"augment_seed", s.augment_seed}};
  return {
      {"fg.png", encode_png(s.foreground)},
      {"bg.png", encode_png(s.background)},
      {"dual_mask.blobf", encode_field(s.dual_mask)},
      {"fg_mask.blobf", encode_field(s.fg_mask)},
      {"blobs.json", blobs.dump(2) + "\n"},
      {"augmentation_log.json", log_to_json(s.augmentation_log).dump(2) + "\n"},
      {"caption.txt", s.caption},
  };
}

void write_sample(const std::filesystem::path& dir, const TrainingSample& s) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, data] : sample_files(s)) write_file_atomic(dir / name, data);
}

}  // namespace blobforge
