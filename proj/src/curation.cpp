#include "blobforge/curation.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <thread>
#include <vector>

#include "blobforge/io.hpp"

namespace blobforge {

namespace fs = std::filesystem;

void CurationRules::validate() const {
  if (!(area_lo > 0.0 && area_lo < area_hi && area_hi < 1.0)) {
    throw ValidationError("area ratio bounds must satisfy 0 < lo < hi < 1");
  }
  if (min_short_side < 1) throw ValidationError("min_short_side must be >= 1");
  if (boundary_margin < 0) throw ValidationError("boundary_margin must be >= 0");
  if (!(min_cov_eig >= 0.0)) throw ValidationError("min_cov_eig must be >= 0");
}

void to_json(nlohmann::json& j, const CurationRules& r) {
  j = nlohmann::json{{"min_short_side", r.min_short_side},
                     {"area_lo", r.area_lo},
                     {"area_hi", r.area_hi},
                     {"boundary_margin", r.boundary_margin},
                     {"min_cov_eig", r.min_cov_eig}};
}

CurationRules curation_rules_from_json(const nlohmann::json& j) {
  CurationRules r;
  try {
    r.min_short_side = j.value("min_short_side", r.min_short_side);
    r.area_lo = j.value("area_lo", r.area_lo);
    r.area_hi = j.value("area_hi", r.area_hi);
    r.boundary_margin = j.value("boundary_margin", r.boundary_margin);
    r.min_cov_eig = j.value("min_cov_eig", r.min_cov_eig);
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("malformed curation rules: ") + ex.what());
  }
  r.validate();
  return r;
}

Verdict filter_image(int width, int height, const CurationRules& rules) {
  if (width < 1 || height < 1) return Verdict::reject("dims");
  if (std::min(width, height) <= rules.min_short_side) {
    return Verdict::reject("short_side");
  }
  return Verdict::accept();
}

namespace {

Verdict check_empty(const BinaryMask& mask, const CurationRules&) {
  return mask.count() == 0 ? Verdict::reject("empty") : Verdict::accept();
}

Verdict check_area(const BinaryMask& mask, const CurationRules& rules) {
  const double total = static_cast<double>(mask.width) * mask.height;
  const double ratio = total > 0.0 ? static_cast<double>(mask.count()) / total : 0.0;
  if (ratio < rules.area_lo || ratio > rules.area_hi) return Verdict::reject("area");
  return Verdict::accept();
}

Verdict check_boundary(const BinaryMask& mask, const CurationRules& rules) {
  const int m = rules.boundary_margin;
  for (int h = 0; h < mask.height; ++h) {
    const bool edge_row = h < m || h >= mask.height - m;
    for (int w = 0; w < mask.width; ++w) {
      if (!mask.at(h, w)) continue;
      if (edge_row || w < m || w >= mask.width - m) {
        return Verdict::reject("boundary");
      }
    }
  }
  return Verdict::accept();
}

constexpr std::array<MaskRule, 3> kMaskRules = {{
    {"empty", &check_empty},
    {"area", &check_area},
    {"boundary", &check_boundary},
}};

}  // namespace

std::span<const MaskRule> mask_rules() { return kMaskRules; }

Verdict filter_mask(const BinaryMask& mask, const CurationRules& rules) {
  for (const MaskRule& rule : kMaskRules) {
    Verdict v = rule.check(mask, rules);
    if (!v) return v;
  }
  return Verdict::accept();
}

BlobEllipse fit_ellipse_to_mask(const BinaryMask& mask) {
  const std::size_t n = mask.count();
  if (n < kMinFitPixels) {
    throw FitError("ellipse fit needs at least " + std::to_string(kMinFitPixels) +
                   " pixels, got " + std::to_string(n));
  }
  const double inv_w = 1.0 / mask.width;
  const double inv_h = 1.0 / mask.height;

  double sx = 0.0;
  double sy = 0.0;
  for (int h = 0; h < mask.height; ++h) {
    for (int w = 0; w < mask.width; ++w) {
      if (!mask.at(h, w)) continue;
      sx += (w + 1) * inv_w;
      sy += (h + 1) * inv_h;
    }
  }
  const double count = static_cast<double>(n);
  const double mx = sx / count;
  const double my = sy / count;

  double cxx = 0.0;
  double cxy = 0.0;
  double cyy = 0.0;
  for (int h = 0; h < mask.height; ++h) {
    for (int w = 0; w < mask.width; ++w) {
      if (!mask.at(h, w)) continue;
      const double dx = (w + 1) * inv_w - mx;
      const double dy = (h + 1) * inv_h - my;
      cxx += dx * dx;
      cxy += dx * dy;
      cyy += dy * dy;
    }
  }
  const SymEigen2 eig =
      eigen_sym2(Mat2::symmetric(cxx / count, cxy / count, cyy / count));
  if (!(eig.major > 0.0) || eig.minor <= 1e-10 * eig.major) {
    throw FitError("mask pixels are collinear");
  }
  return BlobEllipse(mx, my, 2.0 * std::sqrt(eig.major),
                     2.0 * std::sqrt(eig.minor), eig.angle);
}

CurationResult curate_record(const Raster& image, const BinaryMask& mask,
                             const CurationRules& rules, ConfidenceLevel p,
                             std::string image_ref, std::string mask_ref,
                             std::string caption) {
  nlohmann::json provenance = nlohmann::json::object();
  auto reject = [&](const std::string& reason, std::string detail = {}) {
    return CurationResult(Rejection{reason, std::move(detail), false});
  };

  if (Verdict v = filter_image(image.width, image.height, rules); !v) {
    return reject(v.reason, std::to_string(image.width) + "x" +
                                std::to_string(image.height));
  }
  provenance["image"] = "accept";
  if (mask.width != image.width || mask.height != image.height) {
    return reject("mask_size", "mask dimensions differ from the image");
  }
  if (Verdict v = filter_mask(mask, rules); !v) return reject(v.reason);
  provenance["mask"] = "accept";

  std::optional<BlobEllipse> ellipse;
  try {
    ellipse = fit_ellipse_to_mask(mask);
  } catch (const FitError& ex) {
    return reject("fit", ex.what());
  }
  provenance["fit"] = "second-moment";

  const BlobGaussian g = ellipse_to_gaussian(*ellipse, p);
  if (Verdict v = validate_gaussian(g, rules.min_cov_eig); !v) {
    return reject(v.reason);
  }
  provenance["gaussian"] = "accept";

  return BlobRecord{std::move(image_ref), std::move(mask_ref), *ellipse, g,
                    std::move(caption), p.p(), std::move(provenance)};
}

CurationResult curate_files(const fs::path& image_path, const fs::path& mask_path,
                            const CurationRules& rules, ConfidenceLevel p) {
  Raster image;
  Raster mask;
  std::string caption;
  try {
    image = read_png(image_path);
    mask = read_png(mask_path);
    fs::path caption_path = image_path;
    caption_path.replace_extension(".txt");
    if (fs::exists(caption_path)) caption = read_file(caption_path);
  } catch (const IoError& ex) {
    return Rejection{"io", ex.what(), true};
  }
  return curate_record(image, binarize(mask), rules, p, image_path.string(),
                       mask_path.string(), std::move(caption));
}

void to_json(nlohmann::json& j, const BlobRecord& r) {
  j = nlohmann::json{{"image_ref", r.image_ref},
                     {"mask_ref", r.mask_ref},
                     {"ellipse", r.ellipse},
                     {"gaussian", r.gaussian},
                     {"caption", r.caption},
                     {"confidence", r.confidence},
                     {"provenance", r.provenance}};
}

BlobRecord blob_record_from_json(const nlohmann::json& j) {
  try {
    return BlobRecord{j.at("image_ref").get<std::string>(),
                      j.at("mask_ref").get<std::string>(),
                      ellipse_from_json(j.at("ellipse")),
                      gaussian_from_json(j.at("gaussian")),
                      j.value("caption", std::string{}),
                      j.value("confidence", kDefaultConfidence),
                      j.value("provenance", nlohmann::json::object())};
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("malformed blob record: ") + ex.what());
  }
}

void to_json(nlohmann::json& j, const CurationSummary& s) {
  j = nlohmann::json{{"total", s.total},
                     {"accepted", s.accepted},
                     {"rejected", s.rejected},
                     {"io_failures", s.io_failures}};
}

CurationSummary curate_directory(const fs::path& in_dir, const fs::path& manifest,
                                 const CurationRules& rules, ConfidenceLevel p,
                                 unsigned threads) {
  rules.validate();
  if (!fs::is_directory(in_dir)) {
    throw IoError("input directory not found: " + in_dir.string());
  }

  std::vector<fs::path> images;
  std::vector<fs::path> masks;
  for (const auto& entry : fs::directory_iterator(in_dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
    const std::string name = entry.path().filename().string();
    (name.find(".mask") != std::string::npos ? masks : images).push_back(entry.path());
  }
  std::sort(images.begin(), images.end());
  std::sort(masks.begin(), masks.end());

  std::vector<std::pair<fs::path, fs::path>> jobs;
  for (const auto& image : images) {
    const std::string prefix = image.stem().string() + ".mask";
    for (const auto& mask : masks) {
      if (mask.filename().string().rfind(prefix, 0) == 0) jobs.emplace_back(image, mask);
    }
  }

  std::vector<std::optional<CurationResult>> results(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      results[i] = curate_files(jobs[i].first, jobs[i].second, rules, p);
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, std::max<std::size_t>(1, jobs.size()));
  std::vector<std::jthread> pool;
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  pool.clear();

  CurationSummary summary;
  std::string lines;
  for (const auto& result : results) {
    ++summary.total;
    if (const auto* record = std::get_if<BlobRecord>(&*result)) {
      ++summary.accepted;
      lines += nlohmann::json(*record).dump() + "\n";
    } else {
      const auto& rej = std::get<Rejection>(*result);
      ++summary.rejected[rej.reason];
      if (rej.io_failure) ++summary.io_failures;
    }
  }
  write_file_atomic(manifest, lines);
  fs::path summary_path = manifest;
  summary_path += ".summary.json";
  write_file_atomic(summary_path, nlohmann::json(summary).dump(2) + "\n");
  return summary;
}

}  // namespace blobforge
