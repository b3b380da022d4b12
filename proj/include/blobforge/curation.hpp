#pragma once

// Dataset curation: image and mask filters, moment-based ellipse fitting and
// the record pipeline that turns (image, mask) pairs into blob annotations.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>

#include <json.hpp>

#include "blobforge/blob.hpp"
#include "blobforge/raster.hpp"

namespace blobforge {

struct CurationRules {
  int min_short_side = 480;  // strict: the short side must exceed this
  double area_lo = 0.01;     // closed interval [area_lo, area_hi]
  double area_hi = 0.9;
  int boundary_margin = 1;
  double min_cov_eig = kDefaultMinEigenvalue;

  // Throws ValidationError unless 0 < area_lo < area_hi < 1,
  // min_short_side >= 1 and boundary_margin >= 0.
  void validate() const;
};

void to_json(nlohmann::json& j, const CurationRules& r);
// Missing keys keep their defaults; the result is validated.
CurationRules curation_rules_from_json(const nlohmann::json& j);

Verdict filter_image(int width, int height, const CurationRules& rules);

// Individual mask checks. filter_mask applies them in the order listed; the
// overall verdict does not depend on that order.
struct MaskRule {
  std::string_view name;
  Verdict (*check)(const BinaryMask&, const CurationRules&);
};
std::span<const MaskRule> mask_rules();

Verdict filter_mask(const BinaryMask& mask, const CurationRules& rules);

// Second-moment (equal-area) ellipse of the set pixels, in normalized grid
// coordinates: pixel (h, w) sits at ((w + 1) / W, (h + 1) / H). Semi-axes are
// 2 * sqrt(eigenvalues) of the pixel covariance. Throws FitError for fewer
// than five pixels or collinear pixels.
inline constexpr std::size_t kMinFitPixels = 5;
BlobEllipse fit_ellipse_to_mask(const BinaryMask& mask);

struct BlobRecord {
  std::string image_ref;
  std::string mask_ref;
  BlobEllipse ellipse;
  BlobGaussian gaussian;
  std::string caption;
  double confidence = kDefaultConfidence;
  nlohmann::json provenance;
};

struct Rejection {
  std::string reason;
  std::string detail;
  bool io_failure = false;
};

using CurationResult = std::variant<BlobRecord, Rejection>;

// filter_image -> filter_mask -> fit -> ellipse_to_gaussian ->
// validate_gaussian, stopping at the first failure.
CurationResult curate_record(const Raster& image, const BinaryMask& mask,
                             const CurationRules& rules,
                             ConfidenceLevel p = kDefaultLevel,
                             std::string image_ref = {},
                             std::string mask_ref = {},
                             std::string caption = {});

// Same pipeline reading PNG files; unreadable files yield a Rejection with
// io_failure set and reason "io".
CurationResult curate_files(const std::filesystem::path& image_path,
                            const std::filesystem::path& mask_path,
                            const CurationRules& rules,
                            ConfidenceLevel p = kDefaultLevel);

struct CurationSummary {
  std::size_t total = 0;
  std::size_t accepted = 0;
  std::map<std::string, std::size_t> rejected;  // reason -> count
  std::size_t io_failures = 0;
};

void to_json(nlohmann::json& j, const BlobRecord& r);
BlobRecord blob_record_from_json(const nlohmann::json& j);
void to_json(nlohmann::json& j, const CurationSummary& s);

// Curates every "<stem>.png" under `in_dir` against each mask named
// "<stem>.mask*.png"; an optional "<stem>.txt" is used as the caption. Writes
// one accepted BlobRecord per line to `manifest` and the summary to
// "<manifest>.summary.json". Records are processed in parallel and written in
// sorted order.
CurationSummary curate_directory(const std::filesystem::path& in_dir,
                                 const std::filesystem::path& manifest,
                                 const CurationRules& rules,
                                 ConfidenceLevel p = kDefaultLevel,
                                 unsigned threads = 0);

}  // namespace blobforge
