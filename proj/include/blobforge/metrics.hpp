#pragma once

// Grounding accuracy (mask re-fit against the commanded blob) and image
// quality metrics.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "blobforge/blob.hpp"
#include "blobforge/raster.hpp"

namespace blobforge {

// ---- Grounding ------------------------------------------------------------

// Canonical (cx, cy, a, b, theta / pi).
using EllipseParams = std::array<double, 5>;
EllipseParams ellipse_params(const BlobEllipse& e);

// Squared per-parameter errors after canonicalization; the orientation term
// uses the wrapped distance min(|d|, pi - |d|) / pi.
EllipseParams squared_errors(const BlobEllipse& fitted, const BlobEllipse& gt);
double parameter_mse(const BlobEllipse& fitted, const BlobEllipse& gt);

// nullopt when the mask cannot be fitted.
std::optional<double> grounding_mse(const BinaryMask& pred_mask, const BlobEllipse& gt);

struct GroundingRow {
  std::string id;
  BlobEllipse gt{0.5, 0.5, 1.0, 1.0, 0.0};
  std::optional<BlobEllipse> fitted;
  std::optional<EllipseParams> squared_errors;
  std::optional<double> mse;
  std::string reason;  // set for N/A rows
};

struct GroundingReport {
  std::vector<GroundingRow> rows;
  std::optional<double> mse;  // mean over rows with a value
  std::size_t missing = 0;
};

GroundingReport grounding_report(std::vector<GroundingRow> rows);

// ---- Image quality --------------------------------------------------------

double mse(const Raster& a, const Raster& b);
// +infinity for identical inputs.
double psnr(const Raster& a, const Raster& b);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5) over the valid
// region, k1 = 0.01, k2 = 0.03, L = 255; mean over channels.
double ssim(const Raster& a, const Raster& b);

// ---- Benchmark runner -----------------------------------------------------

struct BenchOptions {
  std::filesystem::path pred_masks;  // <id>.png
  std::filesystem::path gt;          // scene JSON or {"<id>": ellipse}
  std::optional<std::filesystem::path> images;  // <id>.png and <id>.ref.png
  unsigned threads = 0;
};

nlohmann::json run_bench(const BenchOptions& opts);

}  // namespace blobforge
