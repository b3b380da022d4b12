#include "blobforge/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <thread>

#include "blobforge/curation.hpp"
#include "blobforge/io.hpp"

namespace blobforge {

namespace fs = std::filesystem;

// ---- Grounding ------------------------------------------------------------

EllipseParams ellipse_params(const BlobEllipse& e) {
  const BlobEllipse c = e.canonical();
  return {c.cx(), c.cy(), c.a(), c.b(), c.theta() / std::numbers::pi};
}

EllipseParams squared_errors(const BlobEllipse& fitted, const BlobEllipse& gt) {
  const EllipseParams f = ellipse_params(fitted);
  const EllipseParams g = ellipse_params(gt);
  EllipseParams out{};
  for (int i = 0; i < 4; ++i) out[i] = (f[i] - g[i]) * (f[i] - g[i]);
  const double d = std::abs(f[4] - g[4]);
  const double wrapped = std::min(d, 1.0 - d);
  out[4] = wrapped * wrapped;
  return out;
}

double parameter_mse(const BlobEllipse& fitted, const BlobEllipse& gt) {
  const EllipseParams e = squared_errors(fitted, gt);
  double sum = 0.0;
  for (double v : e) sum += v;
  return sum / 5.0;
}

std::optional<double> grounding_mse(const BinaryMask& pred_mask, const BlobEllipse& gt) {
  try {
    return parameter_mse(fit_ellipse_to_mask(pred_mask), gt);
  } catch (const FitError&) {
    return std::nullopt;
  }
}

GroundingReport grounding_report(std::vector<GroundingRow> rows) {
  GroundingReport report;
  report.rows = std::move(rows);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : report.rows) {
    if (r.mse) {
      sum += *r.mse;
      ++n;
    } else {
      ++report.missing;
    }
  }
  if (n > 0) report.mse = sum / static_cast<double>(n);
  return report;
}

// ---- Image quality --------------------------------------------------------

namespace {

void require_same_shape(const Raster& a, const Raster& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
    throw ShapeError("images differ in shape: " + std::to_string(a.width) + "x" +
                     std::to_string(a.height) + "x" + std::to_string(a.channels) + " vs " +
                     std::to_string(b.width) + "x" + std::to_string(b.height) + "x" +
                     std::to_string(b.channels));
  }
  if (a.empty()) throw ShapeError("images are empty");
}

std::vector<double> gaussian_window() {
  std::vector<double> k(kSsimWindow);
  const int r = kSsimWindow / 2;
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double x = i - r;
    k[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable valid-region filtering of one channel plane.
std::vector<double> filter_valid(const std::vector<double>& x, int width, int height,
                                 const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = width - n + 1;
  const int oh = height - n + 1;
  std::vector<double> rows(static_cast<std::size_t>(height) * ow, 0.0);
  for (int h = 0; h < height; ++h) {
    for (int w = 0; w < ow; ++w) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[i] * x[static_cast<std::size_t>(h) * width + w + i];
      rows[static_cast<std::size_t>(h) * ow + w] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int h = 0; h < oh; ++h) {
    for (int w = 0; w < ow; ++w) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[i] * rows[static_cast<std::size_t>(h + i) * ow + w];
      out[static_cast<std::size_t>(h) * ow + w] = acc;
    }
  }
  return out;
}

}  // namespace

double mse(const Raster& a, const Raster& b) {
  require_same_shape(a, b);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(a.pixels.size());
}

double psnr(const Raster& a, const Raster& b) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / m);
}

double ssim(const Raster& a, const Raster& b) {
  require_same_shape(a, b);
  if (a.width < kSsimWindow || a.height < kSsimWindow) {
    throw ShapeError("image smaller than the " + std::to_string(kSsimWindow) + "x" +
                     std::to_string(kSsimWindow) + " SSIM window");
  }
  const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  const std::vector<double> k = gaussian_window();
  const std::size_t plane = static_cast<std::size_t>(a.width) * a.height;

  double total = 0.0;
  for (int c = 0; c < a.channels; ++c) {
    std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      x[i] = a.pixels[i * a.channels + c];
      y[i] = b.pixels[i * b.channels + c];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, a.width, a.height, k);
    const auto my = filter_valid(y, a.width, a.height, k);
    const auto sxx = filter_valid(xx, a.width, a.height, k);
    const auto syy = filter_valid(yy, a.width, a.height, k);
    const auto sxy = filter_valid(xy, a.width, a.height, k);
    double sum = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      sum += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += sum / static_cast<double>(mx.size());
  }
  return total / a.channels;
}

// ---- Benchmark runner -----------------------------------------------------

namespace {

std::map<std::string, BlobEllipse> load_ground_truth(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& ex) {
    throw IoError("cannot parse " + path.string() + ": " + ex.what());
  }
  std::map<std::string, BlobEllipse> out;
  try {
    if (j.contains("blobs")) {
      for (const auto& b : j.at("blobs")) {
        const std::string id = b.at("id").get<std::string>();
        if (b.contains("ellipse")) {
          out.emplace(id, ellipse_from_json(b.at("ellipse")));
        } else {
          const double p = j.value("confidence", kDefaultConfidence);
          out.emplace(id, gaussian_to_ellipse(gaussian_from_json(b.at("gaussian")),
                                              ConfidenceLevel(p)));
        }
      }
    } else {
      for (const auto& [id, e] : j.items()) out.emplace(id, ellipse_from_json(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError("malformed ground truth: " + std::string(ex.what()));
  }
  return out;
}

nlohmann::json params_json(const BlobEllipse& e) { return e; }

nlohmann::json metric_json(double v) {
  if (std::isinf(v)) return "inf";
  return v;
}

struct BenchRow {
  GroundingRow grounding;
  std::optional<double> psnr;
  std::optional<double> ssim;
  std::string image_reason;
};

BenchRow evaluate(const std::string& id, const BlobEllipse& gt, const BenchOptions& opts) {
  BenchRow row;
  row.grounding.id = id;
  row.grounding.gt = gt;
  const fs::path mask_path = opts.pred_masks / (id + ".png");
  try {
    const BinaryMask mask = binarize(read_png(mask_path));
    const BlobEllipse fitted = fit_ellipse_to_mask(mask);
    row.grounding.fitted = fitted;
    row.grounding.squared_errors = squared_errors(fitted, gt);
    row.grounding.mse = parameter_mse(fitted, gt);
  } catch (const FitError& ex) {
    row.grounding.reason = std::string("fit: ") + ex.what();
  } catch (const IoError& ex) {
    row.grounding.reason = std::string("io: ") + ex.what();
  }
  if (opts.images) {
    try {
      const Raster out = read_png(*opts.images / (id + ".png"));
      const Raster ref = read_png(*opts.images / (id + ".ref.png"));
      row.psnr = psnr(out, ref);
      row.ssim = ssim(out, ref);
    } catch (const Error& ex) {
      row.image_reason = ex.what();
    }
  }
  return row;
}

}  // namespace

nlohmann::json run_bench(const BenchOptions& opts) {
  const auto gt = load_ground_truth(opts.gt);
  std::vector<std::pair<std::string, BlobEllipse>> jobs(gt.begin(), gt.end());
  std::vector<BenchRow> rows(jobs.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      rows[i] = evaluate(jobs[i].first, jobs[i].second, opts);
    }
  };
  unsigned threads = opts.threads ? opts.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, std::max<std::size_t>(1, jobs.size()));
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  std::vector<GroundingRow> grounding;
  nlohmann::json out_rows = nlohmann::json::array();
  double psnr_sum = 0.0, ssim_sum = 0.0;
  std::size_t psnr_n = 0, ssim_n = 0, identical = 0;
  for (const auto& r : rows) {
    const GroundingRow& g = r.grounding;
    nlohmann::json row = {{"id", g.id}, {"gt", params_json(g.gt)}, {"na", !g.mse.has_value()}};
    if (g.mse) {
      row["fitted"] = params_json(*g.fitted);
      row["squared_errors"] = *g.squared_errors;
      row["grounding_mse"] = *g.mse;
    } else {
      row["fitted"] = nullptr;
      row["grounding_mse"] = nullptr;
      row["reason"] = g.reason;
    }
    if (opts.images) {
      row["psnr"] = r.psnr ? metric_json(*r.psnr) : nlohmann::json(nullptr);
      row["ssim"] = r.ssim ? nlohmann::json(*r.ssim) : nlohmann::json(nullptr);
      if (!r.image_reason.empty()) row["image_reason"] = r.image_reason;
      if (r.psnr) {
        if (std::isinf(*r.psnr)) {
          ++identical;
        } else {
          psnr_sum += *r.psnr;
          ++psnr_n;
        }
      }
      if (r.ssim) {
        ssim_sum += *r.ssim;
        ++ssim_n;
      }
    }
    out_rows.push_back(std::move(row));
    grounding.push_back(g);
  }

  const GroundingReport report = grounding_report(std::move(grounding));
  nlohmann::json aggregate = {
      {"samples", rows.size()},
      {"na", report.missing},
      {"grounding_mse", report.mse ? nlohmann::json(*report.mse) : nlohmann::json(nullptr)}};
  if (opts.images) {
    aggregate["psnr_mean"] = psnr_n ? nlohmann::json(psnr_sum / psnr_n) : nlohmann::json(nullptr);
    aggregate["psnr_identical"] = identical;
    aggregate["ssim_mean"] = ssim_n ? nlohmann::json(ssim_sum / ssim_n) : nlohmann::json(nullptr);
  }
  return {{"rows", out_rows}, {"aggregate", aggregate}};
}

}  // namespace blobforge
