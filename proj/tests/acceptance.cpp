// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any
// criterion fails.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <thread>

#include "blobforge/curation.hpp"
#include "blobforge/field.hpp"
#include "blobforge/harness.hpp"
#include "blobforge/metrics.hpp"
#include "blobforge/service.hpp"
#include "support.hpp"

using namespace blobforge;
using namespace testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome conversion_round_trip() {
  constexpr double kTol = 1e-9;
  const auto t0 = Clock::now();
  Gen gen(1001);
  double worst = 0.0;
  for (double p : {0.5, 0.9, 0.95}) {
    const ConfidenceLevel level(p);
    for (int i = 0; i < 10000; ++i) {
      const BlobEllipse c = gen.ellipse(0.005, 0.5).canonical();
      const BlobEllipse back = gaussian_to_ellipse(ellipse_to_gaussian(c, level), level);
      worst = std::max({worst, rel_err(back.cx(), c.cx()), rel_err(back.cy(), c.cy()),
                        rel_err(back.a(), c.a()), rel_err(back.b(), c.b())});
      if (c.a() > c.b() * (1 + 1e-6)) worst = std::max(worst, angle_dist(back.theta(), c.theta()) / kPi);
    }
  }
  const double dt = seconds_since(t0);
  return {worst <= kTol && dt < 5.0, fmt("max rel err %.3g (tol %.0e), %.3f s (limit 5 s)", worst, kTol, dt)};
}

Outcome opacity_center() {
  Gen gen(1002);
  double worst = 0.0;
  for (int i = 0; i < 500; ++i) {
    const int w = gen.integer(2, 64), h = gen.integer(2, 64);
    const int pw = gen.integer(0, w - 1), ph = gen.integer(0, h - 1);
    const CoordGrid grid = make_grid(w, h);
    const BlobEllipse e(grid.at(ph, pw).x, grid.at(ph, pw).y, gen.uniform(0.01, 0.4),
                        gen.uniform(0.01, 0.4), gen.uniform(0, kPi));
    const FieldMap o = opacity_map(mahalanobis_map(grid, ellipse_to_gaussian(e)));
    worst = std::max(worst, std::abs(o.at(ph, pw) - 0.5));
  }
  return {worst <= 1e-12, fmt("500 blobs, max |O - 0.5| = %.3g (tol 1e-12)", worst)};
}

Outcome composition_identity() {
  Gen gen(1003);
  const CoordGrid grid = make_grid(64, 64);
  double worst = 0.0;
  for (int s = 0; s < 100; ++s) {
    const BlobScene scene = gen.scene(gen.integer(1, 8), 2, 64, 64);
    const auto comp = composed_opacities(scene, grid);
    const auto raw = opacity_maps(scene, grid);
    for (std::size_t k = 0; k < grid.size(); ++k) {
      double sum = 0.0, transmit = 1.0;
      for (std::size_t i = 0; i < comp.size(); ++i) {
        sum += comp[i].values[k];
        transmit *= 1.0 - raw[i].values[k];
      }
      worst = std::max(worst, std::abs(sum + transmit - 1.0));
    }
  }
  return {worst <= 1e-9, fmt("100 scenes, max |sum + transmittance - 1| = %.3g (tol 1e-9)", worst)};
}

Outcome splat_oracle() {
  Gen gen(1004);
  const CoordGrid grid = make_grid(8, 8);
  std::size_t mismatches = 0, cells = 0;
  double comp_err = 0.0;
  for (int s = 0; s < 50; ++s) {
    const BlobScene scene = gen.scene(gen.integer(1, 6), 5, 8, 8);
    const FeatureMap engine = scene_feature_map(scene, grid);
    const auto comp = composed_opacities(scene, grid);
    for (int h = 0; h < 8; ++h) {
      for (int w = 0; w < 8; ++w) {
        for (std::size_t i = 0; i < scene.blobs.size(); ++i) {
          const double o = oracle_composed(scene, i, grid.at(h, w).x, grid.at(h, w).y);
          comp_err = std::max(comp_err, std::abs(o - comp[i].at(h, w)));
        }
        for (int k = 0; k < 5; ++k) {
          double f = 0.0;
          for (std::size_t i = 0; i < scene.blobs.size(); ++i) f += comp[i].at(h, w) * scene.blobs[i].feature[k];
          ++cells;
          if (f != engine.at(h, w, k)) ++mismatches;
        }
      }
    }
  }
  return {mismatches == 0 && comp_err <= 1e-12,
          fmt("%zu/%zu entries differ bitwise; composed opacity vs oracle %.3g", mismatches, cells, comp_err)};
}

Outcome zero_init() {
  int mismatches = 0, runs = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    HarnessConfig cfg;
    cfg.seed = seed;
    HarnessState state = HarnessState::init(cfg);
    const HarnessBatch batch = make_synthetic_batch(state, 8, seed + 7);
    const LatentTensor bg = background_prediction(batch.x0, batch.t, state);
    for (double omega : {0.0, 0.3, 1.0}) {
      state.omega = omega;
      ++runs;
      if (!(fused_prediction(batch.x0, batch.x1, batch.t, state) == bg)) ++mismatches;
    }
  }
  return {mismatches == 0, fmt("%d/%d (seed, omega) pairs differ bitwise", mismatches, runs)};
}

Outcome gradient_check() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t params = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    HarnessConfig cfg;
    cfg.seed = seed;
    HarnessState state = HarnessState::init(cfg);
    randomize_gates(state, seed + 100);
    const HarnessBatch batch = make_synthetic_batch(state, 8, seed + 200);
    const GradCheckReport r = grad_check(state, batch, 1e-6, 0.8, ParamScope::kAll);
    worst = std::max(worst, r.max_rel_error);
    params = parameter_refs(state).size();
  }
  const double dt = seconds_since(t0);
  return {worst <= 1e-4 && dt < 60.0,
          fmt("%zu params x 3 seeds on 8x8, max rel err %.3g (tol 1e-4), %.2f s (limit 60 s)", params, worst, dt)};
}

Outcome loss_decomposition() {
  double worst = 0.0;
  int changed = 0;
  Gen gen(1007);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    HarnessConfig cfg;
    cfg.seed = seed;
    HarnessState state = HarnessState::init(cfg);
    randomize_gates(state, seed);
    const HarnessBatch batch = make_synthetic_batch(state, 8, seed + 50);
    for (double lambda : {0.6, 0.8, 1.0}) {
      const LossBreakdown l = loss_total(batch, state, lambda);
      worst = std::max(worst, std::abs(l.total - (l.denoise + lambda * l.identity)));
    }
    const LatentTensor fused = fused_prediction(batch.x0, batch.x1, batch.t, state);
    const LatentTensor fg = fg_features(batch.x1, batch.t, state).prediction;
    LatentTensor perturbed = fg;
    for (int c = 0; c < fg.channels; ++c) {
      for (int h = 0; h < fg.height; ++h) {
        for (int w = 0; w < fg.width; ++w) {
          if (batch.m1.at(h, w) == 0.0) perturbed.at(c, h, w) += gen.normal() * 10.0;
        }
      }
    }
    const double before = loss_from_predictions(batch.eps, fused, fg, batch.m1, 1.0).identity;
    const double after = loss_from_predictions(batch.eps, fused, perturbed, batch.m1, 1.0).identity;
    if (before != after) ++changed;
  }
  return {worst <= 1e-12 && changed == 0,
          fmt("max decomposition err %.3g (tol 1e-12); %d/5 identity losses moved off-mask", worst, changed)};
}

Outcome lambda_endpoints() {
  bool ok = true;
  for (int total : {1, 10, 1000, 200000}) {
    ok = ok && lambda_schedule(0, total) == 1.0 && lambda_schedule(total, total) == 0.6;
  }
  return {ok, fmt("start %.17g, end %.17g", lambda_schedule(0, 1000), lambda_schedule(1000, 1000))};
}

Outcome dropout_rates() {
  ForegroundInputs in;
  in.z1 = LatentTensor::zeros(1, 1, 1);
  in.f1 = FeatureMap::zeros(1, 1, 1);
  const int n = 100000;
  int omega = 0, feat = 0, vae = 0;
  for (int i = 0; i < n; ++i) {
    const DropoutFlags f = apply_dropout(in, static_cast<std::uint64_t>(i), 0.1, 0.1, 0.1).second;
    omega += f.omega;
    feat += f.feature;
    vae += f.vae;
  }
  const double ro = omega / double(n), rf = feat / double(n), rv = vae / double(n);
  const bool ok = std::abs(ro - 0.1) <= 0.01 && std::abs(rf - 0.1) <= 0.01 && std::abs(rv - 0.1) <= 0.01;
  return {ok, fmt("rates omega %.4f, feat %.4f, vae %.4f (0.1 +/- 0.01)", ro, rf, rv)};
}

Outcome curation_corpus_verdicts() {
  const auto corpus = curation_corpus();
  int wrong = 0;
  std::string first;
  for (const auto& c : corpus) {
    const CurationResult r = curate_record(c.image, c.mask, c.rules);
    const std::string got = std::holds_alternative<BlobRecord>(r) ? "accept" : std::get<Rejection>(r).reason;
    if (got != c.expected) {
      if (first.empty()) first = "; first miss: " + c.name + " got " + got;
      ++wrong;
    }
  }
  return {wrong == 0 && corpus.size() == 30,
          fmt("%zu cases, %d wrong", corpus.size(), wrong) + first};
}

Outcome fit_round_trip() {
  Gen gen(1011);
  const int n = 512;
  double axis = 0.0, center = 0.0, angle = 0.0, gmse = 0.0;
  for (int i = 0; i < 30; ++i) {
    const double a = gen.uniform(40, 200), b = gen.uniform(25, a * 0.8);
    const double cx = gen.uniform(a + 10, n - a - 10), cy = gen.uniform(a + 10, n - a - 10);
    const double theta = gen.uniform(0, kPi);
    const BinaryMask mask = rasterize_ellipse(n, n, cx, cy, a, b, theta);
    const BlobEllipse fit = fit_ellipse_to_mask(mask);
    axis = std::max({axis, rel_err(fit.a(), a / n), rel_err(fit.b(), b / n)});
    center = std::max({center, rel_err(fit.cx(), (cx + 0.5) / n), rel_err(fit.cy(), (cy + 0.5) / n)});
    angle = std::max(angle, angle_dist(fit.theta(), theta) * 180.0 / kPi);
    const BlobEllipse gt((cx + 0.5) / n, (cy + 0.5) / n, a / n, b / n, theta);
    gmse = std::max(gmse, grounding_mse(mask, gt).value_or(1.0));
  }
  const bool ok = axis <= 0.02 && center <= 0.02 && angle <= 2.0 && gmse <= 1e-3;
  return {ok, fmt("30 ellipses at 512^2: axis %.3g, center %.3g, angle %.3g deg, grounding_mse %.3g",
                  axis, center, angle, gmse)};
}

Outcome psnr_closed_form() {
  Raster a = Raster::zeros(64, 64, 3), b = a;
  for (auto& p : b.pixels) p = 10;
  const double v = psnr(a, b);
  return {std::abs(v - 28.13) <= 0.01, fmt("%.4f dB (28.13 +/- 0.01)", v)};
}

Outcome service_determinism() {
  TempDir dir;
  TestServer server(dir.path());
  Gen gen(1013);
  server.store().create(gen.scene(3, 4, 64, 64), "s");
  auto cli = server.client();

  int identical = 0;
  const char* queries[] = {"kind=opacity&w=64&h=64", "kind=composed&w=48&h=32&format=raw",
                           "kind=mask&w=64&h=64", "kind=feature-preview&w=32&h=32&p=0.9"};
  for (const char* q : queries) {
    const auto r1 = cli.Get(std::string("/scenes/s/render?") + q);
    const auto r2 = cli.Get(std::string("/scenes/s/render?") + q);
    if (r1 && r2 && r1->status == 200 && r1->body == r2->body) ++identical;
  }

  std::atomic<int> accepted{0}, conflicts{0}, failed{0};
  {
    std::vector<std::jthread> threads;
    for (int t = 0; t < 10; ++t) {
      threads.emplace_back([&, t] {
        auto c = server.client();
        for (int i = 0; i < 10; ++i) {
          const nlohmann::json op = {{"kind", "translate"}, {"target_id", "b" + std::to_string(t % 3)},
                                     {"dx", 1e-4}, {"dy", -1e-4}};
          httplib::Headers h;
          if ((t + i) % 4 == 0) h.emplace("If-Match", "1");
          const auto r = c.Post("/scenes/s/edit", h, op.dump(), "application/json");
          if (r && r->status == 200) ++accepted;
          else if (r && r->status == 409) ++conflicts;
          else ++failed;
        }
      });
    }
  }
  const auto final = cli.Get("/scenes/s");
  const std::uint64_t revision = final ? nlohmann::json::parse(final->body).at("revision").get<std::uint64_t>() : 0;
  const bool ok = identical == 4 && failed == 0 && revision == 1u + static_cast<unsigned>(accepted.load());
  return {ok, fmt("%d/4 renders byte-identical; 100 edits: %d accepted, %d stale, %d failed; final revision %llu "
                  "(creation + accepted)",
                  identical, accepted.load(), conflicts.load(), failed.load(),
                  static_cast<unsigned long long>(revision))};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"conversion-round-trip", conversion_round_trip},
      {"opacity-center-value", opacity_center},
      {"composition-identity", composition_identity},
      {"splatting-oracle", splat_oracle},
      {"zero-init-equivalence", zero_init},
      {"gradient-check", gradient_check},
      {"loss-decomposition-mask-annihilation", loss_decomposition},
      {"lambda-schedule-endpoints", lambda_endpoints},
      {"dropout-rates", dropout_rates},
      {"curation-rules", curation_corpus_verdicts},
      {"fit-round-trip", fit_round_trip},
      {"psnr-closed-form", psnr_closed_form},
      {"service-determinism", service_determinism},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu criteria, %d failed\n", criteria.size(), failures);
  return failures == 0 ? 0 : 1;
}
