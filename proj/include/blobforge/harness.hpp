#pragma once

// Desk-scale dual-branch harness.
//
// A deterministic toy backbone stands in for the diffusion UNet: each branch
// is a stack of per-pixel linear maps with 2x2 average pooling between
// levels, and every level is decoded back to latent channels by a linear head
// followed by nearest upsampling. Foreground features are injected into the
// background branch level by level through zero-initialized linear gates
// scaled by the fusion weight omega. The whole model is differentiated by
// hand; grad_check compares against central finite differences.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "blobforge/field.hpp"

namespace blobforge {

// ---- Tensors and in-context inputs ----------------------------------------

struct LatentTensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;  // channel-major: [c][h][w]

  static LatentTensor zeros(int channels, int height, int width);

  std::size_t index(int c, int h, int w) const {
    return (static_cast<std::size_t>(c) * static_cast<std::size_t>(height) +
            static_cast<std::size_t>(h)) *
               static_cast<std::size_t>(width) +
           static_cast<std::size_t>(w);
  }
  double at(int c, int h, int w) const { return values[index(c, h, w)]; }
  double& at(int c, int h, int w) { return values[index(c, h, w)]; }
  std::size_t plane() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  bool same_shape(const LatentTensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  friend bool operator==(const LatentTensor&, const LatentTensor&) = default;
};

struct ChannelGroup {
  std::string name;
  int begin = 0;
  int count = 0;

  friend bool operator==(const ChannelGroup&, const ChannelGroup&) = default;
};

// Channel groups are shared by both halves; the condition half occupies
// columns [0, half_width) and the noisy half [half_width, 2 * half_width).
struct InContextLayout {
  int half_width = 0;
  std::vector<ChannelGroup> groups;

  friend bool operator==(const InContextLayout&, const InContextLayout&) = default;
};

enum class Half { kCondition, kNoisy };

struct InContextInput {
  LatentTensor values;
  InContextLayout layout;

  LatentTensor half(Half which) const;
  // One channel group of one half, e.g. group("feature", Half::kCondition).
  LatentTensor group(const std::string& name, Half which) const;
};

LatentTensor tensor_from_field(const FieldMap& f);
LatentTensor tensor_from_features(const FeatureMap& f);

// Channel stacks (z1, oc1, F1) and (zt1, oc1, F1), concatenated along width.
InContextInput build_fg_input(const LatentTensor& z1, const FieldMap& oc1,
                              const FeatureMap& f1, const LatentTensor& zt1);
// Channel stacks (z0, oc0) and (zt, oc0), concatenated along width.
InContextInput build_bg_input(const LatentTensor& z0, const FieldMap& oc0,
                              const LatentTensor& zt);

// ---- Diffusion forward process --------------------------------------------

class DiffusionSchedule {
 public:
  // alpha_bar[t - 1] for t = 1..T; must lie in (0, 1] and strictly decrease.
  explicit DiffusionSchedule(std::vector<double> alpha_bar);
  // alpha_bar_t = 1 - (t - 1) / T.
  static DiffusionSchedule linear(int steps);

  int steps() const { return static_cast<int>(alpha_bar_.size()); }
  double alpha_bar(int t) const;

 private:
  std::vector<double> alpha_bar_;
};

LatentTensor diffuse_forward(const LatentTensor& z0, int t, const LatentTensor& eps,
                             const DiffusionSchedule& schedule);

// ---- Harness state --------------------------------------------------------

// Per-pixel linear map from `cols` input channels to `rows` output channels.
struct ChannelMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> weight;  // row-major

  static ChannelMap zeros(int rows, int cols);
};

struct BranchLevel {
  ChannelMap map;
  std::vector<double> bias;
  std::vector<double> time;  // scaled by t / T
  ChannelMap head;           // hidden -> latent channels
};

struct HarnessConfig {
  int latent_channels = 4;
  int feature_dim = 8;
  int hidden = 8;
  int levels = 2;
  int steps = 10;
  std::uint64_t seed = 0;
  double omega = 1.0;
  double p_omega = 0.1;
  double p_feat = 0.1;
  double p_vae = 0.1;
  double lambda_start = 1.0;
  double lambda_end = 0.6;
};

struct HarnessState {
  HarnessConfig config;
  std::vector<BranchLevel> fg;
  std::vector<BranchLevel> bg;
  std::vector<ChannelMap> gates;  // hidden x hidden, zero at initialization
  double omega = 1.0;
  DiffusionSchedule schedule = DiffusionSchedule::linear(10);

  // Branch weights drawn from a seeded normal; gates exactly zero.
  static HarnessState init(const HarnessConfig& config);
};

// Fills every gate with seeded normal weights, emulating a trained state.
void randomize_gates(HarnessState& state, std::uint64_t seed, double scale = 0.5);

// Flat view of the trainable scalars, in a fixed order: omega, gates, then
// foreground and background level parameters.
struct ParamRef {
  std::string group;
  double* value;
};
enum class ParamScope { kFusion, kAll };
std::vector<ParamRef> parameter_refs(HarnessState& state,
                                     ParamScope scope = ParamScope::kAll);

// ---- Forward passes -------------------------------------------------------

struct BranchOutput {
  std::vector<LatentTensor> levels;  // level i: hidden x h/2^i x 2w/2^i
  LatentTensor prediction;           // noisy-half latent channels, c x h x w
};

BranchOutput fg_features(const InContextInput& x1, int t, const HarnessState& state);
LatentTensor background_prediction(const InContextInput& x0, int t,
                                   const HarnessState& state);
LatentTensor fused_prediction(const InContextInput& x0, const InContextInput& x1, int t,
                              const HarnessState& state);

// ---- Losses ---------------------------------------------------------------

struct HarnessBatch {
  InContextInput x0;
  InContextInput x1;
  int t = 1;
  LatentTensor eps;
  FieldMap m1;  // binary foreground mask, h x w
};

struct LossBreakdown {
  double total = 0.0;
  double denoise = 0.0;
  double identity = 0.0;
  double lambda_id = 0.0;
};

// denoise = mean (eps - fused)^2; identity = sum (M1 * (eps - fg))^2 divided
// by the full element count; total = denoise + lambda_id * identity.
LossBreakdown loss_total(const HarnessBatch& batch, const HarnessState& state,
                         double lambda_id);
// Same, from an explicit foreground prediction.
LossBreakdown loss_from_predictions(const LatentTensor& eps, const LatentTensor& fused,
                                    const LatentTensor& fg_prediction,
                                    const FieldMap& m1, double lambda_id);

// Gradients aligned with parameter_refs(state, ParamScope::kAll).
struct LossGradient {
  LossBreakdown loss;
  std::vector<double> denoise;
  std::vector<double> identity;
  std::vector<double> total;
};
LossGradient loss_gradient(const HarnessBatch& batch, const HarnessState& state,
                           double lambda_id);

// Linear decay from start (step 0) to end (step == total_steps).
double lambda_schedule(int step, int total_steps, double start = 1.0, double end = 0.6);

// ---- Random dropout -------------------------------------------------------

struct ForegroundInputs {
  LatentTensor z1;
  FeatureMap f1;
  double omega = 1.0;
};

struct DropoutFlags {
  bool omega = false;
  bool feature = false;
  bool vae = false;

  friend bool operator==(const DropoutFlags&, const DropoutFlags&) = default;
};

// Independently: omega <- 0 with p_omega, F1 <- 0 with p_feat, z1 <- 0 with
// p_vae. Deterministic per seed.
std::pair<ForegroundInputs, DropoutFlags> apply_dropout(const ForegroundInputs& in,
                                                        std::uint64_t seed, double p_omega,
                                                        double p_feat, double p_vae);

// ---- Gradient check -------------------------------------------------------

struct GradCheckRow {
  std::string group;
  std::size_t count = 0;
  double max_rel_error = 0.0;
  double max_abs_grad = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<GradCheckRow> rows;
};

// Relative discrepancy |a - n| / max(|a|, |n|, floor).
inline constexpr double kGradRelFloor = 1e-5;

// Analytic vs central finite-difference gradients of the total loss.
GradCheckReport grad_check(const HarnessState& state, const HarnessBatch& batch,
                           double eps_fd, double lambda_id,
                           ParamScope scope = ParamScope::kAll);

// ---- Fixtures and self-check ----------------------------------------------

// Batch derived from a random one-blob scene on a size x size grid: the
// foreground opacity and splatted features come from the field engine, the
// background opacity is the complement left by the foreground blob, and the
// latents are seeded noise masked by the foreground and dual masks.
HarnessBatch make_synthetic_batch(const HarnessState& state, int size, std::uint64_t seed);

// Directory of BLOBF1 channel planes plus manifest.json.
void write_batch(const std::filesystem::path& dir, const HarnessBatch& batch);
HarnessBatch read_batch(const std::filesystem::path& dir);

// Runs every harness invariant and the finite-difference table; the JSON
// carries one entry per check with a boolean "pass".
nlohmann::json run_harness_check(std::uint64_t seed, int size, int levels);

}  // namespace blobforge
