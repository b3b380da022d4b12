#include "blobforge/harness.hpp"

#include <algorithm>
#include <cmath>

#include "blobforge/edit.hpp"
#include "blobforge/io.hpp"
#include "blobforge/random.hpp"

namespace blobforge {

namespace fs = std::filesystem;

// ---- Tensors and in-context inputs ----------------------------------------

LatentTensor LatentTensor::zeros(int channels, int height, int width) {
  return LatentTensor{channels, height, width,
                      std::vector<double>(static_cast<std::size_t>(channels) *
                                              static_cast<std::size_t>(height) *
                                              static_cast<std::size_t>(width),
                                          0.0)};
}

LatentTensor InContextInput::half(Half which) const {
  const int hw = layout.half_width;
  const int offset = which == Half::kCondition ? 0 : hw;
  LatentTensor out = LatentTensor::zeros(values.channels, values.height, hw);
  for (int c = 0; c < values.channels; ++c) {
    for (int h = 0; h < values.height; ++h) {
      for (int w = 0; w < hw; ++w) out.at(c, h, w) = values.at(c, h, w + offset);
    }
  }
  return out;
}

LatentTensor InContextInput::group(const std::string& name, Half which) const {
  const auto it = std::find_if(layout.groups.begin(), layout.groups.end(),
                               [&](const ChannelGroup& g) { return g.name == name; });
  if (it == layout.groups.end()) throw NotFoundError("no channel group '" + name + "'");
  const LatentTensor full = half(which);
  LatentTensor out = LatentTensor::zeros(it->count, full.height, full.width);
  std::copy_n(full.values.begin() + static_cast<std::ptrdiff_t>(it->begin * full.plane()),
              out.values.size(), out.values.begin());
  return out;
}

LatentTensor tensor_from_field(const FieldMap& f) {
  return LatentTensor{1, f.height, f.width, f.values};
}

LatentTensor tensor_from_features(const FeatureMap& f) {
  LatentTensor out = LatentTensor::zeros(f.depth, f.height, f.width);
  for (int h = 0; h < f.height; ++h) {
    for (int w = 0; w < f.width; ++w) {
      for (int k = 0; k < f.depth; ++k) out.at(k, h, w) = f.at(h, w, k);
    }
  }
  return out;
}

namespace {

struct NamedTensor {
  std::string name;
  const LatentTensor* cond;
  const LatentTensor* noisy;
};

InContextInput concat_in_context(const std::vector<NamedTensor>& parts) {
  const LatentTensor& first = *parts.front().cond;
  const int h = first.height;
  const int w = first.width;
  int channels = 0;
  InContextInput out;
  out.layout.half_width = w;
  for (const auto& p : parts) {
    if (p.cond->height != h || p.cond->width != w || !p.cond->same_shape(*p.noisy)) {
      throw ShapeError("in-context part '" + p.name + "' has mismatched spatial dims");
    }
    out.layout.groups.push_back({p.name, channels, p.cond->channels});
    channels += p.cond->channels;
  }
  out.values = LatentTensor::zeros(channels, h, 2 * w);
  for (const auto& g : out.layout.groups) {
    const auto& part = *std::find_if(parts.begin(), parts.end(),
                                     [&](const NamedTensor& p) { return p.name == g.name; });
    for (int c = 0; c < g.count; ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          out.values.at(g.begin + c, y, x) = part.cond->at(c, y, x);
          out.values.at(g.begin + c, y, x + w) = part.noisy->at(c, y, x);
        }
      }
    }
  }
  return out;
}

}  // namespace

InContextInput build_fg_input(const LatentTensor& z1, const FieldMap& oc1,
                              const FeatureMap& f1, const LatentTensor& zt1) {
  if (!z1.same_shape(zt1)) throw ShapeError("z1 and zt1 shapes differ");
  const LatentTensor oc = tensor_from_field(oc1);
  const LatentTensor feat = tensor_from_features(f1);
  return concat_in_context(
      {{"latent", &z1, &zt1}, {"opacity", &oc, &oc}, {"feature", &feat, &feat}});
}

InContextInput build_bg_input(const LatentTensor& z0, const FieldMap& oc0,
                              const LatentTensor& zt) {
  if (!z0.same_shape(zt)) throw ShapeError("z0 and zt shapes differ");
  const LatentTensor oc = tensor_from_field(oc0);
  return concat_in_context({{"latent", &z0, &zt}, {"opacity", &oc, &oc}});
}

// ---- Diffusion forward process --------------------------------------------

DiffusionSchedule::DiffusionSchedule(std::vector<double> alpha_bar)
    : alpha_bar_(std::move(alpha_bar)) {
  if (alpha_bar_.empty()) throw DomainError("schedule needs at least one step");
  for (std::size_t i = 0; i < alpha_bar_.size(); ++i) {
    const double a = alpha_bar_[i];
    if (!(a > 0.0 && a <= 1.0)) throw DomainError("alpha_bar must lie in (0, 1]");
    if (i > 0 && !(a < alpha_bar_[i - 1])) {
      throw DomainError("alpha_bar must strictly decrease");
    }
  }
}

DiffusionSchedule DiffusionSchedule::linear(int steps) {
  if (steps < 1) throw DomainError("schedule needs at least one step");
  std::vector<double> a(static_cast<std::size_t>(steps));
  for (int t = 1; t <= steps; ++t) a[t - 1] = 1.0 - static_cast<double>(t - 1) / steps;
  return DiffusionSchedule(std::move(a));
}

double DiffusionSchedule::alpha_bar(int t) const {
  if (t < 1 || t > steps()) {
    throw DomainError("timestep " + std::to_string(t) + " outside [1, " +
                      std::to_string(steps()) + "]");
  }
  return alpha_bar_[static_cast<std::size_t>(t - 1)];
}

LatentTensor diffuse_forward(const LatentTensor& z0, int t, const LatentTensor& eps,
                             const DiffusionSchedule& schedule) {
  if (!z0.same_shape(eps)) throw ShapeError("latent and noise shapes differ");
  const double ab = schedule.alpha_bar(t);
  const double signal = std::sqrt(ab);
  const double noise = std::sqrt(1.0 - ab);
  LatentTensor out = z0;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = signal * z0.values[i] + noise * eps.values[i];
  }
  return out;
}

// ---- Harness state --------------------------------------------------------

ChannelMap ChannelMap::zeros(int rows, int cols) {
  return ChannelMap{rows, cols,
                    std::vector<double>(static_cast<std::size_t>(rows) *
                                            static_cast<std::size_t>(cols),
                                        0.0)};
}

namespace {

ChannelMap random_map(Rng& rng, int rows, int cols) {
  ChannelMap m = ChannelMap::zeros(rows, cols);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
  for (double& v : m.weight) v = scale * rng.normal();
  return m;
}

std::vector<double> random_vector(Rng& rng, int n, double scale) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = scale * rng.normal();
  return v;
}

BranchLevel random_level(Rng& rng, int in_channels, int hidden, int latent) {
  BranchLevel level;
  level.map = random_map(rng, hidden, in_channels);
  level.bias = random_vector(rng, hidden, 0.1);
  level.time = random_vector(rng, hidden, 0.1);
  level.head = random_map(rng, latent, hidden);
  return level;
}

}  // namespace

HarnessState HarnessState::init(const HarnessConfig& config) {
  if (config.levels < 1 || config.hidden < 1 || config.latent_channels < 1 ||
      config.feature_dim < 0) {
    throw DomainError("harness sizes must be positive");
  }
  HarnessState s;
  s.config = config;
  s.omega = config.omega;
  s.schedule = DiffusionSchedule::linear(config.steps);
  Rng rng(config.seed);
  const int c = config.latent_channels;
  for (int i = 0; i < config.levels; ++i) {
    const int in_fg = i == 0 ? c + 1 + config.feature_dim : config.hidden;
    s.fg.push_back(random_level(rng, in_fg, config.hidden, c));
  }
  for (int i = 0; i < config.levels; ++i) {
    const int in_bg = i == 0 ? c + 1 : config.hidden;
    s.bg.push_back(random_level(rng, in_bg, config.hidden, c));
  }
  for (int i = 0; i < config.levels; ++i) {
    s.gates.push_back(ChannelMap::zeros(config.hidden, config.hidden));
  }
  return s;
}

void randomize_gates(HarnessState& state, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (auto& gate : state.gates) {
    for (double& v : gate.weight) v = scale * rng.normal();
  }
}

std::vector<ParamRef> parameter_refs(HarnessState& state, ParamScope scope) {
  std::vector<ParamRef> refs;
  auto push = [&](const std::string& group, std::vector<double>& values) {
    for (double& v : values) refs.push_back({group, &v});
  };
  refs.push_back({"omega", &state.omega});
  for (std::size_t i = 0; i < state.gates.size(); ++i) {
    push("gate[" + std::to_string(i) + "]", state.gates[i].weight);
  }
  if (scope == ParamScope::kFusion) return refs;
  for (const char* branch : {"fg", "bg"}) {
    auto& levels = std::string(branch) == "fg" ? state.fg : state.bg;
    for (std::size_t i = 0; i < levels.size(); ++i) {
      const std::string suffix = "[" + std::to_string(i) + "]";
      push(std::string(branch) + ".map" + suffix, levels[i].map.weight);
      push(std::string(branch) + ".bias" + suffix, levels[i].bias);
      push(std::string(branch) + ".time" + suffix, levels[i].time);
      push(std::string(branch) + ".head" + suffix, levels[i].head.weight);
    }
  }
  return refs;
}

// ---- Forward and backward building blocks ---------------------------------

namespace {

LatentTensor apply_map(const ChannelMap& m, const LatentTensor& x) {
  if (x.channels != m.cols) throw ShapeError("channel map input width mismatch");
  LatentTensor y = LatentTensor::zeros(m.rows, x.height, x.width);
  const std::size_t plane = x.plane();
  for (int r = 0; r < m.rows; ++r) {
    double* out = &y.values[static_cast<std::size_t>(r) * plane];
    for (int c = 0; c < m.cols; ++c) {
      const double w = m.weight[static_cast<std::size_t>(r) * m.cols + c];
      const double* in = &x.values[static_cast<std::size_t>(c) * plane];
      for (std::size_t p = 0; p < plane; ++p) out[p] += w * in[p];
    }
  }
  return y;
}

// y = M^T g, and dM += g (x) x summed over pixels.
LatentTensor map_backward(const ChannelMap& m, const LatentTensor& x, const LatentTensor& g,
                          ChannelMap* dm) {
  LatentTensor dx = LatentTensor::zeros(m.cols, x.height, x.width);
  const std::size_t plane = x.plane();
  for (int r = 0; r < m.rows; ++r) {
    const double* gr = &g.values[static_cast<std::size_t>(r) * plane];
    for (int c = 0; c < m.cols; ++c) {
      const std::size_t wi = static_cast<std::size_t>(r) * m.cols + c;
      const double w = m.weight[wi];
      const double* xc = &x.values[static_cast<std::size_t>(c) * plane];
      double* dxc = &dx.values[static_cast<std::size_t>(c) * plane];
      double acc = 0.0;
      for (std::size_t p = 0; p < plane; ++p) {
        dxc[p] += w * gr[p];
        acc += gr[p] * xc[p];
      }
      if (dm) dm->weight[wi] += acc;
    }
  }
  return dx;
}

void add_bias_time(LatentTensor& y, const BranchLevel& level, double s) {
  const std::size_t plane = y.plane();
  for (int r = 0; r < y.channels; ++r) {
    const double shift = level.bias[r] + s * level.time[r];
    double* out = &y.values[static_cast<std::size_t>(r) * plane];
    for (std::size_t p = 0; p < plane; ++p) out[p] += shift;
  }
}

LatentTensor avg_pool2(const LatentTensor& x) {
  if (x.height % 2 != 0 || x.width % 2 != 0) {
    throw ShapeError("average pooling needs even spatial dims");
  }
  LatentTensor y = LatentTensor::zeros(x.channels, x.height / 2, x.width / 2);
  for (int c = 0; c < x.channels; ++c) {
    for (int h = 0; h < y.height; ++h) {
      for (int w = 0; w < y.width; ++w) {
        y.at(c, h, w) = 0.25 * (x.at(c, 2 * h, 2 * w) + x.at(c, 2 * h, 2 * w + 1) +
                                x.at(c, 2 * h + 1, 2 * w) + x.at(c, 2 * h + 1, 2 * w + 1));
      }
    }
  }
  return y;
}

LatentTensor avg_pool2_backward(const LatentTensor& g, int height, int width) {
  LatentTensor dx = LatentTensor::zeros(g.channels, height, width);
  for (int c = 0; c < g.channels; ++c) {
    for (int h = 0; h < height; ++h) {
      for (int w = 0; w < width; ++w) dx.at(c, h, w) = 0.25 * g.at(c, h / 2, w / 2);
    }
  }
  return dx;
}

// Nearest upsampling by `factor`, accumulated into `out`.
void upsample_add(const LatentTensor& x, int factor, LatentTensor& out) {
  for (int c = 0; c < out.channels; ++c) {
    for (int h = 0; h < out.height; ++h) {
      for (int w = 0; w < out.width; ++w) out.at(c, h, w) += x.at(c, h / factor, w / factor);
    }
  }
}

// Transpose of nearest upsampling: block sums.
LatentTensor upsample_backward(const LatentTensor& g, int factor) {
  LatentTensor out = LatentTensor::zeros(g.channels, g.height / factor, g.width / factor);
  for (int c = 0; c < g.channels; ++c) {
    for (int h = 0; h < g.height; ++h) {
      for (int w = 0; w < g.width; ++w) out.at(c, h / factor, w / factor) += g.at(c, h, w);
    }
  }
  return out;
}

LatentTensor right_half(const LatentTensor& x) {
  const int hw = x.width / 2;
  LatentTensor out = LatentTensor::zeros(x.channels, x.height, hw);
  for (int c = 0; c < x.channels; ++c) {
    for (int h = 0; h < x.height; ++h) {
      for (int w = 0; w < hw; ++w) out.at(c, h, w) = x.at(c, h, w + hw);
    }
  }
  return out;
}

LatentTensor embed_right(const LatentTensor& x) {
  LatentTensor out = LatentTensor::zeros(x.channels, x.height, 2 * x.width);
  for (int c = 0; c < x.channels; ++c) {
    for (int h = 0; h < x.height; ++h) {
      for (int w = 0; w < x.width; ++w) out.at(c, h, w + x.width) = x.at(c, h, w);
    }
  }
  return out;
}

double sum_channel(const LatentTensor& x, int c) {
  double acc = 0.0;
  const std::size_t plane = x.plane();
  for (std::size_t p = 0; p < plane; ++p) acc += x.values[static_cast<std::size_t>(c) * plane + p];
  return acc;
}

void check_levels(const LatentTensor& x, int levels) {
  const int factor = 1 << (levels - 1);
  if (x.height % factor != 0 || x.width % factor != 0) {
    throw ShapeError("spatial dims must be divisible by 2^(levels-1)");
  }
}

double time_scale(int t, const HarnessState& s) {
  s.schedule.alpha_bar(t);  // range check
  return static_cast<double>(t) / s.schedule.steps();
}

struct BranchTrace {
  std::vector<LatentTensor> inputs;  // input to each level's map
  std::vector<LatentTensor> pre;     // map output + bias + time
  std::vector<LatentTensor> fusion;  // gate output Z(a) (background only)
  std::vector<LatentTensor> post;    // features passed on and decoded
  LatentTensor full;                 // decoded, full in-context width
};

BranchTrace run_branch(const std::vector<BranchLevel>& levels, const LatentTensor& input,
                       double s, const std::vector<LatentTensor>* fg_post,
                       const std::vector<ChannelMap>* gates, double omega) {
  BranchTrace tr;
  const int latent = levels.front().head.rows;
  tr.full = LatentTensor::zeros(latent, input.height, input.width);
  for (std::size_t i = 0; i < levels.size(); ++i) {
    tr.inputs.push_back(i == 0 ? input : avg_pool2(tr.post.back()));
    LatentTensor y = apply_map(levels[i].map, tr.inputs.back());
    add_bias_time(y, levels[i], s);
    tr.pre.push_back(y);
    if (fg_post && gates) {
      LatentTensor z = apply_map((*gates)[i], (*fg_post)[i]);
      for (std::size_t k = 0; k < y.values.size(); ++k) y.values[k] += omega * z.values[k];
      tr.fusion.push_back(std::move(z));
    }
    tr.post.push_back(std::move(y));
    upsample_add(apply_map(levels[i].head, tr.post.back()), 1 << i, tr.full);
  }
  return tr;
}

void check_inputs(const InContextInput& x, int expected_channels, const HarnessState& s) {
  if (x.values.channels != expected_channels) {
    throw ShapeError("in-context input has " + std::to_string(x.values.channels) +
                     " channels, expected " + std::to_string(expected_channels));
  }
  check_levels(x.values, s.config.levels);
}

BranchTrace trace_fg(const InContextInput& x1, int t, const HarnessState& s) {
  check_inputs(x1, s.config.latent_channels + 1 + s.config.feature_dim, s);
  return run_branch(s.fg, x1.values, time_scale(t, s), nullptr, nullptr, 0.0);
}

BranchTrace trace_bg(const InContextInput& x0, int t, const HarnessState& s,
                     const BranchTrace* fg) {
  check_inputs(x0, s.config.latent_channels + 1, s);
  return run_branch(s.bg, x0.values, time_scale(t, s), fg ? &fg->post : nullptr,
                    fg ? &s.gates : nullptr, s.omega);
}

}  // namespace

BranchOutput fg_features(const InContextInput& x1, int t, const HarnessState& state) {
  BranchTrace tr = trace_fg(x1, t, state);
  return BranchOutput{std::move(tr.post), right_half(tr.full)};
}

LatentTensor background_prediction(const InContextInput& x0, int t,
                                   const HarnessState& state) {
  return right_half(trace_bg(x0, t, state, nullptr).full);
}

LatentTensor fused_prediction(const InContextInput& x0, const InContextInput& x1, int t,
                              const HarnessState& state) {
  const BranchTrace fg = trace_fg(x1, t, state);
  if (x0.values.height != x1.values.height || x0.values.width != x1.values.width) {
    throw ShapeError("foreground and background inputs differ in spatial dims");
  }
  return right_half(trace_bg(x0, t, state, &fg).full);
}

// ---- Losses ---------------------------------------------------------------

LossBreakdown loss_from_predictions(const LatentTensor& eps, const LatentTensor& fused,
                                    const LatentTensor& fg_prediction, const FieldMap& m1,
                                    double lambda_id) {
  if (!eps.same_shape(fused) || !eps.same_shape(fg_prediction)) {
    throw ShapeError("prediction and noise shapes differ");
  }
  if (m1.width != eps.width || m1.height != eps.height) {
    throw ShapeError("foreground mask does not match the latent grid");
  }
  const double n = static_cast<double>(eps.values.size());
  const std::size_t plane = eps.plane();
  double denoise = 0.0;
  double identity = 0.0;
  for (std::size_t i = 0; i < eps.values.size(); ++i) {
    const double r = eps.values[i] - fused.values[i];
    denoise += r * r;
    const double rm = m1.values[i % plane] * (eps.values[i] - fg_prediction.values[i]);
    identity += rm * rm;
  }
  LossBreakdown out;
  out.denoise = denoise / n;
  out.identity = identity / n;
  out.lambda_id = lambda_id;
  out.total = out.denoise + lambda_id * out.identity;
  return out;
}

LossBreakdown loss_total(const HarnessBatch& batch, const HarnessState& state,
                         double lambda_id) {
  const BranchTrace fg = trace_fg(batch.x1, batch.t, state);
  const BranchTrace bg = trace_bg(batch.x0, batch.t, state, &fg);
  return loss_from_predictions(batch.eps, right_half(bg.full), right_half(fg.full), batch.m1,
                               lambda_id);
}

namespace {

// Back-propagates upstream gradients of the decoded full-width outputs of both
// branches into a zero-initialized gradient state with the same shapes.
void backward(const HarnessState& s, const BranchTrace& fg, const BranchTrace& bg,
              const LatentTensor& grad_bg_full, const LatentTensor& grad_fg_full,
              double time, HarnessState& grad) {
  const std::size_t levels = s.bg.size();
  std::vector<LatentTensor> grad_fg_post(levels);

  // Background branch, deepest level first.
  LatentTensor carry;
  for (std::size_t i = levels; i-- > 0;) {
    const LatentTensor g_out = upsample_backward(grad_bg_full, 1 << i);
    LatentTensor de = map_backward(s.bg[i].head, bg.post[i], g_out, &grad.bg[i].head);
    if (i + 1 < levels) {
      for (std::size_t k = 0; k < de.values.size(); ++k) de.values[k] += carry.values[k];
    }
    // Fusion: e = g + omega * Z a.
    const LatentTensor& z = bg.fusion[i];
    double domega = 0.0;
    for (std::size_t k = 0; k < de.values.size(); ++k) domega += de.values[k] * z.values[k];
    grad.omega += domega;
    LatentTensor scaled = de;
    for (double& v : scaled.values) v *= s.omega;
    grad_fg_post[i] = map_backward(s.gates[i], fg.post[i], scaled, &grad.gates[i]);

    for (int r = 0; r < de.channels; ++r) {
      const double sum = sum_channel(de, r);
      grad.bg[i].bias[r] += sum;
      grad.bg[i].time[r] += time * sum;
    }
    const LatentTensor dinput = map_backward(s.bg[i].map, bg.inputs[i], de, &grad.bg[i].map);
    if (i > 0) carry = avg_pool2_backward(dinput, bg.post[i - 1].height, bg.post[i - 1].width);
  }

  // Foreground branch.
  for (std::size_t i = levels; i-- > 0;) {
    const LatentTensor g_out = upsample_backward(grad_fg_full, 1 << i);
    LatentTensor da = map_backward(s.fg[i].head, fg.post[i], g_out, &grad.fg[i].head);
    for (std::size_t k = 0; k < da.values.size(); ++k) {
      da.values[k] += grad_fg_post[i].values[k];
      if (i + 1 < levels) da.values[k] += carry.values[k];
    }
    for (int r = 0; r < da.channels; ++r) {
      const double sum = sum_channel(da, r);
      grad.fg[i].bias[r] += sum;
      grad.fg[i].time[r] += time * sum;
    }
    const LatentTensor dinput = map_backward(s.fg[i].map, fg.inputs[i], da, &grad.fg[i].map);
    if (i > 0) carry = avg_pool2_backward(dinput, fg.post[i - 1].height, fg.post[i - 1].width);
  }
}

HarnessState zero_like(const HarnessState& s) {
  HarnessState g = s;
  for (ParamRef& ref : parameter_refs(g)) *ref.value = 0.0;
  return g;
}

std::vector<double> flatten(HarnessState& g) {
  std::vector<double> out;
  for (const ParamRef& ref : parameter_refs(g)) out.push_back(*ref.value);
  return out;
}

}  // namespace

LossGradient loss_gradient(const HarnessBatch& batch, const HarnessState& state,
                           double lambda_id) {
  const BranchTrace fg = trace_fg(batch.x1, batch.t, state);
  const BranchTrace bg = trace_bg(batch.x0, batch.t, state, &fg);
  const LatentTensor fused = right_half(bg.full);
  const LatentTensor fg_pred = right_half(fg.full);

  LossGradient out;
  out.loss = loss_from_predictions(batch.eps, fused, fg_pred, batch.m1, lambda_id);

  const double n = static_cast<double>(batch.eps.values.size());
  const std::size_t plane = batch.eps.plane();
  LatentTensor d_fused = batch.eps;
  LatentTensor d_fg = batch.eps;
  for (std::size_t i = 0; i < batch.eps.values.size(); ++i) {
    d_fused.values[i] = -2.0 * (batch.eps.values[i] - fused.values[i]) / n;
    const double m = batch.m1.values[i % plane];
    d_fg.values[i] = -2.0 * m * m * (batch.eps.values[i] - fg_pred.values[i]) / n;
  }
  const LatentTensor zero_full =
      LatentTensor::zeros(batch.eps.channels, batch.eps.height, 2 * batch.eps.width);
  const double time = time_scale(batch.t, state);

  HarnessState g_denoise = zero_like(state);
  backward(state, fg, bg, embed_right(d_fused), zero_full, time, g_denoise);
  HarnessState g_identity = zero_like(state);
  backward(state, fg, bg, zero_full, embed_right(d_fg), time, g_identity);

  out.denoise = flatten(g_denoise);
  out.identity = flatten(g_identity);
  out.total.resize(out.denoise.size());
  for (std::size_t i = 0; i < out.total.size(); ++i) {
    out.total[i] = out.denoise[i] + lambda_id * out.identity[i];
  }
  return out;
}

double lambda_schedule(int step, int total_steps, double start, double end) {
  if (total_steps < 0 || step < 0 || step > total_steps) {
    throw DomainError("lambda schedule step " + std::to_string(step) + " outside [0, " +
                      std::to_string(total_steps) + "]");
  }
  if (total_steps == 0) return start;
  return std::lerp(start, end, static_cast<double>(step) / total_steps);
}

// ---- Random dropout -------------------------------------------------------

std::pair<ForegroundInputs, DropoutFlags> apply_dropout(const ForegroundInputs& in,
                                                        std::uint64_t seed, double p_omega,
                                                        double p_feat, double p_vae) {
  for (double p : {p_omega, p_feat, p_vae}) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("dropout probabilities must lie in [0, 1]");
  }
  Rng rng(seed);
  DropoutFlags flags;
  flags.omega = rng.bernoulli(p_omega);
  flags.feature = rng.bernoulli(p_feat);
  flags.vae = rng.bernoulli(p_vae);

  ForegroundInputs out = in;
  if (flags.omega) out.omega = 0.0;
  if (flags.feature) std::fill(out.f1.values.begin(), out.f1.values.end(), 0.0);
  if (flags.vae) std::fill(out.z1.values.begin(), out.z1.values.end(), 0.0);
  return {std::move(out), flags};
}

// ---- Gradient check -------------------------------------------------------

GradCheckReport grad_check(const HarnessState& state, const HarnessBatch& batch,
                           double eps_fd, double lambda_id, ParamScope scope) {
  const LossGradient analytic = loss_gradient(batch, state, lambda_id);
  if (!std::isfinite(analytic.loss.total)) throw DomainError("loss is not finite");

  HarnessState probe = state;
  const std::vector<ParamRef> refs = parameter_refs(probe, scope);
  GradCheckReport report;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    double& v = *refs[i].value;
    const double saved = v;
    v = saved + eps_fd;
    const double up = loss_total(batch, probe, lambda_id).total;
    v = saved - eps_fd;
    const double down = loss_total(batch, probe, lambda_id).total;
    v = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) throw DomainError("loss is not finite");

    const double numeric = (up - down) / (2.0 * eps_fd);
    const double a = analytic.total[i];
    const double rel =
        std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kGradRelFloor});

    if (report.rows.empty() || report.rows.back().group != refs[i].group) {
      report.rows.push_back({refs[i].group, 0, 0.0, 0.0});
    }
    GradCheckRow& row = report.rows.back();
    ++row.count;
    row.max_rel_error = std::max(row.max_rel_error, rel);
    row.max_abs_grad = std::max(row.max_abs_grad, std::abs(a));
    report.max_rel_error = std::max(report.max_rel_error, rel);
  }
  return report;
}

// ---- Fixtures -------------------------------------------------------------

HarnessBatch make_synthetic_batch(const HarnessState& state, int size, std::uint64_t seed) {
  const int c = state.config.latent_channels;
  const int d = state.config.feature_dim;
  Rng rng(seed);

  // Foreground blob over a full-canvas background element.
  std::vector<double> feature(static_cast<std::size_t>(d));
  for (double& f : feature) f = rng.normal();
  const BlobEllipse e(rng.uniform(0.35, 0.65), rng.uniform(0.35, 0.65), rng.uniform(0.25, 0.4),
                      rng.uniform(0.15, 0.25), rng.uniform(0.0, 3.14159));
  BlobScene scene;
  scene.width = size;
  scene.height = size;
  scene.blobs.push_back(BlobEntry::make("fg", "foreground", feature, e));

  const CoordGrid grid(size, size);
  const FieldMap oc1 = composed_opacities(scene, grid).front();
  const FeatureMap f1 = scene_feature_map(scene, grid);
  FieldMap oc0 = oc1;
  for (double& v : oc0.values) v = 1.0 - v;

  const BlobGaussian target = scene.blobs.front().gaussian;
  PerturbConfig perturb;
  perturb.max_center_shift = 0.15;
  perturb.seed = seed;
  const BlobGaussian source = sample_pre_edit_blob(target, perturb);
  const FieldMap m1 = blob_mask(target, grid);
  const FieldMap dual = mask_union(blob_mask(source, grid), m1);

  LatentTensor z = LatentTensor::zeros(c, size, size);
  LatentTensor eps = z;
  for (double& v : z.values) v = rng.normal();
  for (double& v : eps.values) v = rng.normal();
  LatentTensor z1 = z;
  LatentTensor z0 = z;
  const std::size_t plane = z.plane();
  for (std::size_t i = 0; i < z.values.size(); ++i) {
    z1.values[i] *= m1.values[i % plane];
    z0.values[i] *= 1.0 - dual.values[i % plane];
  }
  const int t = 1 + static_cast<int>(rng.uniform() * state.schedule.steps());

  HarnessBatch batch;
  batch.t = std::min(t, state.schedule.steps());
  batch.eps = eps;
  batch.m1 = m1;
  batch.x0 = build_bg_input(z0, oc0, diffuse_forward(z, batch.t, eps, state.schedule));
  batch.x1 = build_fg_input(z1, oc1, f1, diffuse_forward(z1, batch.t, eps, state.schedule));
  return batch;
}

namespace {

nlohmann::json write_tensor(const fs::path& dir, const std::string& name,
                            const LatentTensor& x) {
  nlohmann::json files = nlohmann::json::array();
  for (int ch = 0; ch < x.channels; ++ch) {
    FieldMap plane = FieldMap::filled(x.width, x.height, FieldKind::kLatent, 0.0);
    std::copy_n(x.values.begin() + static_cast<std::ptrdiff_t>(ch * x.plane()), x.plane(),
                plane.values.begin());
    const std::string file = name + "." + std::to_string(ch) + ".blobf";
    write_field(dir / file, plane);
    files.push_back(file);
  }
  return {{"channels", x.channels}, {"height", x.height}, {"width", x.width}, {"files", files}};
}

LatentTensor read_tensor(const fs::path& dir, const nlohmann::json& j) {
  LatentTensor x = LatentTensor::zeros(j.at("channels").get<int>(), j.at("height").get<int>(),
                                       j.at("width").get<int>());
  const auto files = j.at("files").get<std::vector<std::string>>();
  if (static_cast<int>(files.size()) != x.channels) throw IoError("tensor channel count mismatch");
  for (int ch = 0; ch < x.channels; ++ch) {
    const FieldMap plane = read_field(dir / files[static_cast<std::size_t>(ch)]);
    if (plane.width != x.width || plane.height != x.height) throw IoError("tensor plane shape mismatch");
    std::copy(plane.values.begin(), plane.values.end(),
              x.values.begin() + static_cast<std::ptrdiff_t>(ch * x.plane()));
  }
  return x;
}

nlohmann::json layout_json(const InContextLayout& l) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : l.groups) groups.push_back({{"name", g.name}, {"begin", g.begin}, {"count", g.count}});
  return {{"half_width", l.half_width}, {"groups", groups}};
}

InContextLayout layout_from_json(const nlohmann::json& j) {
  InContextLayout l;
  l.half_width = j.at("half_width").get<int>();
  for (const auto& g : j.at("groups")) {
    l.groups.push_back({g.at("name").get<std::string>(), g.at("begin").get<int>(),
                        g.at("count").get<int>()});
  }
  return l;
}

}  // namespace

void write_batch(const fs::path& dir, const HarnessBatch& batch) {
  fs::create_directories(dir);
  FieldMap m1 = batch.m1;
  write_field(dir / "m1.blobf", m1);
  const nlohmann::json manifest = {
      {"t", batch.t},
      {"x0", {{"tensor", write_tensor(dir, "x0", batch.x0.values)}, {"layout", layout_json(batch.x0.layout)}}},
      {"x1", {{"tensor", write_tensor(dir, "x1", batch.x1.values)}, {"layout", layout_json(batch.x1.layout)}}},
      {"eps", write_tensor(dir, "eps", batch.eps)},
      {"m1", "m1.blobf"}};
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

HarnessBatch read_batch(const fs::path& dir) {
  try {
    const nlohmann::json j = nlohmann::json::parse(read_file(dir / "manifest.json"));
    HarnessBatch b;
    b.t = j.at("t").get<int>();
    b.x0 = {read_tensor(dir, j.at("x0").at("tensor")), layout_from_json(j.at("x0").at("layout"))};
    b.x1 = {read_tensor(dir, j.at("x1").at("tensor")), layout_from_json(j.at("x1").at("layout"))};
    b.eps = read_tensor(dir, j.at("eps"));
    b.m1 = read_field(dir / j.at("m1").get<std::string>());
    return b;
  } catch (const nlohmann::json::exception& ex) {
    throw IoError(std::string("malformed batch manifest: ") + ex.what());
  }
}

// ---- Self-check -----------------------------------------------------------

nlohmann::json run_harness_check(std::uint64_t seed, int size, int levels) {
  HarnessConfig cfg;
  cfg.seed = seed;
  cfg.levels = levels;
  const HarnessState fresh = HarnessState::init(cfg);
  const HarnessBatch batch = make_synthetic_batch(fresh, size, seed + 1);

  nlohmann::json checks = nlohmann::json::array();
  auto record = [&](const std::string& name, bool pass, nlohmann::json detail = {}) {
    checks.push_back({{"name", name}, {"pass", pass}, {"detail", std::move(detail)}});
  };

  {
    const LatentTensor bg = background_prediction(batch.x0, batch.t, fresh);
    bool equal = true;
    for (double omega : {0.0, 0.3, 1.0}) {
      HarnessState s = fresh;
      s.omega = omega;
      equal = equal && fused_prediction(batch.x0, batch.x1, batch.t, s) == bg;
    }
    record("zero_init_equivalence", equal);
  }

  HarnessState trained = fresh;
  randomize_gates(trained, seed + 2);

  {
    HarnessState s = trained;
    s.omega = 0.0;
    record("omega_zero_equivalence", fused_prediction(batch.x0, batch.x1, batch.t, s) ==
                                         background_prediction(batch.x0, batch.t, s));
  }
  {
    std::vector<LatentTensor> preds;
    for (double omega : {0.0, 0.5, 1.0}) {
      HarnessState s = trained;
      s.omega = omega;
      preds.push_back(fused_prediction(batch.x0, batch.x1, batch.t, s));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < preds[0].values.size(); ++i) {
      const double mid = 0.5 * (preds[0].values[i] + preds[2].values[i]);
      worst = std::max(worst, std::abs(preds[1].values[i] - mid));
    }
    record("affine_in_omega", worst <= 1e-12, {{"max_deviation", worst}});
  }
  {
    const double lambda = lambda_schedule(3, 10);
    const LossBreakdown l = loss_total(batch, trained, lambda);
    const double residual = std::abs(l.total - (l.denoise + lambda * l.identity));
    record("loss_decomposition", residual <= 1e-12, {{"residual", residual}});
  }
  {
    const BranchOutput fg = fg_features(batch.x1, batch.t, trained);
    const LatentTensor fused = fused_prediction(batch.x0, batch.x1, batch.t, trained);
    LatentTensor perturbed = fg.prediction;
    Rng rng(seed + 3);
    const std::size_t plane = perturbed.plane();
    for (std::size_t i = 0; i < perturbed.values.size(); ++i) {
      if (batch.m1.values[i % plane] == 0.0) perturbed.values[i] += rng.normal();
    }
    const double before =
        loss_from_predictions(batch.eps, fused, fg.prediction, batch.m1, 1.0).identity;
    const double after = loss_from_predictions(batch.eps, fused, perturbed, batch.m1, 1.0).identity;
    record("mask_annihilation", before == after, {{"delta", after - before}});
  }
  record("lambda_endpoints",
         lambda_schedule(0, 1000) == cfg.lambda_start && lambda_schedule(1000, 1000) == cfg.lambda_end);
  {
    ForegroundInputs in{batch.x1.group("latent", Half::kCondition),
                        FeatureMap::zeros(size, size, cfg.feature_dim), 1.0};
    const auto a = apply_dropout(in, seed, 0.5, 0.5, 0.5);
    const auto b = apply_dropout(in, seed, 0.5, 0.5, 0.5);
    record("dropout_determinism", a.second == b.second && a.first.z1 == b.first.z1 &&
                                      a.first.f1.values == b.first.f1.values &&
                                      a.first.omega == b.first.omega);
  }

  const GradCheckReport fd = grad_check(trained, batch, 1e-5, lambda_schedule(3, 10));
  nlohmann::json table = nlohmann::json::array();
  for (const auto& row : fd.rows) {
    table.push_back({{"group", row.group},
                     {"count", row.count},
                     {"max_rel_error", row.max_rel_error},
                     {"max_abs_grad", row.max_abs_grad}});
  }
  record("gradient_check", fd.max_rel_error <= 1e-4, {{"max_rel_error", fd.max_rel_error}});

  bool all = true;
  for (const auto& c : checks) all = all && c.at("pass").get<bool>();
  return {{"seed", seed},
          {"size", size},
          {"levels", levels},
          {"checks", checks},
          {"finite_difference", table},
          {"pass", all}};
}

}  // namespace blobforge
