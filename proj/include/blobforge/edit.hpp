#pragma once

// Element-level scene edits and generation of self-supervised training
// samples (perturbed source blob, dual mask, augmented foreground).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "blobforge/curation.hpp"
#include "blobforge/field.hpp"
#include "blobforge/raster.hpp"
#include "blobforge/scene.hpp"

namespace blobforge {

// ---- Edit operations ------------------------------------------------------

struct AddBlob {
  BlobEntry entry;
  std::optional<std::size_t> index;  // depth slot; frontmost when absent
};
struct RemoveBlob {};
struct TranslateBlob {
  double dx = 0.0;
  double dy = 0.0;
};
struct ScaleBlob {
  double sa = 1.0;
  double sb = 1.0;
};
struct RotateBlob {
  double dtheta = 0.0;
};
struct ReplaceBlob {
  std::optional<std::vector<double>> feature;
  std::optional<BlobEllipse> geometry;
  std::optional<std::string> label;
};

enum class EditKind { kAdd, kRemove, kTranslate, kScale, kRotate, kReplace };

class EditOp {
 public:
  using Payload = std::variant<AddBlob, RemoveBlob, TranslateBlob, ScaleBlob,
                               RotateBlob, ReplaceBlob>;

  static EditOp add(BlobEntry entry, std::optional<std::size_t> index = {});
  static EditOp remove(std::string target);
  static EditOp translate(std::string target, double dx, double dy);
  static EditOp scale(std::string target, double sa, double sb);
  static EditOp rotate(std::string target, double dtheta);
  static EditOp replace(std::string target, ReplaceBlob payload);

  EditKind kind() const { return static_cast<EditKind>(payload_.index()); }
  const std::string& target_id() const { return target_; }
  const Payload& payload() const { return payload_; }

 private:
  EditOp(std::string target, Payload payload);

  std::string target_;
  Payload payload_;
};

std::string_view to_string(EditKind kind);

// {"kind":"translate","target_id":"..","dx":..,"dy":..}, "scale" with
// "sa"/"sb", "rotate" with "dtheta", "remove", "replace" with optional
// "feature"/"ellipse"/"label", "add" with "blob" and optional "index".
// Throws ValidationError on malformed input.
EditOp edit_op_from_json(const nlohmann::json& j, ConfidenceLevel p);
void to_json(nlohmann::json& j, const EditOp& op);

// Returns the edited scene; every non-target entry is copied unchanged.
// Throws NotFoundError for an unknown target and ValidationError for edits
// that would produce an invalid blob or scene.
BlobScene apply_edit(const BlobScene& scene, const EditOp& op);

// ---- Pre-edit perturbation ------------------------------------------------

struct PerturbConfig {
  double max_center_shift = 0.25;  // radius of the uniform disc
  double scale_lo = 0.7;
  double scale_hi = 1.3;
  double max_rotation = 0.5235987755982988;  // pi / 6
  std::uint64_t seed = 0;
  double min_cov_eig = kDefaultMinEigenvalue;

  static PerturbConfig none(std::uint64_t seed = 0) {
    return {0.0, 1.0, 1.0, 0.0, seed, kDefaultMinEigenvalue};
  }
  void validate() const;
};

void to_json(nlohmann::json& j, const PerturbConfig& c);
PerturbConfig perturb_config_from_json(const nlohmann::json& j);

inline constexpr int kMaxPerturbAttempts = 32;

// Random pre-edit blob: center moved uniformly within a disc, axes scaled
// independently, orientation shifted uniformly. Returns g unchanged when the
// configuration allows no perturbation. Throws DegeneracyError if no valid
// blob is found within kMaxPerturbAttempts draws.
BlobGaussian sample_pre_edit_blob(const BlobGaussian& g, const PerturbConfig& cfg,
                                  ConfidenceLevel p = kDefaultLevel);

FieldMap dual_mask(const BlobGaussian& source, const BlobGaussian& target,
                   const CoordGrid& grid, ConfidenceLevel p = kDefaultLevel);

// ---- Foreground augmentation ----------------------------------------------

// Transforms run in a fixed order: color jitter, scale, rotate, perspective,
// random erase. Each fires with its probability; magnitudes are drawn from
// the given ranges.
struct AugmentConfig {
  double jitter_prob = 0.0;
  double brightness = 0.2;  // factor drawn from [1 - b, 1 + b]
  double contrast = 0.2;
  double saturation = 0.2;

  double scale_prob = 0.0;
  double scale_lo = 0.8;
  double scale_hi = 1.2;

  double rotate_prob = 0.0;
  double rotate_min_deg = -30.0;
  double rotate_max_deg = 30.0;

  double perspective_prob = 0.0;
  double perspective_distortion = 0.15;  // corner offset, fraction of size

  double erase_prob = 0.0;
  double erase_area_lo = 0.02;
  double erase_area_hi = 0.2;

  static AugmentConfig none() { return {}; }
  static AugmentConfig standard();
  void validate() const;
};

void to_json(nlohmann::json& j, const AugmentConfig& c);
AugmentConfig augment_config_from_json(const nlohmann::json& j);

struct AugmentStep {
  std::string name;
  nlohmann::json params;

  friend bool operator==(const AugmentStep&, const AugmentStep&) = default;
};
using AugmentationLog = std::vector<AugmentStep>;

nlohmann::json log_to_json(const AugmentationLog& log);

std::pair<Raster, AugmentationLog> augment_foreground(const Raster& raster,
                                                      std::uint64_t seed,
                                                      const AugmentConfig& cfg);

// Re-applies the logged transforms; augment_foreground's output is
// reproduced exactly from its own log. Unknown steps (e.g. "crop") are
// skipped.
Raster replay_augmentation(const Raster& raster, const AugmentationLog& log);

// ---- Training samples -----------------------------------------------------

struct TrainingSample {
  Raster foreground;
  Raster background;
  BlobGaussian source;
  BlobGaussian target;
  FieldMap dual_mask;
  FieldMap fg_mask;
  AugmentationLog augmentation_log;
  std::string caption;
  std::uint64_t perturb_seed = 0;
  std::uint64_t augment_seed = 0;
  double confidence = kDefaultConfidence;
};

struct SampleRequest {
  PerturbConfig perturb;
  AugmentConfig augment;
  std::uint64_t augment_seed = 0;
  ConfidenceLevel level = kDefaultLevel;
  CurationRules rules;
  std::string caption;
};

using SampleResult = std::variant<TrainingSample, Rejection>;

// Treats `image` as the post-edit state: the target blob is fitted from
// `fg_mask` through the curation pipeline, a source blob is sampled around
// it, the foreground element is cropped then augmented and the union of both
// blob masks is zeroed out of the background.
SampleResult build_training_sample(const Raster& image, const BinaryMask& fg_mask,
                                   const SampleRequest& req);

// Checks the structural invariants of a sample; returns an empty string when
// they hold, otherwise a description of the first violation.
std::string check_sample_invariants(const TrainingSample& s);

// fg.png, bg.png, dual_mask.blobf, fg_mask.blobf, blobs.json,
// augmentation_log.json, caption.txt.
std::vector<std::pair<std::string, std::string>> sample_files(const TrainingSample& s);
void write_sample(const std::filesystem::path& dir, const TrainingSample& s);

}  // namespace blobforge
