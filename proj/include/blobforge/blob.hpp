#pragma once

// Blob parameterizations: an oriented ellipse (cx, cy, a, b, theta) and the
// equivalent bivariate Gaussian (mu, sigma), linked through a chi-square
// confidence level. All coordinates are normalized to the unit canvas.

#include <json.hpp>

#include "blobforge/errors.hpp"

namespace blobforge {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Vec2&, const Vec2&) = default;
};

// General 2x2 matrix, row-major. Symmetry is not enforced.
struct Mat2 {
  double xx = 0.0;
  double xy = 0.0;
  double yx = 0.0;
  double yy = 0.0;

  static Mat2 symmetric(double sxx, double sxy, double syy) {
    return {sxx, sxy, sxy, syy};
  }
  static Mat2 diag(double a, double b) { return {a, 0.0, 0.0, b}; }

  double det() const { return xx * yy - xy * yx; }
  double trace() const { return xx + yy; }

  friend bool operator==(const Mat2&, const Mat2&) = default;
};

// Eigenvalues of a symmetric 2x2 matrix (uses the symmetric part of m),
// largest first, together with the orientation of the major eigenvector in
// [0, pi). Orientation is 0 when the eigenvalues tie.
struct SymEigen2 {
  double major = 0.0;
  double minor = 0.0;
  double angle = 0.0;
};
SymEigen2 eigen_sym2(const Mat2& m);

// Probability mass inside a confidence ellipse. Always in the open (0, 1).
class ConfidenceLevel {
 public:
  explicit ConfidenceLevel(double p);

  // Confidence level whose 2-DoF chi-square quantile equals q (q > 0).
  static ConfidenceLevel from_quantile(double q);

  double p() const { return p_; }

 private:
  double p_;
};

inline constexpr double kDefaultConfidence = 0.95;
inline const ConfidenceLevel kDefaultLevel{kDefaultConfidence};

// Exact 2-DoF chi-square quantile: -2 ln(1 - p).
double chi2_quantile_2dof(ConfidenceLevel p);

// Folds an angle into [0, pi).
double fold_angle(double theta);

// Oriented ellipse. Construction validates axes and folds theta into [0, pi).
// The axes are stored as given; canonical() orders them (a >= b).
class BlobEllipse {
 public:
  BlobEllipse(double cx, double cy, double a, double b, double theta);

  double cx() const { return cx_; }
  double cy() const { return cy_; }
  double a() const { return a_; }
  double b() const { return b_; }
  double theta() const { return theta_; }
  Vec2 center() const { return {cx_, cy_}; }

  // a >= b with theta attached to the major axis; theta = 0 for circles.
  BlobEllipse canonical() const;

  friend bool operator==(const BlobEllipse&, const BlobEllipse&) = default;

 private:
  double cx_;
  double cy_;
  double a_;
  double b_;
  double theta_;
};

struct BlobGaussian {
  Vec2 mu;
  Mat2 sigma;

  friend bool operator==(const BlobGaussian&, const BlobGaussian&) = default;
};

BlobGaussian ellipse_to_gaussian(const BlobEllipse& e,
                                 ConfidenceLevel p = kDefaultLevel);

// Throws DegeneracyError unless sigma is symmetric positive definite.
BlobEllipse gaussian_to_ellipse(const BlobGaussian& g,
                                ConfidenceLevel p = kDefaultLevel);

inline constexpr double kDefaultMinEigenvalue = 1e-5;
inline constexpr double kSymmetryTolerance = 1e-12;

// Rejects asymmetric ("asymmetric"), non-finite ("non-finite") and
// ill-conditioned ("ill-conditioned") covariances.
Verdict validate_gaussian(const BlobGaussian& g,
                          double min_eig = kDefaultMinEigenvalue);

// JSON: {"cx","cy","a","b","theta"} and {"mu":[x,y],"sigma":[[..],[..]]}.
void to_json(nlohmann::json& j, const BlobEllipse& e);
BlobEllipse ellipse_from_json(const nlohmann::json& j);
void to_json(nlohmann::json& j, const BlobGaussian& g);
BlobGaussian gaussian_from_json(const nlohmann::json& j);

}  // namespace blobforge
