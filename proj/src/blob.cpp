#include "blobforge/blob.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace blobforge {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTieTolerance = 1e-12;

double require_number(const nlohmann::json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || !j.at(key).is_number()) {
    throw ValidationError(std::string("expected numeric field '") + key + "'");
  }
  return j.at(key).get<double>();
}

}  // namespace

SymEigen2 eigen_sym2(const Mat2& m) {
  const double off = 0.5 * (m.xy + m.yx);
  const double mean = 0.5 * (m.xx + m.yy);
  const double half_diff = 0.5 * (m.xx - m.yy);
  const double radius = std::hypot(half_diff, off);

  SymEigen2 out;
  out.major = mean + radius;
  // The smaller root via the determinant avoids cancellation for
  // elongated covariances.
  const double det = m.xx * m.yy - off * off;
  out.minor = out.major > 0.0 ? det / out.major : mean - radius;
  if (2.0 * radius <= kTieTolerance * std::abs(out.major)) {
    out.angle = 0.0;
  } else {
    out.angle = fold_angle(0.5 * std::atan2(2.0 * off, m.xx - m.yy));
  }
  return out;
}

ConfidenceLevel::ConfidenceLevel(double p) : p_(p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("confidence level must lie in (0, 1), got " +
                      std::to_string(p));
  }
}

ConfidenceLevel ConfidenceLevel::from_quantile(double q) {
  if (!(q > 0.0) || !std::isfinite(q)) {
    throw DomainError("chi-square quantile must be positive and finite");
  }
  return ConfidenceLevel(-std::expm1(-0.5 * q));
}

double chi2_quantile_2dof(ConfidenceLevel p) {
  return -2.0 * std::log1p(-p.p());
}

double fold_angle(double theta) {
  if (!std::isfinite(theta)) {
    throw DomainError("orientation must be finite");
  }
  double t = std::fmod(theta, kPi);
  if (t < 0.0) t += kPi;
  if (t >= kPi) t = 0.0;
  return t;
}

BlobEllipse::BlobEllipse(double cx, double cy, double a, double b,
                         double theta)
    : cx_(cx), cy_(cy), a_(a), b_(b), theta_(0.0) {
  if (!std::isfinite(cx) || !std::isfinite(cy)) {
    throw ValidationError("ellipse center must be finite");
  }
  if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b)) {
    throw ValidationError("ellipse semi-axes must be positive and finite");
  }
  if (!std::isfinite(theta)) {
    throw ValidationError("ellipse orientation must be finite");
  }
  theta_ = fold_angle(theta);
}

BlobEllipse BlobEllipse::canonical() const {
  double major = a_;
  double minor = b_;
  double theta = theta_;
  if (minor > major) {
    std::swap(major, minor);
    theta = fold_angle(theta + 0.5 * kPi);
  }
  if (major - minor <= kTieTolerance * major) theta = 0.0;
  return BlobEllipse(cx_, cy_, major, minor, theta);
}

BlobGaussian ellipse_to_gaussian(const BlobEllipse& e, ConfidenceLevel p) {
  const double q = chi2_quantile_2dof(p);
  const double c = std::cos(e.theta());
  const double s = std::sin(e.theta());
  const double a2 = e.a() * e.a();
  const double b2 = e.b() * e.b();
  // R diag(a^2, b^2) R^T, expanded.
  const double sxx = (a2 * c * c + b2 * s * s) / q;
  const double syy = (a2 * s * s + b2 * c * c) / q;
  const double sxy = ((a2 - b2) * c * s) / q;
  return {{e.cx(), e.cy()}, Mat2::symmetric(sxx, sxy, syy)};
}

BlobEllipse gaussian_to_ellipse(const BlobGaussian& g, ConfidenceLevel p) {
  const Mat2& m = g.sigma;
  if (!std::isfinite(m.xx) || !std::isfinite(m.xy) || !std::isfinite(m.yx) ||
      !std::isfinite(m.yy)) {
    throw DegeneracyError("covariance has non-finite entries");
  }
  if (std::abs(m.xy - m.yx) > kSymmetryTolerance) {
    throw DegeneracyError("covariance is not symmetric");
  }
  const SymEigen2 eig = eigen_sym2(m);
  if (!(eig.minor > 0.0)) {
    throw DegeneracyError("covariance is not positive definite");
  }
  const double q = chi2_quantile_2dof(p);
  return BlobEllipse(g.mu.x, g.mu.y, std::sqrt(eig.major * q),
                     std::sqrt(eig.minor * q), eig.angle);
}

Verdict validate_gaussian(const BlobGaussian& g, double min_eig) {
  const Mat2& m = g.sigma;
  if (!std::isfinite(g.mu.x) || !std::isfinite(g.mu.y) ||
      !std::isfinite(m.xx) || !std::isfinite(m.xy) || !std::isfinite(m.yx) ||
      !std::isfinite(m.yy)) {
    return Verdict::reject("non-finite");
  }
  if (std::abs(m.xy - m.yx) > kSymmetryTolerance) {
    return Verdict::reject("asymmetric");
  }
  if (eigen_sym2(m).minor < min_eig) {
    return Verdict::reject("ill-conditioned");
  }
  return Verdict::accept();
}

void to_json(nlohmann::json& j, const BlobEllipse& e) {
  j = nlohmann::json{{"cx", e.cx()},
                     {"cy", e.cy()},
                     {"a", e.a()},
                     {"b", e.b()},
                     {"theta", e.theta()}};
}

BlobEllipse ellipse_from_json(const nlohmann::json& j) {
  return BlobEllipse(require_number(j, "cx"), require_number(j, "cy"),
                     require_number(j, "a"), require_number(j, "b"),
                     require_number(j, "theta"));
}

void to_json(nlohmann::json& j, const BlobGaussian& g) {
  j = nlohmann::json{
      {"mu", {g.mu.x, g.mu.y}},
      {"sigma", {{g.sigma.xx, g.sigma.xy}, {g.sigma.yx, g.sigma.yy}}}};
}

BlobGaussian gaussian_from_json(const nlohmann::json& j) {
  try {
    const auto& mu = j.at("mu");
    const auto& sigma = j.at("sigma");
    if (mu.size() != 2 || sigma.size() != 2 || sigma.at(0).size() != 2 ||
        sigma.at(1).size() != 2) {
      throw ValidationError("gaussian needs mu[2] and sigma[2][2]");
    }
    BlobGaussian g;
    g.mu = {mu.at(0).get<double>(), mu.at(1).get<double>()};
    g.sigma = {sigma.at(0).at(0).get<double>(), sigma.at(0).at(1).get<double>(),
               sigma.at(1).at(0).get<double>(),
               sigma.at(1).at(1).get<double>()};
    return g;
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("malformed gaussian: ") + ex.what());
  }
}

}  // namespace blobforge
