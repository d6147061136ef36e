#pragma once

// Evolving model spaces: conformally flat R^d (g_t = c(t)^2 delta), static
// flat R^d, and the round sphere shrinking under Ricci flow
// (g_t = r(t)^2 g_{S^d}, r(t)^2 = 2(d-1)(T - t)).
//
// Flat points are chart coordinates. Sphere points are ambient vectors in
// R^{d+1} of length r(t); tangent vectors are ambient vectors orthogonal to
// the point, and the ambient Euclidean product restricted to the sphere of
// radius r(t) is exactly g_t.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <variant>

#include <Eigen/Dense>

#include "errors.hpp"
#include "profile.hpp"

namespace evoflow {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class GeometryKind { ConformalFlat, ShrinkingSphere, StaticFlat };

inline const char* to_string(GeometryKind k) {
  switch (k) {
    case GeometryKind::ConformalFlat:
      return "conformal_flat";
    case GeometryKind::ShrinkingSphere:
      return "shrinking_sphere";
    case GeometryKind::StaticFlat:
      return "static_flat";
  }
  return "?";
}

/// Z_t(x) = -lambda(t) x (LinearRadial) or 0.
struct DriftSpec {
  enum class Kind { Zero, LinearRadial };
  Kind kind = Kind::Zero;
  Profile lambda = Profile::constant(0.0);

  static DriftSpec zero() { return {}; }
  static DriftSpec linear_radial(Profile lambda) {
    return {Kind::LinearRadial, std::move(lambda)};
  }
  bool is_zero() const noexcept { return kind == Kind::Zero; }
  double rate(double t) const { return is_zero() ? 0.0 : lambda(t); }
  double rate_integral(double a, double b) const {
    return is_zero() ? 0.0 : lambda.integral(a, b);
  }
};

struct SpacePoint {
  Vector coords;
};

/// Orthonormal frame u_t at a point. Rows of `basis` are the frame vectors
/// in chart (flat) or ambient (sphere) coordinates.
struct FrameState {
  SpacePoint basepoint;
  Matrix basis;
  double time = 0.0;
};

// ---------------------------------------------------------------------------
// Flat family

/// R^d with g_t = c(t)^2 delta. StaticFlat is the special case c = 1.
class FlatModel {
 public:
  FlatModel(GeometryKind kind, int dim, Profile conformal_factor, DriftSpec drift,
            double horizon = std::numeric_limits<double>::infinity())
      : kind_(kind), dim_(dim), c_(std::move(conformal_factor)), drift_(std::move(drift)),
        horizon_(horizon) {
    if (dim < 1) throw DomainError("model dimension must be >= 1");
  }

  GeometryKind kind() const noexcept { return kind_; }
  int dim() const noexcept { return dim_; }
  int ambient_dim() const noexcept { return dim_; }
  double horizon() const noexcept { return horizon_; }
  const Profile& conformal_factor() const noexcept { return c_; }
  const DriftSpec& drift_spec() const noexcept { return drift_; }

  void check_time(double t) const {
    if (!(t < horizon_))
      throw HorizonError("time " + std::to_string(t) + " is not below the horizon " +
                         std::to_string(horizon_));
    if (!(c_(t) > 0.0))
      throw DomainError("conformal factor is not positive at t=" + std::to_string(t));
  }
  void check_point(double, const Vector& x) const {
    if (x.size() != dim_) throw DomainError("point has wrong dimension");
    if (!x.allFinite()) throw DomainError("point has non-finite coordinates");
  }

  /// Length scale c(t).
  double scale(double t) const { return c_(t); }
  /// d/dt log c(t).
  double scale_rate(double t) const { return c_.derivative(t) / c_(t); }

  Vector origin(double) const { return Vector::Zero(dim_); }

  double distance(double t, const Vector& x, const Vector& y) const {
    return c_(t) * (x - y).norm();
  }
  double distance_time_derivative(double t, const Vector& x, const Vector& y) const {
    return scale_rate(t) * distance(t, x, y);
  }
  double origin_distance(double t, const Vector& x) const { return c_(t) * x.norm(); }

  /// Sharp lower bound k(t) of R^Z = Ric - h - grad Z (all scalar here).
  double k(double t) const { return drift_.rate(t) - scale_rate(t); }
  double k_integral(double a, double b) const {
    return drift_.rate_integral(a, b) - (std::log(c_(b)) - std::log(c_(a)));
  }
  double ricci_sup(double) const { return 0.0; }

  Matrix rz_operator(double t) const { return k(t) * Matrix::Identity(dim_, dim_); }
  static constexpr bool kIsotropicRZ = true;

  void drift(double t, const Vector& x, Vector& out) const {
    if (drift_.is_zero())
      out.setZero(dim_);
    else
      out = -drift_.rate(t) * x;
  }
  double drift_norm_at_origin(double) const { return 0.0; }

  /// Exact flow of the drift field over [a, b]: x <- exp(-Lambda(a, b)) x.
  void drift_flow(double a, double b, Vector& x) const {
    if (!drift_.is_zero()) x *= std::exp(-drift_.rate_integral(a, b));
  }

  void exp_map(double, Vector& x, const Vector& v) const { x += v; }
  void check_tangent(double, const Vector&, const Vector& v) const {
    if (v.size() != dim_) throw DomainError("tangent vector has wrong dimension");
  }
  void project_tangent(const Vector&, Vector&) const {}

  /// g_t-inner product of two tangent vectors at x.
  double inner(double t, const Vector&, const Vector& u, const Vector& v) const {
    const double c = c_(t);
    return c * c * u.dot(v);
  }

  /// Canonical orthonormal frame at x.
  Matrix canonical_frame(double t, const Vector&) const {
    return Matrix::Identity(dim_, dim_) / c_(t);
  }

  void repair_frame(double, const Vector&, Matrix&) const {}

  /// Parallel transport along the step x -> y (identity in chart coordinates).
  void transport_frame(const Vector&, const Vector&, Matrix&) const {}
  void transport_vector(double, const Vector&, const Vector&, Vector&) const {}

  /// Analytic vertical correction when the metric moves from t0 to t1.
  void advance_metric(double t0, double t1, Vector&, Matrix& basis) const {
    if (kind_ == GeometryKind::StaticFlat) return;
    basis *= c_(t0) / c_(t1);
  }

  /// Riemannian gradient norm |grad f|_t given the chart gradient.
  double gradient_norm(double t, const Vector&, const Vector& chart_grad) const {
    return chart_grad.norm() / c_(t);
  }

  /// Unit-speed geodesic direction from x toward y (chart components, g-unit).
  Vector direction(double t, const Vector& x, const Vector& y) const {
    const Vector d = y - x;
    const double n = d.norm();
    if (n == 0.0) return Vector::Zero(dim_);
    return d / (n * c_(t));
  }

 private:
  GeometryKind kind_;
  int dim_;
  Profile c_;
  DriftSpec drift_;
  double horizon_;
};

// ---------------------------------------------------------------------------
// Shrinking sphere

class SphereModel {
 public:
  /// Round S^d collapsing at time T under Ricci flow.
  SphereModel(int dim, double collapse_time) : dim_(dim), collapse_(collapse_time) {
    if (dim < 2) throw DomainError("shrinking sphere requires d >= 2");
  }
  static SphereModel from_initial_radius(int dim, double r0) {
    if (!(r0 > 0.0)) throw DomainError("initial radius must be positive");
    return SphereModel(dim, r0 * r0 / (2.0 * (dim - 1)));
  }

  GeometryKind kind() const noexcept { return GeometryKind::ShrinkingSphere; }
  int dim() const noexcept { return dim_; }
  int ambient_dim() const noexcept { return dim_ + 1; }
  double horizon() const noexcept { return collapse_; }
  double collapse_time() const noexcept { return collapse_; }

  double radius_squared(double t) const { return 2.0 * (dim_ - 1) * (collapse_ - t); }
  double radius(double t) const { return std::sqrt(radius_squared(t)); }

  void check_time(double t) const {
    if (!(t < collapse_))
      throw HorizonError("time " + std::to_string(t) + " is not below the collapse time " +
                         std::to_string(collapse_));
  }
  void check_point(double t, const Vector& x) const {
    if (x.size() != dim_ + 1) throw DomainError("sphere point has wrong ambient dimension");
    const double r = radius(t);
    if (!(std::abs(x.norm() - r) <= 1e-9 * r))
      throw DomainError("point is not on the sphere of radius r(t)");
  }

  double scale(double t) const { return radius(t); }
  /// d/dt log r(t) = -(d-1)/r^2.
  double scale_rate(double t) const { return -(dim_ - 1) / radius_squared(t); }

  /// Reference point o: the last ambient axis scaled to r(t).
  Vector origin(double t) const {
    Vector o = Vector::Zero(dim_ + 1);
    o[dim_] = radius(t);
    return o;
  }

  /// Angle between two ambient vectors, stable near 0 and pi.
  static double angle(const Vector& x, const Vector& y) {
    const Vector a = x.normalized();
    const Vector b = y.normalized();
    return 2.0 * std::atan2((a - b).norm(), (a + b).norm());
  }

  double distance(double t, const Vector& x, const Vector& y) const {
    return radius(t) * angle(x, y);
  }
  double origin_distance(double t, const Vector& x) const {
    return distance(t, origin(t), x);
  }
  double distance_time_derivative(double t, const Vector& x, const Vector& y) const {
    return scale_rate(t) * distance(t, x, y);
  }

  /// R^Z = 2 Ric = 2(d-1)/r^2 on the Ricci-flow sphere (h = -Ric, Z = 0).
  double k(double t) const { return 2.0 * (dim_ - 1) / radius_squared(t); }
  double k_integral(double a, double b) const {
    return std::log((collapse_ - a) / (collapse_ - b));
  }
  double ricci_sup(double t) const { return (dim_ - 1) / radius_squared(t); }
  Matrix rz_operator(double t) const { return k(t) * Matrix::Identity(dim_, dim_); }
  static constexpr bool kIsotropicRZ = true;

  void drift(double, const Vector&, Vector& out) const { out.setZero(dim_ + 1); }
  void drift_flow(double, double, Vector&) const {}
  double drift_norm_at_origin(double) const { return 0.0; }

  void check_tangent(double, const Vector& x, const Vector& v) const {
    if (v.size() != dim_ + 1) throw DomainError("tangent vector has wrong dimension");
    const double vn = v.norm();
    if (vn > 0.0 && std::abs(v.dot(x.normalized())) > 1e-8 * std::max(1.0, vn))
      throw DomainError("vector is not tangent to the sphere at the base point");
  }
  void project_tangent(const Vector& x, Vector& v) const {
    const Vector n = x.normalized();
    v -= v.dot(n) * n;
  }

  /// Exact exponential map: rotation by |v|/r in span(x, v).
  void exp_map(double, Vector& x, const Vector& v) const {
    const double r = x.norm();
    const double vn = v.norm();
    if (vn == 0.0) return;
    const double theta = vn / r;
    x = std::cos(theta) * x + (std::sin(theta) * r / vn) * v;
    x *= r / x.norm();
  }

  double inner(double, const Vector&, const Vector& u, const Vector& v) const {
    return u.dot(v);
  }

  /// Deterministic orthonormal tangent frame at x: Gram-Schmidt of the
  /// ambient axes projected on the tangent plane, skipping the most
  /// normal-aligned axis.
  Matrix canonical_frame(double, const Vector& x) const {
    const Vector n = x.normalized();
    Eigen::Index skip = 0;
    n.cwiseAbs().maxCoeff(&skip);
    Matrix basis(dim_, dim_ + 1);
    int row = 0;
    for (int axis = 0; axis <= dim_ && row < dim_; ++axis) {
      if (axis == skip) continue;
      Vector e = Vector::Unit(dim_ + 1, axis);
      e -= e.dot(n) * n;
      for (int j = 0; j < row; ++j) e -= e.dot(basis.row(j).transpose()) * basis.row(j).transpose();
      basis.row(row++) = e.normalized().transpose();
    }
    return basis;
  }

  /// Parallel transport of a tangent vector at x to y along the minimizing
  /// great circle. Antipodal pairs use the plane containing a fixed
  /// reference axis.
  void transport_vector(double, const Vector& x, const Vector& y, Vector& v) const {
    const Vector a = x.normalized();
    const Vector b = y.normalized();
    const double cos_t = std::clamp(a.dot(b), -1.0, 1.0);
    Vector u = b - cos_t * a;
    double un = u.norm();
    if (un < 1e-14) {
      if (cos_t > 0.0) return;  // same point
      u = reference_direction(a);
      un = 1.0;
    }
    u /= un;
    const double theta = angle(a, b);
    const double along = v.dot(u);
    const double normal = v.dot(a);  // zero for tangent v; kept for robustness
    const Vector u_new = std::cos(theta) * u - std::sin(theta) * a;
    const Vector a_new = std::cos(theta) * a + std::sin(theta) * u;
    v += along * (u_new - u) + normal * (a_new - a);
  }

  void transport_frame(const Vector& x, const Vector& y, Matrix& basis) const {
    Vector row(dim_ + 1);
    for (int i = 0; i < basis.rows(); ++i) {
      row = basis.row(i).transpose();
      transport_vector(0.0, x, y, row);
      basis.row(i) = row.transpose();
    }
  }

  /// Projects the rows back onto the tangent plane at x and re-orthonormalizes.
  void repair_frame(double, const Vector& x, Matrix& basis) const {
    const Vector n = x.normalized();
    for (int i = 0; i < basis.rows(); ++i) {
      Vector e = basis.row(i).transpose();
      e -= e.dot(n) * n;
      for (int j = 0; j < i; ++j) e -= e.dot(basis.row(j).transpose()) * basis.row(j).transpose();
      basis.row(i) = e.normalized().transpose();
    }
  }

  /// Radius change between t0 and t1: points are rescaled radially; ambient
  /// unit frames remain g-orthonormal.
  void advance_metric(double t0, double t1, Vector& x, Matrix&) const {
    x *= radius(t1) / radius(t0);
  }

  double gradient_norm(double, const Vector& x, const Vector& ambient_grad) const {
    Vector g = ambient_grad;
    project_tangent(x, g);
    return g.norm();
  }

  Vector direction(double t, const Vector& x, const Vector& y) const {
    const Vector a = x.normalized();
    const Vector b = y.normalized();
    Vector u = b - a.dot(b) * a;
    const double un = u.norm();
    if (un < 1e-14) {
      if (a.dot(b) > 0.0) return Vector::Zero(dim_ + 1);
      return reference_direction(a);
    }
    (void)t;
    return u / un;
  }

 private:
  /// Unit tangent at a used to break the antipodal tie.
  Vector reference_direction(const Vector& a) const {
    for (int axis = 0; axis <= dim_; ++axis) {
      Vector e = Vector::Unit(dim_ + 1, axis);
      e -= e.dot(a) * a;
      if (e.norm() > 1e-6) return e.normalized();
    }
    return Vector::Unit(dim_ + 1, 0);
  }

  int dim_;
  double collapse_;
};

// ---------------------------------------------------------------------------
// Type-erased model

/// An evolving model space. Dispatch to the concrete geometry happens once
/// per operation (or once per path in the simulators) via visit().
class Model {
 public:
  using Variant = std::variant<FlatModel, SphereModel>;

  explicit Model(FlatModel m) : impl_(std::move(m)) {}
  explicit Model(SphereModel m) : impl_(std::move(m)) {}

  static Model static_flat(int dim, DriftSpec drift = DriftSpec::zero()) {
    return Model(FlatModel(GeometryKind::StaticFlat, dim, Profile::constant(1.0),
                           std::move(drift)));
  }
  static Model conformal_flat(int dim, Profile c, DriftSpec drift = DriftSpec::zero(),
                              double horizon = std::numeric_limits<double>::infinity()) {
    return Model(FlatModel(GeometryKind::ConformalFlat, dim, std::move(c), std::move(drift),
                           horizon));
  }
  static Model shrinking_sphere(int dim, double collapse_time) {
    return Model(SphereModel(dim, collapse_time));
  }
  /// Ornstein-Uhlenbeck fixture: static flat R^d with Z = -lambda x.
  static Model ornstein_uhlenbeck(int dim, double lambda) {
    return static_flat(dim, DriftSpec::linear_radial(Profile::constant(lambda)));
  }

  template <class Visitor>
  decltype(auto) visit(Visitor&& v) const {
    return std::visit(std::forward<Visitor>(v), impl_);
  }

  GeometryKind kind() const {
    return visit([](const auto& m) { return m.kind(); });
  }
  int dim() const {
    return visit([](const auto& m) { return m.dim(); });
  }
  int ambient_dim() const {
    return visit([](const auto& m) { return m.ambient_dim(); });
  }
  double horizon() const {
    return visit([](const auto& m) { return m.horizon(); });
  }
  bool is_flat() const { return std::holds_alternative<FlatModel>(impl_); }
  const FlatModel* flat() const { return std::get_if<FlatModel>(&impl_); }
  const SphereModel* sphere() const { return std::get_if<SphereModel>(&impl_); }

  void check_time(double t) const {
    visit([&](const auto& m) { m.check_time(t); });
  }
  void check_point(double t, const SpacePoint& x) const {
    visit([&](const auto& m) {
      m.check_time(t);
      m.check_point(t, x.coords);
    });
  }
  Vector origin(double t) const {
    return visit([&](const auto& m) { return m.origin(t); });
  }
  double k(double t) const {
    return visit([&](const auto& m) { return m.k(t); });
  }
  double k_integral(double a, double b) const {
    return visit([&](const auto& m) { return m.k_integral(a, b); });
  }
  double scale(double t) const {
    return visit([&](const auto& m) { return m.scale(t); });
  }
  double scale_rate(double t) const {
    return visit([&](const auto& m) { return m.scale_rate(t); });
  }
  FrameState canonical_frame(double t, const SpacePoint& x) const {
    return visit([&](const auto& m) {
      return FrameState{x, m.canonical_frame(t, x.coords), t};
    });
  }
  double gradient_norm(double t, const Vector& x, const Vector& grad) const {
    return visit([&](const auto& m) { return m.gradient_norm(t, x, grad); });
  }
  double drift_norm_at_origin(double t) const {
    return visit([&](const auto& m) { return m.drift_norm_at_origin(t); });
  }
  double distance_to_origin(double t, const Vector& x) const {
    return visit([&](const auto& m) { return m.origin_distance(t, x); });
  }

 private:
  Variant impl_;
};

// ---------------------------------------------------------------------------
// Operations

/// Riemannian distance rho_t(x, y).
inline double distance(const Model& model, double t, const SpacePoint& x,
                       const SpacePoint& y) {
  model.check_point(t, x);
  model.check_point(t, y);
  return model.visit([&](const auto& m) { return m.distance(t, x.coords, y.coords); });
}

/// Matrix of R^Z_t = Ric_t - h_t - grad Z_t in the given frame.
inline Matrix rz_operator(const Model& model, double t, const FrameState& frame) {
  model.check_point(t, frame.basepoint);
  return model.visit([&](const auto& m) { return m.rz_operator(t); });
}

/// d/dt rho_t(x, y) along the fixed pair; zero for x = y by convention.
inline double distance_time_derivative(const Model& model, double t, const SpacePoint& x,
                                       const SpacePoint& y) {
  model.check_point(t, x);
  model.check_point(t, y);
  return model.visit(
      [&](const auto& m) { return m.distance_time_derivative(t, x.coords, y.coords); });
}

/// exp_x(v) for the metric g_t.
inline SpacePoint geodesic_step(const Model& model, double t, const SpacePoint& x,
                                const Vector& v) {
  model.check_point(t, x);
  return model.visit([&](const auto& m) {
    m.check_tangent(t, x.coords, v);
    SpacePoint out = x;
    m.exp_map(t, out.coords, v);
    return out;
  });
}

/// Largest deviation of the frame's Gram matrix (in g_t) from the identity.
inline double frame_orthonormality_error(const Model& model, const FrameState& frame) {
  return model.visit([&](const auto& m) {
    double worst = 0.0;
    const Vector& x = frame.basepoint.coords;
    for (int i = 0; i < frame.basis.rows(); ++i)
      for (int j = 0; j < frame.basis.rows(); ++j) {
        const double g = m.inner(frame.time, x, frame.basis.row(i).transpose(),
                                 frame.basis.row(j).transpose());
        worst = std::max(worst, std::abs(g - (i == j ? 1.0 : 0.0)));
      }
    return worst;
  });
}

}  // namespace evoflow
