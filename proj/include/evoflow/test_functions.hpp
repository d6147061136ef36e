#pragma once

// Test functions f acting on stored coordinates (chart coordinates on the
// flat models, ambient coordinates on the sphere). Gradients are coordinate
// gradients; the metric norm is taken by Model::gradient_norm.

#include <cmath>
#include <optional>
#include <string>

#include "errors.hpp"
#include "geometry.hpp"
#include "report.hpp"

namespace evoflow {

class TestFunction {
 public:
  enum class Kind { Constant, Coordinate, Norm2, GaussianBump, LipCap, ExpRadial, ExpCoordinate };

  static TestFunction constant(double a) {
    TestFunction f(Kind::Constant);
    f.a_ = a;
    return f;
  }
  static TestFunction coordinate(int i) {
    TestFunction f(Kind::Coordinate);
    f.axis_ = check_axis(i);
    return f;
  }
  static TestFunction norm2() { return TestFunction(Kind::Norm2); }
  /// exp(-|x - center|^2 / (2 width^2)).
  static TestFunction gaussian_bump(Vector center, double width) {
    if (!(width > 0.0)) throw DomainError("gaussian bump width must be positive");
    TestFunction f(Kind::GaussianBump);
    f.center_ = std::move(center);
    f.a_ = width;
    return f;
  }
  /// cap * tanh(slope * (x_axis - center) / cap): close to slope * (x_axis - center)
  /// near the center, bounded by cap, gradient at most slope.
  static TestFunction lip_cap(double center, double slope, double cap, int axis = 0) {
    if (!(slope > 0.0 && cap > 0.0)) throw DomainError("lip_cap needs slope > 0 and cap > 0");
    TestFunction f(Kind::LipCap);
    f.axis_ = check_axis(axis);
    f.a_ = slope;
    f.b_ = cap;
    f.c_ = center;
    return f;
  }
  /// exp(lambda |x|^2).
  static TestFunction exp_radial(double lambda) {
    TestFunction f(Kind::ExpRadial);
    f.a_ = lambda;
    return f;
  }
  /// exp(a x_i).
  static TestFunction exp_coordinate(int i, double a) {
    TestFunction f(Kind::ExpCoordinate);
    f.axis_ = check_axis(i);
    f.a_ = a;
    return f;
  }

  Kind kind() const noexcept { return kind_; }
  int axis() const noexcept { return axis_; }
  const Vector& center() const noexcept { return center_; }
  double width() const noexcept { return a_; }
  double slope() const noexcept { return a_; }
  double cap() const noexcept { return b_; }
  double shift() const noexcept { return c_; }
  double lambda() const noexcept { return a_; }
  double rate() const noexcept { return a_; }
  double level() const noexcept { return a_; }

  bool bounded() const noexcept {
    return kind_ == Kind::Constant || kind_ == Kind::GaussianBump || kind_ == Kind::LipCap;
  }
  /// sup |f| when finite.
  std::optional<double> sup_norm() const {
    switch (kind_) {
      case Kind::Constant:
        return std::abs(a_);
      case Kind::GaussianBump:
        return 1.0;
      case Kind::LipCap:
        return b_;
      default:
        return std::nullopt;
    }
  }
  /// Euclidean Lipschitz constant in stored coordinates when finite.
  std::optional<double> lipschitz() const {
    switch (kind_) {
      case Kind::Constant:
        return 0.0;
      case Kind::Coordinate:
        return 1.0;
      case Kind::GaussianBump:
        return 1.0 / (a_ * std::sqrt(std::exp(1.0)));
      case Kind::LipCap:
        return a_;
      default:
        return std::nullopt;
    }
  }

  double operator()(const Vector& x) const {
    switch (kind_) {
      case Kind::Constant:
        return a_;
      case Kind::Coordinate:
        return x[axis_];
      case Kind::Norm2:
        return x.squaredNorm();
      case Kind::GaussianBump:
        check_dim(x);
        return std::exp(-(x - center_).squaredNorm() / (2.0 * a_ * a_));
      case Kind::LipCap:
        return b_ * std::tanh(a_ * (x[axis_] - c_) / b_);
      case Kind::ExpRadial:
        return std::exp(a_ * x.squaredNorm());
      case Kind::ExpCoordinate:
        return std::exp(a_ * x[axis_]);
    }
    return 0.0;
  }

  void gradient(const Vector& x, Vector& out) const {
    out.setZero(x.size());
    switch (kind_) {
      case Kind::Constant:
        return;
      case Kind::Coordinate:
        out[axis_] = 1.0;
        return;
      case Kind::Norm2:
        out = 2.0 * x;
        return;
      case Kind::GaussianBump:
        check_dim(x);
        out = -(x - center_) * ((*this)(x) / (a_ * a_));
        return;
      case Kind::LipCap: {
        const double th = std::tanh(a_ * (x[axis_] - c_) / b_);
        out[axis_] = a_ * (1.0 - th * th);
        return;
      }
      case Kind::ExpRadial:
        out = 2.0 * a_ * (*this)(x) * x;
        return;
      case Kind::ExpCoordinate:
        out[axis_] = a_ * (*this)(x);
        return;
    }
  }

  Vector gradient(const Vector& x) const {
    Vector g;
    gradient(x, g);
    return g;
  }

  std::string name() const {
    switch (kind_) {
      case Kind::Constant:
        return "constant";
      case Kind::Coordinate:
        return "coordinate";
      case Kind::Norm2:
        return "norm2";
      case Kind::GaussianBump:
        return "gaussian_bump";
      case Kind::LipCap:
        return "lip_cap";
      case Kind::ExpRadial:
        return "exp_radial";
      case Kind::ExpCoordinate:
        return "exp_coordinate";
    }
    return "?";
  }

  Json to_json() const {
    Json j;
    j["kind"] = name();
    switch (kind_) {
      case Kind::Constant:
        j["value"] = a_;
        break;
      case Kind::Coordinate:
        j["axis"] = axis_;
        break;
      case Kind::Norm2:
        break;
      case Kind::GaussianBump:
        j["center"] = std::vector<double>(center_.data(), center_.data() + center_.size());
        j["width"] = a_;
        break;
      case Kind::LipCap:
        j["center"] = c_;
        j["slope"] = a_;
        j["cap"] = b_;
        j["axis"] = axis_;
        break;
      case Kind::ExpRadial:
        j["lambda"] = a_;
        break;
      case Kind::ExpCoordinate:
        j["axis"] = axis_;
        j["rate"] = a_;
        break;
    }
    return j;
  }

 private:
  explicit TestFunction(Kind k) : kind_(k) {}

  static int check_axis(int i) {
    if (i < 0) throw DomainError("coordinate index must be non-negative");
    return i;
  }
  void check_dim(const Vector& x) const {
    if (x.size() != center_.size())
      throw DomainError("gaussian bump center has dimension " + std::to_string(center_.size()) +
                        ", point has " + std::to_string(x.size()));
  }

  Kind kind_;
  int axis_ = 0;
  double a_ = 0.0, b_ = 0.0, c_ = 0.0;
  Vector center_;
};

/// Metric norm |grad^t f|_t at x.
inline double gradient_norm(const Model& model, double t, const TestFunction& f,
                            const Vector& x) {
  return model.gradient_norm(t, x, f.gradient(x));
}

}  // namespace evoflow
