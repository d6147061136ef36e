#pragma once

// Time-dependent scalar coefficients c(t), lambda(t), k(t), psi(t), ...
// Presets carry closed-form derivatives and antiderivatives so that the
// nested integrals appearing in the hypothesis checks reduce to a single
// adaptive quadrature.

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "quadrature.hpp"

namespace evoflow {

class Profile {
 public:
  using Fn = std::function<double(double)>;

  enum class Kind { Constant, Exponential, Power, Sinusoid, Custom };

  Profile() : Profile(constant(0.0)) {}

  static Profile constant(double a) {
    return Profile(Kind::Constant, "constant", {a});
  }
  /// scale * exp(rate * t)
  static Profile exponential(double rate, double scale = 1.0) {
    return Profile(Kind::Exponential, "exponential", {rate, scale});
  }
  /// scale * (offset - t)^exponent, defined for t < offset.
  static Profile power(double scale, double offset, double exponent) {
    return Profile(Kind::Power, "power", {scale, offset, exponent});
  }
  /// mean + amplitude * sin(frequency * t)
  static Profile sinusoid(double mean, double amplitude, double frequency) {
    return Profile(Kind::Sinusoid, "sinusoid", {mean, amplitude, frequency});
  }
  /// Arbitrary function. Missing derivative/antiderivative fall back to
  /// central differences / adaptive quadrature respectively.
  static Profile custom(std::string label, Fn value, Fn derivative = {},
                        Fn antiderivative = {}) {
    Profile p(Kind::Custom, std::move(label), {});
    p.value_ = std::move(value);
    p.derivative_ = std::move(derivative);
    p.antiderivative_ = std::move(antiderivative);
    return p;
  }

  /// Builds a preset from its serialized form {preset: name, params: [...]}.
  static Profile from_preset(const std::string& name,
                             std::span<const double> params) {
    auto need = [&](std::size_t lo, std::size_t hi) {
      if (params.size() < lo || params.size() > hi)
        throw DomainError("preset '" + name + "' expects " +
                          std::to_string(lo) + (lo == hi ? "" : ".." + std::to_string(hi)) +
                          " parameters, got " + std::to_string(params.size()));
    };
    if (name == "constant") {
      need(1, 1);
      return constant(params[0]);
    }
    if (name == "exponential") {
      need(1, 2);
      return exponential(params[0], params.size() > 1 ? params[1] : 1.0);
    }
    if (name == "power") {
      need(3, 3);
      return power(params[0], params[1], params[2]);
    }
    if (name == "sinusoid") {
      need(3, 3);
      return sinusoid(params[0], params[1], params[2]);
    }
    throw DomainError("unknown coefficient preset '" + name + "'");
  }

  Kind kind() const noexcept { return kind_; }
  const std::string& name() const noexcept { return name_; }
  const std::vector<double>& params() const noexcept { return params_; }
  bool is_constant() const noexcept { return kind_ == Kind::Constant; }
  bool has_antiderivative() const noexcept {
    return kind_ != Kind::Custom || static_cast<bool>(antiderivative_);
  }

  double operator()(double t) const {
    const auto& p = params_;
    switch (kind_) {
      case Kind::Constant:
        return p[0];
      case Kind::Exponential:
        return p[1] * std::exp(p[0] * t);
      case Kind::Power:
        return p[0] * std::pow(p[1] - t, p[2]);
      case Kind::Sinusoid:
        return p[0] + p[1] * std::sin(p[2] * t);
      case Kind::Custom:
        return value_(t);
    }
    return 0.0;
  }

  double derivative(double t) const {
    const auto& p = params_;
    switch (kind_) {
      case Kind::Constant:
        return 0.0;
      case Kind::Exponential:
        return p[0] * p[1] * std::exp(p[0] * t);
      case Kind::Power:
        return -p[0] * p[2] * std::pow(p[1] - t, p[2] - 1.0);
      case Kind::Sinusoid:
        return p[1] * p[2] * std::cos(p[2] * t);
      case Kind::Custom:
        if (derivative_) return derivative_(t);
        {
          const double h = 1e-6 * std::max(1.0, std::abs(t));
          return (value_(t + h) - value_(t - h)) / (2.0 * h);
        }
    }
    return 0.0;
  }

  /// Closed-form antiderivative (up to a constant) for presets.
  double antiderivative(double t) const {
    const auto& p = params_;
    switch (kind_) {
      case Kind::Constant:
        return p[0] * t;
      case Kind::Exponential:
        return p[0] == 0.0 ? p[1] * t : p[1] * std::exp(p[0] * t) / p[0];
      case Kind::Power:
        if (p[2] == -1.0) return -p[0] * std::log(p[1] - t);
        return -p[0] * std::pow(p[1] - t, p[2] + 1.0) / (p[2] + 1.0);
      case Kind::Sinusoid:
        if (p[2] == 0.0) return p[0] * t;
        return p[0] * t - p[1] * std::cos(p[2] * t) / p[2];
      case Kind::Custom:
        if (antiderivative_) return antiderivative_(t);
        throw DomainError("profile '" + name_ + "' has no antiderivative");
    }
    return 0.0;
  }

  /// \int_a^b f(u) du.
  double integral(double a, double b) const {
    if (a == b) return 0.0;
    if (kind_ == Kind::Constant) return params_[0] * (b - a);
    if (kind_ == Kind::Exponential && params_[0] != 0.0) {
      // scale * e^{rate a} (e^{rate (b-a)} - 1) / rate, stable for small b-a.
      return params_[1] * std::exp(params_[0] * a) *
             std::expm1(params_[0] * (b - a)) / params_[0];
    }
    if (has_antiderivative()) return antiderivative(b) - antiderivative(a);
    return quad::integrate([this](double u) { return (*this)(u); }, a, b, 1e-12)
        .value;
  }

 private:
  Profile(Kind kind, std::string name, std::vector<double> params)
      : kind_(kind), name_(std::move(name)), params_(std::move(params)) {}

  Kind kind_;
  std::string name_;
  std::vector<double> params_;
  Fn value_, derivative_, antiderivative_;
};

}  // namespace evoflow
