#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "time_grid.hpp"

namespace evoflow {

using Json = nlohmann::ordered_json;

enum class Verdict { Pass, Fail, Inconclusive, NotApplicable, ExponentDivergent };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Pass:
      return "pass";
    case Verdict::Fail:
      return "fail";
    case Verdict::Inconclusive:
      return "inconclusive";
    case Verdict::NotApplicable:
      return "not_applicable";
    case Verdict::ExponentDivergent:
      return "exponent_divergent";
  }
  return "?";
}

/// Monte Carlo mean with its standard error and provenance.
struct MCEstimate {
  double mean = 0.0;
  double stderr = 0.0;
  std::size_t n_paths = 0;
  std::uint64_t seed = 0;
  TimeGrid grid{};
  std::size_t exits = 0;  // paths stopped by the explosion guard
  bool unreliable = false;

  std::vector<std::string> flags() const {
    std::vector<std::string> f;
    if (exits > 0) f.push_back("explosion_exits:" + std::to_string(exits));
    if (unreliable) f.emplace_back("unreliable");
    return f;
  }

  Json to_json() const {
    Json j;
    j["value"] = mean;
    j["stderr"] = stderr;
    j["n"] = n_paths;
    j["seed"] = seed;
    j["flags"] = flags();
    return j;
  }
};

/// Outcome of one inequality or hypothesis check.
struct VerdictReport {
  std::string check_id;
  std::string paper_ref;  // name of the verified statement
  Json inputs = Json::object();
  double lhs = std::nan("");
  double rhs = std::nan("");
  double slack = std::nan("");  // rhs - lhs
  double se = 0.0;
  Verdict verdict = Verdict::Inconclusive;
  Json details = Json::object();

  bool failed() const noexcept { return verdict == Verdict::Fail; }

  Json to_json() const {
    Json j;
    j["check_id"] = check_id;
    j["paper_ref"] = paper_ref;
    j["inputs"] = inputs;
    j["lhs"] = lhs;
    j["rhs"] = rhs;
    j["slack"] = slack;
    j["se"] = se;
    j["verdict"] = to_string(verdict);
    if (!details.empty()) j["details"] = details;
    return j;
  }
};

/// Pass when lhs <= rhs + k*se.
inline Verdict compare_le(double lhs, double rhs, double se, double k = 3.0) {
  if (!std::isfinite(lhs) || !std::isfinite(rhs)) return Verdict::Inconclusive;
  return lhs <= rhs + k * se ? Verdict::Pass : Verdict::Fail;
}

}  // namespace evoflow
