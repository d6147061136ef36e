#pragma once

// JSON forms of coefficient profiles and models, with strict validation:
// unknown keys are rejected and every error names the offending field.
//
//   profile: {"preset": "exponential", "params": [-1.0]}
//   model:   {"kind": "conformal_flat", "dim": 2,
//             "conformal_factor": <profile>,
//             "drift": {"kind": "linear_radial", "lambda": <profile>}}
//            {"kind": "shrinking_sphere", "dim": 2, "collapse_time": 0.0}
//            {"kind": "shrinking_sphere", "dim": 2, "initial_radius": 2.0}

#include <cstdint>
#include <cstdio>
#include <initializer_list>
#include <string>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "profile.hpp"
#include "report.hpp"

namespace evoflow::io {

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline void require_object(const Json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
}

inline void allow_keys(const Json& j, const std::string& path,
                       std::initializer_list<const char*> allowed) {
  require_object(j, path);
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || item.key() == a;
    if (!ok) throw ConfigError(join(path, item.key()), "unknown key");
  }
}

inline const Json& member(const Json& j, const std::string& path, const char* key) {
  if (!j.contains(key)) throw ConfigError(join(path, key), "missing required field");
  return j.at(key);
}

inline double number(const Json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  return j.get<double>();
}

inline double number_or(const Json& j, const std::string& path, const char* key, double dflt) {
  return j.contains(key) ? number(j.at(key), join(path, key)) : dflt;
}

inline long long integer(const Json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ConfigError(path, "expected an integer");
  return j.get<long long>();
}

inline long long integer_or(const Json& j, const std::string& path, const char* key,
                            long long dflt) {
  return j.contains(key) ? integer(j.at(key), join(path, key)) : dflt;
}

inline std::string string(const Json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path, "expected a string");
  return j.get<std::string>();
}

inline bool boolean_or(const Json& j, const std::string& path, const char* key, bool dflt) {
  if (!j.contains(key)) return dflt;
  if (!j.at(key).is_boolean()) throw ConfigError(join(path, key), "expected true or false");
  return j.at(key).get<bool>();
}

inline std::vector<double> numbers(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i)
    out.push_back(number(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

// ---------------------------------------------------------------------------

inline Json profile_to_json(const Profile& p) {
  if (p.kind() == Profile::Kind::Custom)
    throw DomainError("profile '" + p.name() + "' has no serialized form");
  Json j;
  j["preset"] = p.name();
  j["params"] = p.params();
  return j;
}

inline Profile profile_from_json(const Json& j, const std::string& path) {
  allow_keys(j, path, {"preset", "params"});
  const std::string preset = string(member(j, path, "preset"), join(path, "preset"));
  const auto params = j.contains("params") ? numbers(j.at("params"), join(path, "params"))
                                           : std::vector<double>{};
  try {
    return Profile::from_preset(preset, params);
  } catch (const DomainError& e) {
    throw ConfigError(join(path, "preset"), e.what());
  }
}

inline Json model_to_json(const Model& model) {
  Json j;
  j["kind"] = to_string(model.kind());
  j["dim"] = model.dim();
  if (const auto* f = model.flat()) {
    if (model.kind() == GeometryKind::ConformalFlat)
      j["conformal_factor"] = profile_to_json(f->conformal_factor());
    Json d;
    if (f->drift_spec().is_zero()) {
      d["kind"] = "zero";
    } else {
      d["kind"] = "linear_radial";
      d["lambda"] = profile_to_json(f->drift_spec().lambda);
    }
    j["drift"] = d;
  } else {
    j["collapse_time"] = model.sphere()->collapse_time();
  }
  return j;
}

inline DriftSpec drift_from_json(const Json& j, const std::string& path) {
  allow_keys(j, path, {"kind", "lambda"});
  const std::string kind = string(member(j, path, "kind"), join(path, "kind"));
  if (kind == "zero") {
    if (j.contains("lambda")) throw ConfigError(join(path, "lambda"), "zero drift takes no lambda");
    return DriftSpec::zero();
  }
  if (kind == "linear_radial")
    return DriftSpec::linear_radial(profile_from_json(member(j, path, "lambda"), join(path, "lambda")));
  throw ConfigError(join(path, "kind"), "unknown drift kind '" + kind + "'");
}

inline Model model_from_json(const Json& j, const std::string& path) {
  allow_keys(j, path,
             {"kind", "dim", "conformal_factor", "drift", "collapse_time", "initial_radius"});
  const std::string kind = string(member(j, path, "kind"), join(path, "kind"));
  const long long dim = integer(member(j, path, "dim"), join(path, "dim"));
  if (dim < 1) throw ConfigError(join(path, "dim"), "dimension must be >= 1");
  const DriftSpec drift =
      j.contains("drift") ? drift_from_json(j.at("drift"), join(path, "drift")) : DriftSpec::zero();
  if (kind == "static_flat" || kind == "conformal_flat") {
    for (const char* k : {"collapse_time", "initial_radius"})
      if (j.contains(k)) throw ConfigError(join(path, k), "only valid for shrinking_sphere");
    if (kind == "static_flat") {
      if (j.contains("conformal_factor"))
        throw ConfigError(join(path, "conformal_factor"), "static_flat has c = 1");
      return Model::static_flat(static_cast<int>(dim), drift);
    }
    const Profile c =
        profile_from_json(member(j, path, "conformal_factor"), join(path, "conformal_factor"));
    return Model::conformal_flat(static_cast<int>(dim), c, drift);
  }
  if (kind == "shrinking_sphere") {
    if (dim < 2) throw ConfigError(join(path, "dim"), "shrinking_sphere requires dim >= 2");
    if (j.contains("conformal_factor"))
      throw ConfigError(join(path, "conformal_factor"), "only valid for flat kinds");
    if (!drift.is_zero())
      throw ConfigError(join(path, "drift"), "linear_radial drift is only valid on flat kinds");
    if (j.contains("collapse_time") == j.contains("initial_radius"))
      throw ConfigError(path.empty() ? "collapse_time" : join(path, "collapse_time"),
                        "give exactly one of collapse_time or initial_radius");
    if (j.contains("initial_radius")) {
      const double r0 = number(j.at("initial_radius"), join(path, "initial_radius"));
      if (!(r0 > 0.0)) throw ConfigError(join(path, "initial_radius"), "must be positive");
      return Model(SphereModel::from_initial_radius(static_cast<int>(dim), r0));
    }
    return Model::shrinking_sphere(static_cast<int>(dim),
                                   number(j.at("collapse_time"), join(path, "collapse_time")));
  }
  throw ConfigError(join(path, "kind"), "unknown model kind '" + kind + "'");
}

/// 64-bit FNV-1a of a string, as 16 hex digits.
inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string model_hash(const Model& model) { return fnv1a_hex(model_to_json(model).dump()); }

}  // namespace evoflow::io
