#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "svpsfc/errors.hpp"
#include "svpsfc/random.hpp"

namespace svpsfc {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

inline double euclidean(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// A surveillance problem: vertex 0 is the depot, vertices 1..n_total are targets.
/// dummy[i] marks target i+1 as padding (masked, clock pinned to zero).
struct Instance {
  double grid_size = 10.0;
  double fuel_capacity = 120.0;
  std::vector<Point> vertices;
  std::vector<bool> dummy;
  std::uint64_t seed = 0;

  std::size_t n_total() const { return vertices.empty() ? 0 : vertices.size() - 1; }

  std::size_t n_dummy() const {
    std::size_t k = 0;
    for (bool d : dummy) k += d ? 1 : 0;
    return k;
  }

  std::size_t n_real() const { return n_total() - n_dummy(); }

  /// Target index is 1-based (vertex numbering); the depot is never a dummy.
  bool is_dummy(std::size_t vertex) const { return vertex >= 1 && dummy[vertex - 1]; }

  bool is_real_target(std::size_t vertex) const { return vertex >= 1 && !dummy[vertex - 1]; }

  friend bool operator==(const Instance&, const Instance&) = default;
};

/// Dense symmetric Euclidean distances over all vertices.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;

  explicit DistanceMatrix(const Instance& inst) : size_(inst.vertices.size()), data_(size_ * size_, 0.0) {
    for (std::size_t i = 0; i < size_; ++i) {
      for (std::size_t j = i + 1; j < size_; ++j) {
        const double d = euclidean(inst.vertices[i], inst.vertices[j]);
        data_[i * size_ + j] = d;
        data_[j * size_ + i] = d;
      }
    }
  }

  std::size_t size() const { return size_; }

  double operator()(std::size_t i, std::size_t j) const { return data_[i * size_ + j]; }

 private:
  std::size_t size_ = 0;
  std::vector<double> data_;
};

inline DistanceMatrix distance_matrix(const Instance& inst) { return DistanceMatrix(inst); }

struct Validation {
  std::vector<std::string> violations;
  std::vector<std::string> warnings;

  bool ok() const { return violations.empty(); }
};

/// Checks structural invariants. Violations are returned as data, never thrown.
/// Target numbers in messages are 1-based.
inline Validation validate(const Instance& inst) {
  Validation v;
  if (inst.vertices.empty()) {
    v.violations.push_back("instance has no depot vertex");
    return v;
  }
  if (inst.dummy.size() != inst.n_total()) {
    v.violations.push_back("dummy flag count " + std::to_string(inst.dummy.size()) + " does not match target count " +
                           std::to_string(inst.n_total()));
    return v;
  }
  if (!(inst.grid_size > 0.0) || !std::isfinite(inst.grid_size)) v.violations.push_back("grid_size must be positive");
  if (!(inst.fuel_capacity > 0.0) || !std::isfinite(inst.fuel_capacity)) {
    v.violations.push_back("fuel_capacity must be positive");
  }
  for (std::size_t i = 0; i < inst.vertices.size(); ++i) {
    if (!std::isfinite(inst.vertices[i].x) || !std::isfinite(inst.vertices[i].y)) {
      v.violations.push_back("vertex " + std::to_string(i) + " has non-finite coordinates");
    }
  }
  if (inst.n_real() < 1) v.violations.push_back("instance needs at least one real target (n_real >= 1)");

  const Point& depot = inst.vertices[0];
  for (std::size_t i = 1; i < inst.vertices.size(); ++i) {
    if (!inst.is_real_target(i)) continue;
    const double round_trip = 2.0 * euclidean(depot, inst.vertices[i]);
    if (round_trip > inst.fuel_capacity) {
      v.violations.push_back("target " + std::to_string(i) + " infeasible: round trip " + std::to_string(round_trip) +
                             " exceeds fuel capacity " + std::to_string(inst.fuel_capacity));
    }
  }

  for (std::size_t i = 1; i < inst.vertices.size(); ++i) {
    const Point& p = inst.vertices[i];
    if (p.x < 0.0 || p.y < 0.0 || p.x > inst.grid_size || p.y > inst.grid_size) {
      v.warnings.push_back("target " + std::to_string(i) + " lies outside the declared grid");
    }
  }
  for (std::size_t i = 0; i < inst.vertices.size(); ++i) {
    for (std::size_t j = i + 1; j < inst.vertices.size(); ++j) {
      if (inst.vertices[i] == inst.vertices[j]) {
        v.warnings.push_back("vertices " + std::to_string(i) + " and " + std::to_string(j) + " coincide");
      }
    }
  }
  return v;
}

/// Per-target resampling budget used by generate_instance.
inline constexpr int kPlacementRetryBudget = 10000;

/// Random instance: depot at the origin, targets uniform over [0, grid]^2, real targets resampled
/// until a depot round trip fits in the tank, dummy slots chosen uniformly.
inline Instance generate_instance(std::size_t n_total, std::size_t n_real, double grid_size, double fuel_capacity,
                                  std::uint64_t seed) {
  if (n_real < 1 || n_real > n_total) {
    throw InvalidArgument("generate_instance: need 1 <= n_real <= n_total, got n_real=" + std::to_string(n_real) +
                          ", n_total=" + std::to_string(n_total));
  }
  if (!(fuel_capacity > 0.0)) throw InvalidArgument("generate_instance: fuel_capacity must be positive");
  if (!(grid_size > 0.0)) throw InvalidArgument("generate_instance: grid_size must be positive");

  Rng rng(seed);
  Instance inst;
  inst.grid_size = grid_size;
  inst.fuel_capacity = fuel_capacity;
  inst.seed = seed;
  inst.vertices.assign(n_total + 1, Point{});
  inst.dummy.assign(n_total, false);

  // Partial Fisher-Yates over target slots picks the dummy positions.
  std::vector<std::size_t> slots(n_total);
  for (std::size_t i = 0; i < n_total; ++i) slots[i] = i;
  const std::size_t k = n_total - n_real;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform_index(rng, n_total - i));
    std::swap(slots[i], slots[j]);
    inst.dummy[slots[i]] = true;
  }

  const Point depot{};
  for (std::size_t i = 1; i <= n_total; ++i) {
    int attempts = 0;
    while (true) {
      Point p{uniform_real(rng, 0.0, grid_size), uniform_real(rng, 0.0, grid_size)};
      if (inst.dummy[i - 1] || 2.0 * euclidean(depot, p) <= fuel_capacity) {
        inst.vertices[i] = p;
        break;
      }
      if (++attempts >= kPlacementRetryBudget) {
        throw InvalidArgument("generate_instance: could not place target " + std::to_string(i) + " within " +
                              std::to_string(kPlacementRetryBudget) + " attempts for fuel capacity " +
                              std::to_string(fuel_capacity));
      }
    }
  }
  return inst;
}

/// The fixed six-target configuration used for qualitative trajectory comparisons.
inline Instance reference_instance(double fuel_capacity = 120.0) {
  Instance inst;
  inst.grid_size = 10.0;
  inst.fuel_capacity = fuel_capacity;
  inst.vertices = {{0, 0}, {2, 1}, {0.5, 7}, {7, 2}, {8, 8}, {5, 6}, {4, 9}};
  inst.dummy.assign(6, false);
  return inst;
}

inline constexpr int kInstanceSchemaVersion = 1;

inline nlohmann::json to_json(const Instance& inst) {
  nlohmann::json j;
  j["version"] = kInstanceSchemaVersion;
  j["grid_size"] = inst.grid_size;
  j["fuel_capacity"] = inst.fuel_capacity;
  j["depot"] = {inst.vertices.at(0).x, inst.vertices.at(0).y};
  auto targets = nlohmann::json::array();
  for (std::size_t i = 1; i < inst.vertices.size(); ++i) targets.push_back({inst.vertices[i].x, inst.vertices[i].y});
  j["targets"] = targets;
  auto dummy = nlohmann::json::array();
  for (bool d : inst.dummy) dummy.push_back(d);
  j["dummy"] = dummy;
  j["seed"] = inst.seed;
  return j;
}

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw SchemaError(std::string("instance: missing field '") + key + "'");
  return j.at(key);
}

inline Point parse_point(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw SchemaError("instance: a point must be an [x, y] pair of numbers");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace detail

/// Parses and validates an instance. Invariant violations throw; soft findings
/// (targets outside the grid, coincident vertices) are appended to `warnings`.
inline Instance instance_from_json(const nlohmann::json& j, std::vector<std::string>* warnings = nullptr) {
  const auto& version = detail::require(j, "version");
  if (!version.is_number_integer() || version.get<int>() != kInstanceSchemaVersion) {
    throw SchemaError("instance: unsupported schema version " + version.dump());
  }
  Instance inst;
  try {
    inst.grid_size = detail::require(j, "grid_size").get<double>();
    inst.fuel_capacity = detail::require(j, "fuel_capacity").get<double>();
    inst.vertices.push_back(detail::parse_point(detail::require(j, "depot")));
    const auto& targets = detail::require(j, "targets");
    if (!targets.is_array()) throw SchemaError("instance: 'targets' must be an array");
    for (const auto& t : targets) inst.vertices.push_back(detail::parse_point(t));
    const auto& dummy = detail::require(j, "dummy");
    if (!dummy.is_array()) throw SchemaError("instance: 'dummy' must be an array");
    for (const auto& d : dummy) inst.dummy.push_back(d.get<bool>());
    inst.seed = detail::require(j, "seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("instance: ") + e.what());
  }
  Validation v = validate(inst);
  if (!v.ok()) {
    std::string msg = "instance: invariant violation:";
    for (const auto& s : v.violations) msg += " " + s + ";";
    throw SchemaError(msg);
  }
  if (warnings) warnings->insert(warnings->end(), v.warnings.begin(), v.warnings.end());
  return inst;
}

inline void save_instance(const Instance& inst, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << to_json(inst).dump(2) << '\n';
}

inline Instance load_instance(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("instance: malformed JSON in " + path.string() + ": " + e.what());
  }
  return instance_from_json(j, warnings);
}

}  // namespace svpsfc
