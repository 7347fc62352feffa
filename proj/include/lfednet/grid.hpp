#ifndef LFEDNET_GRID_HPP
#define LFEDNET_GRID_HPP

#include "lfednet/types.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace lfednet::grid {

struct Generator {
  std::string id;
  std::string bus;
  double a = 0.0;  ///< $/MW^2h
  double b = 0.0;  ///< $/MWh
  double c = 0.0;  ///< $/h
  double p_min = 0.0;
  double p_max = 0.0;
  double ramp_up = 0.0;
  double ramp_down = 0.0;
  std::optional<double> p_initial;  ///< output at hour 0; enables the hour-1 ramp rows

  bool operator==(const Generator&) const = default;
};

struct Line {
  std::string id;
  Vector shift_factors;  ///< one entry per bus, in SystemConfig::buses order
  double flow_limit = 0.0;
};

struct Penalties {
  double lambda_s = 50.0;
  double lambda_e = 0.5;
  double lambda_l = 50.0;

  bool operator==(const Penalties&) const = default;
};

struct SystemConfig {
  std::vector<std::string> buses;
  std::vector<Generator> generators;
  std::vector<Line> lines;
  Vector load_factors;  ///< per-bus share of the system load, sums to 1
  Penalties penalties;
  int horizon = kHoursPerDay;

  Eigen::Index num_generators() const { return static_cast<Eigen::Index>(generators.size()); }
  Eigen::Index num_lines() const { return static_cast<Eigen::Index>(lines.size()); }
  Eigen::Index num_vars() const { return horizon * num_generators(); }
};

/// Inequality rows G * vec(P) <= h over the hour-major flattened dispatch.
///
/// Row order: all ramp rows first, grouped by generator then hour, each hour
/// contributing a ramp-up row followed by a ramp-down row. Then the box rows,
/// grouped the same way: an upper-bound row followed by a lower-bound row.
/// Hour 1 carries ramp rows only when the generator has p_initial.
struct ConstraintSet {
  Matrix g_matrix;
  Vector h_vector;
  Eigen::Index num_ramp_rows = 0;
};

/// Checks every invariant and returns a copy with load factors renormalised
/// when they sum to 1 within 1e-6. Throws ValidationError listing every
/// violation.
SystemConfig validate_system(const SystemConfig& raw);

/// Index of each generator's bus in SystemConfig::buses.
std::vector<Eigen::Index> generator_bus_indices(const SystemConfig& system);

/// gamma_l = sum_m Gamma_{l,m} k_{r,m}.
double line_gamma(const SystemConfig& system, const Line& line);

/// Net flow of `line` for one hour: sum_m Gamma_{l,m} (injection_m - k_{r,m} y).
double line_flow(const Eigen::Ref<const Vector>& p_hour, double load, const SystemConfig& system,
                 const Line& line);

ConstraintSet build_constraints(const SystemConfig& system);

SystemConfig system_from_json(const nlohmann::json& doc);
nlohmann::json system_to_json(const SystemConfig& system);
SystemConfig load_system(const std::filesystem::path& path);

}  // namespace lfednet::grid

#endif  // LFEDNET_GRID_HPP
