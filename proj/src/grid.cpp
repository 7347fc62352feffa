#include "lfednet/grid.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace lfednet {

namespace {

std::string join_violations(const std::vector<std::string>& v) {
  std::ostringstream os;
  os << "invalid system configuration:";
  for (const auto& msg : v) os << "\n  - " << msg;
  return os.str();
}

}  // namespace

ValidationError::ValidationError(std::vector<std::string> violations)
    : DataError(join_violations(violations)), violations_(std::move(violations)) {}

namespace grid {

namespace {

constexpr double kGammaTol = 1e-12;

std::ptrdiff_t find_bus(const std::vector<std::string>& buses, const std::string& id) {
  for (std::size_t i = 0; i < buses.size(); ++i)
    if (buses[i] == id) return static_cast<std::ptrdiff_t>(i);
  return -1;
}

std::string as_id(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw DataError("identifier must be a string or integer, got " + v.dump());
}

Vector as_vector(const nlohmann::json& v, const char* what) {
  if (!v.is_array()) throw DataError(std::string(what) + " must be an array");
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
  return out;
}

}  // namespace

SystemConfig validate_system(const SystemConfig& raw) {
  std::vector<std::string> errors;
  SystemConfig sys = raw;
  const auto n_bus = static_cast<Eigen::Index>(sys.buses.size());

  if (sys.buses.empty()) errors.emplace_back("no buses defined");
  if (std::set<std::string>(sys.buses.begin(), sys.buses.end()).size() != sys.buses.size())
    errors.emplace_back("duplicate bus identifier");
  if (sys.generators.empty()) errors.emplace_back("no generators defined");
  if (sys.horizon < 1) errors.emplace_back("horizon must be at least 1 hour");

  for (const auto& g : sys.generators) {
    const std::string tag = "generator '" + g.id + "': ";
    if (find_bus(sys.buses, g.bus) < 0) errors.push_back(tag + "unknown bus '" + g.bus + "'");
    if (g.p_min > g.p_max) errors.push_back(tag + "bounds inverted (p_min > p_max)");
    if (!(g.ramp_up > 0.0)) errors.push_back(tag + "ramp_up must be positive");
    if (!(g.ramp_down > 0.0)) errors.push_back(tag + "ramp_down must be positive");
    if (g.a < 0.0) errors.push_back(tag + "negative quadratic cost coefficient a");
  }

  bool factors_ok = sys.load_factors.size() == n_bus;
  if (!factors_ok) {
    errors.emplace_back("load_factors must have one entry per bus");
  } else if (n_bus > 0) {
    const double sum = sys.load_factors.sum();
    if (std::abs(sum - 1.0) > 1e-6) {
      errors.emplace_back("load_factors do not sum to 1 (sum = " + std::to_string(sum) + ")");
      factors_ok = false;
    } else if (std::abs(sum - 1.0) > 1e-12) {
      sys.load_factors /= sum;
    }
  }

  for (const auto& line : sys.lines) {
    const std::string tag = "line '" + line.id + "': ";
    if (!(line.flow_limit > 0.0)) errors.push_back(tag + "flow_limit must be positive");
    if (line.shift_factors.size() != n_bus) {
      errors.push_back(tag + "shift_factors must have one entry per bus");
    } else if (factors_ok && std::abs(line.shift_factors.dot(sys.load_factors)) < kGammaTol) {
      errors.push_back(tag + "degenerate line coefficient (gamma = sum Gamma k_r is zero)");
    }
  }

  const auto& pen = sys.penalties;
  if (pen.lambda_s < 0.0) errors.emplace_back("negative penalty lambda_s");
  if (pen.lambda_e < 0.0) errors.emplace_back("negative penalty lambda_e");
  if (pen.lambda_l < 0.0) errors.emplace_back("negative penalty lambda_l");

  if (!errors.empty()) throw ValidationError(std::move(errors));
  return sys;
}

std::vector<Eigen::Index> generator_bus_indices(const SystemConfig& system) {
  std::vector<Eigen::Index> out;
  out.reserve(system.generators.size());
  for (const auto& g : system.generators) {
    const auto idx = find_bus(system.buses, g.bus);
    if (idx < 0) throw DataError("generator '" + g.id + "' references unknown bus '" + g.bus + "'");
    out.push_back(idx);
  }
  return out;
}

double line_gamma(const SystemConfig& system, const Line& line) {
  return line.shift_factors.dot(system.load_factors);
}

double line_flow(const Eigen::Ref<const Vector>& p_hour, double load, const SystemConfig& system,
                 const Line& line) {
  if (p_hour.size() != system.num_generators())
    throw DataError("line_flow: p_hour has " + std::to_string(p_hour.size()) + " entries, expected " +
                    std::to_string(system.num_generators()));
  Vector injection = -load * system.load_factors;
  const auto bus = generator_bus_indices(system);
  for (std::size_t g = 0; g < bus.size(); ++g) injection[bus[g]] += p_hour[static_cast<Eigen::Index>(g)];
  return line.shift_factors.dot(injection);
}

ConstraintSet build_constraints(const SystemConfig& system) {
  const Eigen::Index n_gen = system.num_generators();
  const Eigen::Index hours = system.horizon;
  const Eigen::Index n = hours * n_gen;

  Eigen::Index ramp_rows = 0;
  for (const auto& g : system.generators) ramp_rows += 2 * (g.p_initial ? hours : hours - 1);
  const Eigen::Index rows = ramp_rows + 2 * n;

  ConstraintSet cs;
  cs.g_matrix = Matrix::Zero(rows, n);
  cs.h_vector = Vector::Zero(rows);
  cs.num_ramp_rows = ramp_rows;

  const auto col = [n_gen](Eigen::Index t, Eigen::Index g) { return t * n_gen + g; };
  Eigen::Index r = 0;
  for (Eigen::Index g = 0; g < n_gen; ++g) {
    const auto& gen = system.generators[static_cast<std::size_t>(g)];
    for (Eigen::Index t = gen.p_initial ? 0 : 1; t < hours; ++t) {
      // P_t - P_{t-1} <= RU
      cs.g_matrix(r, col(t, g)) = 1.0;
      if (t > 0) {
        cs.g_matrix(r, col(t - 1, g)) = -1.0;
        cs.h_vector[r] = gen.ramp_up;
      } else {
        cs.h_vector[r] = gen.ramp_up + *gen.p_initial;
      }
      ++r;
      // P_{t-1} - P_t <= RD
      cs.g_matrix(r, col(t, g)) = -1.0;
      if (t > 0) {
        cs.g_matrix(r, col(t - 1, g)) = 1.0;
        cs.h_vector[r] = gen.ramp_down;
      } else {
        cs.h_vector[r] = gen.ramp_down - *gen.p_initial;
      }
      ++r;
    }
  }
  for (Eigen::Index g = 0; g < n_gen; ++g) {
    const auto& gen = system.generators[static_cast<std::size_t>(g)];
    for (Eigen::Index t = 0; t < hours; ++t) {
      cs.g_matrix(r, col(t, g)) = 1.0;
      cs.h_vector[r++] = gen.p_max;
      cs.g_matrix(r, col(t, g)) = -1.0;
      cs.h_vector[r++] = -gen.p_min;
    }
  }
  return cs;
}

SystemConfig system_from_json(const nlohmann::json& doc) {
  try {
    SystemConfig sys;
    for (const auto& b : doc.at("buses")) sys.buses.push_back(as_id(b));
    for (const auto& jg : doc.at("generators")) {
      Generator g;
      g.id = as_id(jg.at("id"));
      g.bus = as_id(jg.at("bus"));
      g.a = jg.at("a").get<double>();
      g.b = jg.at("b").get<double>();
      g.c = jg.value("c", 0.0);
      g.p_min = jg.at("p_min").get<double>();
      g.p_max = jg.at("p_max").get<double>();
      g.ramp_up = jg.at("ramp_up").get<double>();
      g.ramp_down = jg.at("ramp_down").get<double>();
      if (jg.contains("p_initial") && !jg.at("p_initial").is_null())
        g.p_initial = jg.at("p_initial").get<double>();
      sys.generators.push_back(std::move(g));
    }
    if (doc.contains("lines")) {
      for (const auto& jl : doc.at("lines")) {
        Line l;
        l.id = as_id(jl.at("id"));
        l.shift_factors = as_vector(jl.at("shift_factors"), "shift_factors");
        l.flow_limit = jl.at("flow_limit").get<double>();
        sys.lines.push_back(std::move(l));
      }
    }
    const auto& k = doc.at("load_factors");
    const auto n_bus = static_cast<Eigen::Index>(sys.buses.size());
    if (k.is_number()) {
      // A scalar is a uniform distribution rule over the buses.
      sys.load_factors = Vector::Constant(n_bus, n_bus > 0 ? 1.0 / static_cast<double>(n_bus) : 0.0);
    } else {
      sys.load_factors = as_vector(k, "load_factors");
    }
    if (doc.contains("penalties")) {
      const auto& p = doc.at("penalties");
      sys.penalties.lambda_s = p.value("lambda_s", sys.penalties.lambda_s);
      sys.penalties.lambda_e = p.value("lambda_e", sys.penalties.lambda_e);
      sys.penalties.lambda_l = p.value("lambda_l", sys.penalties.lambda_l);
    }
    sys.horizon = doc.value("horizon", kHoursPerDay);
    return sys;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("system json: ") + e.what());
  }
}

nlohmann::json system_to_json(const SystemConfig& system) {
  nlohmann::json doc;
  doc["buses"] = system.buses;
  doc["generators"] = nlohmann::json::array();
  for (const auto& g : system.generators) {
    nlohmann::json jg = {{"id", g.id},       {"bus", g.bus},         {"a", g.a},
                         {"b", g.b},         {"c", g.c},             {"p_min", g.p_min},
                         {"p_max", g.p_max}, {"ramp_up", g.ramp_up}, {"ramp_down", g.ramp_down}};
    if (g.p_initial) jg["p_initial"] = *g.p_initial;
    doc["generators"].push_back(std::move(jg));
  }
  doc["lines"] = nlohmann::json::array();
  for (const auto& l : system.lines) {
    doc["lines"].push_back({{"id", l.id},
                            {"shift_factors", std::vector<double>(l.shift_factors.begin(), l.shift_factors.end())},
                            {"flow_limit", l.flow_limit}});
  }
  doc["load_factors"] = std::vector<double>(system.load_factors.begin(), system.load_factors.end());
  doc["penalties"] = {{"lambda_s", system.penalties.lambda_s},
                      {"lambda_e", system.penalties.lambda_e},
                      {"lambda_l", system.penalties.lambda_l}};
  doc["horizon"] = system.horizon;
  return doc;
}

SystemConfig load_system(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open system file " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("system file " + path.string() + ": " + e.what());
  }
  return validate_system(system_from_json(doc));
}

}  // namespace grid
}  // namespace lfednet
