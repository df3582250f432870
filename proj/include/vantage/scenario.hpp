#pragma once
// Scenario configuration: a flat, typed key = value format plus one [turbine]
// or [tower] section per scene object. Parsing is strict; unknown keys and
// malformed values are rejected with their line number, unknown keys with the
// closest valid key. serialize_scenario emits a canonical form that reparses
// to an equal scenario and is byte-stable under a second round trip.

#include <vantage/control.hpp>
#include <vantage/core.hpp>
#include <vantage/quad_dynamics.hpp>
#include <vantage/sensors.hpp>
#include <vantage/sim_world.hpp>

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace vantage::cfg {

struct Scenario {
  std::uint64_t seed = 1;
  int runs = 10;
  std::string output_dir = "out";
  world::ObjectKind target_class = world::ObjectKind::WindTurbine;
  Vec3 start_position{0.0, 0.0, -40.0};
  double start_yaw = 0.0;
  dyn::QuadParams quad;
  sense::NoiseConfig noise;
  sense::CameraIntrinsics camera;
  ctrl::ControlGains gains;
  world::Scene scene;
};

namespace detail {

inline int levenshtein(const std::string& a, const std::string& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<int> row(m + 1);
  for (std::size_t j = 0; j <= m; ++j) row[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    int diag = row[0];
    row[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const int ins = std::min(row[j], row[j - 1]) + 1;
      const int sub = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
      diag = row[j];
      row[j] = std::min(ins, sub);
    }
  }
  return row[m];
}

inline std::string closest(const std::string& word,
                           const std::vector<std::string>& candidates) {
  std::string best;
  int best_cost = 1 << 30;
  for (const auto& c : candidates) {
    const int cost = levenshtein(word, c);
    if (cost < best_cost) {
      best_cost = cost;
      best = c;
    }
  }
  return best;
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& value, int line,
                           const std::string& key) {
  const char* begin = value.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || !std::isfinite(v)) {
    throw ConfigError(line, "expected a number for '" + key + "', got '" +
                                value + "'");
  }
  return v;
}

inline std::uint64_t parse_uint(const std::string& value, int line,
                                const std::string& key) {
  if (value.empty() || value[0] == '-') {
    throw ConfigError(line, "expected a non-negative integer for '" + key +
                                "', got '" + value + "'");
  }
  const char* begin = value.c_str();
  char* end = nullptr;
  const std::uint64_t v = std::strtoull(begin, &end, 10);
  if (end == begin || *end != '\0') {
    throw ConfigError(line, "expected a non-negative integer for '" + key +
                                "', got '" + value + "'");
  }
  return v;
}

/// One key slot: a named reference into the scenario being built.
struct KeyRef {
  std::string name;
  enum class Type { Double, Uint64, Int, String } type;
  void* slot;
};

inline std::vector<KeyRef> flat_keys(Scenario& sc, std::string& target_word) {
  return {
      {"seed", KeyRef::Type::Uint64, &sc.seed},
      {"runs", KeyRef::Type::Int, &sc.runs},
      {"output_dir", KeyRef::Type::String, &sc.output_dir},
      {"target_class", KeyRef::Type::String, &target_word},
      {"start_x", KeyRef::Type::Double, &sc.start_position.x()},
      {"start_y", KeyRef::Type::Double, &sc.start_position.y()},
      {"start_z", KeyRef::Type::Double, &sc.start_position.z()},
      {"start_yaw", KeyRef::Type::Double, &sc.start_yaw},
      {"mass", KeyRef::Type::Double, &sc.quad.mass},
      {"gravity", KeyRef::Type::Double, &sc.quad.gravity},
      {"thrust_max", KeyRef::Type::Double, &sc.quad.thrust_max},
      {"torque_max", KeyRef::Type::Double, &sc.quad.torque_max},
      {"gps_pos_sigma", KeyRef::Type::Double, &sc.noise.gps_pos_sigma},
      {"gps_vel_sigma", KeyRef::Type::Double, &sc.noise.gps_vel_sigma},
      {"altimeter_sigma", KeyRef::Type::Double, &sc.noise.altimeter_sigma},
      {"gyro_sigma", KeyRef::Type::Double, &sc.noise.gyro_sigma},
      {"attitude_sigma", KeyRef::Type::Double, &sc.noise.attitude_sigma},
      {"pixel_sigma", KeyRef::Type::Double, &sc.noise.pixel_sigma},
      {"confidence_sigma", KeyRef::Type::Double, &sc.noise.confidence_sigma},
      {"focal_length", KeyRef::Type::Double, &sc.camera.focal},
      {"principal_u", KeyRef::Type::Double, &sc.camera.cu},
      {"principal_v", KeyRef::Type::Double, &sc.camera.cv},
      {"image_width", KeyRef::Type::Int, &sc.camera.width},
      {"image_height", KeyRef::Type::Int, &sc.camera.height},
      {"k_pos_t", KeyRef::Type::Double, &sc.gains.k_pos.x()},
      {"k_pos_n", KeyRef::Type::Double, &sc.gains.k_pos.y()},
      {"k_pos_b", KeyRef::Type::Double, &sc.gains.k_pos.z()},
      {"k_vel_t", KeyRef::Type::Double, &sc.gains.k_vel.x()},
      {"k_vel_n", KeyRef::Type::Double, &sc.gains.k_vel.y()},
      {"k_vel_b", KeyRef::Type::Double, &sc.gains.k_vel.z()},
      {"k_rot", KeyRef::Type::Double, &sc.gains.k_rot},
      {"k_omega", KeyRef::Type::Double, &sc.gains.k_omega},
      {"hover_kp", KeyRef::Type::Double, &sc.gains.hover_kp},
      {"hover_ki", KeyRef::Type::Double, &sc.gains.hover_ki},
      {"hover_kd", KeyRef::Type::Double, &sc.gains.hover_kd},
      {"integrator_limit", KeyRef::Type::Double, &sc.gains.integrator_limit},
      {"hover_accel_max", KeyRef::Type::Double, &sc.gains.hover_accel_max},
  };
}

inline std::vector<KeyRef> object_keys(world::SceneObject& obj) {
  std::vector<KeyRef> keys = {
      {"base_x", KeyRef::Type::Double, &obj.base.x()},
      {"base_y", KeyRef::Type::Double, &obj.base.y()},
      {"facing_yaw", KeyRef::Type::Double, &obj.facing_yaw},
  };
  if (obj.kind == world::ObjectKind::WindTurbine) {
    keys.push_back({"hub_height", KeyRef::Type::Double, &obj.hub_height});
    keys.push_back({"blade_length", KeyRef::Type::Double, &obj.blade_length});
    keys.push_back({"blade_omega", KeyRef::Type::Double, &obj.blade_omega});
    keys.push_back({"blade_angle", KeyRef::Type::Double, &obj.blade_angle});
  } else {
    keys.push_back({"tower_height", KeyRef::Type::Double, &obj.tower_height});
  }
  return keys;
}

inline void assign(const KeyRef& ref, const std::string& value, int line) {
  switch (ref.type) {
    case KeyRef::Type::Double:
      *static_cast<double*>(ref.slot) = parse_double(value, line, ref.name);
      break;
    case KeyRef::Type::Uint64:
      *static_cast<std::uint64_t*>(ref.slot) =
          parse_uint(value, line, ref.name);
      break;
    case KeyRef::Type::Int: {
      const std::uint64_t v = parse_uint(value, line, ref.name);
      if (v > 1000000) {
        throw ConfigError(line, "'" + ref.name + "' is implausibly large");
      }
      *static_cast<int*>(ref.slot) = static_cast<int>(v);
      break;
    }
    case KeyRef::Type::String:
      *static_cast<std::string*>(ref.slot) = value;
      break;
  }
}

}  // namespace detail

inline Scenario parse_scenario_text(const std::string& text) {
  Scenario sc;
  std::string target_word;
  int target_line = 0;
  int runs_line = 0;

  std::vector<detail::KeyRef> flat = detail::flat_keys(sc, target_word);
  std::vector<detail::KeyRef> active = flat;
  bool in_section = false;
  std::string section_name;

  std::istringstream stream(text);
  std::string raw;
  int line = 0;
  while (std::getline(stream, raw)) {
    ++line;
    const std::size_t hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string s = detail::trim(raw);
    if (s.empty()) continue;

    if (s.front() == '[') {
      if (s.back() != ']') {
        throw ConfigError(line, "unterminated section header '" + s + "'");
      }
      const std::string name = detail::trim(s.substr(1, s.size() - 2));
      world::SceneObject obj;
      if (name == "turbine") {
        obj.kind = world::ObjectKind::WindTurbine;
      } else if (name == "tower") {
        obj.kind = world::ObjectKind::ElectricTower;
      } else {
        throw ConfigError(line, "unknown section '[" + name +
                                    "]'; closest is '[" +
                                    detail::closest(name, {"turbine", "tower"}) +
                                    "]'");
      }
      sc.scene.objects.push_back(obj);
      active = detail::object_keys(sc.scene.objects.back());
      in_section = true;
      section_name = name;
      continue;
    }

    const std::size_t eq = s.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(line, "malformed line (expected key = value): '" + s +
                                  "'");
    }
    const std::string key = detail::trim(s.substr(0, eq));
    const std::string value = detail::trim(s.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(line, "missing key before '='");
    }

    const detail::KeyRef* ref = nullptr;
    for (const auto& k : active) {
      if (k.name == key) {
        ref = &k;
        break;
      }
    }
    if (ref == nullptr) {
      std::vector<std::string> names;
      names.reserve(active.size());
      for (const auto& k : active) names.push_back(k.name);
      const std::string where =
          in_section ? " in section [" + section_name + "]" : "";
      throw ConfigError(line, "unknown key '" + key + "'" + where +
                                  "; closest is '" +
                                  detail::closest(key, names) + "'");
    }
    detail::assign(*ref, value, line);
    if (key == "target_class") target_line = line;
    if (key == "runs") runs_line = line;
  }

  if (sc.runs < 1) {
    throw ConfigError(runs_line, "runs must be at least 1");
  }
  if (sc.scene.objects.empty()) {
    throw ConfigError(line, "scenario defines no scene object "
                            "(add a [turbine] or [tower] section)");
  }
  if (!target_word.empty()) {
    if (target_word == "turbine") {
      sc.target_class = world::ObjectKind::WindTurbine;
    } else if (target_word == "tower") {
      sc.target_class = world::ObjectKind::ElectricTower;
    } else {
      throw ConfigError(target_line, "target_class must be 'turbine' or "
                                     "'tower', got '" +
                                         target_word + "'");
    }
  } else {
    sc.target_class = sc.scene.objects.front().kind;
  }
  return sc;
}

inline Scenario parse_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError(0, "cannot open scenario file '" + path + "'");
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_scenario_text(buffer.str());
}

inline std::string serialize_scenario(const Scenario& sc) {
  std::ostringstream out;
  const auto put = [&](const char* key, double v) {
    out << key << " = " << format_number(v) << "\n";
  };
  out << "seed = " << sc.seed << "\n";
  out << "runs = " << sc.runs << "\n";
  out << "output_dir = " << sc.output_dir << "\n";
  out << "target_class = "
      << (sc.target_class == world::ObjectKind::WindTurbine ? "turbine"
                                                            : "tower")
      << "\n";
  put("start_x", sc.start_position.x());
  put("start_y", sc.start_position.y());
  put("start_z", sc.start_position.z());
  put("start_yaw", sc.start_yaw);
  put("mass", sc.quad.mass);
  put("gravity", sc.quad.gravity);
  put("thrust_max", sc.quad.thrust_max);
  put("torque_max", sc.quad.torque_max);
  put("gps_pos_sigma", sc.noise.gps_pos_sigma);
  put("gps_vel_sigma", sc.noise.gps_vel_sigma);
  put("altimeter_sigma", sc.noise.altimeter_sigma);
  put("gyro_sigma", sc.noise.gyro_sigma);
  put("attitude_sigma", sc.noise.attitude_sigma);
  put("pixel_sigma", sc.noise.pixel_sigma);
  put("confidence_sigma", sc.noise.confidence_sigma);
  put("focal_length", sc.camera.focal);
  put("principal_u", sc.camera.cu);
  put("principal_v", sc.camera.cv);
  out << "image_width = " << sc.camera.width << "\n";
  out << "image_height = " << sc.camera.height << "\n";
  put("k_pos_t", sc.gains.k_pos.x());
  put("k_pos_n", sc.gains.k_pos.y());
  put("k_pos_b", sc.gains.k_pos.z());
  put("k_vel_t", sc.gains.k_vel.x());
  put("k_vel_n", sc.gains.k_vel.y());
  put("k_vel_b", sc.gains.k_vel.z());
  put("k_rot", sc.gains.k_rot);
  put("k_omega", sc.gains.k_omega);
  put("hover_kp", sc.gains.hover_kp);
  put("hover_ki", sc.gains.hover_ki);
  put("hover_kd", sc.gains.hover_kd);
  put("integrator_limit", sc.gains.integrator_limit);
  put("hover_accel_max", sc.gains.hover_accel_max);
  for (const auto& obj : sc.scene.objects) {
    if (obj.kind == world::ObjectKind::WindTurbine) {
      out << "[turbine]\n";
      put("base_x", obj.base.x());
      put("base_y", obj.base.y());
      put("facing_yaw", obj.facing_yaw);
      put("hub_height", obj.hub_height);
      put("blade_length", obj.blade_length);
      put("blade_omega", obj.blade_omega);
      put("blade_angle", obj.blade_angle);
    } else {
      out << "[tower]\n";
      put("base_x", obj.base.x());
      put("base_y", obj.base.y());
      put("facing_yaw", obj.facing_yaw);
      put("tower_height", obj.tower_height);
    }
  }
  return out.str();
}

}  // namespace vantage::cfg
