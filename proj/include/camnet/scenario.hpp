#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "camnet/errors.hpp"
#include "camnet/geo.hpp"

namespace camnet {

inline constexpr int kScenarioSteps = 110;
inline constexpr int kObsSteps = 50;     // slots 0..49
inline constexpr int kFutureSteps = 60;  // slots 50..109
inline constexpr int64_t kStepMs = 100;
inline constexpr double kStepSeconds = 0.1;

// One grid slot of an agent. heading is in math radians (counterclockwise
// from +x/east, range [0, 2*pi)); x/y are UTM easting/northing meters in the
// scenario zone.
struct AgentState {
  double x = 0.0;
  double y = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  double heading = 0.0;
};

struct AgentTrack {
  uint64_t station_id = 0;
  std::array<AgentState, kScenarioSteps> states{};
  std::array<bool, kScenarioSteps> valid{};
  bool focal = false;

  bool valid_all() const {
    return std::all_of(valid.begin(), valid.end(), [](bool b) { return b; });
  }
  int valid_count() const {
    return (int)std::count(valid.begin(), valid.end(), true);
  }
};

struct Scenario {
  std::string id;
  int zone = 0;
  geo::Hemisphere hemisphere = geo::Hemisphere::North;
  int64_t anchor_t = 0;  // ms of slot 0; slot i sits at anchor_t + 100*i
  std::vector<AgentTrack> agents;

  const AgentTrack* focal_agent() const {
    for (const AgentTrack& a : agents)
      if (a.focal) return &a;
    return nullptr;
  }
};

inline nlohmann::json scenario_to_json(const Scenario& s) {
  nlohmann::json j;
  j["id"] = s.id;
  j["zone"] = s.zone;
  j["hemisphere"] = s.hemisphere == geo::Hemisphere::North ? "north" : "south";
  j["anchor_t_ms"] = s.anchor_t;
  nlohmann::json agents = nlohmann::json::array();
  for (const AgentTrack& a : s.agents) {
    nlohmann::json ja;
    ja["station_id"] = a.station_id;
    nlohmann::json states = nlohmann::json::array();
    nlohmann::json valid = nlohmann::json::array();
    for (int i = 0; i < kScenarioSteps; ++i) {
      const AgentState& st = a.states[i];
      states.push_back({st.x, st.y, st.vx, st.vy, st.heading});
      valid.push_back(a.valid[i]);
    }
    ja["states"] = std::move(states);
    ja["valid"] = std::move(valid);
    ja["focal"] = a.focal;
    agents.push_back(std::move(ja));
  }
  j["agents"] = std::move(agents);
  return j;
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
  Scenario s;
  try {
    s.id = j.at("id").get<std::string>();
    s.zone = j.at("zone").get<int>();
    std::string hemi = j.at("hemisphere").get<std::string>();
    if (hemi == "north")
      s.hemisphere = geo::Hemisphere::North;
    else if (hemi == "south")
      s.hemisphere = geo::Hemisphere::South;
    else
      throw_error(ErrorKind::MalformedFile, "scenario: bad hemisphere '" + hemi + "'");
    s.anchor_t = j.at("anchor_t_ms").get<int64_t>();
    for (const nlohmann::json& ja : j.at("agents")) {
      AgentTrack a;
      a.station_id = ja.at("station_id").get<uint64_t>();
      a.focal = ja.at("focal").get<bool>();
      const nlohmann::json& states = ja.at("states");
      const nlohmann::json& valid = ja.at("valid");
      if ((int)states.size() != kScenarioSteps || (int)valid.size() != kScenarioSteps)
        throw_error(ErrorKind::ShapeMismatch,
                    "scenario agent " + std::to_string(a.station_id) +
                        ": expected 110 states/valid entries");
      for (int i = 0; i < kScenarioSteps; ++i) {
        a.valid[i] = valid[i].get<bool>();
        const nlohmann::json& row = states[i];
        if ((int)row.size() != 5)
          throw_error(ErrorKind::ShapeMismatch, "scenario state row must have 5 entries");
        if (a.valid[i]) {
          a.states[i] = {row[0].get<double>(), row[1].get<double>(),
                         row[2].get<double>(), row[3].get<double>(),
                         row[4].get<double>()};
        }  // invalid slots keep the zero sentinel regardless of file content
      }
      s.agents.push_back(std::move(a));
    }
  } catch (const Error&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw_error(ErrorKind::MalformedFile, std::string("scenario json: ") + e.what());
  }
  if (s.zone < 1 || s.zone > 60)
    throw_error(ErrorKind::MalformedFile, "scenario: zone out of range");
  bool any_focal = false;
  for (const AgentTrack& a : s.agents) any_focal = any_focal || (a.focal && a.valid_all());
  if (!any_focal)
    throw_error(ErrorKind::MalformedFile,
                "scenario " + s.id + ": no focal agent valid at all 110 slots");
  return s;
}

inline void save_scenario(const Scenario& s, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw_error(ErrorKind::Io, "cannot write " + file.string());
  out << scenario_to_json(s).dump(2) << "\n";
  if (!out) throw_error(ErrorKind::Io, "write failed: " + file.string());
}

// Writes one <id>.json per scenario into `dir` (created if absent).
inline void save_scenarios(const std::vector<Scenario>& scenarios,
                           const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  for (const Scenario& s : scenarios) save_scenario(s, dir / (s.id + ".json"));
}

inline Scenario load_scenario(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw_error(ErrorKind::Io, "cannot read " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw_error(ErrorKind::MalformedFile, file.string() + ": " + e.what());
  }
  return scenario_from_json(j);
}

// Accepts either a single scenario file or a directory of *.json scenarios
// (read in lexicographic filename order). The rejection report that ingest
// drops next to its scenarios is not a scenario and is skipped.
inline std::vector<Scenario> load_scenarios(const std::filesystem::path& path) {
  std::vector<Scenario> out;
  if (std::filesystem::is_directory(path)) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(path))
      if (e.is_regular_file() && e.path().extension() == ".json" &&
          e.path().filename() != "ingest_report.json")
        files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out.push_back(load_scenario(f));
  } else if (std::filesystem::exists(path)) {
    out.push_back(load_scenario(path));
  } else {
    throw_error(ErrorKind::Io, "no such file or directory: " + path.string());
  }
  return out;
}

}  // namespace camnet
