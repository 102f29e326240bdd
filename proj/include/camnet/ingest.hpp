#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "camnet/cam.hpp"
#include "camnet/errors.hpp"
#include "camnet/geo.hpp"
#include "camnet/log.hpp"
#include "camnet/rng.hpp"
#include "camnet/scenario.hpp"
#include "camnet/track.hpp"

namespace camnet {

enum class RecordFormat { Jsonl, Csv };

struct ParseResult {
  std::vector<CamRecord> records;
  size_t total_lines = 0;  // non-blank lines seen
  size_t malformed = 0;
  std::vector<std::string> first_offenders;  // up to 10 "line N: why" entries
};

namespace detail {

inline int64_t floor_div(int64_t a, int64_t b) {
  int64_t q = a / b, r = a % b;
  return (r != 0 && ((r < 0) != (b < 0))) ? q - 1 : q;
}

inline bool is_on_grid(int64_t t) { return t % kStepMs == 0; }

// shortest round-trip decimal for doubles (CSV output)
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// shorter-arc heading interpolation helper: wraps delta into (-180, 180]
inline double wrap_heading_delta(double delta_deg) {
  double d = std::fmod(delta_deg, 360.0);
  if (d > 180.0) d -= 360.0;
  if (d <= -180.0) d += 360.0;
  return d;
}

inline double northing_in_frame(const geo::UtmPoint& p, geo::Hemisphere frame) {
  if (p.hemisphere == frame) return p.northing;
  return frame == geo::Hemisphere::South ? p.northing + geo::kFalseNorthingSouth
                                         : p.northing - geo::kFalseNorthingSouth;
}

struct LineError {
  size_t line_no;
  std::string why;
};

// Extracts one CamRecord from a parsed JSON object. Returns an error string
// for malformed lines; missing optional payload fields are tolerated (the
// record is carried incomplete and dropped later by dedup).
inline std::optional<std::string> record_from_json(const nlohmann::json& j, CamRecord& out) {
  if (!j.is_object()) return "not a json object";
  const auto sid = j.find("station_id");
  if (sid == j.end() || !sid->is_number_integer() || sid->get<int64_t>() < 0)
    return "missing or invalid station_id";
  out.station_id = sid->get<uint64_t>();
  const auto t = j.find("t_ms");
  if (t == j.end() || !t->is_number_integer() || t->get<int64_t>() < 0)
    return "missing or invalid t_ms";
  out.t = t->get<int64_t>();

  auto num = [&](const char* key, double& v) -> int {
    const auto it = j.find(key);
    if (it == j.end()) return 0;  // absent
    if (!it->is_number()) return -1;
    v = it->get<double>();
    return std::isfinite(v) ? 1 : -1;
  };
  double lat = 0, lon = 0, speed = 0, heading = 0;
  int has_lat = num("lat_deg", lat);
  int has_lon = num("lon_deg", lon);
  int has_speed = num("speed_mps", speed);
  int has_heading = num("heading_deg", heading);
  if (has_lat < 0 || (has_lat > 0 && (lat < -90.0 || lat > 90.0))) return "lat_deg out of range";
  if (has_lon < 0 || (has_lon > 0 && (lon < -180.0 || lon >= 180.0))) return "lon_deg out of range";
  if (has_speed < 0 || (has_speed > 0 && speed < 0.0)) return "speed_mps out of range";
  if (has_heading < 0) return "heading_deg invalid";
  if (has_lat > 0 && has_lon > 0) out.pos = geo::GeoPoint{lat, lon};
  if (has_speed > 0) out.speed = speed;
  if (has_heading > 0) out.heading = geo::Heading(heading);
  const auto rsu = j.find("rsu_id");
  if (rsu != j.end()) {
    if (!rsu->is_string()) return "rsu_id must be a string";
    out.rsu_id = rsu->get<std::string>();
  }
  return std::nullopt;
}

// minimal RFC4180 field splitter (quotes, doubled-quote escapes)
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline bool parse_number(const std::string& s, double& v) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto res = std::from_chars(b, e, v);
  return res.ec == std::errc() && res.ptr == e && std::isfinite(v);
}

inline bool parse_u64(const std::string& s, uint64_t& v) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto res = std::from_chars(b, e, v);
  return res.ec == std::errc() && res.ptr == e;
}

}  // namespace detail

inline ParseResult parse_records(const std::filesystem::path& path, RecordFormat format) {
  std::ifstream in(path);
  if (!in) throw_error(ErrorKind::Io, "cannot read " + path.string());
  ParseResult out;
  std::vector<detail::LineError> errors;
  auto note_error = [&](size_t line_no, std::string why) {
    ++out.malformed;
    if (errors.size() < 10) errors.push_back({line_no, std::move(why)});
  };

  std::string line;
  size_t line_no = 0;
  std::map<std::string, int> csv_cols;
  bool header_done = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;

    if (format == RecordFormat::Csv && !header_done) {
      std::vector<std::string> cols = detail::split_csv(line);
      for (size_t i = 0; i < cols.size(); ++i) csv_cols[cols[i]] = (int)i;
      if (!csv_cols.count("station_id") || !csv_cols.count("t_ms"))
        throw_error(ErrorKind::MalformedFile,
                    path.string() + ": csv header must name station_id and t_ms");
      header_done = true;
      continue;
    }
    ++out.total_lines;

    CamRecord rec;
    if (format == RecordFormat::Jsonl) {
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) {
        note_error(line_no, "invalid json");
        continue;
      }
      if (auto why = detail::record_from_json(j, rec)) {
        note_error(line_no, *why);
        continue;
      }
    } else {
      std::vector<std::string> f = detail::split_csv(line);
      auto field = [&](const char* name) -> const std::string* {
        auto it = csv_cols.find(name);
        if (it == csv_cols.end() || it->second >= (int)f.size()) return nullptr;
        if (f[it->second].empty()) return nullptr;
        return &f[it->second];
      };
      const std::string* s;
      if (!(s = field("station_id")) || !detail::parse_u64(*s, rec.station_id)) {
        note_error(line_no, "missing or invalid station_id");
        continue;
      }
      uint64_t t = 0;
      if (!(s = field("t_ms")) || !detail::parse_u64(*s, t)) {
        note_error(line_no, "missing or invalid t_ms");
        continue;
      }
      rec.t = (int64_t)t;
      double lat = 0, lon = 0, v = 0;
      bool bad = false;
      const std::string* slat = field("lat_deg");
      const std::string* slon = field("lon_deg");
      if (slat && (!detail::parse_number(*slat, lat) || lat < -90.0 || lat > 90.0)) bad = true;
      if (slon && (!detail::parse_number(*slon, lon) || lon < -180.0 || lon >= 180.0)) bad = true;
      if (bad) {
        note_error(line_no, "lat/lon out of range");
        continue;
      }
      if (slat && slon) rec.pos = geo::GeoPoint{lat, lon};
      if ((s = field("speed_mps"))) {
        if (!detail::parse_number(*s, v) || v < 0.0) {
          note_error(line_no, "speed_mps out of range");
          continue;
        }
        rec.speed = v;
      }
      if ((s = field("heading_deg"))) {
        if (!detail::parse_number(*s, v)) {
          note_error(line_no, "heading_deg invalid");
          continue;
        }
        rec.heading = geo::Heading(v);
      }
      if ((s = field("rsu_id"))) rec.rsu_id = *s;
    }
    out.records.push_back(std::move(rec));
  }
  if (format == RecordFormat::Csv && !header_done)
    throw_error(ErrorKind::MalformedFile, path.string() + ": missing csv header");

  for (const auto& e : errors)
    out.first_offenders.push_back("line " + std::to_string(e.line_no) + ": " + e.why);
  if (out.total_lines > 0 &&
      (double)out.malformed > 0.01 * (double)out.total_lines) {
    std::string msg = path.string() + ": " + std::to_string(out.malformed) + "/" +
                      std::to_string(out.total_lines) + " lines malformed;";
    for (const auto& o : out.first_offenders) msg += "\n  " + o;
    throw_error(ErrorKind::MalformedFile, msg);
  }
  if (out.malformed > 0)
    log::warn("parse_records: " + std::to_string(out.malformed) + " malformed line(s) in " +
              path.string());
  return out;
}

inline void write_records(const std::vector<CamRecord>& records,
                          const std::filesystem::path& path, RecordFormat format) {
  std::ofstream out(path);
  if (!out) throw_error(ErrorKind::Io, "cannot write " + path.string());
  if (format == RecordFormat::Csv)
    out << "station_id,t_ms,lat_deg,lon_deg,speed_mps,heading_deg,rsu_id\n";
  for (const CamRecord& r : records) {
    if (!r.complete()) continue;
    if (format == RecordFormat::Jsonl) {
      nlohmann::json j;
      j["station_id"] = r.station_id;
      j["t_ms"] = r.t;
      j["lat_deg"] = r.pos->lat;
      j["lon_deg"] = r.pos->lon;
      j["speed_mps"] = *r.speed;
      j["heading_deg"] = r.heading->degrees();
      if (r.rsu_id) j["rsu_id"] = *r.rsu_id;
      out << j.dump() << "\n";
    } else {
      out << r.station_id << "," << r.t << "," << detail::format_double(r.pos->lat) << ","
          << detail::format_double(r.pos->lon) << "," << detail::format_double(*r.speed)
          << "," << detail::format_double(r.heading->degrees()) << ","
          << (r.rsu_id ? *r.rsu_id : "") << "\n";
    }
  }
  if (!out) throw_error(ErrorKind::Io, "write failed: " + path.string());
}

// Groups by station, dedups, projects into the zone of each station's
// earliest record, and returns time-sorted irregular tracks. Records that
// fall outside the zone overlap margin of their station's frame are dropped
// with a warning (garbage GPS), keeping this stage error-free per contract.
inline std::vector<Track> build_tracks(const std::vector<CamRecord>& records) {
  std::map<uint64_t, std::vector<CamRecord>> by_station;
  for (const CamRecord& r : dedup(records)) by_station[r.station_id].push_back(r);

  std::vector<Track> tracks;
  for (auto& [sid, recs] : by_station) {
    std::stable_sort(recs.begin(), recs.end(),
                     [](const CamRecord& a, const CamRecord& b) { return a.t < b.t; });
    Track tr;
    tr.station_id = sid;
    tr.rate = TrackRate::Irregular;
    bool have_frame = false;
    for (const CamRecord& r : recs) {
      geo::UtmPoint u;
      if (!have_frame) {
        u = geo::to_utm(*r.pos);
        tr.zone = u.zone;
        tr.hemisphere = u.hemisphere;
        have_frame = true;
      } else {
        try {
          u = geo::to_utm(*r.pos, tr.zone);
        } catch (const Error&) {
          log::warn("build_tracks: station " + std::to_string(sid) + " record at t=" +
                    std::to_string(r.t) + " outside zone " + std::to_string(tr.zone) +
                    " margin; dropped");
          continue;
        }
      }
      tr.samples.push_back({r.t, u.easting, detail::northing_in_frame(u, tr.hemisphere),
                            *r.speed, *r.heading});
    }
    if (!tr.samples.empty()) tracks.push_back(std::move(tr));
  }
  return tracks;
}

// First interpolation stage: fills gaps <= 1000 ms with samples on a 100 ms
// lattice anchored at the earlier sample. Longer gaps are preserved and act
// as track split points downstream.
inline Track densify(const Track& track) {
  Track out;
  out.station_id = track.station_id;
  out.zone = track.zone;
  out.hemisphere = track.hemisphere;
  out.rate = TrackRate::Irregular;
  for (size_t i = 0; i < track.samples.size(); ++i) {
    const TrackSample& a = track.samples[i];
    out.samples.push_back(a);
    if (i + 1 >= track.samples.size()) break;
    const TrackSample& b = track.samples[i + 1];
    int64_t gap = b.t - a.t;
    if (gap > 1000 || gap <= kStepMs) continue;
    double dh = detail::wrap_heading_delta(b.heading.degrees() - a.heading.degrees());
    for (int64_t t = a.t + kStepMs; t < b.t; t += kStepMs) {
      double f = (double)(t - a.t) / (double)gap;
      TrackSample s;
      s.t = t;
      s.x = a.x + f * (b.x - a.x);
      s.y = a.y + f * (b.y - a.y);
      s.speed = a.speed + f * (b.speed - a.speed);
      s.heading = geo::Heading(a.heading.degrees() + f * dh);
      out.samples.push_back(s);
    }
  }
  return out;
}

// Second interpolation stage: re-evaluates the track on the global 100 ms
// grid (t = 0 mod 100). Samples already on the grid are copied; other grid
// points are linearly interpolated when both bracketing samples are within
// 200 ms; off-grid samples with no usable bracket contribute nothing.
inline Track resample_10hz(const Track& track) {
  Track out;
  out.station_id = track.station_id;
  out.zone = track.zone;
  out.hemisphere = track.hemisphere;
  out.rate = TrackRate::Fixed10Hz;

  std::map<int64_t, TrackSample> grid;
  for (const TrackSample& s : track.samples)
    if (detail::is_on_grid(s.t)) grid[s.t] = s;

  for (size_t i = 0; i + 1 < track.samples.size(); ++i) {
    const TrackSample& a = track.samples[i];
    const TrackSample& b = track.samples[i + 1];
    double dh = detail::wrap_heading_delta(b.heading.degrees() - a.heading.degrees());
    int64_t first = (detail::floor_div(a.t, kStepMs) + 1) * kStepMs;  // first grid t > a.t
    for (int64_t t = first; t < b.t; t += kStepMs) {
      if (t - a.t > 200) break;
      if (b.t - t > 200) continue;
      double f = (double)(t - a.t) / (double)(b.t - a.t);
      TrackSample s;
      s.t = t;
      s.x = a.x + f * (b.x - a.x);
      s.y = a.y + f * (b.y - a.y);
      s.speed = a.speed + f * (b.speed - a.speed);
      s.heading = geo::Heading(a.heading.degrees() + f * dh);
      grid.emplace(t, s);  // exact on-grid copies take precedence
    }
  }
  for (auto& [t, s] : grid) out.samples.push_back(s);
  return out;
}

inline std::vector<std::string> validate_scenario(const Scenario& s) {
  std::vector<std::string> flags;
  std::map<uint64_t, int> station_count;
  for (const AgentTrack& a : s.agents) ++station_count[a.station_id];
  for (const auto& [sid, n] : station_count)
    if (n > 1)
      flags.push_back("duplicate station_id " + std::to_string(sid));

  for (const AgentTrack& a : s.agents) {
    const std::string who = "agent " + std::to_string(a.station_id);
    for (int i = 0; i < kScenarioSteps; ++i) {
      if (!a.valid[i]) continue;
      double sp = std::hypot(a.states[i].vx, a.states[i].vy);
      if (sp > 70.0)
        flags.push_back(who + " slot " + std::to_string(i) + ": speed " +
                        detail::format_double(sp) + " m/s > 70");
      if (i + 1 < kScenarioSteps && a.valid[i + 1]) {
        double disp = std::hypot(a.states[i + 1].x - a.states[i].x,
                                 a.states[i + 1].y - a.states[i].y);
        if (disp > 20.0)
          flags.push_back(who + " slot " + std::to_string(i) + ": teleport " +
                          detail::format_double(disp) + " m");
        if (std::fabs(disp - sp * kStepSeconds) > 5.0)
          flags.push_back(who + " slot " + std::to_string(i) +
                          ": displacement inconsistent with speed (" +
                          detail::format_double(disp) + " m vs " +
                          detail::format_double(sp * kStepSeconds) + " m)");
      }
    }
  }
  return flags;
}

namespace detail {

// Positions of one track around a window, re-projected into the scenario
// frame. index 0 maps to grid slot `anchor_idx - 1` (one extra slot on each
// side so central differences at the window edges see real neighbors).
struct FramedTrack {
  std::vector<bool> present;          // kScenarioSteps + 2 entries
  std::vector<TrackSample> samples;   // scenario-frame x/y
  bool ok = true;                     // false if re-projection failed
};

inline FramedTrack frame_track(const Track& tr, const std::map<int64_t, size_t>& grid,
                               int64_t anchor_idx, int zone, geo::Hemisphere hemi) {
  FramedTrack f;
  f.present.assign(kScenarioSteps + 2, false);
  f.samples.resize(kScenarioSteps + 2);
  bool same_frame = tr.zone == zone;
  for (int i = 0; i < kScenarioSteps + 2; ++i) {
    auto it = grid.find(anchor_idx - 1 + i);
    if (it == grid.end()) continue;
    TrackSample s = tr.samples[it->second];
    if (same_frame) {
      if (tr.hemisphere != hemi)
        s.y = tr.hemisphere == geo::Hemisphere::North ? s.y + geo::kFalseNorthingSouth
                                                      : s.y - geo::kFalseNorthingSouth;
    } else {
      try {
        geo::GeoPoint g = geo::from_utm({s.x, s.y, tr.zone, tr.hemisphere});
        geo::UtmPoint u = geo::to_utm(g, zone);
        s.x = u.easting;
        s.y = northing_in_frame(u, hemi);
      } catch (const Error&) {
        f.ok = false;
        return f;
      }
    }
    f.present[i] = true;
    f.samples[i] = s;
  }
  return f;
}

inline AgentTrack agent_from_frame(const Track& tr, const FramedTrack& f, bool focal) {
  AgentTrack a;
  a.station_id = tr.station_id;
  a.focal = focal;
  for (int i = 0; i < kScenarioSteps; ++i) {
    int j = i + 1;  // offset into the padded frame
    if (!f.present[j]) continue;
    const TrackSample& s = f.samples[j];
    a.valid[i] = true;
    AgentState& st = a.states[i];
    st.x = s.x;
    st.y = s.y;
    st.heading = s.heading.radians_math();
    bool has_prev = f.present[j - 1];
    bool has_next = f.present[j + 1];
    if (has_prev && has_next) {
      st.vx = (f.samples[j + 1].x - f.samples[j - 1].x) / (2.0 * kStepSeconds);
      st.vy = (f.samples[j + 1].y - f.samples[j - 1].y) / (2.0 * kStepSeconds);
    } else if (has_next) {
      st.vx = (f.samples[j + 1].x - s.x) / kStepSeconds;
      st.vy = (f.samples[j + 1].y - s.y) / kStepSeconds;
    } else if (has_prev) {
      st.vx = (s.x - f.samples[j - 1].x) / kStepSeconds;
      st.vy = (s.y - f.samples[j - 1].y) / kStepSeconds;
    } else {
      // isolated slot: fall back to the reported speed along the heading
      st.vx = s.speed * std::cos(st.heading);
      st.vy = s.speed * std::sin(st.heading);
    }
  }
  return a;
}

inline std::string scenario_id(int64_t anchor_t) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "scn_t%015lld", (long long)anchor_t);
  return buf;
}

}  // namespace detail

// Slides 110-step windows over the global 100 ms grid. Windows with at least
// one fully-valid (focal) track become scenarios; scenarios failing
// validate_scenario are logged and excluded. `rejected`, when given, receives
// (scenario id, flags) for the excluded ones.
inline std::vector<Scenario> mine_scenarios(
    const std::vector<Track>& tracks, int stride = kScenarioSteps,
    std::vector<std::pair<std::string, std::vector<std::string>>>* rejected = nullptr) {
  if (stride < 1) throw_error(ErrorKind::Config, "mine_scenarios: stride must be >= 1");

  // per-track grid index -> sample index
  std::vector<std::map<int64_t, size_t>> grids(tracks.size());
  int64_t gmin = INT64_MAX, gmax = INT64_MIN;
  for (size_t k = 0; k < tracks.size(); ++k) {
    for (size_t i = 0; i < tracks[k].samples.size(); ++i) {
      int64_t t = tracks[k].samples[i].t;
      if (!detail::is_on_grid(t)) {
        log::warn("mine_scenarios: off-grid sample t=" + std::to_string(t) +
                  " (station " + std::to_string(tracks[k].station_id) + ") ignored");
        continue;
      }
      int64_t gi = detail::floor_div(t, kStepMs);
      grids[k][gi] = i;
      gmin = std::min(gmin, gi);
      gmax = std::max(gmax, gi);
    }
  }

  std::vector<Scenario> out;
  if (gmin == INT64_MAX) return out;
  for (int64_t anchor = gmin; anchor + kScenarioSteps - 1 <= gmax; anchor += stride) {
    // focal candidates: tracks present at all 110 slots
    std::vector<size_t> focal, neighbors;
    for (size_t k = 0; k < tracks.size(); ++k) {
      int present = 0;
      for (int i = 0; i < kScenarioSteps; ++i)
        if (grids[k].count(anchor + i)) ++present;
      if (present == kScenarioSteps)
        focal.push_back(k);
      else if (present > 0)
        neighbors.push_back(k);
    }
    if (focal.empty()) continue;

    auto by_station = [&](size_t a, size_t b) {
      return tracks[a].station_id < tracks[b].station_id;
    };
    std::sort(focal.begin(), focal.end(), by_station);
    std::sort(neighbors.begin(), neighbors.end(), by_station);

    Scenario s;
    s.anchor_t = anchor * kStepMs;
    s.id = detail::scenario_id(s.anchor_t);
    s.zone = tracks[focal[0]].zone;
    s.hemisphere = tracks[focal[0]].hemisphere;
    auto add_agent = [&](size_t k, bool is_focal) {
      detail::FramedTrack f =
          detail::frame_track(tracks[k], grids[k], anchor, s.zone, s.hemisphere);
      if (!f.ok) {
        log::warn("mine_scenarios: station " + std::to_string(tracks[k].station_id) +
                  " cannot be re-projected into zone " + std::to_string(s.zone) +
                  "; dropped from " + s.id);
        return;
      }
      s.agents.push_back(detail::agent_from_frame(tracks[k], f, is_focal));
    };
    for (size_t k : focal) add_agent(k, true);
    if (s.agents.empty()) continue;  // all focal tracks failed re-projection
    for (size_t k : neighbors) add_agent(k, false);

    std::vector<std::string> flags = validate_scenario(s);
    if (!flags.empty()) {
      log::info("mine_scenarios: excluding " + s.id + " (" + std::to_string(flags.size()) +
                " validation flag(s), first: " + flags[0] + ")");
      if (rejected) rejected->emplace_back(s.id, std::move(flags));
      continue;
    }
    out.push_back(std::move(s));
  }
  return out;
}

// Full pipeline from raw records to validated scenarios.
inline std::vector<Scenario> build_scenarios(const std::vector<CamRecord>& records,
                                             int stride = kScenarioSteps) {
  std::vector<Track> fixed;
  for (const Track& tr : build_tracks(records)) {
    Track r = resample_10hz(densify(tr));
    if (!r.samples.empty()) fixed.push_back(std::move(r));
  }
  return mine_scenarios(fixed, stride);
}

inline std::pair<std::vector<Scenario>, std::vector<Scenario>> dataset_split(
    std::vector<Scenario> scenarios, double ratio, uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0))
    throw_error(ErrorKind::Config, "dataset_split: ratio must be in (0, 1)");
  // Fisher-Yates under our own rng so the split is stable across platforms
  Rng rng(mix_seed(seed, 0x5714ULL));  // split-stream salt
  for (size_t i = scenarios.size(); i > 1; --i) {
    size_t j = rng.below(i);
    std::swap(scenarios[i - 1], scenarios[j]);
  }
  size_t n_train = (size_t)std::llround(ratio * (double)scenarios.size());
  n_train = std::min(n_train, scenarios.size());
  std::vector<Scenario> train(scenarios.begin(), scenarios.begin() + n_train);
  std::vector<Scenario> val(scenarios.begin() + n_train, scenarios.end());
  return {std::move(train), std::move(val)};
}

struct StatsReport {
  size_t scenario_count = 0;
  size_t focal_count = 0;
  size_t valid_slot_count = 0;
  std::map<int, size_t> agents_hist;  // #agents with >=1 valid slot -> #scenarios
  std::map<int, size_t> speed_hist;   // floor(speed m/s) 1 m/s bins over valid slots
  double speed_mean = 0.0;
  double speed_max = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["scenario_count"] = scenario_count;
    j["focal_count"] = focal_count;
    j["valid_slot_count"] = valid_slot_count;
    j["speed_mean_mps"] = speed_mean;
    j["speed_max_mps"] = speed_max;
    nlohmann::json ah = nlohmann::json::object();
    for (const auto& [k, v] : agents_hist) ah[std::to_string(k)] = v;
    j["agents_per_scenario"] = ah;
    nlohmann::json sh = nlohmann::json::object();
    for (const auto& [k, v] : speed_hist) sh[std::to_string(k)] = v;
    j["speed_hist_mps"] = sh;
    return j;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "metric,key,value\n";
    os << "scenario_count,," << scenario_count << "\n";
    os << "focal_count,," << focal_count << "\n";
    os << "valid_slot_count,," << valid_slot_count << "\n";
    os << "speed_mean_mps,," << detail::format_double(speed_mean) << "\n";
    os << "speed_max_mps,," << detail::format_double(speed_max) << "\n";
    for (const auto& [k, v] : agents_hist) os << "agents_per_scenario," << k << "," << v << "\n";
    for (const auto& [k, v] : speed_hist) os << "speed_hist_mps," << k << "," << v << "\n";
    return os.str();
  }
};

inline StatsReport dataset_stats(const std::vector<Scenario>& scenarios) {
  StatsReport rep;
  rep.scenario_count = scenarios.size();
  double speed_sum = 0.0;
  for (const Scenario& s : scenarios) {
    int agents = 0;
    for (const AgentTrack& a : s.agents) {
      if (a.valid_count() == 0) continue;
      ++agents;
      if (a.focal) ++rep.focal_count;
      for (int i = 0; i < kScenarioSteps; ++i) {
        if (!a.valid[i]) continue;
        ++rep.valid_slot_count;
        double sp = std::hypot(a.states[i].vx, a.states[i].vy);
        speed_sum += sp;
        rep.speed_max = std::max(rep.speed_max, sp);
        ++rep.speed_hist[(int)std::floor(sp)];
      }
    }
    ++rep.agents_hist[agents];
  }
  if (rep.valid_slot_count > 0) rep.speed_mean = speed_sum / (double)rep.valid_slot_count;
  return rep;
}

}  // namespace camnet
