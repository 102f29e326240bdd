#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "camnet/errors.hpp"
#include "camnet/geo.hpp"
#include "camnet/track.hpp"

namespace camnet {

// ETSI generation-trigger thresholds (all strict comparisons) and the 10 Hz
// emission rate cap.
inline constexpr int64_t kTimeTriggerMs = 1000;
inline constexpr double kPositionTriggerM = 4.0;
inline constexpr double kHeadingTriggerDeg = 4.0;
inline constexpr double kSpeedTriggerMps = 0.5;
inline constexpr int64_t kRateCapMs = 100;

// A raw CAM observation. pos/speed/heading are optional at this layer so the
// parser can carry through incomplete records; dedup() drops them before any
// downstream use.
struct CamRecord {
  uint64_t station_id = 0;
  int64_t t = 0;  // ms since epoch
  std::optional<geo::GeoPoint> pos;
  std::optional<double> speed;  // m/s
  std::optional<geo::Heading> heading;
  std::optional<std::string> rsu_id;

  bool complete() const {
    return pos.has_value() && speed.has_value() && heading.has_value();
  }
};

enum class TriggerReason { Time, Position, Heading, Speed };

struct TriggerReport {
  bool fired = false;
  bool suppressed_by_rate_cap = false;
  std::vector<TriggerReason> reasons;

  bool has(TriggerReason r) const {
    for (TriggerReason x : reasons)
      if (x == r) return true;
    return false;
  }
};

inline const char* trigger_reason_name(TriggerReason r) {
  switch (r) {
    case TriggerReason::Time: return "time";
    case TriggerReason::Position: return "position";
    case TriggerReason::Heading: return "heading";
    case TriggerReason::Speed: return "speed";
  }
  return "?";
}

inline TriggerReport check_trigger(const CamRecord& last_cam, const CamRecord& current) {
  if (current.station_id != last_cam.station_id)
    throw_error(ErrorKind::StationMismatch,
                "check_trigger: station " + std::to_string(current.station_id) +
                    " vs " + std::to_string(last_cam.station_id));
  if (current.t < last_cam.t)
    throw_error(ErrorKind::NonMonotonicTime,
                "check_trigger: t went backwards (" + std::to_string(last_cam.t) +
                    " -> " + std::to_string(current.t) + ")");
  if (!last_cam.complete() || !current.complete())
    throw_error(ErrorKind::InvalidCoordinate,
                "check_trigger: record missing mandatory fields");

  TriggerReport rep;
  int64_t dt = current.t - last_cam.t;
  if (dt > kTimeTriggerMs) rep.reasons.push_back(TriggerReason::Time);
  if (geo::planar_distance(*last_cam.pos, *current.pos) > kPositionTriggerM)
    rep.reasons.push_back(TriggerReason::Position);
  if (geo::angle_diff(*last_cam.heading, *current.heading) > kHeadingTriggerDeg)
    rep.reasons.push_back(TriggerReason::Heading);
  if (std::fabs(*current.speed - *last_cam.speed) > kSpeedTriggerMps)
    rep.reasons.push_back(TriggerReason::Speed);

  if (!rep.reasons.empty()) {
    if (dt >= kRateCapMs)
      rep.fired = true;
    else
      rep.suppressed_by_rate_cap = true;
  }
  return rep;
}

// Keeps the first record per (station_id, t), then drops records that lack a
// mandatory field; relative order is preserved throughout.
inline std::vector<CamRecord> dedup(const std::vector<CamRecord>& records) {
  std::vector<CamRecord> out;
  out.reserve(records.size());
  std::set<std::pair<uint64_t, int64_t>> seen;
  for (const CamRecord& r : records) {
    if (!seen.insert({r.station_id, r.t}).second) continue;
    if (!r.complete()) continue;
    out.push_back(r);
  }
  return out;
}

namespace detail {

inline CamRecord cam_from_sample(const Track& track, const TrackSample& s) {
  CamRecord r;
  r.station_id = track.station_id;
  r.t = s.t;
  r.pos = geo::from_utm({s.x, s.y, track.zone, track.hemisphere});
  r.speed = s.speed;
  r.heading = s.heading;
  return r;
}

}  // namespace detail

// Walks a dense 10 Hz track and emits a CAM whenever the ETSI triggers fire
// against the last emitted record. The first sample is always emitted.
inline std::vector<CamRecord> simulate_cam_stream(const Track& track) {
  if (track.samples.empty())
    throw_error(ErrorKind::EmptyTrack, "simulate_cam_stream: empty track");
  for (size_t i = 1; i < track.samples.size(); ++i) {
    if (track.samples[i].t - track.samples[i - 1].t != 100)
      throw_error(ErrorKind::MalformedFile,
                  "simulate_cam_stream: track is not sampled at exactly 10 Hz");
  }
  std::vector<CamRecord> out;
  out.push_back(detail::cam_from_sample(track, track.samples[0]));
  for (size_t i = 1; i < track.samples.size(); ++i) {
    CamRecord cand = detail::cam_from_sample(track, track.samples[i]);
    if (check_trigger(out.back(), cand).fired) out.push_back(std::move(cand));
  }
  return out;
}

}  // namespace camnet
