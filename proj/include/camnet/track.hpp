#pragma once

#include <cstdint>
#include <vector>

#include "camnet/geo.hpp"

namespace camnet {

// One planar sample of a station's motion. x/y are raw UTM easting/northing
// in the track's zone frame.
struct TrackSample {
  int64_t t = 0;  // ms since epoch
  double x = 0.0;
  double y = 0.0;
  double speed = 0.0;  // m/s
  geo::Heading heading{0.0};
};

enum class TrackRate { Irregular, Fixed10Hz };

struct Track {
  uint64_t station_id = 0;
  int zone = 0;
  geo::Hemisphere hemisphere = geo::Hemisphere::North;
  std::vector<TrackSample> samples;  // strictly increasing t
  TrackRate rate = TrackRate::Irregular;
};

}  // namespace camnet
