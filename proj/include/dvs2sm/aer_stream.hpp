// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dvs2sm/io_util.hpp"

namespace dvs2sm {

enum class Polarity : uint8_t { kOff = 0, kOn = 1 };

// One DVS address event. Timestamps are microseconds since stream start and
// must be non-decreasing within a stream (violations are tolerated with a
// warning, since capture hardware occasionally reorders).
struct AerEvent {
  uint32_t timestamp_us = 0;
  uint16_t x = 0;
  uint16_t y = 0;
  Polarity polarity = Polarity::kOn;

  constexpr bool operator==(const AerEvent&) const = default;
};

struct SensorGeometry {
  uint16_t width = 240;   // DAVIS240C
  uint16_t height = 180;

  constexpr bool operator==(const SensorGeometry&) const = default;
};

enum class StreamFormat { kCsv, kBin };

struct ParseError : std::runtime_error {
  ParseError(const std::string& msg, uint64_t line_or_offset)
      : std::runtime_error(msg), position(line_or_offset) {}
  uint64_t position;  // 1-based line for CSV, byte offset for BIN
};

struct EventStream {
  std::vector<AerEvent> events;
  SensorGeometry geometry;
  // Count of records whose timestamp went backwards; the events are kept.
  uint64_t nonmonotonic_count = 0;
};

inline constexpr std::string_view kCsvHeader = "timestamp_us,x,y,polarity";

namespace detail {

inline uint64_t parse_field(std::string_view field, uint64_t max, const char* name,
                            uint64_t line) {
  uint64_t value = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size()) {
    throw ParseError("line " + std::to_string(line) + ": bad " + name + " field '" +
                         std::string(field) + "'",
                     line);
  }
  if (value > max) {
    throw ParseError("line " + std::to_string(line) + ": " + name + " value " +
                         std::to_string(value) + " out of range",
                     line);
  }
  return value;
}

}  // namespace detail

// CSV format: header line "timestamp_us,x,y,polarity", one event per line,
// polarity in {0,1}. The geometry is not part of the file and must be given.
inline EventStream read_events_csv(std::istream& is, SensorGeometry geometry) {
  EventStream out;
  out.geometry = geometry;
  std::string line;
  uint64_t line_no = 0;

  if (!std::getline(is, line)) {
    throw ParseError("empty input, missing CSV header", 1);
  }
  ++line_no;
  if (!line.empty() && line.back() == '\r') {
    line.pop_back();
  }
  if (line != kCsvHeader) {
    throw ParseError("line 1: expected header '" + std::string(kCsvHeader) + "'", 1);
  }

  uint32_t prev_ts = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    std::string_view rest{line};
    std::string_view fields[4];
    for (int f = 0; f < 4; ++f) {
      size_t comma = rest.find(',');
      if (f < 3) {
        if (comma == std::string_view::npos) {
          throw ParseError("line " + std::to_string(line_no) + ": expected 4 fields",
                           line_no);
        }
        fields[f] = rest.substr(0, comma);
        rest.remove_prefix(comma + 1);
      } else {
        if (comma != std::string_view::npos) {
          throw ParseError("line " + std::to_string(line_no) + ": too many fields",
                           line_no);
        }
        fields[f] = rest;
      }
    }
    AerEvent ev;
    ev.timestamp_us = static_cast<uint32_t>(
        detail::parse_field(fields[0], UINT32_MAX, "timestamp_us", line_no));
    uint64_t x = detail::parse_field(fields[1], UINT16_MAX, "x", line_no);
    uint64_t y = detail::parse_field(fields[2], UINT16_MAX, "y", line_no);
    uint64_t pol = detail::parse_field(fields[3], 1, "polarity", line_no);
    if (x >= geometry.width || y >= geometry.height) {
      throw ParseError("line " + std::to_string(line_no) + ": coordinate (" +
                           std::to_string(x) + "," + std::to_string(y) +
                           ") outside sensor " + std::to_string(geometry.width) + "x" +
                           std::to_string(geometry.height),
                       line_no);
    }
    ev.x = static_cast<uint16_t>(x);
    ev.y = static_cast<uint16_t>(y);
    ev.polarity = pol != 0 ? Polarity::kOn : Polarity::kOff;
    if (!out.events.empty() && ev.timestamp_us < prev_ts) {
      ++out.nonmonotonic_count;
    }
    prev_ts = ev.timestamp_us;
    out.events.push_back(ev);
  }
  return out;
}

inline void write_events_csv(std::ostream& os, const std::vector<AerEvent>& events) {
  os << kCsvHeader << '\n';
  for (const AerEvent& ev : events) {
    os << ev.timestamp_us << ',' << ev.x << ',' << ev.y << ','
       << static_cast<unsigned>(ev.polarity) << '\n';
  }
}

// BIN format: 16-byte header (ASCII "EVT1", u16 width, u16 height, u64 event
// count, little-endian) followed by 9-byte records (u32 timestamp_us, u16 x,
// u16 y, u8 polarity).
inline EventStream read_events_bin(std::istream& is) {
  EventStream out;
  io::expect_magic(is, "EVT1");
  out.geometry.width = io::get_u16(is);
  out.geometry.height = io::get_u16(is);
  uint64_t count = io::get_u64(is);
  out.events.reserve(count);
  uint32_t prev_ts = 0;
  for (uint64_t i = 0; i < count; ++i) {
    uint64_t offset = 16 + i * 9;
    AerEvent ev;
    try {
      ev.timestamp_us = io::get_u32(is);
      ev.x = io::get_u16(is);
      ev.y = io::get_u16(is);
      uint8_t pol = io::get_u8(is);
      if (pol > 1) {
        throw ParseError("offset " + std::to_string(offset) + ": bad polarity byte",
                         offset);
      }
      ev.polarity = pol != 0 ? Polarity::kOn : Polarity::kOff;
    } catch (const IoError&) {
      throw ParseError("offset " + std::to_string(offset) + ": truncated record " +
                           std::to_string(i) + " of " + std::to_string(count),
                       offset);
    }
    if (ev.x >= out.geometry.width || ev.y >= out.geometry.height) {
      throw ParseError("offset " + std::to_string(offset) + ": coordinate outside sensor",
                       offset);
    }
    if (i > 0 && ev.timestamp_us < prev_ts) {
      ++out.nonmonotonic_count;
    }
    prev_ts = ev.timestamp_us;
    out.events.push_back(ev);
  }
  return out;
}

inline void write_events_bin(std::ostream& os, const std::vector<AerEvent>& events,
                             SensorGeometry geometry) {
  io::put_magic(os, "EVT1");
  io::put_u16(os, geometry.width);
  io::put_u16(os, geometry.height);
  io::put_u64(os, events.size());
  for (const AerEvent& ev : events) {
    io::put_u32(os, ev.timestamp_us);
    io::put_u16(os, ev.x);
    io::put_u16(os, ev.y);
    io::put_u8(os, static_cast<uint8_t>(ev.polarity));
  }
}

inline EventStream read_events(std::istream& is, StreamFormat format,
                               SensorGeometry csv_geometry = {}) {
  return format == StreamFormat::kCsv ? read_events_csv(is, csv_geometry)
                                      : read_events_bin(is);
}

inline void write_events(std::ostream& os, const std::vector<AerEvent>& events,
                         StreamFormat format, SensorGeometry geometry) {
  if (format == StreamFormat::kCsv) {
    write_events_csv(os, events);
  } else {
    write_events_bin(os, events, geometry);
  }
}

// Synthetic stand-in for a DVS watching a bar sweep across the field of view:
// ON events on the leading edge, OFF events on the trailing edge. Event times
// are spaced uniformly at the requested rate, so the generated count is
// floor(duration * rate) exactly and the mean rate matches the request.
// Deterministic for a fixed seed.
inline std::vector<AerEvent> gen_moving_edge(SensorGeometry geometry,
                                             double speed_px_per_s, double rate_eps,
                                             uint64_t duration_us, uint64_t rng_seed) {
  if (rate_eps <= 0.0) {
    throw std::invalid_argument("gen_moving_edge: rate_eps must be > 0");
  }
  std::vector<AerEvent> events;
  auto count = static_cast<uint64_t>(static_cast<long double>(duration_us) *
                                     static_cast<long double>(rate_eps) / 1e6L);
  events.reserve(count);
  std::mt19937_64 rng(rng_seed);
  const uint16_t bar_width = std::max<uint16_t>(1, geometry.width / 8);
  const double start_x = geometry.width / 4.0;

  for (uint64_t i = 0; i < count; ++i) {
    auto ts = static_cast<uint64_t>(static_cast<long double>(i) * 1e6L /
                                    static_cast<long double>(rate_eps));
    double t_s = static_cast<double>(ts) * 1e-6;
    double head = std::fmod(start_x + speed_px_per_s * t_s,
                            static_cast<double>(geometry.width));
    if (head < 0) {
      head += geometry.width;
    }
    bool leading = (rng() & 1) != 0;
    int64_t column = static_cast<int64_t>(head);
    if (!leading) {
      column -= bar_width;
    }
    column += static_cast<int64_t>(rng() % 3) - 1;  // 1px edge jitter
    column %= geometry.width;
    if (column < 0) {
      column += geometry.width;
    }
    AerEvent ev;
    ev.timestamp_us = static_cast<uint32_t>(ts);
    ev.x = static_cast<uint16_t>(column);
    ev.y = static_cast<uint16_t>(rng() % geometry.height);
    ev.polarity = leading ? Polarity::kOn : Polarity::kOff;
    events.push_back(ev);
  }
  return events;
}

}  // namespace dvs2sm
