// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <vector>

#include "dvs2sm/fixed_point.hpp"
#include "dvs2sm/histogram.hpp"
#include "dvs2sm/io_util.hpp"

namespace dvs2sm {

// Histogram normalization, implemented literally:
//
//   S     = sum of all pixel values
//   c     = number of non-zero pixels
//   mean  = S / c
//   sigma = sqrt( sum over ALL pixels of (F - mean)^2 / c )
//   F_norm(i,j) = (F(i,j) + 3*sigma) / (6*sigma)
//
// Two deliberate quirks are kept as-is: the deviation sum ranges over every
// pixel (zeros included) while the divisor is c, and the output numerator
// does not subtract the mean. Config flags switch on the statistically
// conventional variants for experimentation; the default is the literal form.

struct NormConfig {
  bool subtract_mean = false;             // numerator (F - mean + 3s) / (6s)
  bool variance_over_nonzero_only = false;  // deviation sum over non-zero pixels
};

enum class DegenerateFlag : uint8_t {
  kNone = 0,
  kEmpty = 1,      // c == 0; output pinned to 0.5
  kZeroSigma = 2,  // sigma quantized to zero; output pinned to 0.5
};

struct NormStats {
  int64_t sum = 0;      // S, exact integer
  uint32_t nonzero = 0; // c
  double mean = 0.0;
  double sigma = 0.0;
};

// Same statistics computed entirely in Q24.16.
struct FixedNormStats {
  QVal sum;
  uint32_t nonzero = 0;
  QVal mean;
  QVal sigma;
};

struct NormalizedFrame {
  uint16_t width = 0;
  uint16_t height = 0;
  uint32_t frame_seq = 0;
  DegenerateFlag degenerate = DegenerateFlag::kNone;
  std::vector<int32_t> pixels_q;     // Q16.8 raw, row-major
  std::vector<double> pixels_real;   // pre-quantization values (float path)
                                     // or the Q16.8 rendering (fixed path)
  NormStats stats;

  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

inline constexpr int32_t kHalfQ16_8 = 128;  // 0.5 in Q16.8

// Returns nothing for an all-zero histogram (c == 0).
inline std::optional<NormStats> compute_stats(const EventHistogram& h,
                                              NormConfig cfg = {}) {
  NormStats st;
  for (int32_t v : h.counts) {
    st.sum += v;
    if (v != 0) {
      ++st.nonzero;
    }
  }
  if (st.nonzero == 0) {
    return std::nullopt;
  }
  st.mean = static_cast<double>(st.sum) / st.nonzero;
  double dev_sum = 0.0;
  for (int32_t v : h.counts) {
    if (cfg.variance_over_nonzero_only && v == 0) {
      continue;
    }
    double d = static_cast<double>(v) - st.mean;
    dev_sum += d * d;
  }
  st.sigma = std::sqrt(dev_sum / st.nonzero);
  return st;
}

namespace detail {

inline NormalizedFrame make_degenerate_frame(const EventHistogram& h,
                                             DegenerateFlag flag) {
  NormalizedFrame out;
  out.width = h.width;
  out.height = h.height;
  out.frame_seq = h.frame_seq;
  out.degenerate = flag;
  out.pixels_q.assign(h.pixel_count(), kHalfQ16_8);
  out.pixels_real.assign(h.pixel_count(), 0.5);
  return out;
}

}  // namespace detail

inline NormalizedFrame normalize_float(const EventHistogram& h, NormConfig cfg = {}) {
  auto stats = compute_stats(h, cfg);
  if (!stats) {
    return detail::make_degenerate_frame(h, DegenerateFlag::kEmpty);
  }
  if (stats->sigma == 0.0) {
    NormalizedFrame out = detail::make_degenerate_frame(h, DegenerateFlag::kZeroSigma);
    out.stats = *stats;
    return out;
  }
  NormalizedFrame out;
  out.width = h.width;
  out.height = h.height;
  out.frame_seq = h.frame_seq;
  out.stats = *stats;
  out.pixels_q.resize(h.pixel_count());
  out.pixels_real.resize(h.pixel_count());
  const double three_sigma = 3.0 * stats->sigma;
  const double six_sigma = 6.0 * stats->sigma;
  for (size_t i = 0; i < h.pixel_count(); ++i) {
    double numerator = static_cast<double>(h.counts[i]) + three_sigma;
    if (cfg.subtract_mean) {
      numerator -= stats->mean;
    }
    double value = numerator / six_sigma;
    out.pixels_real[i] = value;
    out.pixels_q[i] = static_cast<int32_t>(from_real(value, kQ16_8).raw);
  }
  return out;
}

// Fixed-point statistics: every named intermediate lives in Q24.16. The sum
// of squared deviations is accumulated exactly in a widened integer (raw
// scale 2^32) and rounded once when divided down to variance.
inline std::optional<FixedNormStats> compute_stats_fixed(const EventHistogram& h,
                                                         NormConfig cfg = {}) {
  FixedNormStats st;
  st.sum = q_from_int(0, kQ24_16);
  for (int32_t v : h.counts) {
    st.sum = q_add(st.sum, q_from_int(v, kQ24_16));
    if (v != 0) {
      ++st.nonzero;
    }
  }
  if (st.nonzero == 0) {
    return std::nullopt;
  }
  st.mean = q_div(st.sum, q_from_int(st.nonzero, kQ24_16));
  int128_t dev_sq_sum = 0;  // raw scale 2^32
  for (int32_t v : h.counts) {
    if (cfg.variance_over_nonzero_only && v == 0) {
      continue;
    }
    int64_t dev_raw = q_from_int(v, kQ24_16).raw - st.mean.raw;
    dev_sq_sum += static_cast<int128_t>(dev_raw) * dev_raw;
  }
  // variance_raw = dev_sq_sum / (c * 2^16), one rounding to Q24.16
  int128_t divisor = static_cast<int128_t>(st.nonzero) << kQ24_16.frac_bits;
  QVal variance = q_from_raw(
      static_cast<int64_t>(detail::rne_div(dev_sq_sum, divisor)), kQ24_16);
  st.sigma = q_sqrt(variance);
  return st;
}

inline NormalizedFrame normalize_fixed(const EventHistogram& h, NormConfig cfg = {}) {
  auto stats = compute_stats_fixed(h, cfg);
  if (!stats) {
    return detail::make_degenerate_frame(h, DegenerateFlag::kEmpty);
  }
  NormalizedFrame out;
  out.width = h.width;
  out.height = h.height;
  out.frame_seq = h.frame_seq;
  out.stats.sum = stats->sum.raw >> kQ24_16.frac_bits;
  out.stats.nonzero = stats->nonzero;
  out.stats.mean = stats->mean.to_real();
  out.stats.sigma = stats->sigma.to_real();
  // Quantization guard: a sigma below one LSB would blow up the quotient.
  if (stats->sigma.raw < 1) {
    out.degenerate = DegenerateFlag::kZeroSigma;
    out.pixels_q.assign(h.pixel_count(), kHalfQ16_8);
    out.pixels_real.assign(h.pixel_count(), 0.5);
    return out;
  }
  out.pixels_q.resize(h.pixel_count());
  out.pixels_real.resize(h.pixel_count());
  const QVal three_sigma = q_add(stats->sigma, q_add(stats->sigma, stats->sigma));
  const QVal six_sigma = q_add(three_sigma, three_sigma);
  for (size_t i = 0; i < h.pixel_count(); ++i) {
    QVal numerator = q_add(q_from_int(h.counts[i], kQ24_16), three_sigma);
    if (cfg.subtract_mean) {
      numerator = q_sub(numerator, stats->mean);
    }
    QVal quotient = q_div(numerator, six_sigma);
    QVal result = q_rescale(quotient, kQ16_8);
    out.pixels_q[i] = static_cast<int32_t>(result.raw);
    out.pixels_real[i] = result.to_real();
  }
  return out;
}

// Cycle count of the lane-replicated normalization block: after the fill
// latency of one lane, results stream out once per clock as long as there
// are at least as many lanes as latency cycles; with fewer lanes the issue
// rate drops proportionally.
constexpr uint64_t norm_pipeline_cycles(uint64_t pixel_count,
                                        uint64_t lane_latency_cycles, uint64_t lanes) {
  if (lanes >= lane_latency_cycles) {
    return lane_latency_cycles + pixel_count - 1;
  }
  uint64_t issue = (pixel_count * lane_latency_cycles + lanes - 1) / lanes;
  return lane_latency_cycles + issue - 1;
}

// Normalized frame dump: "NRM1", u16 width, u16 height, u32 frame_seq,
// u8 degenerate_flag, then row-major Q16.8 raw values as i32 little-endian.
inline void write_normalized(std::ostream& os, const NormalizedFrame& f) {
  io::put_magic(os, "NRM1");
  io::put_u16(os, f.width);
  io::put_u16(os, f.height);
  io::put_u32(os, f.frame_seq);
  io::put_u8(os, static_cast<uint8_t>(f.degenerate));
  for (int32_t raw : f.pixels_q) {
    io::put_i32(os, raw);
  }
}

// Reads back the quantized pixels; the source statistics are not part of the
// format, so stats are left zeroed.
inline NormalizedFrame read_normalized(std::istream& is) {
  io::expect_magic(is, "NRM1");
  NormalizedFrame out;
  out.width = io::get_u16(is);
  out.height = io::get_u16(is);
  out.frame_seq = io::get_u32(is);
  uint8_t flag = io::get_u8(is);
  if (flag > 2) {
    throw IoError("NRM1: bad degenerate flag " + std::to_string(flag));
  }
  out.degenerate = static_cast<DegenerateFlag>(flag);
  out.pixels_q.resize(out.pixel_count());
  out.pixels_real.resize(out.pixel_count());
  for (size_t i = 0; i < out.pixel_count(); ++i) {
    out.pixels_q[i] = io::get_i32(is);
    out.pixels_real[i] = QVal{out.pixels_q[i], kQ16_8, 0}.to_real();
  }
  return out;
}

}  // namespace dvs2sm
