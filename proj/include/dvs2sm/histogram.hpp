// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <condition_variable>
#include <cstdint>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <vector>

#include "dvs2sm/aer_stream.hpp"
#include "dvs2sm/io_util.hpp"

namespace dvs2sm {

enum class PolarityMode : uint8_t {
  kCount,   // ON and OFF both increment by +1
  kSigned,  // ON +1, OFF -1, signed counters, |v| > 0 mask semantics
};

// 2D accumulation buffer plus a parallel non-zero mask. Counters saturate
// (unsigned 16-bit range in count mode, signed 16-bit in signed mode) and
// never wrap; saturation is latched per frame.
struct EventHistogram {
  uint16_t width = 64;
  uint16_t height = 64;
  PolarityMode mode = PolarityMode::kCount;
  std::vector<int32_t> counts;    // row-major
  std::vector<uint64_t> nz_mask;  // one bit per pixel, LSB-first, row-major
  uint32_t events_in = 0;
  uint32_t frame_seq = 0;
  bool counter_saturated = false;

  EventHistogram() { allocate(); }
  EventHistogram(uint16_t w, uint16_t h, PolarityMode m = PolarityMode::kCount)
      : width(w), height(h), mode(m) {
    allocate();
  }

  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
  size_t index(uint16_t x, uint16_t y) const {
    return static_cast<size_t>(y) * width + x;
  }
  int32_t at(uint16_t x, uint16_t y) const { return counts[index(x, y)]; }

  bool mask_at(uint16_t x, uint16_t y) const {
    size_t i = index(x, y);
    return (nz_mask[i >> 6] >> (i & 63)) & 1;
  }

  uint32_t nonzero_count() const {
    uint32_t total = 0;
    for (uint64_t word : nz_mask) {
      total += static_cast<uint32_t>(std::popcount(word));
    }
    return total;
  }

  int64_t sum() const {
    int64_t total = 0;
    for (int32_t v : counts) {
      total += v;
    }
    return total;
  }

  void reset() {
    counts.assign(pixel_count(), 0);
    nz_mask.assign((pixel_count() + 63) / 64, 0);
    events_in = 0;
    counter_saturated = false;
  }

  void add_event_at(size_t pixel, Polarity polarity) {
    int32_t& v = counts[pixel];
    if (mode == PolarityMode::kCount) {
      if (v < 65535) {
        ++v;
      } else {
        counter_saturated = true;
      }
    } else {
      int32_t delta = polarity == Polarity::kOn ? 1 : -1;
      if ((delta > 0 && v < 32767) || (delta < 0 && v > -32768)) {
        v += delta;
      } else {
        counter_saturated = true;
      }
    }
    uint64_t bit = uint64_t{1} << (pixel & 63);
    if (v != 0) {
      nz_mask[pixel >> 6] |= bit;
    } else {
      nz_mask[pixel >> 6] &= ~bit;  // signed mode can cancel back to zero
    }
    ++events_in;
  }

 private:
  void allocate() {
    counts.assign(pixel_count(), 0);
    nz_mask.assign((pixel_count() + 63) / 64, 0);
  }
};

inline void reset_buffer(EventHistogram& h) { h.reset(); }

// Floor-scaled down-sampling along one axis; surjective onto the target when
// the source is at least as large.
constexpr uint16_t map_coordinate(uint16_t v, uint16_t source_extent,
                                  uint16_t target_extent) {
  return static_cast<uint16_t>((static_cast<uint32_t>(v) * target_extent) /
                               source_extent);
}

struct CollectorConfig {
  uint16_t target_width = 64;
  uint16_t target_height = 64;
  uint32_t k_events = 2000;
  PolarityMode polarity_mode = PolarityMode::kCount;
  // Optional source crop window; width 0 means the full sensor. Events
  // outside the window are ignored and do not count toward k_events.
  uint16_t crop_x = 0;
  uint16_t crop_y = 0;
  uint16_t crop_width = 0;
  uint16_t crop_height = 0;
};

// Maps a sensor event to a target pixel index, or nothing when the event
// falls outside the configured crop window.
inline std::optional<size_t> map_event(const AerEvent& ev, SensorGeometry geometry,
                                       const CollectorConfig& cfg) {
  uint16_t cw = cfg.crop_width != 0 ? cfg.crop_width : geometry.width;
  uint16_t ch = cfg.crop_height != 0 ? cfg.crop_height : geometry.height;
  if (ev.x < cfg.crop_x || ev.y < cfg.crop_y || ev.x >= cfg.crop_x + cw ||
      ev.y >= cfg.crop_y + ch) {
    return std::nullopt;
  }
  uint16_t tx = map_coordinate(static_cast<uint16_t>(ev.x - cfg.crop_x), cw,
                               cfg.target_width);
  uint16_t ty = map_coordinate(static_cast<uint16_t>(ev.y - cfg.crop_y), ch,
                               cfg.target_height);
  return static_cast<size_t>(ty) * cfg.target_width + tx;
}

enum class BufferState : uint8_t { kCollecting, kNormalizing, kIdle };

// What to do when a frame completes while the other buffer is still checked
// out: free-running simulation counts and drops events (the DVS-stopped
// behaviour), lossless pipelines block until the consumer releases.
enum class BackpressurePolicy : uint8_t { kDropAndCount, kBlock };

struct CollectorStats {
  uint64_t events_accepted = 0;
  uint64_t events_dropped = 0;       // dropped while backpressured
  uint64_t events_out_of_crop = 0;
  uint64_t stall_episodes = 0;
  uint64_t frames_emitted = 0;
};

class DoubleBufferCollector;

// Ownership handoff for a completed frame: the collector keeps the buffer in
// NORMALIZING state until the lease is released (or destroyed). Move-only.
class FrameLease {
 public:
  FrameLease() = default;
  FrameLease(DoubleBufferCollector* owner, int slot) : owner_(owner), slot_(slot) {}
  FrameLease(FrameLease&& other) noexcept { *this = std::move(other); }
  FrameLease& operator=(FrameLease&& other) noexcept {
    release();
    owner_ = other.owner_;
    slot_ = other.slot_;
    other.owner_ = nullptr;
    other.slot_ = -1;
    return *this;
  }
  FrameLease(const FrameLease&) = delete;
  FrameLease& operator=(const FrameLease&) = delete;
  ~FrameLease() { release(); }

  const EventHistogram& get() const;
  bool valid() const { return owner_ != nullptr; }
  void release();

 private:
  DoubleBufferCollector* owner_ = nullptr;
  int slot_ = -1;
};

struct AccumulateResult {
  std::optional<FrameLease> frame;
  bool stalled = false;  // event arrived while backpressured (drop policy)
};

// The event-collection FSM: accumulate exactly k_events into the active
// buffer, then hand the full buffer to the consumer and continue collecting
// in the other one. Exactly one buffer is collecting at any instant. Safe
// for one producer thread (accumulate) plus one consumer thread (release).
class DoubleBufferCollector {
 public:
  DoubleBufferCollector(SensorGeometry geometry, CollectorConfig config,
                        BackpressurePolicy policy = BackpressurePolicy::kDropAndCount)
      : geometry_(geometry), config_(config), policy_(policy) {
    for (auto& buf : buffers_) {
      buf = EventHistogram(config.target_width, config.target_height,
                           config.polarity_mode);
    }
    state_[0] = BufferState::kCollecting;
    state_[1] = BufferState::kIdle;
  }

  AccumulateResult accumulate(const AerEvent& ev) {
    std::unique_lock lock(mutex_);
    AccumulateResult result;

    if (pending_full_) {
      // The active buffer is complete but the other one is still leased.
      if (state_[other(active_)] != BufferState::kIdle) {
        if (policy_ == BackpressurePolicy::kBlock) {
          released_.wait(lock,
                         [&] { return state_[other(active_)] == BufferState::kIdle; });
        } else {
          ++stats_.events_dropped;
          result.stalled = true;
          return result;
        }
      }
      result.frame = emit_locked();
    }

    auto pixel = map_event(ev, geometry_, config_);
    if (!pixel) {
      ++stats_.events_out_of_crop;
      return result;
    }
    EventHistogram& buf = buffers_[active_];
    buf.add_event_at(*pixel, ev.polarity);
    ++stats_.events_accepted;

    if (buf.events_in >= config_.k_events) {
      if (state_[other(active_)] == BufferState::kIdle) {
        result.frame = emit_locked();
      } else if (policy_ == BackpressurePolicy::kBlock) {
        released_.wait(lock,
                       [&] { return state_[other(active_)] == BufferState::kIdle; });
        result.frame = emit_locked();
      } else {
        pending_full_ = true;
        ++stats_.stall_episodes;
        result.stalled = true;
      }
    }
    return result;
  }

  void release(int slot) {
    {
      std::lock_guard lock(mutex_);
      state_[slot] = BufferState::kIdle;
    }
    released_.notify_one();
  }

  const EventHistogram& leased(int slot) const { return buffers_[slot]; }

  CollectorStats stats() const {
    std::lock_guard lock(mutex_);
    return stats_;
  }

  const CollectorConfig& config() const { return config_; }

 private:
  static int other(int slot) { return slot ^ 1; }

  // Hand the full active buffer to the consumer, swap, and zero the buffer
  // that now collects. Caller holds the lock and has checked the other
  // buffer is idle.
  FrameLease emit_locked() {
    int full = active_;
    buffers_[full].frame_seq = next_frame_seq_++;
    state_[full] = BufferState::kNormalizing;
    active_ = other(full);
    buffers_[active_].reset();
    state_[active_] = BufferState::kCollecting;
    pending_full_ = false;
    ++stats_.frames_emitted;
    return FrameLease(this, full);
  }

  SensorGeometry geometry_;
  CollectorConfig config_;
  BackpressurePolicy policy_;
  mutable std::mutex mutex_;
  std::condition_variable released_;
  EventHistogram buffers_[2];
  BufferState state_[2];
  int active_ = 0;
  bool pending_full_ = false;
  uint32_t next_frame_seq_ = 0;
  CollectorStats stats_;
};

inline const EventHistogram& FrameLease::get() const {
  return owner_->leased(slot_);
}

inline void FrameLease::release() {
  if (owner_ != nullptr) {
    owner_->release(slot_);
    owner_ = nullptr;
    slot_ = -1;
  }
}

// Histogram dump: "HST1", u16 width, u16 height, u32 frame_seq, u32
// events_in, then row-major u16 little-endian counters. Signed-mode counters
// are stored as their two's-complement 16-bit pattern.
inline void write_histogram(std::ostream& os, const EventHistogram& h) {
  io::put_magic(os, "HST1");
  io::put_u16(os, h.width);
  io::put_u16(os, h.height);
  io::put_u32(os, h.frame_seq);
  io::put_u32(os, h.events_in);
  for (int32_t v : h.counts) {
    io::put_u16(os, static_cast<uint16_t>(static_cast<int16_t>(v)));
  }
}

inline EventHistogram read_histogram(std::istream& is,
                                     PolarityMode mode = PolarityMode::kCount) {
  io::expect_magic(is, "HST1");
  uint16_t w = io::get_u16(is);
  uint16_t h = io::get_u16(is);
  EventHistogram out(w, h, mode);
  out.frame_seq = io::get_u32(is);
  out.events_in = io::get_u32(is);
  for (size_t i = 0; i < out.pixel_count(); ++i) {
    uint16_t bits = io::get_u16(is);
    int32_t v = mode == PolarityMode::kSigned
                    ? static_cast<int32_t>(static_cast<int16_t>(bits))
                    : static_cast<int32_t>(bits);
    out.counts[i] = v;
    if (v != 0) {
      out.nz_mask[i >> 6] |= uint64_t{1} << (i & 63);
    }
  }
  return out;
}

}  // namespace dvs2sm
