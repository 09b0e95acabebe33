// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <mutex>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dvs2sm/aer_stream.hpp"
#include "dvs2sm/histogram.hpp"
#include "dvs2sm/normalizer.hpp"
#include "dvs2sm/nullhop_core.hpp"
#include "dvs2sm/sparsity_codec.hpp"

namespace dvs2sm {

// Discrete timing model of the three-stage pipeline: event collection,
// normalization + sparsity-map conversion, CNN compute. Function and timing
// are decoupled — the numeric pipeline never reads the clock, and the timing
// model never sees pixel data.

struct StageTiming {
  enum class Model : uint8_t { kFixed, kEventRate, kCycles };

  std::string name;
  Model model = Model::kFixed;
  double fixed_us = 0.0;
  uint32_t k_events = 2000;   // kEventRate: duration = k_events / rate
  uint64_t cycles = 0;        // kCycles: duration = cycles / clock_hz
  double clock_hz = 0.0;

  static StageTiming fixed(std::string name, double us) {
    StageTiming st;
    st.name = std::move(name);
    st.model = Model::kFixed;
    st.fixed_us = us;
    return st;
  }
  static StageTiming event_rate(std::string name, uint32_t k_events) {
    StageTiming st;
    st.name = std::move(name);
    st.model = Model::kEventRate;
    st.k_events = k_events;
    return st;
  }
  static StageTiming clock_cycles(std::string name, uint64_t cycles, double hz) {
    StageTiming st;
    st.name = std::move(name);
    st.model = Model::kCycles;
    st.cycles = cycles;
    st.clock_hz = hz;
    return st;
  }

  double duration_us(double event_rate_eps) const {
    switch (model) {
      case Model::kFixed:
        return fixed_us;
      case Model::kEventRate:
        if (event_rate_eps <= 0.0) {
          throw std::invalid_argument("event rate must be > 0");
        }
        return static_cast<double>(k_events) / event_rate_eps * 1e6;
      case Model::kCycles:
        if (clock_hz <= 0.0) {
          throw std::invalid_argument("clock must be > 0");
        }
        return static_cast<double>(cycles) / clock_hz * 1e6;
    }
    return 0.0;
  }
};

enum class SimMode : uint8_t { kSequential, kPipelined };

struct FrameRecord {
  uint32_t frame_seq = 0;
  std::vector<double> start_us;    // per stage
  std::vector<double> end_us;      // per stage
  std::vector<double> stalled_us;  // time the finished frame waited to hand off
};

struct PipelineTrace {
  SimMode mode = SimMode::kSequential;
  std::vector<std::string> stage_names;
  std::vector<double> stage_durations_us;
  std::vector<FrameRecord> frames;
  double period_us = 0.0;   // steady-state inter-frame interval
  double latency_us = 0.0;  // per-frame service time, sum of stage durations
  double total_stall_us = 0.0;

  double fps() const { return period_us > 0.0 ? 1e6 / period_us : 0.0; }

  // The stage whose duration paces the pipeline.
  size_t binding_stage() const {
    return static_cast<size_t>(
        std::max_element(stage_durations_us.begin(), stage_durations_us.end()) -
        stage_durations_us.begin());
  }
};

// Schedules n_frames through the stages.
//
// SEQUENTIAL models the software baseline: a frame runs all stages
// back-to-back and the next frame starts only when it has fully finished, so
// the frame period is the sum of stage durations.
//
// PIPELINED models ping-pong buffering between adjacent stages: a stage can
// work on frame n while its successor still reads frame n-1, but it cannot
// begin frame n+1 until the successor has taken frame n off the shared
// buffer (this is how the collector's "DVS stopped" backpressure reaches the
// source). A finished frame that waits for a busy successor is recorded as
// stall time on the producing stage. Steady-state frame period is the
// maximum stage duration. Per-frame latency (service time) is the same in
// both modes; only the inter-frame period differs.
inline PipelineTrace simulate(const std::vector<StageTiming>& stages, uint32_t n_frames,
                              SimMode mode, double event_rate_eps = 0.0) {
  if (stages.empty() || n_frames < 1) {
    throw std::invalid_argument("simulate: need at least one stage and one frame");
  }
  PipelineTrace trace;
  trace.mode = mode;
  const size_t n_stages = stages.size();
  for (const StageTiming& st : stages) {
    trace.stage_names.push_back(st.name);
    double d = st.duration_us(event_rate_eps);
    if (d <= 0.0) {
      throw std::invalid_argument("stage '" + st.name + "' has non-positive duration");
    }
    trace.stage_durations_us.push_back(d);
    trace.latency_us += d;
  }

  trace.frames.resize(n_frames);
  std::vector<double> prev_start(n_stages, 0.0);
  std::vector<double> prev_end(n_stages, 0.0);

  for (uint32_t n = 0; n < n_frames; ++n) {
    FrameRecord& rec = trace.frames[n];
    rec.frame_seq = n;
    rec.start_us.resize(n_stages);
    rec.end_us.resize(n_stages);
    rec.stalled_us.assign(n_stages, 0.0);

    double ready = mode == SimMode::kSequential && n > 0 ? prev_end[n_stages - 1] : 0.0;
    for (size_t s = 0; s < n_stages; ++s) {
      double start = ready;
      if (n > 0) {
        start = std::max(start, prev_end[s]);
        if (mode == SimMode::kPipelined && s + 1 < n_stages) {
          start = std::max(start, prev_start[s + 1]);
        }
      }
      rec.start_us[s] = start;
      rec.end_us[s] = start + trace.stage_durations_us[s];
      ready = rec.end_us[s];
      if (s > 0) {
        rec.stalled_us[s - 1] = rec.start_us[s] - rec.end_us[s - 1];
        trace.total_stall_us += rec.stalled_us[s - 1];
      }
    }
    prev_start = rec.start_us;
    prev_end = rec.end_us;
  }

  if (n_frames >= 2) {
    trace.period_us = trace.frames[n_frames - 1].end_us[n_stages - 1] -
                      trace.frames[n_frames - 2].end_us[n_stages - 1];
  } else {
    trace.period_us = trace.latency_us;
  }
  return trace;
}

// Relative reduction of the frame period: (seq - pip) / pip.
inline double speedup(const PipelineTrace& seq, const PipelineTrace& pip) {
  return (seq.period_us - pip.period_us) / pip.period_us;
}

// Time to collect a fixed-size event budget at a given rate.
inline double collection_duration_s(uint32_t k_events, double rate_eps) {
  if (rate_eps <= 0.0) {
    throw std::invalid_argument("collection_duration: rate must be > 0");
  }
  return static_cast<double>(k_events) / rate_eps;
}

// Trace export: one row per frame and stage, then a summary block. The
// speedup column compares against the sequential period implied by the same
// stage durations.
inline void write_trace_csv(std::ostream& os, const PipelineTrace& trace) {
  os << "frame_seq,stage,t_start_us,t_end_us,stalled_us\n";
  char buf[160];
  for (const FrameRecord& rec : trace.frames) {
    for (size_t s = 0; s < trace.stage_names.size(); ++s) {
      std::snprintf(buf, sizeof buf, "%u,%s,%.3f,%.3f,%.3f\n", rec.frame_seq,
                    trace.stage_names[s].c_str(), rec.start_us[s], rec.end_us[s],
                    rec.stalled_us[s]);
      os << buf;
    }
  }
  double sequential_period = trace.latency_us;
  double vs_sequential = trace.period_us > 0.0
                             ? (sequential_period - trace.period_us) / trace.period_us
                             : 0.0;
  std::snprintf(buf, sizeof buf,
                "# period_us=%.3f latency_us=%.3f fps=%.3f "
                "speedup_vs_sequential=%.3f binding_stage=%s\n",
                trace.period_us, trace.latency_us, trace.fps(), vs_sequential,
                trace.stage_names[trace.binding_stage()].c_str());
  os << buf;
}

// ---------------------------------------------------------------------------
// Functional end-to-end run: collector -> normalizer (fixed point) -> codec
// -> network, with the timing trace produced alongside by the model above.

enum class Execution : uint8_t { kSingleThread, kThreaded };

struct EndToEndConfig {
  SensorGeometry geometry;
  CollectorConfig collector;
  NormConfig norm;
  bool use_fixed_norm = true;
  std::vector<StageTiming> stages;  // empty = default three-stage pipeline
  double event_rate_eps = 333334.0;
  SimMode sim_mode = SimMode::kPipelined;
  Execution execution = Execution::kSingleThread;
};

// Default stage set: collection at the event rate, the 22-lane normalizer
// block at 60 MHz, and the measured per-frame CNN compute time.
inline std::vector<StageTiming> default_stages(uint32_t k_events,
                                               uint32_t pixel_count = 64 * 64,
                                               double cnn_ms = 6.0) {
  return {
      StageTiming::event_rate("collect", k_events),
      StageTiming::clock_cycles("normalize", norm_pipeline_cycles(pixel_count, 47, 22),
                                60e6),
      StageTiming::fixed("cnn", cnn_ms * 1000.0),
  };
}

struct FrameClassification {
  uint32_t frame_seq = 0;
  uint32_t class_index = 0;
  std::string label;
  std::vector<int32_t> scores;  // Q16.8 raw
};

struct EndToEndResult {
  std::vector<FrameClassification> classifications;
  PipelineTrace trace;
  MacStats total_macs;
  CollectorStats collector_stats;
};

namespace detail {

inline FeatureMapTensor frame_to_tensor(const NormalizedFrame& frame) {
  FeatureMapTensor t(frame.height, frame.width, 1);
  t.values = frame.pixels_q;
  return t;
}

inline FrameClassification classify_frame(const NormalizedFrame& frame,
                                          const NetworkConfig& net, MacStats& total) {
  InferenceResult inf = run_network(encode(frame_to_tensor(frame)), net);
  total += inf.total;
  FrameClassification fc;
  fc.frame_seq = frame.frame_seq;
  fc.class_index = inf.predicted;
  fc.label = inf.label;
  fc.scores = std::move(inf.scores);
  return fc;
}

// Rendezvous handoff of at most one leased frame between the producer and
// consumer threads.
class LeaseSlot {
 public:
  void push(FrameLease lease) {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return !slot_.has_value(); });
    slot_ = std::move(lease);
    cv_.notify_all();
  }

  std::optional<FrameLease> pop() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return slot_.has_value() || closed_; });
    if (!slot_.has_value()) {
      return std::nullopt;
    }
    std::optional<FrameLease> out = std::move(slot_);
    slot_.reset();
    cv_.notify_all();
    return out;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    cv_.notify_all();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::optional<FrameLease> slot_;
  bool closed_ = false;
};

}  // namespace detail

// Runs the full functional pipeline over an event stream and produces the
// timing trace for the same frame count. Deterministic for fixed inputs; the
// threaded mode uses the collector's buffer-ownership handoff with blocking
// backpressure (no event loss) and yields identical outputs.
inline EndToEndResult end_to_end(const std::vector<AerEvent>& events,
                                 const NetworkConfig& net, const EndToEndConfig& cfg) {
  net.validate();
  EndToEndResult result;
  auto normalize = [&](const EventHistogram& h) {
    return cfg.use_fixed_norm ? normalize_fixed(h, cfg.norm)
                              : normalize_float(h, cfg.norm);
  };

  if (cfg.execution == Execution::kSingleThread) {
    DoubleBufferCollector collector(cfg.geometry, cfg.collector,
                                    BackpressurePolicy::kDropAndCount);
    for (const AerEvent& ev : events) {
      AccumulateResult r = collector.accumulate(ev);
      if (r.frame) {
        NormalizedFrame frame = normalize(r.frame->get());
        r.frame->release();
        result.classifications.push_back(
            detail::classify_frame(frame, net, result.total_macs));
      }
    }
    result.collector_stats = collector.stats();
  } else {
    DoubleBufferCollector collector(cfg.geometry, cfg.collector,
                                    BackpressurePolicy::kBlock);
    detail::LeaseSlot slot;
    std::thread producer([&] {
      for (const AerEvent& ev : events) {
        AccumulateResult r = collector.accumulate(ev);
        if (r.frame) {
          slot.push(std::move(*r.frame));
        }
      }
      slot.close();
    });
    while (auto lease = slot.pop()) {
      NormalizedFrame frame = normalize(lease->get());
      lease->release();
      result.classifications.push_back(
          detail::classify_frame(frame, net, result.total_macs));
    }
    producer.join();
    result.collector_stats = collector.stats();
  }

  std::vector<StageTiming> stages =
      cfg.stages.empty()
          ? default_stages(cfg.collector.k_events,
                           static_cast<uint32_t>(cfg.collector.target_width) *
                               cfg.collector.target_height)
          : cfg.stages;
  if (!result.classifications.empty()) {
    result.trace = simulate(stages, static_cast<uint32_t>(result.classifications.size()),
                            cfg.sim_mode, cfg.event_rate_eps);
  }
  return result;
}

inline void write_classifications_csv(std::ostream& os,
                                      const std::vector<FrameClassification>& rows) {
  size_t n_scores = rows.empty() ? 0 : rows.front().scores.size();
  os << "frame_seq,class_index,label";
  for (size_t i = 0; i < n_scores; ++i) {
    os << ",score_raw_" << i;
  }
  os << '\n';
  for (const FrameClassification& row : rows) {
    os << row.frame_seq << ',' << row.class_index << ',' << row.label;
    for (int32_t s : row.scores) {
      os << ',' << s;
    }
    os << '\n';
  }
}

}  // namespace dvs2sm
