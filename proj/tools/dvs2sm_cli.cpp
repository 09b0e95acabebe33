// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end for the event-to-classification pipeline: event
// stream generation, histogram framing, normalization, sparsity-map codec,
// network inference, and the pipelined timing model. Subcommands exchange
// plain files so every stage is reproducible and diffable; numeric output is
// printed as Q-format raw integers alongside the real rendering.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dvs2sm/dvs2sm.hpp"

namespace fs = std::filesystem;
using namespace dvs2sm;

namespace {

struct CliError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::pair<uint16_t, uint16_t> parse_dims(const std::string& text, const char* what) {
  size_t x = text.find('x');
  if (x == std::string::npos) {
    throw CliError(std::string(what) + " must look like <width>x<height>");
  }
  int w = std::stoi(text.substr(0, x));
  int h = std::stoi(text.substr(x + 1));
  if (w < 1 || h < 1 || w > 65535 || h > 65535) {
    throw CliError(std::string(what) + " out of range");
  }
  return {static_cast<uint16_t>(w), static_cast<uint16_t>(h)};
}

StreamFormat format_for(const fs::path& path) {
  return path.extension() == ".csv" ? StreamFormat::kCsv : StreamFormat::kBin;
}

std::ifstream open_in(const fs::path& path, bool binary) {
  std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
  if (!is) {
    throw CliError("cannot open " + path.string());
  }
  return is;
}

std::ofstream open_out(const fs::path& path, bool binary) {
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  if (!os) {
    throw CliError("cannot open " + path.string() + " for writing");
  }
  return os;
}

PolarityMode parse_polarity(const std::string& s) {
  if (s == "count") return PolarityMode::kCount;
  if (s == "signed") return PolarityMode::kSigned;
  throw CliError("polarity-mode must be count or signed");
}

NormConfig parse_norm_variant(const std::string& s) {
  NormConfig cfg;
  if (s == "paper") return cfg;
  if (s == "subtract-mean") {
    cfg.subtract_mean = true;
    return cfg;
  }
  if (s == "nz-variance") {
    cfg.variance_over_nonzero_only = true;
    return cfg;
  }
  throw CliError("norm-variant must be paper, subtract-mean, or nz-variance");
}

// Timing spec grammar: comma-separated name=spec entries in stage order.
//   spec := <number>(us|ms|s) | event_rate | cycles:<count>@<hz>
// Example: collect=event_rate,norm=cycles:4142@60e6,cnn=6ms
std::vector<StageTiming> parse_timing(const std::string& text, uint32_t k_events) {
  std::vector<StageTiming> stages;
  std::stringstream ss(text);
  std::string entry;
  while (std::getline(ss, entry, ',')) {
    size_t eq = entry.find('=');
    if (eq == std::string::npos) {
      throw CliError("timing entry '" + entry + "' is not name=spec");
    }
    std::string name = entry.substr(0, eq);
    std::string spec = entry.substr(eq + 1);
    if (spec == "event_rate") {
      stages.push_back(StageTiming::event_rate(name, k_events));
    } else if (spec.rfind("cycles:", 0) == 0) {
      size_t at = spec.find('@');
      if (at == std::string::npos) {
        throw CliError("cycles spec '" + spec + "' needs @<hz>");
      }
      uint64_t cycles = std::stoull(spec.substr(7, at - 7));
      double hz = std::stod(spec.substr(at + 1));
      stages.push_back(StageTiming::clock_cycles(name, cycles, hz));
    } else {
      double scale;
      std::string digits;
      if (spec.size() > 2 && spec.substr(spec.size() - 2) == "us") {
        scale = 1.0;
        digits = spec.substr(0, spec.size() - 2);
      } else if (spec.size() > 2 && spec.substr(spec.size() - 2) == "ms") {
        scale = 1e3;
        digits = spec.substr(0, spec.size() - 2);
      } else if (spec.size() > 1 && spec.back() == 's') {
        scale = 1e6;
        digits = spec.substr(0, spec.size() - 1);
      } else {
        throw CliError("duration '" + spec + "' needs a us/ms/s suffix");
      }
      stages.push_back(StageTiming::fixed(name, std::stod(digits) * scale));
    }
  }
  if (stages.empty()) {
    throw CliError("timing spec is empty");
  }
  return stages;
}

void print_q(const char* name, QVal v) {
  std::printf("%s_raw=%lld %s=%.9g\n", name, static_cast<long long>(v.raw), name,
              v.to_real());
}

// Shared run configuration assembled from the global flags.
struct RunOpts {
  std::string geometry = "240x180";
  std::string resolution = "64x64";
  uint32_t k_events = 2000;
  std::string polarity_mode = "count";
  std::string norm_variant = "paper";
  std::string mode = "fixed";
  std::string timing;
  double rate = 333334.0;
  uint64_t seed = 1;

  SensorGeometry sensor() const {
    auto [w, h] = parse_dims(geometry, "geometry");
    return {w, h};
  }
  CollectorConfig collector() const {
    auto [w, h] = parse_dims(resolution, "resolution");
    CollectorConfig cfg;
    cfg.target_width = w;
    cfg.target_height = h;
    cfg.k_events = k_events;
    cfg.polarity_mode = parse_polarity(polarity_mode);
    return cfg;
  }
  std::vector<StageTiming> stages() const {
    auto [w, h] = parse_dims(resolution, "resolution");
    return timing.empty()
               ? default_stages(k_events, static_cast<uint32_t>(w) * h)
               : parse_timing(timing, k_events);
  }
};

std::vector<AerEvent> load_events(const fs::path& path, SensorGeometry geometry) {
  auto is = open_in(path, format_for(path) == StreamFormat::kBin);
  EventStream stream = read_events(is, format_for(path), geometry);
  if (stream.nonmonotonic_count > 0) {
    std::fprintf(stderr, "warning: %llu non-monotonic timestamps in %s\n",
                 static_cast<unsigned long long>(stream.nonmonotonic_count),
                 path.string().c_str());
  }
  return std::move(stream.events);
}

int cmd_gen(const RunOpts& opts, const std::string& pattern, double speed,
            uint64_t duration_us, const fs::path& out) {
  if (pattern != "edge") {
    throw CliError("unknown pattern '" + pattern + "' (try: edge)");
  }
  SensorGeometry geom = opts.sensor();
  auto events = gen_moving_edge(geom, speed, opts.rate, duration_us, opts.seed);
  auto os = open_out(out, format_for(out) == StreamFormat::kBin);
  write_events(os, events, format_for(out), geom);
  std::printf("events=%zu duration_us=%llu rate_eps=%.1f file=%s\n", events.size(),
              static_cast<unsigned long long>(duration_us), opts.rate,
              out.string().c_str());
  return 0;
}

int cmd_frames(const RunOpts& opts, const fs::path& input, const fs::path& out_dir) {
  auto events = load_events(input, opts.sensor());
  fs::create_directories(out_dir);
  DoubleBufferCollector collector(opts.sensor(), opts.collector());
  uint32_t frames = 0;
  for (const AerEvent& ev : events) {
    AccumulateResult r = collector.accumulate(ev);
    if (r.frame) {
      const EventHistogram& h = r.frame->get();
      char name[32];
      std::snprintf(name, sizeof name, "frame_%06u.hst", h.frame_seq);
      auto os = open_out(out_dir / name, true);
      write_histogram(os, h);
      ++frames;
    }
  }
  std::printf("frames=%u events=%zu k_events=%u out=%s\n", frames, events.size(),
              opts.k_events, out_dir.string().c_str());
  return 0;
}

int cmd_normalize(const RunOpts& opts, const fs::path& input, const fs::path& out) {
  if (opts.mode != "float" && opts.mode != "fixed") {
    throw CliError("mode must be float or fixed");
  }
  auto is = open_in(input, true);
  EventHistogram h = read_histogram(is, parse_polarity(opts.polarity_mode));
  NormConfig cfg = parse_norm_variant(opts.norm_variant);
  NormalizedFrame frame =
      opts.mode == "float" ? normalize_float(h, cfg) : normalize_fixed(h, cfg);
  auto os = open_out(out, true);
  write_normalized(os, frame);
  std::printf("frame_seq=%u degenerate=%u S=%lld c=%u\n", frame.frame_seq,
              static_cast<unsigned>(frame.degenerate),
              static_cast<long long>(frame.stats.sum), frame.stats.nonzero);
  print_q("mean", from_real(frame.stats.mean, kQ24_16));
  print_q("sigma", from_real(frame.stats.sigma, kQ24_16));
  return 0;
}

int cmd_encode(const fs::path& input, const fs::path& out) {
  auto is = open_in(input, true);
  NormalizedFrame frame = read_normalized(is);
  FeatureMapTensor t(frame.height, frame.width, 1);
  t.values = frame.pixels_q;
  CompressedFeatureMap c = encode(t);
  auto os = open_out(out, true);
  write_compressed(os, c);
  std::printf("dims=%ux%ux%u nonzero=%zu compressed_bits=%llu ratio=%.6f\n", c.height,
              c.width, c.channels, c.nzvl.size(),
              static_cast<unsigned long long>(compressed_size_bits(c)),
              compression_ratio(t));
  return 0;
}

int cmd_decode(const fs::path& input, const fs::path& out) {
  auto is = open_in(input, true);
  CompressedFeatureMap c = read_compressed(is);
  if (c.channels != 1) {
    throw CliError("decode: only single-channel tensors can be written as NRM1");
  }
  FeatureMapTensor t = decode(c);
  NormalizedFrame frame;
  frame.width = t.width;
  frame.height = t.height;
  frame.frame_seq = 0;
  frame.degenerate = DegenerateFlag::kNone;
  frame.pixels_q = t.values;
  auto os = open_out(out, true);
  write_normalized(os, frame);
  std::printf("dims=%ux%ux%u nonzero=%zu file=%s\n", c.height, c.width, c.channels,
              c.nzvl.size(), out.string().c_str());
  return 0;
}

int cmd_infer(const fs::path& input, const fs::path& network, const fs::path& out) {
  auto is = open_in(input, true);
  CompressedFeatureMap c = read_compressed(is);
  NetworkConfig net = load_network(network);
  InferenceResult result = run_network(c, net);
  std::ostringstream text;
  text << "class=" << result.predicted << " label=" << result.label << '\n';
  for (size_t i = 0; i < result.scores.size(); ++i) {
    char line[160];
    std::snprintf(line, sizeof line, "score_%zu_raw=%d score_%zu=%.9g label=%s\n", i,
                  result.scores[i], i, QVal{result.scores[i], kQ16_8, 0}.to_real(),
                  net.fc.labels[i].c_str());
    text << line;
  }
  text << "macs_performed=" << result.total.macs_performed
       << " macs_dense_equivalent=" << result.total.macs_dense_equivalent
       << " zero_skipped=" << result.total.zero_skipped << '\n';
  std::fputs(text.str().c_str(), stdout);
  if (!out.empty()) {
    auto os = open_out(out, false);
    os << text.str();
  }
  return 0;
}

int cmd_pipeline(const RunOpts& opts, const fs::path& input, const fs::path& network,
                 const fs::path& out_dir, const std::string& execution) {
  EndToEndConfig cfg;
  cfg.geometry = opts.sensor();
  cfg.collector = opts.collector();
  cfg.norm = parse_norm_variant(opts.norm_variant);
  cfg.use_fixed_norm = opts.mode != "float";
  cfg.stages = opts.stages();
  cfg.event_rate_eps = opts.rate;
  if (execution == "threaded") {
    cfg.execution = Execution::kThreaded;
  } else if (execution != "single") {
    throw CliError("execution must be single or threaded");
  }

  auto events = load_events(input, cfg.geometry);
  NetworkConfig net = load_network(network);
  EndToEndResult result = end_to_end(events, net, cfg);

  fs::create_directories(out_dir);
  {
    auto os = open_out(out_dir / "classifications.csv", false);
    write_classifications_csv(os, result.classifications);
  }
  if (!result.classifications.empty()) {
    auto os = open_out(out_dir / "trace.csv", false);
    write_trace_csv(os, result.trace);
  }
  double seq_period = result.trace.latency_us;
  std::printf("frames=%zu period_us=%.3f fps=%.3f speedup_vs_sequential=%.3f "
              "binding_stage=%s macs_performed=%llu\n",
              result.classifications.size(), result.trace.period_us,
              result.trace.fps(),
              result.trace.period_us > 0.0
                  ? (seq_period - result.trace.period_us) / result.trace.period_us
                  : 0.0,
              result.classifications.empty()
                  ? "-"
                  : result.trace.stage_names[result.trace.binding_stage()].c_str(),
              static_cast<unsigned long long>(result.total_macs.macs_performed));
  return 0;
}

int cmd_bench(const RunOpts& opts, uint32_t n_frames) {
  std::vector<StageTiming> pipelined_stages = opts.stages();
  PipelineTrace pip = simulate(pipelined_stages, n_frames, SimMode::kPipelined,
                               opts.rate);
  PipelineTrace seq = simulate(pipelined_stages, n_frames, SimMode::kSequential,
                               opts.rate);
  std::printf("sequential_period_us=%.3f pipelined_period_us=%.3f speedup=%.3f "
              "peak_fps=%.3f latency_us=%.3f binding_stage=%s\n",
              seq.period_us, pip.period_us, speedup(seq, pip), pip.fps(),
              pip.latency_us, pip.stage_names[pip.binding_stage()].c_str());
  return 0;
}

int cmd_gennet(const RunOpts& opts, const std::string& channels,
               const std::string& labels, const std::string& input_dims,
               const fs::path& out) {
  NetworkConfig net;
  if (channels.empty()) {
    net = make_random_roshambo_network(opts.seed);
  } else {
    std::vector<uint16_t> plan;
    std::stringstream cs(channels);
    std::string tok;
    while (std::getline(cs, tok, ',')) {
      plan.push_back(static_cast<uint16_t>(std::stoi(tok)));
    }
    std::vector<std::string> names;
    std::stringstream ls(labels);
    while (std::getline(ls, tok, ',')) {
      names.push_back(tok);
    }
    if (names.empty()) {
      throw CliError("gennet: --labels required with --channels");
    }
    auto [w, h] = parse_dims(input_dims, "input");
    net = make_random_network(h, w, plan, names, opts.seed);
  }
  fs::path sidecar = out.stem().string() + ".wgt";
  save_network(net, out, sidecar.string());
  std::printf("network=%s layers=%zu fc=%ux%u file=%s\n", net.name.c_str(),
              net.layers.size(), net.fc.inputs, net.fc.outputs,
              out.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DVS event stream to normalized sparsity-map CNN pipeline"};
  app.require_subcommand(1);

  RunOpts opts;
  app.add_option("--k-events", opts.k_events, "events per frame")->capture_default_str();
  app.add_option("--resolution", opts.resolution, "histogram resolution WxH")
      ->capture_default_str();
  app.add_option("--geometry", opts.geometry, "sensor geometry WxH")
      ->capture_default_str();
  app.add_option("--polarity-mode", opts.polarity_mode, "count|signed")
      ->capture_default_str();
  app.add_option("--norm-variant", opts.norm_variant,
                 "paper|subtract-mean|nz-variance")
      ->capture_default_str();
  app.add_option("--mode", opts.mode, "float|fixed")->capture_default_str();
  app.add_option("--timing", opts.timing,
                 "stage list, e.g. collect=event_rate,norm=cycles:4142@60e6,cnn=6ms");
  app.add_option("--rate", opts.rate, "event rate in events/s")->capture_default_str();
  app.add_option("--seed", opts.seed, "RNG seed")->capture_default_str();

  std::string pattern = "edge";
  double speed = 1000.0;
  uint64_t duration_us = 1000000;
  std::string in_path;
  std::string out_path;
  std::string network_path;
  std::string execution = "single";
  uint32_t bench_frames = 32;
  std::string channels;
  std::string labels;
  std::string input_dims = "64x64";

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic event stream");
  gen->add_option("--pattern", pattern, "stimulus pattern (edge)")
      ->capture_default_str();
  gen->add_option("--speed", speed, "edge speed in px/s")->capture_default_str();
  gen->add_option("--duration-us", duration_us, "stream duration")
      ->capture_default_str();
  gen->add_option("-o,--output", out_path, "output .csv or .bin file")->required();

  CLI::App* frames = app.add_subcommand("frames", "collect events into histograms");
  frames->add_option("-i,--input", in_path, "event file")->required();
  frames->add_option("-o,--output", out_path, "output directory")->required();

  CLI::App* normalize = app.add_subcommand("normalize", "normalize a histogram");
  normalize->add_option("-i,--input", in_path, "HST1 file")->required();
  normalize->add_option("-o,--output", out_path, "NRM1 file")->required();

  CLI::App* encode = app.add_subcommand("encode", "compress a frame to SM+NZVL");
  encode->add_option("-i,--input", in_path, "NRM1 file")->required();
  encode->add_option("-o,--output", out_path, "CFM1 file")->required();

  CLI::App* decode = app.add_subcommand("decode", "expand SM+NZVL to a dense frame");
  decode->add_option("-i,--input", in_path, "CFM1 file")->required();
  decode->add_option("-o,--output", out_path, "NRM1 file")->required();

  CLI::App* infer = app.add_subcommand("infer", "run the network on a tensor");
  infer->add_option("-i,--input", in_path, "CFM1 file")->required();
  infer->add_option("--network", network_path, "network JSON")->required();
  infer->add_option("-o,--output", out_path, "score dump file");

  CLI::App* pipeline =
      app.add_subcommand("pipeline", "events to classifications with a trace");
  pipeline->add_option("-i,--input", in_path, "event file")->required();
  pipeline->add_option("--network", network_path, "network JSON")->required();
  pipeline->add_option("-o,--output", out_path, "output directory")->required();
  pipeline->add_option("--execution", execution, "single|threaded")
      ->capture_default_str();

  CLI::App* bench = app.add_subcommand("bench", "timing model summary");
  bench->add_option("--frames", bench_frames, "frames to simulate")
      ->capture_default_str();

  CLI::App* gennet = app.add_subcommand("gennet", "write a seeded random network");
  gennet->add_option("-o,--output", out_path, "network JSON path")->required();
  gennet->add_option("--channels", channels, "conv channel plan, e.g. 8,16,32");
  gennet->add_option("--labels", labels, "class labels, comma separated");
  gennet->add_option("--input", input_dims, "input WxH")->capture_default_str();

  for (CLI::App* sub : app.get_subcommands(nullptr)) {
    sub->fallthrough();
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      return cmd_gen(opts, pattern, speed, duration_us, out_path);
    }
    if (frames->parsed()) {
      return cmd_frames(opts, in_path, out_path);
    }
    if (normalize->parsed()) {
      return cmd_normalize(opts, in_path, out_path);
    }
    if (encode->parsed()) {
      return cmd_encode(in_path, out_path);
    }
    if (decode->parsed()) {
      return cmd_decode(in_path, out_path);
    }
    if (infer->parsed()) {
      return cmd_infer(in_path, network_path, out_path);
    }
    if (pipeline->parsed()) {
      return cmd_pipeline(opts, in_path, network_path, out_path, execution);
    }
    if (bench->parsed()) {
      return cmd_bench(opts, bench_frames);
    }
    if (gennet->parsed()) {
      return cmd_gennet(opts, channels, labels, input_dims, out_path);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
