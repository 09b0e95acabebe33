// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvs2sm/fixed_point.hpp"
#include "dvs2sm/sparsity_codec.hpp"

namespace dvs2sm {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One convolutional stage: k x k cross-correlation with zero padding, stride
// 1, optional ReLU and 2x2/stride-2 max-pooling. Weights are Q16.8 raw in
// [out_channel][in_channel][ky][kx] order.
struct ConvLayerConfig {
  uint8_t kernel = 3;
  uint16_t in_channels = 1;
  uint16_t out_channels = 1;
  uint8_t padding = 1;  // "same" for the default kernel
  bool relu_enabled = true;
  bool pool_enabled = false;
  std::vector<int32_t> weights;
  std::vector<int32_t> bias;  // per out channel, Q16.8 raw; empty = zeros

  static constexpr uint8_t same_padding(uint8_t k) { return (k - 1) / 2; }

  size_t weight_count() const {
    return static_cast<size_t>(out_channels) * in_channels * kernel * kernel;
  }
  size_t weight_index(uint16_t o, uint16_t ic, uint8_t ky, uint8_t kx) const {
    return ((static_cast<size_t>(o) * in_channels + ic) * kernel + ky) * kernel + kx;
  }

  void validate() const {
    if (kernel != 1 && kernel != 3 && kernel != 5 && kernel != 7) {
      throw ConfigError("kernel size must be one of 1,3,5,7");
    }
    if (in_channels == 0 || out_channels == 0) {
      throw ConfigError("channel counts must be >= 1");
    }
    if (weights.size() != weight_count()) {
      throw ConfigError("expected " + std::to_string(weight_count()) +
                        " weights, got " + std::to_string(weights.size()));
    }
    if (!bias.empty() && bias.size() != out_channels) {
      throw ConfigError("bias length must equal out_channels");
    }
  }
};

// Host-side fully-connected classifier: scores = W * flatten(input), weights
// row-major [output][input] in Q16.8 raw.
struct FcConfig {
  uint32_t inputs = 0;
  uint32_t outputs = 0;
  std::vector<int32_t> weights;
  std::vector<int32_t> bias;  // optional, per output
  std::vector<std::string> labels;

  void validate() const {
    if (inputs == 0 || outputs == 0) {
      throw ConfigError("fc dimensions must be >= 1");
    }
    if (weights.size() != static_cast<size_t>(inputs) * outputs) {
      throw ConfigError("fc weight count mismatch");
    }
    if (!bias.empty() && bias.size() != outputs) {
      throw ConfigError("fc bias length must equal outputs");
    }
    if (labels.size() != outputs) {
      throw ConfigError("fc label count must equal outputs");
    }
  }
};

struct NetworkConfig {
  std::string name;
  uint16_t input_height = 64;
  uint16_t input_width = 64;
  uint16_t input_channels = 1;
  std::vector<ConvLayerConfig> layers;
  FcConfig fc;

  // Checks layer chaining and that the flattened final conv output matches
  // the fully-connected input size.
  void validate() const {
    uint16_t h = input_height;
    uint16_t w = input_width;
    uint16_t ch = input_channels;
    for (size_t i = 0; i < layers.size(); ++i) {
      const ConvLayerConfig& layer = layers[i];
      layer.validate();
      if (layer.in_channels != ch) {
        throw ConfigError("layer " + std::to_string(i) + " expects " +
                          std::to_string(layer.in_channels) + " channels, got " +
                          std::to_string(ch));
      }
      int oh = h + 2 * layer.padding - layer.kernel + 1;
      int ow = w + 2 * layer.padding - layer.kernel + 1;
      if (oh < 1 || ow < 1) {
        throw ConfigError("layer " + std::to_string(i) + " output is empty");
      }
      h = static_cast<uint16_t>(oh);
      w = static_cast<uint16_t>(ow);
      if (layer.pool_enabled) {
        h = static_cast<uint16_t>(h / 2);
        w = static_cast<uint16_t>(w / 2);
        if (h == 0 || w == 0) {
          throw ConfigError("layer " + std::to_string(i) + " pools to nothing");
        }
      }
      ch = layer.out_channels;
    }
    fc.validate();
    size_t flat = static_cast<size_t>(h) * w * ch;
    if (flat != fc.inputs) {
      throw ConfigError("fc expects " + std::to_string(fc.inputs) +
                        " inputs but conv stack produces " + std::to_string(flat));
    }
  }
};

// Work accounting for the zero-skipping core. A MAC is one multiply into one
// output accumulator on an in-bounds tap; padding taps are never counted, in
// either the dense-equivalent or the performed tally, so
//   macs_dense_equivalent - macs_performed
//     == sum over zero input pixels of (in-bounds taps * out_channels)
// exactly, which approaches zero_skipped * k^2 * out_channels away from the
// border.
struct MacStats {
  uint64_t macs_performed = 0;
  uint64_t macs_dense_equivalent = 0;
  uint64_t zero_skipped = 0;  // count of zero input pixels skipped

  MacStats& operator+=(const MacStats& o) {
    macs_performed += o.macs_performed;
    macs_dense_equivalent += o.macs_dense_equivalent;
    zero_skipped += o.zero_skipped;
    return *this;
  }
};

namespace detail {

struct ConvGeometry {
  uint16_t out_height;
  uint16_t out_width;
};

inline ConvGeometry conv_output_dims(const FeatureMapTensor& in,
                                     const ConvLayerConfig& cfg) {
  int oh = in.height + 2 * cfg.padding - cfg.kernel + 1;
  int ow = in.width + 2 * cfg.padding - cfg.kernel + 1;
  if (oh < 1 || ow < 1) {
    throw ConfigError("convolution output is empty");
  }
  return {static_cast<uint16_t>(oh), static_cast<uint16_t>(ow)};
}

// Number of kernel taps along one axis that land in bounds when scattering
// from input position p: |{ t in [0,k) : 0 <= p - t + pad < out_extent }|.
inline uint32_t taps_in_bounds(uint16_t p, uint8_t kernel, uint8_t pad,
                               uint16_t out_extent) {
  int lo = std::max(0, static_cast<int>(p) + pad - (out_extent - 1));
  int hi = std::min(static_cast<int>(kernel) - 1, static_cast<int>(p) + pad);
  return hi >= lo ? static_cast<uint32_t>(hi - lo + 1) : 0;
}

// Wide accumulator grid + single final rounding shared by both convolution
// routes, so the zero-skip path matches the dense oracle bit for bit.
inline FeatureMapTensor round_accumulators(const std::vector<int128_t>& acc,
                                           uint16_t h, uint16_t w, uint16_t ch) {
  FeatureMapTensor out(h, w, ch);
  for (size_t i = 0; i < out.size(); ++i) {
    uint8_t flags = 0;
    int128_t scaled = rne_shift_right(acc[i], kQ16_8.frac_bits);
    out.values[i] = static_cast<int32_t>(saturate_raw(scaled, kQ16_8, flags));
  }
  return out;
}

inline std::vector<int128_t> bias_accumulators(const ConvLayerConfig& cfg,
                                               size_t out_size, size_t plane) {
  std::vector<int128_t> acc(out_size, 0);
  if (!cfg.bias.empty()) {
    for (uint16_t o = 0; o < cfg.out_channels; ++o) {
      // bias is Q16.8; accumulators hold products at scale 2^16
      int128_t b = static_cast<int128_t>(cfg.bias[o]) << kQ16_8.frac_bits;
      for (size_t i = 0; i < plane; ++i) {
        acc[o * plane + i] = b;
      }
    }
  }
  return acc;
}

}  // namespace detail

// Textbook dense cross-correlation reference: out(o,a,b) = sum over ic,i,j of
// K(o,ic,i,j) * in(ic, a+i-pad, b+j-pad), zero padding outside bounds. All
// arithmetic in a widened accumulator with one final rounding to Q16.8.
// No ReLU or pooling here.
inline FeatureMapTensor conv_dense_oracle(const FeatureMapTensor& input,
                                          const ConvLayerConfig& cfg) {
  cfg.validate();
  if (input.channels != cfg.in_channels) {
    throw ConfigError("input channel count mismatch");
  }
  auto [oh, ow] = detail::conv_output_dims(input, cfg);
  size_t plane = static_cast<size_t>(oh) * ow;
  auto acc = detail::bias_accumulators(cfg, plane * cfg.out_channels, plane);

  for (uint16_t o = 0; o < cfg.out_channels; ++o) {
    for (uint16_t a = 0; a < oh; ++a) {
      for (uint16_t b = 0; b < ow; ++b) {
        int128_t& cell = acc[(static_cast<size_t>(o) * oh + a) * ow + b];
        for (uint16_t ic = 0; ic < cfg.in_channels; ++ic) {
          for (uint8_t i = 0; i < cfg.kernel; ++i) {
            int r = a + i - cfg.padding;
            if (r < 0 || r >= input.height) {
              continue;
            }
            for (uint8_t j = 0; j < cfg.kernel; ++j) {
              int c = b + j - cfg.padding;
              if (c < 0 || c >= input.width) {
                continue;
              }
              cell += static_cast<int128_t>(
                          input.at(static_cast<uint16_t>(r), static_cast<uint16_t>(c), ic)) *
                      cfg.weights[cfg.weight_index(o, ic, i, j)];
            }
          }
        }
      }
    }
  }
  return detail::round_accumulators(acc, oh, ow, cfg.out_channels);
}

// The zero-skipping route: scatter each non-zero input pixel from the
// compressed stream across its kernel footprint, the way the decoder feeds
// the MAC array, and count only the multiplies actually issued.
inline std::pair<FeatureMapTensor, MacStats> conv_zero_skip(
    const CompressedFeatureMap& input, const ConvLayerConfig& cfg) {
  cfg.validate();
  if (input.channels != cfg.in_channels) {
    throw ConfigError("input channel count mismatch");
  }
  FeatureMapTensor dims_probe(input.height, input.width, input.channels);
  auto [oh, ow] = detail::conv_output_dims(dims_probe, cfg);
  size_t plane = static_cast<size_t>(oh) * ow;
  auto acc = detail::bias_accumulators(cfg, plane * cfg.out_channels, plane);

  MacStats stats;
  for (const NonZeroEntry& e : iter_nonzero(input)) {
    uint32_t taps = 0;
    for (uint8_t i = 0; i < cfg.kernel; ++i) {
      int a = e.row - i + cfg.padding;
      if (a < 0 || a >= oh) {
        continue;
      }
      for (uint8_t j = 0; j < cfg.kernel; ++j) {
        int b = e.col - j + cfg.padding;
        if (b < 0 || b >= ow) {
          continue;
        }
        ++taps;
        size_t cell = static_cast<size_t>(a) * ow + b;
        for (uint16_t o = 0; o < cfg.out_channels; ++o) {
          acc[o * plane + cell] +=
              static_cast<int128_t>(e.value) *
              cfg.weights[cfg.weight_index(o, e.channel, i, j)];
        }
      }
    }
    stats.macs_performed += static_cast<uint64_t>(taps) * cfg.out_channels;
  }

  // Dense-equivalent MACs: every input position contributes its in-bounds
  // footprint whether or not it is zero. Separable in row/column.
  uint64_t row_taps = 0;
  for (uint16_t r = 0; r < input.height; ++r) {
    row_taps += detail::taps_in_bounds(r, cfg.kernel, cfg.padding, oh);
  }
  uint64_t col_taps = 0;
  for (uint16_t c = 0; c < input.width; ++c) {
    col_taps += detail::taps_in_bounds(c, cfg.kernel, cfg.padding, ow);
  }
  stats.macs_dense_equivalent =
      row_taps * col_taps * input.channels * cfg.out_channels;
  stats.zero_skipped = input.entry_count() - input.nzvl.size();

  return {detail::round_accumulators(acc, oh, ow, cfg.out_channels), stats};
}

inline FeatureMapTensor relu(FeatureMapTensor t) {
  for (int32_t& v : t.values) {
    v = std::max(v, 0);
  }
  return t;
}

// 2x2 stride-2 max pooling; odd trailing rows/columns are dropped.
inline FeatureMapTensor maxpool2(const FeatureMapTensor& t) {
  uint16_t oh = t.height / 2;
  uint16_t ow = t.width / 2;
  if (oh == 0 || ow == 0) {
    throw ConfigError("maxpool2 input too small");
  }
  FeatureMapTensor out(oh, ow, t.channels);
  for (uint16_t ch = 0; ch < t.channels; ++ch) {
    for (uint16_t r = 0; r < oh; ++r) {
      for (uint16_t c = 0; c < ow; ++c) {
        int32_t m = t.at(2 * r, 2 * c, ch);
        m = std::max(m, t.at(2 * r, 2 * c + 1, ch));
        m = std::max(m, t.at(2 * r + 1, 2 * c, ch));
        m = std::max(m, t.at(2 * r + 1, 2 * c + 1, ch));
        out.at(r, c, ch) = m;
      }
    }
  }
  return out;
}

// One full accelerator pass: zero-skip convolution, optional ReLU, optional
// pooling, then re-compression of the output stream.
inline std::pair<CompressedFeatureMap, MacStats> run_layer(
    const CompressedFeatureMap& input, const ConvLayerConfig& cfg) {
  auto [tensor, stats] = conv_zero_skip(input, cfg);
  if (cfg.relu_enabled) {
    tensor = relu(std::move(tensor));
  }
  if (cfg.pool_enabled) {
    tensor = maxpool2(tensor);
  }
  return {encode(tensor), stats};
}

struct InferenceResult {
  std::vector<int32_t> scores;  // Q16.8 raw, one per class
  uint32_t predicted = 0;
  std::string label;
  std::vector<MacStats> per_layer;
  MacStats total;
};

// Sequential layer evaluation followed by the host-side fully-connected
// classifier. The flatten order is the tensor storage order.
inline InferenceResult run_network(const CompressedFeatureMap& input,
                                   const NetworkConfig& net) {
  net.validate();
  InferenceResult result;
  CompressedFeatureMap current = input;
  for (const ConvLayerConfig& layer : net.layers) {
    auto [next, stats] = run_layer(current, layer);
    result.per_layer.push_back(stats);
    result.total += stats;
    current = std::move(next);
  }
  FeatureMapTensor flat = decode(current);
  if (flat.size() != net.fc.inputs) {
    throw ConfigError("flattened conv output does not match fc inputs");
  }
  result.scores.resize(net.fc.outputs);
  for (uint32_t o = 0; o < net.fc.outputs; ++o) {
    int128_t acc = net.fc.bias.empty()
                       ? 0
                       : static_cast<int128_t>(net.fc.bias[o]) << kQ16_8.frac_bits;
    const int32_t* row = net.fc.weights.data() + static_cast<size_t>(o) * net.fc.inputs;
    for (uint32_t i = 0; i < net.fc.inputs; ++i) {
      acc += static_cast<int128_t>(row[i]) * flat.values[i];
    }
    uint8_t flags = 0;
    result.scores[o] = static_cast<int32_t>(detail::saturate_raw(
        detail::rne_shift_right(acc, kQ16_8.frac_bits), kQ16_8, flags));
  }
  result.predicted = static_cast<uint32_t>(
      std::max_element(result.scores.begin(), result.scores.end()) -
      result.scores.begin());
  result.label = net.fc.labels[result.predicted];
  return result;
}

// Weight initialization for experiments: the published network's trained
// weights are not available, so seeded random weights stand in. Uses raw
// mt19937_64 draws (no distributions) so streams are identical everywhere.
inline NetworkConfig make_random_network(uint16_t input_h, uint16_t input_w,
                                         std::vector<uint16_t> channel_plan,
                                         std::vector<std::string> labels,
                                         uint64_t seed) {
  NetworkConfig net;
  net.name = "random-" + std::to_string(seed);
  net.input_height = input_h;
  net.input_width = input_w;
  net.input_channels = 1;
  std::mt19937_64 rng(seed);

  auto draw_raw = [&rng](int32_t limit) {
    return static_cast<int32_t>(rng() % (2 * static_cast<uint64_t>(limit) + 1)) - limit;
  };

  uint16_t h = input_h;
  uint16_t w = input_w;
  uint16_t ch = 1;
  for (uint16_t out_ch : channel_plan) {
    ConvLayerConfig layer;
    layer.kernel = 3;
    layer.padding = ConvLayerConfig::same_padding(3);
    layer.in_channels = ch;
    layer.out_channels = out_ch;
    layer.relu_enabled = true;
    layer.pool_enabled = true;
    // keep activations O(1): weights ~ U(-limit, limit) with
    // limit = 1 / (k * sqrt(in_ch))
    auto limit = std::max<int32_t>(
        8, static_cast<int32_t>(std::lround(
               256.0 / (layer.kernel * std::sqrt(static_cast<double>(ch))))));
    layer.weights.resize(layer.weight_count());
    for (int32_t& v : layer.weights) {
      v = draw_raw(limit);
    }
    net.layers.push_back(std::move(layer));
    h = static_cast<uint16_t>(h / 2);
    w = static_cast<uint16_t>(w / 2);
    ch = out_ch;
  }

  net.fc.inputs = static_cast<uint32_t>(h) * w * ch;
  net.fc.outputs = static_cast<uint32_t>(labels.size());
  net.fc.labels = std::move(labels);
  net.fc.weights.resize(static_cast<size_t>(net.fc.inputs) * net.fc.outputs);
  auto fc_limit = std::max<int32_t>(
      8, static_cast<int32_t>(std::lround(256.0 / std::sqrt(net.fc.inputs))));
  for (int32_t& v : net.fc.weights) {
    v = draw_raw(fc_limit);
  }
  net.validate();
  return net;
}

// The hand-symbol network shape: 64x64x1 input, five 3x3 conv+pool stages
// down to 2x2 spatial, four classes.
inline NetworkConfig make_random_roshambo_network(uint64_t seed) {
  return make_random_network(64, 64, {8, 16, 32, 48, 64},
                             {"rock", "paper", "scissors", "background"}, seed);
}

}  // namespace dvs2sm
