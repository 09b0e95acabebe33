// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvs2sm/io_util.hpp"

namespace dvs2sm {

struct CorruptStreamError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense 3D feature-map tensor of Q16.8 raw values. Traversal order is
// channel-major then row-major: index = ch*(h*w) + row*w + col. This order
// is normative for the whole project — the sparsity map, the non-zero
// iterator, and the network flatten step all follow it.
struct FeatureMapTensor {
  uint16_t height = 0;
  uint16_t width = 0;
  uint16_t channels = 0;
  std::vector<int32_t> values;

  FeatureMapTensor() = default;
  FeatureMapTensor(uint16_t h, uint16_t w, uint16_t ch)
      : height(h), width(w), channels(ch),
        values(static_cast<size_t>(h) * w * ch, 0) {}

  size_t size() const { return static_cast<size_t>(height) * width * channels; }
  size_t index(uint16_t row, uint16_t col, uint16_t ch) const {
    return (static_cast<size_t>(ch) * height + row) * width + col;
  }
  int32_t& at(uint16_t row, uint16_t col, uint16_t ch) {
    return values[index(row, col, ch)];
  }
  int32_t at(uint16_t row, uint16_t col, uint16_t ch) const {
    return values[index(row, col, ch)];
  }

  bool operator==(const FeatureMapTensor&) const = default;
};

// Sparsity map + non-zero value list. Bit i of sm (LSB-first within 32-bit
// words) marks values[i] != 0 in traversal order; nzvl holds exactly those
// values in the same order.
struct CompressedFeatureMap {
  uint16_t height = 0;
  uint16_t width = 0;
  uint16_t channels = 0;
  std::vector<uint32_t> sm;
  std::vector<int32_t> nzvl;

  size_t entry_count() const { return static_cast<size_t>(height) * width * channels; }
  size_t sm_word_count() const { return (entry_count() + 31) / 32; }

  bool sm_bit(size_t i) const { return (sm[i >> 5] >> (i & 31)) & 1; }

  uint64_t sm_popcount() const {
    uint64_t total = 0;
    for (uint32_t word : sm) {
      total += static_cast<uint64_t>(std::popcount(word));
    }
    return total;
  }

  bool operator==(const CompressedFeatureMap&) const = default;
};

enum class DecodeMode : uint8_t {
  kStrict,   // reject zero entries in the NZVL
  kLenient,  // tolerate them; the mask wins
};

inline CompressedFeatureMap encode(const FeatureMapTensor& t) {
  CompressedFeatureMap out;
  out.height = t.height;
  out.width = t.width;
  out.channels = t.channels;
  out.sm.assign((t.size() + 31) / 32, 0);
  for (size_t i = 0; i < t.size(); ++i) {
    if (t.values[i] != 0) {
      out.sm[i >> 5] |= uint32_t{1} << (i & 31);
      out.nzvl.push_back(t.values[i]);
    }
  }
  return out;
}

namespace detail {

inline void validate_compressed(const CompressedFeatureMap& c, DecodeMode mode) {
  if (c.sm.size() != c.sm_word_count()) {
    throw CorruptStreamError("sparsity map word count mismatch");
  }
  if (c.sm_popcount() != c.nzvl.size()) {
    throw CorruptStreamError("sparsity map popcount " +
                             std::to_string(c.sm_popcount()) +
                             " != nzvl length " + std::to_string(c.nzvl.size()));
  }
  size_t tail_bits = c.entry_count() & 31;
  if (tail_bits != 0 && !c.sm.empty() &&
      (c.sm.back() >> tail_bits) != 0) {
    throw CorruptStreamError("sparsity map has bits set past the tensor end");
  }
  if (mode == DecodeMode::kStrict) {
    for (int32_t v : c.nzvl) {
      if (v == 0) {
        throw CorruptStreamError("zero value in non-zero value list");
      }
    }
  }
}

}  // namespace detail

inline FeatureMapTensor decode(const CompressedFeatureMap& c,
                               DecodeMode mode = DecodeMode::kStrict) {
  detail::validate_compressed(c, mode);
  FeatureMapTensor out(c.height, c.width, c.channels);
  size_t next_value = 0;
  for (size_t i = 0; i < out.size(); ++i) {
    if (c.sm_bit(i)) {
      out.values[i] = c.nzvl[next_value++];
    }
  }
  return out;
}

// Position + value of one non-zero entry.
struct NonZeroEntry {
  uint16_t row;
  uint16_t col;
  uint16_t channel;
  int32_t value;
};

// Streams the non-zero entries in storage order straight off the sparsity
// map, without materializing the dense tensor.
class NonZeroIterator {
 public:
  using value_type = NonZeroEntry;
  using difference_type = std::ptrdiff_t;

  NonZeroIterator() = default;
  NonZeroIterator(const CompressedFeatureMap* c, size_t nz_index)
      : c_(c), nz_index_(nz_index) {
    if (c_ != nullptr && nz_index_ < c_->nzvl.size()) {
      advance_to_set_bit(0);
    }
  }

  NonZeroEntry operator*() const {
    size_t plane = static_cast<size_t>(c_->height) * c_->width;
    auto channel = static_cast<uint16_t>(linear_ / plane);
    size_t in_plane = linear_ % plane;
    return NonZeroEntry{static_cast<uint16_t>(in_plane / c_->width),
                        static_cast<uint16_t>(in_plane % c_->width), channel,
                        c_->nzvl[nz_index_]};
  }

  NonZeroIterator& operator++() {
    ++nz_index_;
    if (nz_index_ < c_->nzvl.size()) {
      advance_to_set_bit(linear_ + 1);
    }
    return *this;
  }

  NonZeroIterator operator++(int) {
    NonZeroIterator copy = *this;
    ++*this;
    return copy;
  }

  bool operator==(const NonZeroIterator& other) const {
    return nz_index_ == other.nz_index_;
  }

 private:
  void advance_to_set_bit(size_t from) {
    size_t word = from >> 5;
    uint32_t bits = c_->sm[word] & (~uint32_t{0} << (from & 31));
    while (bits == 0) {
      bits = c_->sm[++word];
    }
    linear_ = (word << 5) + static_cast<size_t>(std::countr_zero(bits));
  }

  const CompressedFeatureMap* c_ = nullptr;
  size_t nz_index_ = 0;
  size_t linear_ = 0;
};

class NonZeroRange {
 public:
  explicit NonZeroRange(const CompressedFeatureMap& c) : c_(&c) {
    detail::validate_compressed(c, DecodeMode::kLenient);
  }
  NonZeroIterator begin() const { return NonZeroIterator(c_, 0); }
  NonZeroIterator end() const { return NonZeroIterator(c_, c_->nzvl.size()); }

 private:
  const CompressedFeatureMap* c_;
};

inline NonZeroRange iter_nonzero(const CompressedFeatureMap& c) {
  return NonZeroRange(c);
}

// Compressed size: the sparsity map rounded up to whole 32-bit words plus a
// 32-bit container per non-zero value.
inline uint64_t compressed_size_bits(const CompressedFeatureMap& c) {
  return static_cast<uint64_t>(c.sm_word_count()) * 32 +
         static_cast<uint64_t>(c.nzvl.size()) * 32;
}

inline double compression_ratio(const FeatureMapTensor& t) {
  uint64_t dense_bits = static_cast<uint64_t>(t.size()) * 32;
  return static_cast<double>(dense_bits) /
         static_cast<double>(compressed_size_bits(encode(t)));
}

// On-disk format: "CFM1", u16 h, u16 w, u16 ch, u16 reserved, u32 nzvl_count,
// then sm words (u32 little-endian), then nzvl values (i32 little-endian).
inline void write_compressed(std::ostream& os, const CompressedFeatureMap& c) {
  io::put_magic(os, "CFM1");
  io::put_u16(os, c.height);
  io::put_u16(os, c.width);
  io::put_u16(os, c.channels);
  io::put_u16(os, 0);
  io::put_u32(os, static_cast<uint32_t>(c.nzvl.size()));
  for (uint32_t word : c.sm) {
    io::put_u32(os, word);
  }
  for (int32_t v : c.nzvl) {
    io::put_i32(os, v);
  }
}

inline CompressedFeatureMap read_compressed(std::istream& is,
                                            DecodeMode mode = DecodeMode::kStrict) {
  io::expect_magic(is, "CFM1");
  CompressedFeatureMap out;
  out.height = io::get_u16(is);
  out.width = io::get_u16(is);
  out.channels = io::get_u16(is);
  io::get_u16(is);  // reserved
  uint32_t count = io::get_u32(is);
  out.sm.resize(out.sm_word_count());
  for (uint32_t& word : out.sm) {
    word = io::get_u32(is);
  }
  out.nzvl.resize(count);
  for (int32_t& v : out.nzvl) {
    v = io::get_i32(is);
  }
  detail::validate_compressed(out, mode);
  return out;
}

}  // namespace dvs2sm
