// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

namespace dvs2sm {

// Parameterized Qn.m fixed point: n integer bits, m fractional bits, plus a
// sign bit when signed. Raw values are held in int64_t; a format is valid for
// n + m <= 48, so every intermediate product and shifted dividend fits in
// 128-bit arithmetic.
//
// Rounding is round-to-nearest-even everywhere. Overflow saturates to the
// format's representable range and sets a sticky flag on the result; error
// conditions (format mismatch, divide by zero, negative sqrt) likewise
// propagate as sticky flags rather than exceptions, NaN-style.

using int128_t = __int128;
using uint128_t = unsigned __int128;

struct QFormat {
  uint8_t int_bits = 24;
  uint8_t frac_bits = 16;
  bool is_signed = true;

  constexpr bool operator==(const QFormat&) const = default;

  constexpr int total_bits() const { return int_bits + frac_bits; }
  constexpr bool valid() const { return int_bits >= 1 && total_bits() <= 48; }
  constexpr int64_t max_raw() const {
    return (int64_t{1} << total_bits()) - 1;
  }
  constexpr int64_t min_raw() const {
    return is_signed ? -(int64_t{1} << total_bits()) : 0;
  }
  constexpr int64_t one_raw() const { return int64_t{1} << frac_bits; }
};

inline constexpr QFormat kQ24_16{24, 16, true};  // internal precision
inline constexpr QFormat kQ16_8{16, 8, true};    // output precision

enum QFlag : uint8_t {
  kQSaturated = 1u << 0,
  kQErrFormat = 1u << 1,
  kQErrDivZero = 1u << 2,
  kQErrDomain = 1u << 3,
};
inline constexpr uint8_t kQErrorMask = kQErrFormat | kQErrDivZero | kQErrDomain;

struct QVal {
  int64_t raw = 0;
  QFormat fmt = kQ24_16;
  uint8_t flags = 0;

  constexpr bool ok() const { return (flags & kQErrorMask) == 0; }
  constexpr bool saturated() const { return (flags & kQSaturated) != 0; }
  double to_real() const {
    return static_cast<double>(raw) / static_cast<double>(fmt.one_raw());
  }
};

namespace detail {

// Shift right with round-to-nearest-even. The floor shift leaves a
// non-negative remainder for negative inputs too, so one tie rule covers
// both signs.
constexpr int128_t rne_shift_right(int128_t v, unsigned shift) {
  if (shift == 0) {
    return v;
  }
  int128_t q = v >> shift;
  int128_t rem = v - (q << shift);
  int128_t half = int128_t{1} << (shift - 1);
  if (rem > half || (rem == half && (q & 1))) {
    ++q;
  }
  return q;
}

// Signed integer division with round-to-nearest-even. den must be nonzero.
constexpr int128_t rne_div(int128_t num, int128_t den) {
  bool negative = (num < 0) != (den < 0);
  uint128_t n = num < 0 ? static_cast<uint128_t>(-num) : static_cast<uint128_t>(num);
  uint128_t d = den < 0 ? static_cast<uint128_t>(-den) : static_cast<uint128_t>(den);
  uint128_t q = n / d;
  uint128_t rem = n % d;
  if (2 * rem > d || (2 * rem == d && (q & 1))) {
    ++q;
  }
  auto signed_q = static_cast<int128_t>(q);
  return negative ? -signed_q : signed_q;
}

// Restoring digit-by-digit integer square root, floor semantics.
constexpr uint128_t isqrt_floor(uint128_t x) {
  uint128_t rest = x;
  uint128_t res = 0;
  uint128_t bit = uint128_t{1} << 126;
  while (bit > rest) {
    bit >>= 2;
  }
  while (bit != 0) {
    if (rest >= res + bit) {
      rest -= res + bit;
      res = (res >> 1) + bit;
    } else {
      res >>= 1;
    }
    bit >>= 2;
  }
  return res;
}

// Nearest-integer square root; ties cannot occur (sqrt of an integer is
// never exactly halfway between integers).
constexpr uint128_t isqrt_nearest(uint128_t x) {
  uint128_t r = isqrt_floor(x);
  if (x - r * r > r) {
    ++r;
  }
  return r;
}

constexpr int64_t saturate_raw(int128_t v, const QFormat& fmt, uint8_t& flags) {
  if (v > fmt.max_raw()) {
    flags |= kQSaturated;
    return fmt.max_raw();
  }
  if (v < fmt.min_raw()) {
    flags |= kQSaturated;
    return fmt.min_raw();
  }
  return static_cast<int64_t>(v);
}

}  // namespace detail

constexpr QVal q_from_raw(int64_t raw, QFormat fmt) {
  QVal out{0, fmt, 0};
  out.raw = detail::saturate_raw(raw, fmt, out.flags);
  return out;
}

constexpr QVal q_from_int(int64_t value, QFormat fmt) {
  QVal out{0, fmt, 0};
  int128_t raw = static_cast<int128_t>(value) << fmt.frac_bits;
  out.raw = detail::saturate_raw(raw, fmt, out.flags);
  return out;
}

// Round-to-nearest-even of x * 2^m, saturated to the representable range.
// Scaling by a power of two is exact in binary floating point, so the only
// rounding step is the nearbyint call.
inline QVal from_real(double x, QFormat fmt) {
  QVal out{0, fmt, 0};
  if (std::isnan(x)) {
    out.flags |= kQErrDomain;
    return out;
  }
  double scaled = std::ldexp(x, fmt.frac_bits);
  double rounded = std::nearbyint(scaled);
  if (rounded >= static_cast<double>(fmt.max_raw())) {
    if (rounded > static_cast<double>(fmt.max_raw())) {
      out.flags |= kQSaturated;
    }
    out.raw = fmt.max_raw();
  } else if (rounded <= static_cast<double>(fmt.min_raw())) {
    if (rounded < static_cast<double>(fmt.min_raw())) {
      out.flags |= kQSaturated;
    }
    out.raw = fmt.min_raw();
  } else {
    out.raw = static_cast<int64_t>(rounded);
  }
  return out;
}

constexpr QVal q_add(QVal a, QVal b) {
  QVal out{0, a.fmt, static_cast<uint8_t>(a.flags | b.flags)};
  if (a.fmt != b.fmt) {
    out.flags |= kQErrFormat;
    return out;
  }
  int128_t sum = static_cast<int128_t>(a.raw) + b.raw;
  out.raw = detail::saturate_raw(sum, a.fmt, out.flags);
  return out;
}

constexpr QVal q_sub(QVal a, QVal b) {
  QVal out{0, a.fmt, static_cast<uint8_t>(a.flags | b.flags)};
  if (a.fmt != b.fmt) {
    out.flags |= kQErrFormat;
    return out;
  }
  int128_t diff = static_cast<int128_t>(a.raw) - b.raw;
  out.raw = detail::saturate_raw(diff, a.fmt, out.flags);
  return out;
}

constexpr QVal q_mul(QVal a, QVal b) {
  QVal out{0, a.fmt, static_cast<uint8_t>(a.flags | b.flags)};
  if (a.fmt != b.fmt) {
    out.flags |= kQErrFormat;
    return out;
  }
  int128_t product = static_cast<int128_t>(a.raw) * b.raw;
  int128_t scaled = detail::rne_shift_right(product, a.fmt.frac_bits);
  out.raw = detail::saturate_raw(scaled, a.fmt, out.flags);
  return out;
}

constexpr QVal q_div(QVal num, QVal den) {
  QVal out{0, num.fmt, static_cast<uint8_t>(num.flags | den.flags)};
  if (num.fmt != den.fmt) {
    out.flags |= kQErrFormat;
    return out;
  }
  if (den.raw == 0) {
    out.flags |= kQErrDivZero;
    return out;
  }
  int128_t shifted = static_cast<int128_t>(num.raw) << num.fmt.frac_bits;
  int128_t quotient = detail::rne_div(shifted, den.raw);
  out.raw = detail::saturate_raw(quotient, num.fmt, out.flags);
  return out;
}

constexpr QVal q_sqrt(QVal x) {
  QVal out{0, x.fmt, x.flags};
  if (x.raw < 0) {
    out.flags |= kQErrDomain;
    return out;
  }
  uint128_t scaled = static_cast<uint128_t>(x.raw) << x.fmt.frac_bits;
  int128_t root = static_cast<int128_t>(detail::isqrt_nearest(scaled));
  out.raw = detail::saturate_raw(root, x.fmt, out.flags);
  return out;
}

// Convert between formats with round-to-nearest-even and saturation.
constexpr QVal q_rescale(QVal v, QFormat target) {
  QVal out{0, target, v.flags};
  int shift = target.frac_bits - v.fmt.frac_bits;
  int128_t raw = v.raw;
  if (shift >= 0) {
    raw <<= shift;
  } else {
    raw = detail::rne_shift_right(raw, static_cast<unsigned>(-shift));
  }
  out.raw = detail::saturate_raw(raw, target, out.flags);
  return out;
}

}  // namespace dvs2sm
