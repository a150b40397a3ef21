#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>

namespace asc {

// float -> IEEE 754 binary16, round to nearest even. Values beyond the
// binary16 range (including infinities) clamp to +/- max finite (65504).
inline uint16_t float_to_half(float f) {
    uint32_t x;
    std::memcpy(&x, &f, 4);
    const uint16_t sign = static_cast<uint16_t>((x >> 16) & 0x8000u);
    const uint32_t exp_f = (x >> 23) & 0xFFu;
    uint32_t mant = x & 0x7FFFFFu;

    if (exp_f == 0xFF) {
        if (mant != 0) return static_cast<uint16_t>(sign | 0x7E00u);  // NaN
        return static_cast<uint16_t>(sign | 0x7BFFu);                 // inf clamps
    }

    const int32_t exp_h = static_cast<int32_t>(exp_f) - 127 + 15;

    if (exp_h >= 31) return static_cast<uint16_t>(sign | 0x7BFFu);  // overflow clamps
    if (exp_h <= 0) {
        if (exp_h < -10 || exp_f == 0) return sign;  // rounds to zero
        mant |= 0x800000u;
        const int shift = 14 - exp_h;
        const uint32_t kept = mant >> shift;
        const uint32_t rem = mant & ((1u << shift) - 1);
        const uint32_t half_point = 1u << (shift - 1);
        uint32_t out = kept;
        if (rem > half_point || (rem == half_point && (kept & 1))) ++out;
        return static_cast<uint16_t>(sign | out);
    }

    uint32_t out = static_cast<uint32_t>(exp_h << 10) | (mant >> 13);
    const uint32_t rem = mant & 0x1FFFu;
    if (rem > 0x1000u || (rem == 0x1000u && (out & 1))) ++out;
    if (out >= 0x7C00u) return static_cast<uint16_t>(sign | 0x7BFFu);  // rounding overflowed
    return static_cast<uint16_t>(sign | out);
}

inline float half_to_float(uint16_t h) {
    const float sign = (h & 0x8000u) ? -1.0f : 1.0f;
    const int exp = (h >> 10) & 0x1F;
    const int mant = h & 0x3FF;
    if (exp == 31) {
        if (mant) return std::numeric_limits<float>::quiet_NaN();
        return sign * std::numeric_limits<float>::infinity();
    }
    if (exp == 0) return sign * std::ldexp(static_cast<float>(mant), -24);
    return sign * std::ldexp(static_cast<float>(1024 + mant), exp - 25);
}

}  // namespace asc
