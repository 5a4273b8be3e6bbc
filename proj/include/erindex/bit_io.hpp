#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "erindex/errors.hpp"

namespace erindex {

/// Minimum number of bits needed to represent v (0 needs 0 bits).
inline uint32_t bits_for(uint64_t v) {
    uint32_t w = 0;
    while (v) {
        ++w;
        v >>= 1;
    }
    return w;
}

// LSB-first bit packing. A BitWriter's payload round-trips through BitReader
// as long as values are read back with the same widths in the same order.

class BitWriter {
public:
    void put(uint64_t value, uint32_t width) {
        for (uint32_t i = 0; i < width; ++i) put_bit((value >> i) & 1);
    }
    void put_bit(uint32_t b) {
        if (fill_ == 0) buf_.push_back(0);
        if (b) buf_.back() |= static_cast<uint8_t>(1u << fill_);
        fill_ = (fill_ + 1) & 7;
    }
    /// Rice code: unary quotient (ones, zero-terminated) + k-bit remainder.
    /// Quotients >= 12 escape to a raw esc_bits value, keeping outliers cheap.
    void put_rice(uint64_t v, uint32_t k, uint32_t esc_bits = kRiceEscapeBits) {
        uint64_t q = v >> k;
        if (q >= kRiceEscape || (esc_bits < 64 && v >= (1ull << esc_bits))) {
            if (esc_bits < 64 && v >= (1ull << esc_bits))
                throw std::length_error("value exceeds the rice escape range");
            for (uint32_t i = 0; i < kRiceEscape; ++i) put_bit(1);
            put_bit(0);
            put(v, esc_bits);
        } else {
            for (uint64_t i = 0; i < q; ++i) put_bit(1);
            put_bit(0);
            put(v, k);
        }
    }

    const std::vector<uint8_t>& data() const { return buf_; }
    std::vector<uint8_t> take() { return std::move(buf_); }

    static constexpr uint32_t kRiceEscape = 12;
    static constexpr uint32_t kRiceEscapeBits = 40;

    /// Cost in bits of Rice-coding v with parameter k.
    static uint64_t rice_cost(uint64_t v, uint32_t k, uint32_t esc_bits = kRiceEscapeBits) {
        uint64_t q = v >> k;
        return q >= kRiceEscape ? kRiceEscape + 1 + esc_bits : q + 1 + k;
    }

private:
    std::vector<uint8_t> buf_;
    uint32_t fill_ = 0;
};

class BitReader {
public:
    BitReader(const uint8_t* data, size_t size) : p_(data), bits_(size * 8) {}

    uint64_t get(uint32_t width) {
        uint64_t v = 0;
        for (uint32_t i = 0; i < width; ++i) v |= static_cast<uint64_t>(get_bit()) << i;
        return v;
    }
    uint32_t get_bit() {
        if (pos_ >= bits_) throw CorruptionError("bit stream truncated");
        uint32_t b = (p_[pos_ >> 3] >> (pos_ & 7)) & 1;
        ++pos_;
        return b;
    }
    uint64_t get_rice(uint32_t k, uint32_t esc_bits = BitWriter::kRiceEscapeBits) {
        uint64_t q = 0;
        while (get_bit()) {
            if (++q > BitWriter::kRiceEscape) throw CorruptionError("rice quotient overrun");
        }
        if (q == BitWriter::kRiceEscape) return get(esc_bits);
        return (q << k) | get(k);
    }

private:
    const uint8_t* p_;
    size_t bits_;
    size_t pos_ = 0;
};

}  // namespace erindex
