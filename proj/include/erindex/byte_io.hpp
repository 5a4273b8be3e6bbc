#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "erindex/errors.hpp"

namespace erindex {

// Little-endian byte buffer writer/reader used by every on-disk format.

class ByteWriter {
public:
    void u8(uint8_t v) { buf_.push_back(v); }
    void u16(uint16_t v) { raw(&v, 2); }
    void u32(uint32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void bytes(const void* p, size_t n) { raw(p, n); }
    void bytes(const std::vector<uint8_t>& v) { raw(v.data(), v.size()); }
    void str(const std::string& s) {
        if (s.size() > UINT16_MAX) throw FormatError("string field too long");
        u16(static_cast<uint16_t>(s.size()));
        raw(s.data(), s.size());
    }

    const std::vector<uint8_t>& data() const { return buf_; }
    std::vector<uint8_t> take() { return std::move(buf_); }
    size_t size() const { return buf_.size(); }

private:
    void raw(const void* p, size_t n) {
        // Assumes a little-endian host, as the rest of the codebase does.
        const auto* b = static_cast<const uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    std::vector<uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(const uint8_t* data, size_t size) : p_(data), end_(data + size) {}
    explicit ByteReader(const std::vector<uint8_t>& v) : ByteReader(v.data(), v.size()) {}

    uint8_t u8() { return take<uint8_t>(); }
    uint16_t u16() { return take<uint16_t>(); }
    uint32_t u32() { return take<uint32_t>(); }
    uint64_t u64() { return take<uint64_t>(); }
    void bytes(void* out, size_t n) {
        need(n);
        std::memcpy(out, p_, n);
        p_ += n;
    }
    std::vector<uint8_t> bytes(size_t n) {
        std::vector<uint8_t> out(n);
        bytes(out.data(), n);
        return out;
    }
    std::string str() {
        size_t n = u16();
        need(n);
        std::string s(reinterpret_cast<const char*>(p_), n);
        p_ += n;
        return s;
    }

    size_t remaining() const { return static_cast<size_t>(end_ - p_); }
    bool done() const { return p_ == end_; }

private:
    template <typename T>
    T take() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, p_, sizeof(T));
        p_ += sizeof(T);
        return v;
    }
    void need(size_t n) const {
        if (remaining() < n) throw CorruptionError("byte stream truncated");
    }
    const uint8_t* p_;
    const uint8_t* end_;
};

}  // namespace erindex
