#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "erindex/byte_io.hpp"

namespace erindex {

constexpr uint32_t kDefaultSampleRate = 32;

/// Inclusive suffix-array row interval.
struct SaInterval {
    uint64_t sp = 0;
    uint64_t ep = 0;
    uint64_t width() const { return ep - sp + 1; }
};

/// FM-index of one text: BWT, cumulative counts, rank structure and sampled
/// (marked) suffix-array rows. The public row space has text_len()+1 rows;
/// row 0 is always the terminator suffix. The terminator never appears in
/// the public alphabet: C() counts text symbols only and occ() ranks over
/// the terminator-dropped BWT, with eof_shift() bridging the two.
///
/// Immutable after build; all queries are const and thread-safe.
class FmIndex {
public:
    FmIndex() = default;

    static FmIndex build(std::string_view text, uint32_t sample_rate = kDefaultSampleRate);
    static FmIndex build_with_sa(std::string_view text, const std::vector<uint32_t>& sa,
                                 uint32_t sample_rate);

    uint64_t text_len() const { return text_len_; }
    uint64_t row_count() const { return text_len_ + 1; }
    uint32_t sample_rate() const { return sample_rate_; }
    uint32_t alphabet_size() const { return static_cast<uint32_t>(unmap_.size()); }

    // --- query primitives ---

    bool is_in_ref(char c) const { return remap_[static_cast<uint8_t>(c)] != 0; }
    /// Internal code for a text symbol (1..sigma). Throws for absent symbols.
    uint8_t remap(char c) const;
    char unmap(uint8_t code) const;

    /// Number of text symbols lexically smaller than c (terminator excluded).
    uint64_t C(char c) const;
    /// occ(c, k): occurrences of c among the first k entries of the stored
    /// BWT (terminator dropped), k in [0, text_len].
    uint64_t occ(char c, uint64_t k) const;
    /// Maps an inclusive L-column row index across the terminator row so that
    /// occ-based ranks skip it: pos for pos < eof_pos, pos-1 otherwise.
    int64_t eof_shift(int64_t pos) const;
    uint64_t eof_pos() const { return eof_pos_; }

    /// BWT symbol code of a row (0 = terminator, found only at eof_pos).
    uint8_t bwt_code(uint64_t row) const;

    /// LF mapping treating rotations cyclically (total; maps the SA==0 row
    /// to row 0).
    uint64_t lf(uint64_t row) const;
    /// One canonical backward step: the row of the suffix starting one text
    /// position earlier. nullopt when stepping before the text start.
    std::optional<uint64_t> backward_step(uint64_t row) const;

    /// Suffix-array interval of suffixes prefixed by pattern (canonical
    /// backward search; pattern consumed right to left).
    std::optional<SaInterval> backward_search(std::string_view pattern) const;
    /// Backward search fed the pattern characters in forward order, i.e. the
    /// interval of suffixes prefixed by reverse(pattern).
    std::optional<SaInterval> search_pat_rev(std::string_view pattern) const;

    /// Interval of the single symbol c, if present.
    std::optional<SaInterval> symbol_interval(char c) const;
    /// Extends [sp,ep] by prepending symbol c to the matched string.
    std::optional<SaInterval> extend_backward(const SaInterval& iv, char c) const;

    /// SA[row]: recovered by LF-walking to the nearest marked row.
    uint64_t text_position_of_row(uint64_t row) const;
    /// Inverse lookup: the row whose suffix starts at pos, via the sampled
    /// positions plus an LF walk of at most sample_rate steps.
    uint64_t row_of_position(uint64_t pos) const;

    void serialize(ByteWriter& out) const;
    static FmIndex deserialize(ByteReader& in);

private:
    uint64_t rank_true(uint8_t code, int64_t pos) const;  // over the true L column, inclusive
    uint64_t occ_code(uint8_t code, uint64_t k) const;
    void build_rank_and_marks(const std::vector<uint32_t>& sa);
    bool is_marked(uint64_t row) const {
        return (mark_bits_[row >> 6] >> (row & 63)) & 1;
    }

    uint64_t text_len_ = 0;
    uint32_t sample_rate_ = kDefaultSampleRate;
    uint64_t eof_pos_ = 0;
    std::array<uint8_t, 256> remap_{};  // 0 = absent
    std::vector<char> unmap_;           // code-1 -> symbol
    std::vector<uint64_t> cum_;         // cum_[code] = # text symbols with code' < code
    std::vector<uint8_t> bwt_;          // terminator-dropped, length text_len
    std::vector<uint32_t> occ_blocks_;  // per code: count before each 64-byte block
    std::vector<uint64_t> mark_bits_;
    std::vector<uint32_t> mark_rank_;   // marked rows before each 64-bit word
    std::vector<uint32_t> mark_pos_;    // SA values of marked rows, in row order
    std::vector<uint32_t> sample_row_;  // row of position k*sample_rate (and of n)

    static constexpr uint32_t kOccBlock = 64;
};

/// R2F / F2R tables between the index of R and the index of reverse(R):
/// mutually inverse permutations of [0, n] matching suffixes that start at
/// the same character (terminator row maps to terminator row).
class CorrespondenceTables {
public:
    CorrespondenceTables() = default;

    static CorrespondenceTables build(const std::vector<uint32_t>& sa_fwd,
                                      const std::vector<uint32_t>& sa_rev);

    uint64_t size() const { return r2f_.size(); }
    uint64_t r2f(uint64_t rev_row) const { return r2f_.at(rev_row); }
    uint64_t f2r(uint64_t fwd_row) const { return f2r_.at(fwd_row); }

    void serialize(ByteWriter& out) const;
    static CorrespondenceTables deserialize(ByteReader& in);

private:
    std::vector<uint32_t> r2f_;
    std::vector<uint32_t> f2r_;
};

/// The reference-side bundle used by factorization and search: FM(R),
/// FM(reverse(R)) and the correspondence tables. Stored unencrypted (the
/// reference is public).
struct ReferencePack {
    FmIndex fm;       // index of R
    FmIndex fm_rev;   // index of reverse(R)
    CorrespondenceTables tables;

    uint64_t text_len() const { return fm.text_len(); }

    static ReferencePack build(std::string_view reference,
                               uint32_t sample_rate = kDefaultSampleRate);

    void save(const std::filesystem::path& path) const;
    static ReferencePack load(const std::filesystem::path& path);
};

}  // namespace erindex
