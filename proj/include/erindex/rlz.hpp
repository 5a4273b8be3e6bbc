#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "erindex/fm_index.hpp"
#include "erindex/sequence.hpp"

namespace erindex {

/// One relative Lempel-Ziv factor: a referential part reproduced by a
/// backward scan of reverse(R) starting at sai_rev_start, followed by one
/// literal mismatch character. len counts both parts, so the referential
/// part has len-1 symbols; len == 1 factors are mismatch-only and carry no
/// referential anchor.
struct Factor {
    uint32_t sai_rev_start = 0;
    uint32_t len = 0;
    char mc = 0;

    uint32_t ref_len() const { return len - 1; }
};

/// Search keys of a factor with len > 1: the reverse-index row
/// prefixing the reversed referential part, the forward-index row prefixing
/// the referential part, and its start position in R.
struct FactorKeys {
    uint32_t sai_rev = 0;
    uint32_t sai = 0;
    uint32_t tp = 0;
};

struct Factorization {
    std::string individual_id;
    std::vector<Factor> factors;
    std::vector<FactorKeys> keys;  // parallel to factors; meaningful iff len > 1
    std::vector<uint64_t> cum_len; // cum_len[k] = symbols before factor k; size factors+1
    uint32_t block_size = 0;
    uint32_t l_max = 0;
    uint64_t source_length = 0;

    size_t factor_count() const { return factors.size(); }
    size_t block_count() const {
        return block_size ? (factors.size() + block_size - 1) / block_size : 0;
    }
    /// Index of the factor covering text position pos.
    size_t factor_covering(uint64_t pos) const;
};

/// Greedy maximal relative-LZ parse of S against the reference pack:
/// each referential part is the longest match in R subject to the stopping
/// rules (final source symbol is always a mismatch char; symbols absent
/// from R break the parse; N/non-N transitions force factor boundaries).
Factorization factorize(const Sequence& s, const ReferencePack& ref, uint32_t block_size);

/// Deterministic parallel factorization: output is byte-identical to
/// sequential factorize per individual for any worker count.
std::vector<Factorization> factorize_parallel(const std::vector<Sequence>& collection,
                                              const ReferencePack& ref, uint32_t block_size,
                                              unsigned workers);

/// Reproduces the factor's len symbols: len-1 backward-walk character reads
/// on the reverse index starting at sai_rev_start, then the mismatch char.
std::string decode_factor(const Factor& f, const FmIndex& fm_rev);

/// Symbol at `offset` within the factor, in O(offset) backward steps,
/// without decoding the rest.
char char_at_via_reverse_index(const Factorization& fz, const FmIndex& fm_rev,
                               size_t factor_index, uint32_t offset);

/// S[start .. start+length-1] without materializing the whole sequence.
std::string extract_text(const Factorization& fz, const FmIndex& fm_rev,
                         uint64_t start, uint64_t length);

// --- on-disk factor block codec (plaintext side; encryption wraps it) ---

std::vector<uint8_t> encode_factor_block(std::span<const Factor> factors);
std::vector<Factor> decode_factor_block(const std::vector<uint8_t>& payload);

}  // namespace erindex
