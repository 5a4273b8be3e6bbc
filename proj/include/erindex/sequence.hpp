#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace erindex {

/// Genomic alphabet after normalization. Anything else read from a FASTA
/// file is mapped to 'N' and tallied.
inline bool is_genomic_symbol(char c) {
    return c == 'A' || c == 'C' || c == 'G' || c == 'T' || c == 'N';
}

/// A validated symbol string over {A,C,G,T,N} with an owner identity.
/// Immutable after construction; safe to share across threads.
struct Sequence {
    std::string id;          // individual identifier
    std::string chromosome;  // reference role tag
    std::string data;        // normalized symbols

    size_t length() const { return data.size(); }
};

struct FastaLoadResult {
    Sequence sequence;
    size_t substituted = 0;  // symbols outside {A,C,G,T,N} mapped to N
};

/// Reads a FASTA file: header lines start with '>', records concatenate in
/// order, lowercase normalizes to uppercase. Throws FormatError on a missing
/// header or an empty body.
FastaLoadResult load_fasta(const std::filesystem::path& path,
                           const std::string& id = "",
                           const std::string& chromosome = "");

/// Writes a single-record FASTA file with fixed-width line wrapping.
void save_fasta(const std::filesystem::path& path, const Sequence& seq,
                size_t line_width = 70);

/// Per-base edit probabilities for synthetic population generation.
struct MutationProfile {
    double substitution_rate = 0.0;
    double insertion_rate = 0.0;
    double deletion_rate = 0.0;
    uint64_t seed = 0;

    void validate() const;  // rates in [0,1], sum <= 1
};

/// Name of the generator backing mutate_reference, recorded in bench and
/// gen-population outputs for reproducibility.
constexpr const char* kMutationRngName = "mt19937_64";

/// Applies independent per-base substitutions (to a different symbol in
/// {A,C,G,T}), insertions (uniform {A,C,G,T} after the base) and deletions.
/// Pure function of (ref, profile): the same seed reproduces the output.
Sequence mutate_reference(const Sequence& ref, const MutationProfile& profile,
                          const std::string& out_id = "");

}  // namespace erindex
