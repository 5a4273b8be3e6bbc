#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "erindex/errors.hpp"
#include "erindex/sequence.hpp"

using namespace erindex;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& content) {
    auto path = fs::temp_directory_path() / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
    return path;
}

size_t edit_positions(const std::string& a, const std::string& b) {
    // Hamming distance for equal-length strings (substitution-only runs).
    REQUIRE(a.size() == b.size());
    size_t d = 0;
    for (size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
    return d;
}

}  // namespace

TEST_CASE("load_fasta reads and normalizes") {
    auto p = write_temp("fa_basic.fa", ">x\nACGT\n");
    auto r = load_fasta(p);
    CHECK(r.sequence.data == "ACGT");
    CHECK(r.sequence.length() == 4);
    CHECK(r.substituted == 0);

    p = write_temp("fa_case.fa", ">x\nacg\nt\n");
    CHECK(load_fasta(p).sequence.data == "ACGT");
}

TEST_CASE("load_fasta maps IUPAC ambiguity codes to N with a tally") {
    // Everything outside {A,C,G,T,N} goes to N; derived from the IUPAC
    // nucleotide code table.
    const std::string iupac = "RYSWKMBDHV";
    auto p = write_temp("fa_iupac.fa", ">x\nACRT\n");
    auto r = load_fasta(p);
    CHECK(r.sequence.data == "ACNT");
    CHECK(r.substituted == 1);

    p = write_temp("fa_iupac_all.fa", ">x\nA" + iupac + "\n");
    r = load_fasta(p);
    CHECK(r.sequence.data == "A" + std::string(iupac.size(), 'N'));
    CHECK(r.substituted == iupac.size());
}

TEST_CASE("load_fasta error paths") {
    CHECK_THROWS_AS(load_fasta(fs::temp_directory_path() / "no_such_file.fa"), FormatError);
    auto p = write_temp("fa_nohdr.fa", "ACGT\n");
    CHECK_THROWS_AS(load_fasta(p), FormatError);
    p = write_temp("fa_empty.fa", ">x\n");
    CHECK_THROWS_AS(load_fasta(p), FormatError);
}

TEST_CASE("multi-record FASTA concatenates in order") {
    auto p = write_temp("fa_multi.fa", ">a\nAC\n>b\nGT\n");
    CHECK(load_fasta(p).sequence.data == "ACGT");
}

TEST_CASE("fasta round trip is normalization-idempotent") {
    auto p = write_temp("fa_rt1.fa", ">x desc\nacgtnACGTN\nACGT\n");
    auto first = load_fasta(p, "x");
    auto p2 = fs::temp_directory_path() / "fa_rt2.fa";
    save_fasta(p2, first.sequence);
    auto second = load_fasta(p2);
    CHECK(second.sequence.data == first.sequence.data);
    CHECK(second.substituted == 0);
}

TEST_CASE("mutate_reference zero rates is the identity") {
    Sequence ref{"r", "c", "ACGTACGTNNACGT"};
    auto out = mutate_reference(ref, MutationProfile{0, 0, 0, 42});
    CHECK(out.data == ref.data);
}

TEST_CASE("mutate_reference is deterministic for a fixed seed") {
    std::mt19937_64 rng(7);
    std::string data;
    for (int i = 0; i < 5000; ++i) data.push_back("ACGT"[rng() % 4]);
    Sequence ref{"r", "c", data};
    MutationProfile p{0.01, 0.005, 0.005, 1234};
    auto a = mutate_reference(ref, p);
    auto b = mutate_reference(ref, p);
    CHECK(a.data == b.data);
    auto c = mutate_reference(ref, MutationProfile{0.01, 0.005, 0.005, 1235});
    CHECK(a.data != c.data);
}

TEST_CASE("mutate_reference substitution rate lands near the target") {
    std::mt19937_64 rng(11);
    std::string data;
    for (int i = 0; i < 1'000'000; ++i) data.push_back("ACGT"[rng() % 4]);
    Sequence ref{"r", "c", data};
    auto out = mutate_reference(ref, MutationProfile{0.01, 0.0, 0.0, 99});
    REQUIRE(out.data.size() == ref.data.size());
    double frac = static_cast<double>(edit_positions(ref.data, out.data)) /
                  static_cast<double>(ref.data.size());
    CHECK(frac > 0.008);
    CHECK(frac < 0.012);
}

TEST_CASE("mutate_reference validates rates") {
    Sequence ref{"r", "c", "ACGT"};
    CHECK_THROWS_AS(mutate_reference(ref, MutationProfile{0.7, 0.2, 0.2, 0}),
                    std::invalid_argument);
    CHECK_THROWS_AS(mutate_reference(ref, MutationProfile{-0.1, 0, 0, 0}),
                    std::invalid_argument);
}

TEST_CASE("mutate_reference substitutions avoid the original symbol") {
    Sequence ref{"r", "c", std::string(2000, 'A')};
    auto out = mutate_reference(ref, MutationProfile{1.0, 0, 0, 5});
    for (char c : out.data) CHECK(c != 'A');
}
