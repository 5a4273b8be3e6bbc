#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "erindex/erindex.hpp"
#include "erindex/errors.hpp"
#include "oracles.hpp"

using namespace erindex;
namespace fs = std::filesystem;

namespace {

struct Instance {
    std::shared_ptr<const ReferencePack> pack;
    std::string reference;
    std::vector<Sequence> collection;
    std::map<std::string, SymmetricKey> keys;
    KeyPortfolio portfolio;  // system + all individuals

    ErIndex build(uint32_t bs = 64, uint32_t order = 8) const {
        return ErIndex::build(collection, pack, "chr", keys, bs, 2, order);
    }
};

Instance make_instance(uint64_t seed, size_t ref_len, size_t individuals,
                       double edit_rate = 0.02, bool with_n = false) {
    std::mt19937_64 rng(seed);
    Instance inst;
    inst.reference = oracle::random_dna(rng, ref_len, with_n);
    inst.pack = std::make_shared<ReferencePack>(ReferencePack::build(inst.reference, 8));
    inst.portfolio.user_id = "admin";
    inst.portfolio.system_key = generate_key();
    Sequence ref_seq{"ref", "chr", inst.reference};
    for (size_t i = 0; i < individuals; ++i) {
        std::string id = "ind" + std::to_string(i);
        MutationProfile profile{edit_rate * 0.8, edit_rate * 0.1, edit_rate * 0.1, seed + i};
        inst.collection.push_back(mutate_reference(ref_seq, profile, id));
        auto key = generate_key();
        inst.keys[id] = key;
        inst.portfolio.individual_keys[id] = key;
    }
    return inst;
}

using PosSet = std::map<std::string, std::vector<uint64_t>>;

PosSet to_positions(const std::vector<Occurrence>& occs) {
    PosSet out;
    for (const auto& o : occs) out[o.individual_id].push_back(o.text_position);
    return out;
}

PosSet naive_positions(const Instance& inst, std::string_view pattern,
                       const std::set<std::string>* only = nullptr) {
    PosSet out;
    for (const auto& s : inst.collection) {
        if (only && !only->count(s.id)) continue;
        auto hits = oracle::naive_scan(s.data, pattern);
        if (!hits.empty()) out[s.id] = hits;
    }
    return out;
}

/// Naive occurrences that lie wholly inside one factor's referential part.
PosSet naive_internal_positions(const Instance& inst, const ErIndex& idx,
                                std::string_view pattern) {
    PosSet out;
    for (uint32_t slot = 0; slot < inst.collection.size(); ++slot) {
        const auto& s = inst.collection[slot];
        const Factorization& fz = idx.factorization(slot);
        for (uint64_t p : oracle::naive_scan(s.data, pattern)) {
            size_t k = fz.factor_covering(p);
            uint64_t ref_end = fz.cum_len[k] + fz.factors[k].ref_len();
            if (p + pattern.size() <= ref_end) out[s.id].push_back(p);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("worked example: one individual against ACGTACGT") {
    Instance inst;
    inst.reference = "ACGTACGT";
    inst.pack = std::make_shared<ReferencePack>(ReferencePack::build(inst.reference, 1));
    inst.collection.push_back(Sequence{"ind0", "chr", "ACGTTACG"});
    inst.portfolio.user_id = "u";
    inst.portfolio.system_key = generate_key();
    auto key = generate_key();
    inst.keys["ind0"] = key;
    inst.portfolio.individual_keys["ind0"] = key;
    auto idx = inst.build(4, 4);

    SUBCASE("factor structure matches the worked example") {
        const auto& fz = idx.factorization(0);
        REQUIRE(fz.factor_count() == 2);
        CHECK(fz.factors[0].len == 5);
        CHECK(fz.factors[1].len == 3);
        CHECK(idx.l_max() == 5);
    }
    SUBCASE("locate CGT finds the internal occurrence at position 1") {
        auto occs = idx.locate("CGT", inst.portfolio);
        REQUIRE(occs.size() == 1);
        CHECK(occs[0].individual_id == "ind0");
        CHECK(occs[0].text_position == 1);
        CHECK(occs[0].fact_ind == 0);
        CHECK(occs[0].fact_off == 1);
    }
    SUBCASE("locate TTA spans the factor boundary and comes from the external routine") {
        auto occs = idx.locate("TTA", inst.portfolio);
        REQUIRE(occs.size() == 1);
        CHECK(occs[0].text_position == 3);
        CHECK(occs[0].fact_ind == 0);
        CHECK(occs[0].ending_fact_ind == 1);
    }
    SUBCASE("all pattern lengths equal the naive scan") {
        for (size_t m = 1; m <= 8; ++m)
            for (size_t p = 0; p + m <= 8; ++p) {
                auto pattern = inst.collection[0].data.substr(p, m);
                CHECK(to_positions(idx.locate(pattern, inst.portfolio)) ==
                      naive_positions(inst, pattern));
            }
        CHECK(idx.locate("GGGG", inst.portfolio).empty());
    }
    SUBCASE("single individual whose sequence is R plus one symbol yields one factor") {
        Instance one;
        one.reference = inst.reference;
        one.pack = inst.pack;
        one.collection.push_back(Sequence{"solo", "chr", one.reference + "A"});
        auto k = generate_key();
        one.keys["solo"] = k;
        one.portfolio.user_id = "u";
        one.portfolio.system_key = generate_key();
        one.portfolio.individual_keys["solo"] = k;
        auto solo = one.build(4, 4);
        CHECK(solo.factorization(0).factor_count() == 1);
        CHECK(solo.reverse_tree().entry_count() == 1);
        CHECK(solo.forward_tree().entry_count() == 1);
        CHECK(solo.pos_tree().entry_count() == 1);
    }
}

TEST_CASE("internal-occurrence candidate filter arithmetic") {
    // tp=10, m=5, l=8 accepts tpf in [tp+m-l, tp] = [7, 10]; a factor with
    // l = m-1 can never satisfy both bounds.
    const int64_t tp = 10, m = 5, l = 8;
    CHECK(tp + m - l == 7);
    for (int64_t tpf = 0; tpf <= 12; ++tpf) {
        bool accept = tpf <= tp && tpf >= tp + m - l;
        CHECK(accept == (tpf >= 7 && tpf <= 10));
    }
    const int64_t l_short = m - 1;
    for (int64_t tpf = 0; tpf <= 12; ++tpf) {
        bool accept = tpf <= tp && tpf >= tp + m - l_short;
        CHECK_FALSE(accept);
    }
}

TEST_CASE("internal occurrences are exactly the naive in-referential-part subset") {
    auto inst = make_instance(21, 6000, 4, 0.02);
    auto idx = inst.build();
    std::mt19937_64 rng(22);
    for (int it = 0; it < 40; ++it) {
        const auto& s = inst.collection[rng() % inst.collection.size()].data;
        size_t m = it % 2 ? 20 : 11;
        size_t p = rng() % (s.size() - m);
        auto pattern = s.substr(p, m);
        auto occs = idx.locate(pattern, inst.portfolio);
        CHECK(to_positions(occs) == naive_positions(inst, pattern));

        // split the result by routine via the factor-boundary annotation
        auto internal_expected = naive_internal_positions(inst, idx, pattern);
        PosSet internal_got;
        for (const auto& o : occs) {
            const auto& fz = idx.factorization(o.ind_slot);
            uint64_t ref_end = fz.cum_len[o.fact_ind] + fz.factors[o.fact_ind].ref_len();
            if (o.text_position + pattern.size() <= ref_end)
                internal_got[o.individual_id].push_back(o.text_position);
        }
        CHECK(internal_got == internal_expected);
    }
}

TEST_CASE("locate equals naive scan across pattern lengths including degenerate ones") {
    auto inst = make_instance(23, 4000, 3, 0.03);
    auto idx = inst.build();
    std::mt19937_64 rng(24);
    for (size_t m : {1, 2, 3, 5, 12, 20, 50}) {
        for (int it = 0; it < 25; ++it) {
            const auto& s = inst.collection[rng() % inst.collection.size()].data;
            if (s.size() < m) continue;
            size_t p = rng() % (s.size() - m + 1);
            auto pattern = s.substr(p, m);
            CHECK(to_positions(idx.locate(pattern, inst.portfolio)) ==
                  naive_positions(inst, pattern));
        }
    }
    SUBCASE("patterns absent everywhere return empty") {
        CHECK(idx.locate(std::string(100, 'A'), inst.portfolio).empty());
    }
}

TEST_CASE("locate handles N-containing data and patterns literally") {
    auto inst = make_instance(25, 3000, 3, 0.03, true);
    auto idx = inst.build();
    std::mt19937_64 rng(26);
    int n_patterns = 0;
    for (int it = 0; it < 60 && n_patterns < 15; ++it) {
        const auto& s = inst.collection[rng() % inst.collection.size()].data;
        size_t m = 4 + rng() % 12;
        size_t p = rng() % (s.size() - m);
        auto pattern = s.substr(p, m);
        if (pattern.find('N') == std::string::npos) continue;
        ++n_patterns;
        CHECK(to_positions(idx.locate(pattern, inst.portfolio)) ==
              naive_positions(inst, pattern));
    }
    CHECK(n_patterns > 0);
}

TEST_CASE("occurrence factor coordinates are consistent") {
    auto inst = make_instance(27, 3000, 2, 0.02);
    auto idx = inst.build();
    std::mt19937_64 rng(28);
    for (int it = 0; it < 20; ++it) {
        const auto& s = inst.collection[it % 2].data;
        size_t m = 8 + rng() % 20;
        size_t p = rng() % (s.size() - m);
        auto pattern = s.substr(p, m);
        for (const auto& o : idx.locate(pattern, inst.portfolio)) {
            const auto& fz = idx.factorization(o.ind_slot);
            CHECK(o.text_position == fz.cum_len[o.fact_ind] + o.fact_off);
            CHECK(o.text_position + m - 1 ==
                  fz.cum_len[o.ending_fact_ind] + o.ending_fact_off);
            bool ordered = std::tie(o.fact_ind, o.fact_off) <=
                           std::tie(o.ending_fact_ind, o.ending_fact_off);
            CHECK(ordered);
        }
    }
}

TEST_CASE("save / open round trip with lazy equivalence") {
    auto inst = make_instance(29, 5000, 4, 0.02);
    auto idx = inst.build(32, 8);
    auto path = fs::temp_directory_path() / "erix_rt.eri";
    NonceLedger ledger;
    idx.save(path, inst.portfolio, &ledger);
    CHECK(ledger.size() > 0);

    auto opened = OpenedErIndex::open(path, inst.portfolio, inst.pack);
    CHECK(opened->individual_ids() == idx.individual_ids());
    CHECK(opened->lmax() == idx.l_max());

    std::mt19937_64 rng(30);
    for (int it = 0; it < 30; ++it) {
        const auto& s = inst.collection[rng() % inst.collection.size()].data;
        size_t m = 3 + rng() % 30;
        size_t p = rng() % (s.size() - m);
        auto pattern = s.substr(p, m);
        auto mem = to_positions(idx.locate(pattern, inst.portfolio));
        auto disk = to_positions(opened->locate(pattern));
        CHECK(mem == disk);
        CHECK(disk == naive_positions(inst, pattern));
    }
    SUBCASE("extraction round trip over the full range") {
        for (uint32_t slot = 0; slot < inst.collection.size(); ++slot) {
            const auto& id = inst.collection[slot].id;
            CHECK(opened->extract_text(id, 0, inst.collection[slot].data.size()) ==
                  inst.collection[slot].data);
            CHECK(idx.extract_text(id, 0, inst.collection[slot].data.size()) ==
                  inst.collection[slot].data);
        }
    }
    SUBCASE("section sizes itemize the file exactly") {
        auto sz = opened->section_sizes();
        CHECK(sz.sections_total() == sz.file);
        CHECK(sz.file == fs::file_size(path));
        CHECK(opened->total_source_bytes() > 0);
    }
    SUBCASE("corrupting the header checksum is detected") {
        auto bytes_path = fs::temp_directory_path() / "erix_corrupt.eri";
        fs::copy_file(path, bytes_path, fs::copy_options::overwrite_existing);
        std::fstream f(bytes_path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(12);
        char b;
        f.seekg(12);
        f.get(b);
        f.seekp(12);
        f.put(static_cast<char>(b ^ 0x1)); 
        f.close();
        CHECK_THROWS_AS(OpenedErIndex::open(bytes_path, inst.portfolio, inst.pack),
                        CorruptionError);
    }
}

TEST_CASE("authorization: locate never returns unauthorized individuals") {
    auto inst = make_instance(31, 4000, 5, 0.02);
    auto idx = inst.build();
    auto path = fs::temp_directory_path() / "erix_auth.eri";
    idx.save(path, inst.portfolio);

    std::mt19937_64 rng(32);
    for (int trial = 0; trial < 10; ++trial) {
        KeyPortfolio partial;
        partial.user_id = "partial";
        partial.system_key = inst.portfolio.system_key;
        std::set<std::string> allowed;
        for (const auto& s : inst.collection)
            if (rng() % 2) {
                partial.individual_keys[s.id] = inst.keys[s.id];
                allowed.insert(s.id);
            }
        const auto& s = inst.collection[rng() % inst.collection.size()].data;
        size_t m = 6 + rng() % 20;
        size_t p = rng() % (s.size() - m);
        auto pattern = s.substr(p, m);

        auto expected = naive_positions(inst, pattern, &allowed);
        CHECK(to_positions(idx.locate(pattern, partial)) == expected);
        if (!allowed.empty()) {
            auto opened = OpenedErIndex::open(path, partial, inst.pack);
            CHECK(to_positions(opened->locate(pattern)) == expected);
            for (const auto& s2 : inst.collection)
                if (!allowed.count(s2.id))
                    CHECK_THROWS_AS(opened->extract_text(s2.id, 0, 10), CryptoError);
        }
    }
}

TEST_CASE("identical sequences under distinct keys produce distinct ciphertexts") {
    Instance inst;
    std::mt19937_64 rng(33);
    inst.reference = oracle::random_dna(rng, 2000);
    inst.pack = std::make_shared<ReferencePack>(ReferencePack::build(inst.reference, 8));
    auto mutated = mutate_reference(Sequence{"ref", "chr", inst.reference},
                                    MutationProfile{0.02, 0.005, 0.005, 7}, "a");
    inst.collection.push_back(Sequence{"a", "chr", mutated.data});
    inst.collection.push_back(Sequence{"b", "chr", mutated.data});
    inst.portfolio.user_id = "u";
    inst.portfolio.system_key = generate_key();
    for (const auto& s : inst.collection) {
        auto k = generate_key();
        inst.keys[s.id] = k;
        inst.portfolio.individual_keys[s.id] = k;
    }
    auto idx = inst.build(16, 4);
    // identical factor structure
    REQUIRE(idx.factorization(0).factor_count() == idx.factorization(1).factor_count());
    for (size_t k = 0; k < idx.factorization(0).factor_count(); ++k) {
        CHECK(idx.factorization(0).factors[k].len == idx.factorization(1).factors[k].len);
        CHECK(idx.factorization(0).factors[k].mc == idx.factorization(1).factors[k].mc);
    }
    auto path = fs::temp_directory_path() / "erix_twins.eri";
    idx.save(path, inst.portfolio);
    auto opened = OpenedErIndex::open(path, inst.portfolio, inst.pack);
    auto sz = opened->section_sizes();
    // equal-length factorization sections with different ciphertexts
    std::ifstream f(path, std::ios::binary);
    std::vector<char> file((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    uint64_t fz_start = sz.header - 32;  // header envelope minus trailing checksum
    uint64_t half = sz.factorizations / 2;
    CHECK(std::memcmp(file.data() + fz_start, file.data() + fz_start + half, half) != 0);
}

TEST_CASE("build rejects bad inputs") {
    auto inst = make_instance(34, 1000, 2, 0.02);
    CHECK_THROWS_AS(ErIndex::build({}, inst.pack, "chr", inst.keys, 16), std::invalid_argument);

    auto dup = inst.collection;
    dup.push_back(dup.front());
    CHECK_THROWS_WITH_AS(ErIndex::build(dup, inst.pack, "chr", inst.keys, 16),
                         doctest::Contains("duplicate"), std::invalid_argument);

    auto missing = inst.keys;
    missing.erase("ind1");
    CHECK_THROWS_WITH_AS(ErIndex::build(inst.collection, inst.pack, "chr", missing, 16),
                         doctest::Contains("ind1"), std::invalid_argument);
}

TEST_CASE("concurrent locate calls on a shared opened index are consistent") {
    auto inst = make_instance(35, 4000, 3, 0.02);
    auto idx = inst.build();
    auto path = fs::temp_directory_path() / "erix_mt.eri";
    idx.save(path, inst.portfolio);
    auto opened = OpenedErIndex::open(path, inst.portfolio, inst.pack);

    std::vector<std::string> patterns;
    std::mt19937_64 rng(36);
    for (int i = 0; i < 24; ++i) {
        const auto& s = inst.collection[rng() % inst.collection.size()].data;
        size_t m = 5 + rng() % 25;
        size_t p = rng() % (s.size() - m);
        patterns.push_back(s.substr(p, m));
    }
    std::vector<PosSet> expected;
    for (const auto& p : patterns) expected.push_back(to_positions(opened->locate(p)));

    std::vector<std::thread> pool;
    std::atomic<int> failures{0};
    for (int t = 0; t < 8; ++t)
        pool.emplace_back([&] {
            for (size_t i = 0; i < patterns.size(); ++i)
                if (to_positions(opened->locate(patterns[i])) != expected[i]) ++failures;
        });
    for (auto& t : pool) t.join();
    CHECK(failures == 0);
}

TEST_CASE("coverage torture: N-rich data, short factors, sequence ends") {
    std::mt19937_64 rng(40);
    for (int inst_it = 0; inst_it < 12; ++inst_it) {
        auto inst = make_instance(400 + inst_it, 800 + rng() % 2000, 3,
                                  0.02 + 0.01 * (inst_it % 3), inst_it % 2 == 0);
        auto idx = inst.build(16, 4);
        for (int it = 0; it < 30; ++it) {
            const auto& s = inst.collection[rng() % inst.collection.size()].data;
            size_t m = 3 + rng() % 28;
            if (s.size() < m) continue;
            // bias sampling toward sequence ends to exercise final-factor anchors
            size_t p = it % 3 == 0 ? s.size() - m : rng() % (s.size() - m + 1);
            auto pattern = s.substr(p, m);
            CHECK(to_positions(idx.locate(pattern, inst.portfolio)) ==
                  naive_positions(inst, pattern));
        }
        // patterns straddling nothing: absent symbols give empty results
        CHECK(idx.locate("ACGTX", inst.portfolio).empty());
    }
}
