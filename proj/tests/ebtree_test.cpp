#include <doctest.h>

#include <map>
#include <random>

#include "erindex/ebtree.hpp"
#include "erindex/erindex.hpp"
#include "erindex/errors.hpp"

using namespace erindex;

namespace {

/// Sorted-multimap oracle for range queries.
struct TreeOracle {
    std::multimap<uint64_t, std::pair<uint32_t, uint32_t>> entries;
    void insert(uint64_t key, uint32_t slot, uint32_t fid) { entries.insert({key, {slot, fid}}); }
    RangeResult range(int64_t lo, int64_t hi, const std::set<uint32_t>* auth = nullptr) const {
        RangeResult out;
        for (const auto& [key, value] : entries) {
            if (static_cast<int64_t>(key) < lo || static_cast<int64_t>(key) > hi) continue;
            if (auth && !auth->count(value.first)) continue;
            out[value.first].push_back(value.second);
        }
        for (auto& [slot, fids] : out) std::sort(fids.begin(), fids.end());
        return out;
    }
};

RangeResult sorted_copy(RangeResult r) {
    for (auto& [slot, fids] : r) std::sort(fids.begin(), fids.end());
    return r;
}

/// An in-memory FileSlice over a byte buffer (test-side).
class MemorySlice : public FileSlice {
public:
    explicit MemorySlice(std::vector<uint8_t> bytes) : bytes_(std::move(bytes)) {}
    std::vector<uint8_t> read(uint64_t offset, uint64_t length) const override {
        if (offset + length > bytes_.size()) throw CorruptionError("read past end");
        return {bytes_.begin() + offset, bytes_.begin() + offset + length};
    }
    std::vector<uint8_t> bytes_;
};

}  // namespace

TEST_CASE("invariable coding examples") {
    SUBCASE("hand-checked widths") {
        std::vector<uint64_t> keys{100, 103, 109};
        auto payload = encode_node_invariable(keys);
        // first key u64 + count u32 + width u8 + two 4-bit diffs
        CHECK(payload.size() == 8 + 4 + 1 + 1);
        CHECK(payload[12] == 4);  // ceil(log2(9+1)) = 4 bits
        CHECK(decode_node_invariable(payload) == keys);
    }
    SUBCASE("single key has zero width and no diff payload") {
        std::vector<uint64_t> keys{42};
        auto payload = encode_node_invariable(keys);
        CHECK(payload.size() == 13);
        CHECK(payload[12] == 0);
        CHECK(decode_node_invariable(payload) == keys);
    }
    SUBCASE("degenerate equal keys") {
        std::vector<uint64_t> keys{5, 5, 5};
        auto payload = encode_node_invariable(keys);
        CHECK(payload[12] == 0);
        CHECK(decode_node_invariable(payload) == keys);
    }
    SUBCASE("unsorted input is rejected") {
        std::vector<uint64_t> keys{5, 3};
        CHECK_THROWS_AS(encode_node_invariable(keys), std::invalid_argument);
    }
}

TEST_CASE("invariable coding identity on 10^4 random sorted key sets") {
    std::mt19937_64 rng(1);
    for (int it = 0; it < 10000; ++it) {
        size_t count = 1 + rng() % 64;
        std::vector<uint64_t> keys(count);
        uint64_t base = rng() % (1ull << 40);
        for (auto& k : keys) k = base + rng() % 100000;
        std::sort(keys.begin(), keys.end());
        CHECK(decode_node_invariable(encode_node_invariable(keys)) == keys);
    }
}

TEST_CASE("insert basics") {
    BPlusTree tree(4);
    SUBCASE("empty tree has a leaf root and no search result") {
        CHECK(tree.entry_count() == 0);
        CHECK(tree.node_count() == 1);
        CHECK_FALSE(tree.search_for_leaf(5));
    }
    SUBCASE("first insert lands in the root leaf") {
        tree.insert(10, 0, 0);
        CHECK(tree.node_count() == 1);
        CHECK(tree.search_for_leaf(10) == 0);
        tree.check_invariants();
    }
    SUBCASE("2N+1 distinct keys force a root split") {
        for (uint32_t k = 0; k < 2 * 4 + 1; ++k) tree.insert(k, 0, k);
        CHECK(tree.leaf_count() == 2);
        CHECK(tree.node_count() == 3);  // depth 2
        tree.check_invariants();
    }
}

TEST_CASE("search_for_leaf positions") {
    BPlusTree tree(2);
    for (uint32_t k = 0; k < 40; ++k) tree.insert(k * 10, 0, k);
    tree.check_invariants();
    CHECK(tree.search_for_leaf(0) == 0);  // below or at all keys: first leaf
    auto last = tree.search_for_leaf(1000);
    REQUIRE(last);
    CHECK(*last == tree.leaf_count() - 1);
    auto keys = tree.all_keys_in_order();
    CHECK(std::is_sorted(keys.begin(), keys.end()));
}

TEST_CASE("10k random inserts keep order and match the multimap oracle") {
    std::mt19937_64 rng(2);
    BPlusTree tree(16);
    TreeOracle oracle;
    for (int i = 0; i < 10000; ++i) {
        uint64_t key = rng() % 5000;
        uint32_t slot = static_cast<uint32_t>(rng() % 7);
        uint32_t fid = static_cast<uint32_t>(i);
        tree.insert(key, slot, fid);
        oracle.insert(key, slot, fid);
    }
    tree.check_invariants();
    auto keys = tree.all_keys_in_order();
    CHECK(std::is_sorted(keys.begin(), keys.end()));
    CHECK(keys.size() == 10000);

    SUBCASE("full range returns every value") {
        CHECK(sorted_copy(tree.factors_in_range(0, 5000)) == oracle.range(0, 5000));
    }
    SUBCASE("1000 random ranges equal the oracle") {
        for (int it = 0; it < 1000; ++it) {
            int64_t a = static_cast<int64_t>(rng() % 5200) - 100;
            int64_t b = static_cast<int64_t>(rng() % 5200) - 100;
            if (a > b) std::swap(a, b);
            CHECK(sorted_copy(tree.factors_in_range(a, b)) == oracle.range(a, b));
        }
    }
    SUBCASE("empty intersections and authorization filters") {
        CHECK(tree.factors_in_range(6000, 7000).empty());
        CHECK(tree.factors_in_range(10, 5).empty());
        std::set<uint32_t> auth{1, 3};
        auto got = sorted_copy(tree.factors_in_range(0, 5000, &auth));
        CHECK(got == oracle.range(0, 5000, &auth));
        for (const auto& [slot, fids] : got) CHECK(auth.count(slot));
    }
}

TEST_CASE("structural invariants hold during a 10^5-insert run") {
    std::mt19937_64 rng(3);
    BPlusTree tree(8);
    for (int i = 0; i < 100000; ++i) {
        tree.insert(rng() % 1000000, static_cast<uint32_t>(rng() % 10),
                    static_cast<uint32_t>(i));
        if (i % 10000 == 9999) tree.check_invariants();
    }
    tree.check_invariants();
    CHECK(tree.entry_count() == 100000);
}

TEST_CASE("ascending inserts produce near-full leaves") {
    BPlusTree tree(64);
    for (uint32_t i = 0; i < 100000; ++i) tree.insert(i, 0, i);
    tree.check_invariants();
    CHECK(tree.leaf_count() <= 100000 / 128 + 2);  // lean splits
}

namespace {

struct SavedTree {
    std::vector<uint8_t> bytes;
    SymmetricKey system_key;
    std::vector<SymmetricKey> ind_keys;
};

SavedTree build_and_save(const BPlusTree& tree, uint32_t individuals, uint64_t base_nonce) {
    SavedTree out;
    out.system_key = generate_key();
    for (uint32_t i = 0; i < individuals; ++i) out.ind_keys.push_back(generate_key());
    NonceLedger ledger;
    out.bytes = tree.save(base_nonce, out.system_key, out.ind_keys, ledger);
    return out;
}

EncryptedTreeReader make_reader(const SavedTree& saved, uint64_t base_nonce,
                                std::optional<std::set<uint32_t>> auth = std::nullopt) {
    std::vector<std::optional<SymmetricKey>> keys;
    for (uint32_t i = 0; i < saved.ind_keys.size(); ++i) {
        if (!auth || auth->count(i))
            keys.emplace_back(saved.ind_keys[i]);
        else
            keys.emplace_back(std::nullopt);
    }
    return EncryptedTreeReader(std::make_shared<MemorySlice>(saved.bytes), 0, base_nonce,
                               saved.system_key, std::move(keys), 16 << 20);
}

}  // namespace

TEST_CASE("save/load round trip preserves range query results") {
    std::mt19937_64 rng(4);
    BPlusTree tree(8);
    TreeOracle oracle;
    for (int i = 0; i < 20000; ++i) {
        uint64_t key = rng() % 100000;
        uint32_t slot = static_cast<uint32_t>(rng() % 6);
        tree.insert(key, slot, static_cast<uint32_t>(i));
        oracle.insert(key, slot, static_cast<uint32_t>(i));
    }
    auto saved = build_and_save(tree, 6, kReverseTreeNonce);
    auto reader = make_reader(saved, kReverseTreeNonce);

    CHECK(sorted_copy(reader.factors_in_range(0, 100000)) ==
          sorted_copy(tree.factors_in_range(0, 100000)));
    for (int it = 0; it < 300; ++it) {
        int64_t a = static_cast<int64_t>(rng() % 101000) - 500;
        int64_t b = a + static_cast<int64_t>(rng() % 5000);
        CHECK(sorted_copy(reader.factors_in_range(a, b)) == oracle.range(a, b));
    }
    SUBCASE("leaf search agrees between builder and reader") {
        for (int it = 0; it < 200; ++it) {
            uint64_t v = rng() % 100000;
            CHECK(reader.search_for_leaf(v) == tree.search_for_leaf(v));
        }
    }
}

TEST_CASE("unauthorized individuals never appear in reader results") {
    std::mt19937_64 rng(5);
    BPlusTree tree(8);
    for (int i = 0; i < 5000; ++i)
        tree.insert(rng() % 10000, static_cast<uint32_t>(rng() % 4), static_cast<uint32_t>(i));
    auto saved = build_and_save(tree, 4, kForwardTreeNonce);
    auto reader = make_reader(saved, kForwardTreeNonce, std::set<uint32_t>{0, 2});

    auto all = reader.factors_in_range(0, 10000);
    CHECK(all.count(0) == 1);
    CHECK(all.count(2) == 1);
    CHECK(all.count(1) == 0);
    CHECK(all.count(3) == 0);
    CHECK(reader.skipped_partitions() > 0);

    std::set<uint32_t> auth{0, 2};
    CHECK(sorted_copy(all) == sorted_copy(tree.factors_in_range(0, 10000, &auth)));
}

TEST_CASE("flipping one individual's partition bytes corrupts only that individual") {
    std::mt19937_64 rng(6);
    BPlusTree tree(4);
    for (int i = 0; i < 600; ++i)
        tree.insert(rng() % 900, static_cast<uint32_t>(rng() % 3), static_cast<uint32_t>(i));
    auto saved = build_and_save(tree, 3, kPosTreeNonce);
    auto intact = sorted_copy(make_reader(saved, kPosTreeNonce).factors_in_range(0, 900));

    // Flip bytes at scattered positions; whenever the flip lands inside a
    // leaf partition, exactly one individual's values may change while the
    // other two decode intact.
    bool demonstrated = false;
    for (size_t pos = saved.bytes.size() - 1; pos > 0 && !demonstrated; pos -= 37) {
        SavedTree mutated = saved;
        mutated.bytes[pos] ^= 0x55;
        try {
            auto reader = make_reader(mutated, kPosTreeNonce);
            auto got = sorted_copy(reader.factors_in_range(0, 900));
            size_t unchanged = 0;
            bool changed_some = false;
            for (uint32_t slot = 0; slot < 3; ++slot) {
                bool same = got.count(slot) && intact.count(slot) &&
                            got.at(slot) == intact.at(slot);
                if (same)
                    ++unchanged;
                else
                    changed_some = true;
            }
            if (changed_some && unchanged == 2) demonstrated = true;
        } catch (const std::exception&) {
            // landed on a system-key section; try another position
        }
    }
    CHECK(demonstrated);
}

TEST_CASE("tree save records distinct nonces per node") {
    BPlusTree tree(4);
    for (uint32_t i = 0; i < 1000; ++i) tree.insert(i, 0, i);
    NonceLedger ledger;
    SymmetricKey system = generate_key();
    std::vector<SymmetricKey> inds{generate_key()};
    auto bytes = tree.save(kReverseTreeNonce, system, inds, ledger);
    CHECK(bytes.size() > 0);
    CHECK(ledger.size() >= tree.node_count() + 1);  // directory + key sections + partitions
}
