#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "erindex/crypto.hpp"

namespace erindex {

constexpr uint32_t kDefaultTreeOrder = 64;
/// Node numbers feed the per-node nonce (base + number + 1); the per-tree
/// nonce window is 10^7 wide, so larger trees must refuse to save.
constexpr uint32_t kMaxTreeNodes = 10'000'000;

/// factor ids grouped by individual slot, in leaf scan order.
using RangeResult = std::map<uint32_t, std::vector<uint32_t>>;

// --- invariable coding -------------------------------------------------
// Stores the first key verbatim plus fixed-width differences from it, the
// width being the minimum that represents (last - first).

std::vector<uint8_t> encode_node_invariable(std::span<const uint64_t> sorted_keys);
std::vector<uint64_t> decode_node_invariable(const std::vector<uint8_t>& payload);

// --- build-phase B+ tree ------------------------------------------------

/// Order-N B+ tree from integer search keys to (individual, factorId)
/// couples. Duplicate keys are allowed; equal keys keep insertion order,
/// which the index builder fixes globally, so rebuilds are byte-identical.
/// Write-once: no deletions.
class BPlusTree {
public:
    explicit BPlusTree(uint32_t order = kDefaultTreeOrder);
    ~BPlusTree();
    BPlusTree(BPlusTree&&) noexcept;
    BPlusTree& operator=(BPlusTree&&) noexcept;

    void insert(uint64_t key, uint32_t ind_slot, uint32_t factor_id);

    uint64_t entry_count() const { return entry_count_; }
    uint32_t order() const { return order_; }
    uint64_t node_count() const;
    uint64_t leaf_count() const;

    /// Ordinal (left-to-right) of the leaf where `value` would reside.
    std::optional<uint32_t> search_for_leaf(uint64_t value) const;

    /// Values of keys in [lo, hi], grouped by individual, restricted to
    /// authorized slots (nullptr = all).
    RangeResult factors_in_range(int64_t lo, int64_t hi,
                                 const std::set<uint32_t>* authorized = nullptr) const;

    /// In-order key scan across the leaf level (test hook).
    std::vector<uint64_t> all_keys_in_order() const;

    /// Throws std::logic_error when a structural invariant is violated:
    /// unequal leaf depths, internal key counts outside [N, 2N] (root
    /// outside [1, 2N]), or out-of-order keys.
    void check_invariants() const;

    /// Serializes the tree section: encrypted directory, then nodes with
    /// leaves first in consecutive positions. Key sections are encrypted
    /// under (system_key, base_nonce + node + 1); each leaf's values are
    /// partitioned per individual and encrypted under that individual's
    /// key with the same nonce; the directory uses (system_key, base_nonce).
    std::vector<uint8_t> save(uint64_t base_nonce, const SymmetricKey& system_key,
                              const std::vector<SymmetricKey>& individual_keys,
                              NonceLedger& ledger) const;

private:
    struct Node;
    struct Impl;
    std::unique_ptr<Impl> impl_;
    uint32_t order_;
    uint64_t entry_count_ = 0;
};

// --- lazily decrypted on-disk tree --------------------------------------

/// Byte-range reader over the index file (thread-safe).
class FileSlice {
public:
    virtual ~FileSlice() = default;
    virtual std::vector<uint8_t> read(uint64_t offset, uint64_t length) const = 0;
};

/// Read-side EB+ tree: eager directory, lazy node decryption with a
/// decrypt-once cache. Per-individual leaf partitions whose key is absent
/// from the portfolio (or which fail to decode) are skipped and tallied,
/// never fatal.
class EncryptedTreeReader {
public:
    EncryptedTreeReader(std::shared_ptr<const FileSlice> file, uint64_t section_offset,
                        uint64_t base_nonce, SymmetricKey system_key,
                        std::vector<std::optional<SymmetricKey>> individual_keys,
                        size_t cache_budget_bytes);

    std::optional<uint32_t> search_for_leaf(uint64_t value) const;
    RangeResult factors_in_range(int64_t lo, int64_t hi) const;

    uint32_t node_count() const { return static_cast<uint32_t>(nodes_.size()); }
    uint32_t last_leaf_number() const { return last_leaf_; }
    /// Partitions skipped because of missing keys or failed decryption.
    size_t skipped_partitions() const;

private:
    struct DecodedNode {
        bool leaf = false;
        std::vector<uint64_t> keys;
        std::vector<uint32_t> children;   // internal
        std::vector<uint32_t> ind_slots;  // leaf, per slot
        std::vector<uint32_t> fids;       // leaf, per slot; UINT32_MAX = unavailable
        size_t bytes = 0;
    };
    std::shared_ptr<const DecodedNode> node(uint32_t number) const;

    std::shared_ptr<const FileSlice> file_;
    uint64_t section_offset_;
    uint64_t base_nonce_;
    SymmetricKey system_key_;
    std::vector<std::optional<SymmetricKey>> individual_keys_;
    struct NodeRef {
        uint64_t offset;
        uint32_t length;
    };
    std::vector<NodeRef> nodes_;
    uint32_t root_ = 0;
    uint32_t last_leaf_ = 0;

    mutable std::mutex mtx_;
    mutable std::map<uint32_t, std::shared_ptr<const DecodedNode>> cache_;
    mutable size_t cache_bytes_ = 0;
    mutable size_t skipped_partitions_ = 0;
    size_t cache_budget_;
};

}  // namespace erindex
