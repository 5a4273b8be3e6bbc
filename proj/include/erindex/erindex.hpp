#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "erindex/crypto.hpp"
#include "erindex/ebtree.hpp"
#include "erindex/fm_index.hpp"
#include "erindex/rlz.hpp"
#include "erindex/sequence.hpp"

namespace erindex {

constexpr uint32_t kDefaultBlockSize = 1024;
/// Sentinel: the index builder picks the tree order from the key density,
/// sizing leaves so their invariable-coded key span stays near 4096 (12
/// diff bits). Denser (larger) collections get bigger leaves, so per-node
/// costs amortize with collection size.
constexpr uint32_t kAdaptiveTreeOrder = 0;
constexpr size_t kDefaultCacheBudget = 256ull << 20;

/// Base nonces of the three tree sections (reverse, forward, pos).
constexpr uint64_t kReverseTreeNonce = 10'000'000;
constexpr uint64_t kForwardTreeNonce = 20'000'000;
constexpr uint64_t kPosTreeNonce = 30'000'000;

enum class TreeKind { Reverse, Forward, Pos };

/// One pattern occurrence in an individual sequence, in factor coordinates
/// plus the resolved absolute position.
struct Occurrence {
    uint32_t ind_slot = 0;
    std::string individual_id;
    uint64_t fact_ind = 0;
    uint32_t fact_off = 0;
    uint64_t ending_fact_ind = 0;
    uint32_t ending_fact_off = 0;
    uint64_t text_position = 0;
};

/// Everything the pattern-search engine needs from an index instance,
/// with authorization already applied: tree range queries only surface
/// individuals whose keys the caller holds.
class SearchBackend {
public:
    virtual ~SearchBackend() = default;
    virtual uint64_t reference_len() const = 0;
    virtual uint32_t l_max() const = 0;
    virtual const std::vector<uint32_t>& authorized_slots() const = 0;
    virtual const std::string& individual_id(uint32_t slot) const = 0;
    virtual uint64_t factor_count(uint32_t slot) const = 0;
    virtual uint64_t source_length(uint32_t slot) const = 0;
    virtual Factor factor(uint32_t slot, uint64_t fid) const = 0;
    /// Total symbols before this factor (cumulative length).
    virtual uint64_t factor_text_base(uint32_t slot, uint64_t fid) const = 0;
    /// (factor index, offset within factor) covering text position pos.
    virtual std::pair<uint64_t, uint32_t> factor_covering(uint32_t slot, uint64_t pos) const = 0;
    virtual RangeResult tree_range(TreeKind kind, int64_t lo, int64_t hi) const = 0;
};

/// Pattern search per the three-tree design: internal occurrences through
/// the reference index plus the position tree, external (overlapping)
/// occurrences through per-split-point side searches against the reverse
/// and forward trees, verification by character walks on the reverse index.
class LocateEngine {
public:
    LocateEngine(const SearchBackend& backend, const ReferencePack& ref)
        : b_(backend), ref_(ref) {}

    std::vector<Occurrence> locate(std::string_view pattern) const;
    std::vector<Occurrence> locate_internal_occs(std::string_view pattern) const;
    std::vector<Occurrence> locate_external_occs(std::string_view pattern) const;

    /// (candidate factors grouped by individual, verified side length).
    std::pair<RangeResult, uint32_t> find_left_side_factors(std::string_view ls) const;
    std::pair<RangeResult, uint32_t> find_right_side_factors(std::string_view rs) const;

    std::string extract(uint32_t slot, uint64_t start, uint64_t length) const;

    /// Lazily decoded factor texts, scoped to one query.
    class FactorTextCache;

    /// Verifies the not-yet-verified pattern characters around an anchored
    /// candidate by scanning factor text one character at a time; fills the
    /// occurrence's start/end factor coordinates. pattern[anchor_idx] sits
    /// at (anchor_fid, anchor_off); [verified_lo, verified_hi] is already
    /// known to match.
    bool pat_rem_part(std::string_view pattern, uint32_t slot, uint64_t anchor_fid,
                      uint32_t anchor_off, size_t anchor_idx, size_t verified_lo,
                      size_t verified_hi, FactorTextCache& cache, Occurrence& occ) const;

private:
    uint32_t longest_side_suffix_in_ref(std::string_view side) const;
    uint32_t longest_side_prefix_in_ref(std::string_view side) const;
    uint64_t tpf_of(const Factor& f) const;

    const SearchBackend& b_;
    const ReferencePack& ref_;
};

/// In-memory ER-index right after construction: plaintext factorizations
/// plus the three build-phase trees. Queryable (with a portfolio) and
/// saveable; the persisted form is opened with OpenedErIndex.
class ErIndex {
public:
    static ErIndex build(const std::vector<Sequence>& collection,
                         std::shared_ptr<const ReferencePack> ref, std::string reference_id,
                         const std::map<std::string, SymmetricKey>& individual_keys,
                         uint32_t block_size = kDefaultBlockSize, unsigned workers = 1,
                         uint32_t tree_order = kAdaptiveTreeOrder);

    std::vector<Occurrence> locate(std::string_view pattern, const KeyPortfolio& portfolio) const;
    std::string extract_text(const std::string& individual_id, uint64_t start,
                             uint64_t length) const;

    /// Writes the single-file container. The portfolio must
    /// hold the system key and every individual's key. The ledger, when
    /// given, records every (key, nonce) context opened during the save.
    void save(const std::filesystem::path& path, const KeyPortfolio& portfolio,
              NonceLedger* ledger_out = nullptr) const;

    uint32_t l_max() const { return l_max_; }
    uint32_t block_size() const { return block_size_; }
    const std::vector<std::string>& individual_ids() const { return ids_; }
    const Factorization& factorization(uint32_t slot) const { return fzs_.at(slot); }
    const ReferencePack& reference() const { return *ref_; }
    const BPlusTree& reverse_tree() const { return reverse_tree_; }
    const BPlusTree& forward_tree() const { return forward_tree_; }
    const BPlusTree& pos_tree() const { return pos_tree_; }

private:
    ErIndex() = default;

    std::shared_ptr<const ReferencePack> ref_;
    std::string reference_id_;
    uint32_t block_size_ = kDefaultBlockSize;
    uint32_t l_max_ = 0;
    std::vector<std::string> ids_;
    std::vector<Factorization> fzs_;
    std::vector<SymmetricKey> keys_;
    BPlusTree reverse_tree_{kDefaultTreeOrder};
    BPlusTree forward_tree_{kDefaultTreeOrder};
    BPlusTree pos_tree_{kDefaultTreeOrder};

    friend class InMemoryView;
};

struct IndexSectionSizes {
    uint64_t header = 0;
    uint64_t factorizations = 0;
    uint64_t reverse_tree = 0;
    uint64_t forward_tree = 0;
    uint64_t pos_tree = 0;
    uint64_t file = 0;

    uint64_t sections_total() const {
        return header + factorizations + reverse_tree + forward_tree + pos_tree;
    }
};

/// Header-only open of a saved ER-index: the header and the three tree
/// directories are decrypted eagerly, factor blocks and tree nodes lazily
/// on first touch, cached. Queries are bound to the portfolio given at
/// open; unauthorized individuals are invisible.
class OpenedErIndex : public SearchBackend {
public:
    static std::unique_ptr<OpenedErIndex> open(const std::filesystem::path& path,
                                               const KeyPortfolio& portfolio,
                                               std::shared_ptr<const ReferencePack> ref,
                                               size_t cache_budget = kDefaultCacheBudget);

    std::vector<Occurrence> locate(std::string_view pattern) const;
    std::string extract_text(const std::string& individual_id, uint64_t start,
                             uint64_t length) const;

    const std::string& reference_id() const { return reference_id_; }
    uint32_t block_size() const { return block_size_; }
    uint32_t lmax() const { return l_max_; }
    const std::vector<std::string>& individual_ids() const { return ids_; }
    uint64_t total_source_bytes() const;
    IndexSectionSizes section_sizes() const { return sizes_; }
    /// Tree partitions skipped for lack of keys (authorization audit note).
    size_t skipped_partition_count() const;

    // SearchBackend
    uint64_t reference_len() const override { return ref_->text_len(); }
    uint32_t l_max() const override { return l_max_; }
    const std::vector<uint32_t>& authorized_slots() const override { return authorized_; }
    const std::string& individual_id(uint32_t slot) const override { return ids_.at(slot); }
    uint64_t factor_count(uint32_t slot) const override;
    uint64_t source_length(uint32_t slot) const override;
    Factor factor(uint32_t slot, uint64_t fid) const override;
    uint64_t factor_text_base(uint32_t slot, uint64_t fid) const override;
    std::pair<uint64_t, uint32_t> factor_covering(uint32_t slot, uint64_t pos) const override;
    RangeResult tree_range(TreeKind kind, int64_t lo, int64_t hi) const override;

private:
    OpenedErIndex() = default;

    struct BlockMeta {
        uint64_t offset = 0;  // absolute file offset of the length-prefixed segment
        uint32_t cipher_len = 0;
        uint64_t text_base = 0;
    };
    struct FzMeta {
        uint64_t source_length = 0;
        uint64_t factor_count = 0;
        std::vector<BlockMeta> blocks;
    };
    struct DecodedBlock {
        std::vector<Factor> factors;
        std::vector<uint64_t> cum;  // within-block cumulative lengths
    };

    const FzMeta& fz_meta(uint32_t slot) const;
    std::shared_ptr<const DecodedBlock> block(uint32_t slot, uint64_t block_no) const;
    const SymmetricKey& slot_key(uint32_t slot) const;

    std::shared_ptr<const ReferencePack> ref_;
    std::shared_ptr<const FileSlice> file_;
    std::string reference_id_;
    uint32_t block_size_ = 0;
    uint32_t l_max_ = 0;
    std::vector<std::string> ids_;
    std::vector<std::optional<SymmetricKey>> keys_;  // by slot
    std::vector<uint32_t> authorized_;
    struct SlotSection {
        uint64_t offset = 0;
        uint64_t length = 0;
        uint64_t source_length = 0;
        uint64_t factor_count = 0;
    };
    std::vector<SlotSection> sections_;
    IndexSectionSizes sizes_;
    std::unique_ptr<EncryptedTreeReader> reverse_tree_, forward_tree_, pos_tree_;

    mutable std::mutex mtx_;
    mutable std::vector<std::optional<FzMeta>> fz_meta_;
    mutable std::map<std::pair<uint32_t, uint64_t>, std::shared_ptr<const DecodedBlock>> blocks_;
    mutable size_t block_cache_bytes_ = 0;
    size_t cache_budget_ = kDefaultCacheBudget;
};

}  // namespace erindex
