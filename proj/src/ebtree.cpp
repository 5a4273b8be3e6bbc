#include "erindex/ebtree.hpp"

#include <algorithm>
#include <cstring>

#include "erindex/bit_io.hpp"
#include "erindex/byte_io.hpp"
#include "erindex/errors.hpp"

namespace erindex {

// --- invariable coding ---------------------------------------------------

std::vector<uint8_t> encode_node_invariable(std::span<const uint64_t> sorted_keys) {
    if (sorted_keys.empty()) throw std::invalid_argument("cannot encode an empty key list");
    for (size_t i = 1; i < sorted_keys.size(); ++i)
        if (sorted_keys[i] < sorted_keys[i - 1])
            throw std::invalid_argument("invariable coding requires sorted keys");

    const uint64_t first = sorted_keys.front();
    const uint32_t w = bits_for(sorted_keys.back() - first);

    ByteWriter out;
    out.u64(first);
    out.u32(static_cast<uint32_t>(sorted_keys.size()));
    out.u8(static_cast<uint8_t>(w));
    BitWriter bits;
    for (size_t i = 1; i < sorted_keys.size(); ++i) bits.put(sorted_keys[i] - first, w);
    out.bytes(bits.data());
    return out.take();
}

std::vector<uint64_t> decode_node_invariable(const std::vector<uint8_t>& payload) {
    ByteReader in(payload);
    const uint64_t first = in.u64();
    const uint32_t count = in.u32();
    const uint32_t w = in.u8();
    if (w > 64 || count == 0) throw CorruptionError("invariable payload header implausible");
    BitReader bits(payload.data() + 13, payload.size() - 13);
    std::vector<uint64_t> keys;
    keys.reserve(count);
    keys.push_back(first);
    for (uint32_t i = 1; i < count; ++i) keys.push_back(first + bits.get(w));
    return keys;
}

// --- build-phase tree ----------------------------------------------------

namespace {
struct Slot {
    uint64_t key;
    uint32_t ind_slot;
    uint32_t factor_id;
};
}  // namespace

struct BPlusTree::Node {
    bool leaf = true;
    // leaf payload
    std::vector<Slot> slots;
    Node* next = nullptr;
    // internal payload
    std::vector<uint64_t> keys;
    std::vector<std::unique_ptr<Node>> children;
};

struct BPlusTree::Impl {
    std::unique_ptr<Node> root;
    mutable std::vector<Node*> leaf_chain;  // rebuilt lazily after inserts
    mutable bool chain_dirty = true;

    const std::vector<Node*>& leaves() const {
        if (chain_dirty) {
            leaf_chain.clear();
            const Node* n = root.get();
            while (n && !n->leaf) n = n->children.front().get();
            for (Node* l = const_cast<Node*>(n); l; l = l->next) leaf_chain.push_back(l);
            chain_dirty = false;
        }
        return leaf_chain;
    }
};

BPlusTree::BPlusTree(uint32_t order) : impl_(std::make_unique<Impl>()), order_(order) {
    if (order < 2) throw std::invalid_argument("tree order must be >= 2");
    impl_->root = std::make_unique<Node>();
}

BPlusTree::~BPlusTree() {
    // Free leaf-heavy trees iteratively to keep destruction shallow.
    if (!impl_ || !impl_->root) return;
    std::vector<std::unique_ptr<Node>> queue;
    queue.push_back(std::move(impl_->root));
    while (!queue.empty()) {
        auto n = std::move(queue.back());
        queue.pop_back();
        for (auto& c : n->children) queue.push_back(std::move(c));
    }
}

BPlusTree::BPlusTree(BPlusTree&&) noexcept = default;
BPlusTree& BPlusTree::operator=(BPlusTree&&) noexcept = default;

void BPlusTree::insert(uint64_t key, uint32_t ind_slot, uint32_t factor_id) {
    const uint32_t cap = 2 * order_;
    Slot slot{key, ind_slot, factor_id};

    // Descend with upper-bound semantics so equal keys append to the right.
    std::vector<Node*> path;
    Node* n = impl_->root.get();
    while (!n->leaf) {
        path.push_back(n);
        size_t i = std::upper_bound(n->keys.begin(), n->keys.end(), key) - n->keys.begin();
        n = n->children[i].get();
    }

    auto cmp = [](const Slot& a, const Slot& b) {
        return std::tie(a.key, a.ind_slot, a.factor_id) < std::tie(b.key, b.ind_slot, b.factor_id);
    };
    size_t pos = std::upper_bound(n->slots.begin(), n->slots.end(), slot, cmp) - n->slots.begin();
    n->slots.insert(n->slots.begin() + static_cast<ptrdiff_t>(pos), slot);
    ++entry_count_;
    if (n->slots.size() <= cap) return;

    impl_->chain_dirty = true;

    // Leaf split. Appends keep the left leaf full so sorted build orders
    // produce near-full trees; otherwise split in the middle.
    auto right = std::make_unique<Node>();
    size_t keep = (pos == cap) ? cap : (cap + 1) / 2;
    right->slots.assign(n->slots.begin() + static_cast<ptrdiff_t>(keep), n->slots.end());
    n->slots.resize(keep);
    right->next = n->next;
    n->next = right.get();
    uint64_t sep = right->slots.front().key;

    // Propagate the split upward; internal nodes always split mid to keep
    // the N..2N bounds.
    std::unique_ptr<Node> carry = std::move(right);
    Node* child_left = n;
    while (!path.empty()) {
        Node* parent = path.back();
        path.pop_back();
        size_t i = 0;
        while (parent->children[i].get() != child_left) ++i;
        parent->keys.insert(parent->keys.begin() + static_cast<ptrdiff_t>(i), sep);
        parent->children.insert(parent->children.begin() + static_cast<ptrdiff_t>(i) + 1,
                                std::move(carry));
        if (parent->keys.size() <= cap) return;

        auto up = std::make_unique<Node>();
        up->leaf = false;
        size_t mid = order_;  // promote keys[N] out of 2N+1
        sep = parent->keys[mid];
        up->keys.assign(parent->keys.begin() + static_cast<ptrdiff_t>(mid) + 1, parent->keys.end());
        for (size_t c = mid + 1; c < parent->children.size(); ++c)
            up->children.push_back(std::move(parent->children[c]));
        parent->keys.resize(mid);
        parent->children.resize(mid + 1);
        carry = std::move(up);
        child_left = parent;
    }

    auto new_root = std::make_unique<Node>();
    new_root->leaf = false;
    new_root->keys.push_back(sep);
    new_root->children.push_back(std::move(impl_->root));
    new_root->children.push_back(std::move(carry));
    impl_->root = std::move(new_root);
}

uint64_t BPlusTree::leaf_count() const { return impl_->leaves().size(); }

uint64_t BPlusTree::node_count() const {
    uint64_t count = 0;
    std::vector<const Node*> stack{impl_->root.get()};
    while (!stack.empty()) {
        const Node* n = stack.back();
        stack.pop_back();
        ++count;
        for (const auto& c : n->children) stack.push_back(c.get());
    }
    return count;
}

std::optional<uint32_t> BPlusTree::search_for_leaf(uint64_t value) const {
    if (entry_count_ == 0) return std::nullopt;
    const Node* n = impl_->root.get();
    while (!n->leaf) {
        size_t i = std::lower_bound(n->keys.begin(), n->keys.end(), value) - n->keys.begin();
        n = n->children[i].get();
    }
    const auto& chain = impl_->leaves();
    auto it = std::find(chain.begin(), chain.end(), n);
    return static_cast<uint32_t>(it - chain.begin());
}

RangeResult BPlusTree::factors_in_range(int64_t lo, int64_t hi,
                                        const std::set<uint32_t>* authorized) const {
    RangeResult out;
    if (lo > hi || entry_count_ == 0) return out;
    const uint64_t l = lo < 0 ? 0 : static_cast<uint64_t>(lo);
    const uint64_t u = hi < 0 ? 0 : static_cast<uint64_t>(hi);
    if (hi < 0) return out;

    auto leaf_no = search_for_leaf(l);
    const auto& chain = impl_->leaves();
    for (size_t li = *leaf_no; li < chain.size(); ++li) {
        const Node* leaf = chain[li];
        size_t i = 0;
        if (li == *leaf_no) {
            i = std::lower_bound(leaf->slots.begin(), leaf->slots.end(), l,
                                 [](const Slot& s, uint64_t v) { return s.key < v; }) -
                leaf->slots.begin();
        }
        for (; i < leaf->slots.size(); ++i) {
            const Slot& s = leaf->slots[i];
            if (s.key > u) return out;
            if (!authorized || authorized->count(s.ind_slot))
                out[s.ind_slot].push_back(s.factor_id);
        }
    }
    return out;
}

std::vector<uint64_t> BPlusTree::all_keys_in_order() const {
    std::vector<uint64_t> keys;
    keys.reserve(entry_count_);
    for (const Node* leaf : impl_->leaves())
        for (const Slot& s : leaf->slots) keys.push_back(s.key);
    return keys;
}

void BPlusTree::check_invariants() const {
    const Node* root = impl_->root.get();
    int leaf_depth = -1;
    uint64_t seen_entries = 0;

    std::function<void(const Node*, int, bool)> walk = [&](const Node* n, int depth, bool is_root) {
        if (n->leaf) {
            if (leaf_depth == -1) leaf_depth = depth;
            if (depth != leaf_depth) throw std::logic_error("leaves at unequal depths");
            if (!is_root && n->slots.empty()) throw std::logic_error("empty non-root leaf");
            if (n->slots.size() > 2 * order_) throw std::logic_error("leaf overflow");
            for (size_t i = 1; i < n->slots.size(); ++i)
                if (n->slots[i].key < n->slots[i - 1].key)
                    throw std::logic_error("leaf keys out of order");
            seen_entries += n->slots.size();
            return;
        }
        size_t nk = n->keys.size();
        if (is_root ? (nk < 1 || nk > 2 * order_) : (nk < order_ || nk > 2 * order_))
            throw std::logic_error("internal key count out of bounds");
        if (n->children.size() != nk + 1) throw std::logic_error("child count mismatch");
        if (!std::is_sorted(n->keys.begin(), n->keys.end()))
            throw std::logic_error("internal keys out of order");
        for (const auto& c : n->children) walk(c.get(), depth + 1, false);
    };
    walk(root, 0, true);

    if (seen_entries != entry_count_) throw std::logic_error("entry count mismatch");
    auto keys = all_keys_in_order();
    if (!std::is_sorted(keys.begin(), keys.end()))
        throw std::logic_error("leaf-level key order violated");
}

// --- serialized node layout ----------------------------------------------
// Key section plaintext (system key):
//   [u8 flags][invariable keys]
//   internal: [u32 child_count][u32 child numbers...]
//   leaf:     [u8 ind_width][per-slot individual codes, ind_width bits]
// Leaf partition plaintext (individual key), factor ids in slot order so
// the key association survives. Two codings, the writer picks the smaller:
//   mode 0: [u8 w][u32 min][fids - min, w bits each]        (invariable)
//   mode 1: [u8 k][u32 first][zigzag deltas, Rice k]        (near-sorted ids)
// The entry count is not stored: it is implied by the key section.

namespace {

uint64_t pow_u64(uint64_t base, unsigned exp) {
    uint64_t out = 1;
    while (exp--) out *= base;
    return out;
}

/// Base-K packing of individual codes: as many codes per group as fit in
/// 63 bits. Returns (codes per group, bits per group); K == 1 needs none.
std::pair<unsigned, uint32_t> ind_pack_params(uint64_t k) {
    if (k <= 1) return {8, 0};
    unsigned group = std::min<unsigned>(8, std::max<uint32_t>(1, 63 / bits_for(k - 1)));
    return {group, bits_for(pow_u64(k, group) - 1)};
}

uint64_t zigzag(int64_t v) { return (static_cast<uint64_t>(v) << 1) ^ (v >> 63); }
int64_t unzigzag(uint64_t v) { return static_cast<int64_t>(v >> 1) ^ -static_cast<int64_t>(v & 1); }

std::vector<uint8_t> encode_partition(const std::vector<uint32_t>& fids) {
    uint32_t mn = UINT32_MAX, mx = 0;
    for (uint32_t v : fids) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    const uint32_t w = bits_for(mx - mn);
    const uint64_t flat_bits = static_cast<uint64_t>(w) * fids.size();

    uint64_t max_zz = 0;
    for (size_t i = 1; i < fids.size(); ++i) {
        int64_t d = static_cast<int64_t>(fids[i]) - static_cast<int64_t>(fids[i - 1]);
        max_zz = std::max(max_zz, zigzag(d));
    }
    const uint32_t w_esc = bits_for(max_zz);
    uint32_t best_k = 0;
    uint64_t delta_bits = UINT64_MAX;
    for (uint32_t k = 0; k <= 24; ++k) {
        uint64_t cost = 0;
        for (size_t i = 1; i < fids.size(); ++i) {
            int64_t d = static_cast<int64_t>(fids[i]) - static_cast<int64_t>(fids[i - 1]);
            cost += BitWriter::rice_cost(zigzag(d), k, w_esc);
        }
        if (cost < delta_bits) {
            delta_bits = cost;
            best_k = k;
        }
    }
    delta_bits += 8;  // the extra escape-width header byte

    ByteWriter out;
    BitWriter bits;
    if (flat_bits <= delta_bits) {
        const uint32_t w_base = bits_for(mn);
        out.u8(0x00 | static_cast<uint8_t>(w << 1));
        out.u8(static_cast<uint8_t>(w_base));
        bits.put(mn, w_base);
        for (uint32_t v : fids) bits.put(v - mn, w);
    } else {
        const uint32_t w_base = bits_for(fids.front());
        out.u8(0x01 | static_cast<uint8_t>(best_k << 1));
        out.u8(static_cast<uint8_t>(w_base));
        out.u8(static_cast<uint8_t>(w_esc));
        bits.put(fids.front(), w_base);
        for (size_t i = 1; i < fids.size(); ++i) {
            int64_t d = static_cast<int64_t>(fids[i]) - static_cast<int64_t>(fids[i - 1]);
            bits.put_rice(zigzag(d), best_k, w_esc);
        }
    }
    out.bytes(bits.data());
    return out.take();
}

std::vector<uint32_t> decode_partition(const std::vector<uint8_t>& payload, uint32_t count) {
    if (payload.size() < 2) throw CorruptionError("partition truncated");
    const uint8_t head = payload[0];
    const uint32_t w_base = payload[1];
    const uint32_t param = head >> 1;
    const bool delta_mode = head & 1;
    if (param > 32 || w_base > 32 || count > (1u << 28))
        throw CorruptionError("partition header implausible");
    size_t offset = 2;
    uint32_t w_esc = 0;
    if (delta_mode) {
        if (payload.size() < 3) throw CorruptionError("partition truncated");
        w_esc = payload[2];
        if (w_esc > 34) throw CorruptionError("partition escape width implausible");
        offset = 3;
    }
    BitReader bits(payload.data() + offset, payload.size() - offset);
    const uint64_t base = bits.get(w_base);
    std::vector<uint32_t> fids;
    fids.reserve(count);
    if (!delta_mode) {
        for (uint32_t i = 0; i < count; ++i)
            fids.push_back(static_cast<uint32_t>(base + bits.get(param)));
    } else {
        int64_t cur = static_cast<int64_t>(base);
        fids.push_back(static_cast<uint32_t>(cur));
        for (uint32_t i = 1; i < count; ++i) {
            cur += unzigzag(bits.get_rice(param, w_esc));
            if (cur < 0 || cur > UINT32_MAX) throw CorruptionError("partition delta implausible");
            fids.push_back(static_cast<uint32_t>(cur));
        }
    }
    return fids;
}

}  // namespace

std::vector<uint8_t> BPlusTree::save(uint64_t base_nonce, const SymmetricKey& system_key,
                                     const std::vector<SymmetricKey>& individual_keys,
                                     NonceLedger& ledger) const {
    const auto& leaves = impl_->leaves();

    // Node numbering: leaves first, consecutive left-to-right, then index
    // nodes in a post-order walk.
    std::map<const Node*, uint32_t> number;
    for (size_t i = 0; i < leaves.size(); ++i) number[leaves[i]] = static_cast<uint32_t>(i);
    uint32_t next_number = static_cast<uint32_t>(leaves.size());
    std::function<void(const Node*)> assign = [&](const Node* n) {
        if (n->leaf) return;
        for (const auto& c : n->children) assign(c.get());
        number[n] = next_number++;
    };
    assign(impl_->root.get());
    const uint32_t node_count = next_number;
    if (node_count >= kMaxTreeNodes)
        throw CryptoError("tree exceeds the nonce window: refusing to save " +
                          std::to_string(node_count) + " nodes");

    const uint64_t ind_count = std::max<size_t>(1, individual_keys.size());

    auto serialize_node = [&](const Node* n) {
        const uint64_t nonce = base_nonce + number.at(n) + 1;

        ByteWriter keysec;
        keysec.u8(n->leaf ? 1 : 0);
        // Leaves collapse duplicate keys: the invariable-coded list holds
        // distinct keys plus a sparse list of the slots that repeat their
        // left neighbor.
        std::vector<uint64_t> keys;
        std::vector<uint32_t> repeats;
        if (n->leaf) {
            for (size_t i = 0; i < n->slots.size(); ++i) {
                if (i > 0 && n->slots[i].key == n->slots[i - 1].key)
                    repeats.push_back(static_cast<uint32_t>(i));
                else
                    keys.push_back(n->slots[i].key);
            }
        } else {
            keys = n->keys;
        }
        if (keys.empty()) {
            keysec.u8(0);  // empty-tree root leaf
        } else {
            keysec.u8(1);
            auto coded = encode_node_invariable(keys);
            keysec.u32(static_cast<uint32_t>(coded.size()));
            keysec.bytes(coded);
        }
        if (n->leaf) {
            keysec.u16(static_cast<uint16_t>(repeats.size()));
            const uint32_t w_slot = bits_for(n->slots.empty() ? 0 : n->slots.size() - 1);
            BitWriter bits;
            for (uint32_t r : repeats) bits.put(r, w_slot);
            keysec.bytes(bits.data());
        }
        if (!n->leaf) {
            keysec.u32(static_cast<uint32_t>(n->children.size()));
            for (const auto& c : n->children) keysec.u32(number.at(c.get()));
        } else {
            // Individual codes are packed base-K in groups, which stays
            // within half a bit of the entropy for any population size.
            BitWriter bits;
            const auto [group, group_bits] = ind_pack_params(ind_count);
            for (size_t i = 0; i < n->slots.size(); i += group) {
                uint64_t packed = 0;
                for (size_t j = std::min(n->slots.size(), i + group); j-- > i;)
                    packed = packed * ind_count + n->slots[j].ind_slot;
                bits.put(packed, group_bits);
            }
            keysec.bytes(bits.data());  // length implied by the slot count
        }

        ByteWriter node_out;
        {
            EncryptionContext ec(system_key, nonce, &ledger);
            auto cipher = ec.apply_copy(keysec.data());
            node_out.u32(static_cast<uint32_t>(cipher.size()));
            node_out.bytes(cipher);
        }
        if (n->leaf) {
            // One partition per individual present, ascending slot; factor
            // ids kept in leaf-slot order so the key association survives.
            std::map<uint32_t, std::vector<uint32_t>> parts;
            for (const Slot& s : n->slots) parts[s.ind_slot].push_back(s.factor_id);
            // Partition owners are implicit: the distinct individuals of
            // this leaf in ascending order, recoverable from the slot codes.
            node_out.u16(static_cast<uint16_t>(parts.size()));
            for (const auto& [slot, fids] : parts) {
                auto plain = encode_partition(fids);
                if (plain.size() > UINT16_MAX) throw std::length_error("partition too large");
                EncryptionContext ec(individual_keys.at(slot), nonce, &ledger);
                auto cipher = ec.apply_copy(plain);
                node_out.u16(static_cast<uint16_t>(cipher.size()));
                node_out.bytes(cipher);
            }
        }
        return node_out.take();
    };

    std::vector<std::vector<uint8_t>> node_bytes(node_count);
    for (const auto& [node, num] : number) node_bytes[num] = serialize_node(node);

    // Directory: node offsets relative to the tree section start.
    const uint64_t dir_plain_size = 12 + 12ull * node_count;
    ByteWriter dir;
    dir.u32(node_count);
    dir.u32(number.at(impl_->root.get()));
    dir.u32(leaves.empty() ? 0 : static_cast<uint32_t>(leaves.size() - 1));
    uint64_t offset = 4 + dir_plain_size;
    for (const auto& nb : node_bytes) {
        dir.u64(offset);
        dir.u32(static_cast<uint32_t>(nb.size()));
        offset += nb.size();
    }

    ByteWriter out;
    {
        EncryptionContext ec(system_key, base_nonce, &ledger);
        auto cipher = ec.apply_copy(dir.data());
        out.u32(static_cast<uint32_t>(cipher.size()));
        out.bytes(cipher);
    }
    for (const auto& nb : node_bytes) out.bytes(nb);
    return out.take();
}

// --- reader ----------------------------------------------------------------

EncryptedTreeReader::EncryptedTreeReader(std::shared_ptr<const FileSlice> file,
                                         uint64_t section_offset, uint64_t base_nonce,
                                         SymmetricKey system_key,
                                         std::vector<std::optional<SymmetricKey>> individual_keys,
                                         size_t cache_budget_bytes)
    : file_(std::move(file)),
      section_offset_(section_offset),
      base_nonce_(base_nonce),
      system_key_(system_key),
      individual_keys_(std::move(individual_keys)),
      cache_budget_(cache_budget_bytes) {
    auto len_raw = file_->read(section_offset_, 4);
    ByteReader lr(len_raw);
    const uint32_t dir_len = lr.u32();
    auto dir_cipher = file_->read(section_offset_ + 4, dir_len);
    EncryptionContext ec(system_key_, base_nonce_);
    ec.apply(dir_cipher.data(), dir_cipher.size());

    ByteReader dir(dir_cipher);
    const uint32_t node_count = dir.u32();
    root_ = dir.u32();
    last_leaf_ = dir.u32();
    if (node_count == 0 || root_ >= node_count)
        throw CorruptionError("tree directory implausible");
    nodes_.resize(node_count);
    for (uint32_t i = 0; i < node_count; ++i) {
        nodes_[i].offset = dir.u64();
        nodes_[i].length = dir.u32();
    }
}

std::shared_ptr<const EncryptedTreeReader::DecodedNode> EncryptedTreeReader::node(
    uint32_t num) const {
    {
        std::lock_guard lock(mtx_);
        auto it = cache_.find(num);
        if (it != cache_.end()) return it->second;
    }
    if (num >= nodes_.size()) throw CorruptionError("node number out of range");
    auto raw = file_->read(section_offset_ + nodes_[num].offset, nodes_[num].length);
    ByteReader in(raw);

    auto decoded = std::make_shared<DecodedNode>();
    const uint64_t nonce = base_nonce_ + num + 1;
    {
        auto cipher = in.bytes(in.u32());
        EncryptionContext ec(system_key_, nonce);
        ec.apply(cipher.data(), cipher.size());
        ByteReader ks(cipher);
        decoded->leaf = ks.u8() == 1;
        std::vector<uint64_t> distinct;
        if (ks.u8() == 1) {
            auto coded = ks.bytes(ks.u32());
            distinct = decode_node_invariable(coded);
        }
        if (!decoded->leaf) {
            decoded->keys = std::move(distinct);
        } else {
            const uint32_t repeat_count = ks.u16();
            const uint32_t slot_count = static_cast<uint32_t>(distinct.size()) + repeat_count;
            const uint32_t w_slot = bits_for(slot_count ? slot_count - 1 : 0);
            auto packed = ks.bytes((static_cast<size_t>(repeat_count) * w_slot + 7) / 8);
            BitReader bits(packed.data(), packed.size());
            std::vector<bool> is_repeat(slot_count, false);
            for (uint32_t r = 0; r < repeat_count; ++r) {
                uint32_t pos = static_cast<uint32_t>(bits.get(w_slot));
                if (pos == 0 || pos >= slot_count || is_repeat[pos])
                    throw CorruptionError("leaf repeat slot implausible");
                is_repeat[pos] = true;
            }
            decoded->keys.reserve(slot_count);
            size_t next = 0;
            for (uint32_t i = 0; i < slot_count; ++i) {
                if (!is_repeat[i]) {
                    if (next >= distinct.size())
                        throw CorruptionError("leaf key expansion overruns");
                    decoded->keys.push_back(distinct[next++]);
                } else {
                    decoded->keys.push_back(decoded->keys.back());
                }
            }
        }
        if (!decoded->leaf) {
            uint32_t child_count = ks.u32();
            if (child_count != decoded->keys.size() + 1)
                throw CorruptionError("internal node child count mismatch");
            for (uint32_t i = 0; i < child_count; ++i) decoded->children.push_back(ks.u32());
        } else {
            const uint64_t ind_count = std::max<size_t>(1, individual_keys_.size());
            const auto [group, group_bits] = ind_pack_params(ind_count);
            const size_t groups = (decoded->keys.size() + group - 1) / group;
            auto packed = ks.bytes((groups * group_bits + 7) / 8);
            BitReader bits(packed.data(), packed.size());
            decoded->ind_slots.reserve(decoded->keys.size());
            for (size_t g = 0; g < groups; ++g) {
                uint64_t v = bits.get(group_bits);
                for (size_t j = 0;
                     j < group && decoded->ind_slots.size() < decoded->keys.size(); ++j) {
                    decoded->ind_slots.push_back(static_cast<uint32_t>(v % ind_count));
                    v /= ind_count;
                }
            }
        }
    }
    if (decoded->leaf) {
        decoded->fids.assign(decoded->keys.size(), UINT32_MAX);
        uint16_t part_count = in.u16();
        std::map<uint32_t, size_t> present;  // slot -> entry count, ascending
        for (uint32_t s : decoded->ind_slots) ++present[s];
        if (part_count != present.size())
            throw CorruptionError("leaf partition count disagrees with slot codes");
        size_t local_skips = 0;
        std::map<uint32_t, std::vector<uint32_t>> parts;
        for (const auto& [slot, expect_count] : present) {
            auto cipher = in.bytes(in.u16());
            size_t expect = expect_count;
            if (slot >= individual_keys_.size() || !individual_keys_[slot]) {
                ++local_skips;
                continue;
            }
            EncryptionContext ec(*individual_keys_[slot], nonce);
            ec.apply(cipher.data(), cipher.size());
            try {
                parts.emplace(slot, decode_partition(cipher, static_cast<uint32_t>(expect)));
            } catch (const std::exception&) {
                ++local_skips;  // undecodable partition: skip, keep others
            }
        }
        std::map<uint32_t, size_t> cursor;
        for (size_t i = 0; i < decoded->ind_slots.size(); ++i) {
            auto it = parts.find(decoded->ind_slots[i]);
            if (it != parts.end()) decoded->fids[i] = it->second[cursor[decoded->ind_slots[i]]++];
        }
        if (local_skips) {
            std::lock_guard lock(mtx_);
            skipped_partitions_ += local_skips;
        }
    }
    decoded->bytes = raw.size() + decoded->keys.size() * 16 + 64;

    std::lock_guard lock(mtx_);
    auto it = cache_.find(num);
    if (it != cache_.end()) return it->second;  // lost a benign decode race
    if (cache_bytes_ + decoded->bytes > cache_budget_) {  // coarse eviction
        cache_.clear();
        cache_bytes_ = 0;
    }
    cache_.emplace(num, decoded);
    cache_bytes_ += decoded->bytes;
    return decoded;
}

size_t EncryptedTreeReader::skipped_partitions() const {
    std::lock_guard lock(mtx_);
    return skipped_partitions_;
}

std::optional<uint32_t> EncryptedTreeReader::search_for_leaf(uint64_t value) const {
    auto n = node(root_);
    if (n->leaf && n->keys.empty()) return std::nullopt;
    uint32_t num = root_;
    while (!n->leaf) {
        size_t i = std::lower_bound(n->keys.begin(), n->keys.end(), value) - n->keys.begin();
        num = n->children[i];
        n = node(num);
    }
    return num;
}

RangeResult EncryptedTreeReader::factors_in_range(int64_t lo, int64_t hi) const {
    RangeResult out;
    if (lo > hi || hi < 0) return out;
    const uint64_t l = lo < 0 ? 0 : static_cast<uint64_t>(lo);
    const uint64_t u = static_cast<uint64_t>(hi);

    auto start = search_for_leaf(l);
    if (!start) return out;
    uint32_t cur = *start;
    auto leaf = node(cur);
    size_t i = std::lower_bound(leaf->keys.begin(), leaf->keys.end(), l) - leaf->keys.begin();
    while (true) {
        if (i >= leaf->keys.size()) {
            if (cur == last_leaf_) break;
            leaf = node(++cur);  // leaves sit in consecutive positions
            i = 0;
            continue;
        }
        if (leaf->keys[i] > u) break;
        if (leaf->fids[i] != UINT32_MAX) out[leaf->ind_slots[i]].push_back(leaf->fids[i]);
        ++i;
    }
    return out;
}

}  // namespace erindex
