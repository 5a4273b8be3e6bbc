#include "erindex/erindex.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <tuple>

#include "erindex/byte_io.hpp"
#include "erindex/errors.hpp"

namespace erindex {

namespace {
constexpr char kErixMagic[4] = {'E', 'R', 'I', 'X'};
constexpr uint16_t kErixVersion = 1;
constexpr uint64_t kMaxBlocksPerIndividual = 9'999'999;  // keeps block nonces below tree windows
}  // namespace

// --- per-query factor text cache ------------------------------------------

class LocateEngine::FactorTextCache {
public:
    FactorTextCache(const SearchBackend& b, const FmIndex& fm_rev) : b_(b), rev_(fm_rev) {}

    const Factor& factor(uint32_t slot, uint64_t fid) { return entry(slot, fid).f; }

    char at(uint32_t slot, uint64_t fid, uint32_t off) {
        Entry& e = entry(slot, fid);
        if (off >= e.f.len) throw std::out_of_range("offset beyond factor length");
        if (off == e.f.len - 1) return e.f.mc;
        while (e.text.size() <= off) {
            uint8_t code = rev_.bwt_code(e.row);
            if (code == 0) throw CorruptionError("factor walk past the reference start");
            e.text.push_back(rev_.unmap(code));
            e.row = rev_.lf(e.row);
        }
        return e.text[off];
    }

private:
    struct Entry {
        Factor f;
        std::string text;
        uint64_t row = 0;
    };
    Entry& entry(uint32_t slot, uint64_t fid) {
        auto key = std::make_pair(slot, fid);
        auto it = map_.find(key);
        if (it == map_.end()) {
            Entry e;
            e.f = b_.factor(slot, fid);
            e.row = e.f.sai_rev_start;
            it = map_.emplace(key, std::move(e)).first;
        }
        return it->second;
    }
    const SearchBackend& b_;
    const FmIndex& rev_;
    std::map<std::pair<uint32_t, uint64_t>, Entry> map_;
};

// --- engine ----------------------------------------------------------------

uint64_t LocateEngine::tpf_of(const Factor& f) const {
    // The decode walk starts at the R_rev suffix of position n - tpf.
    return b_.reference_len() - ref_.fm_rev.text_position_of_row(f.sai_rev_start);
}

std::vector<Occurrence> LocateEngine::locate_internal_occs(std::string_view pattern) const {
    std::vector<Occurrence> occs;
    if (pattern.empty()) throw std::invalid_argument("empty pattern");
    auto iv = ref_.fm.backward_search(pattern);
    if (!iv) return occs;

    const int64_t m = static_cast<int64_t>(pattern.size());
    const int64_t lmax = b_.l_max();
    for (uint64_t row = iv->sp; row <= iv->ep; ++row) {
        const int64_t tp = static_cast<int64_t>(ref_.fm.text_position_of_row(row));
        auto cands = b_.tree_range(TreeKind::Pos, tp + m - lmax, tp);
        for (const auto& [slot, fids] : cands) {
            for (uint32_t fid : fids) {
                Factor f = b_.factor(slot, fid);
                if (f.len < 2) continue;
                const int64_t l = f.len - 1;
                const int64_t tpf = static_cast<int64_t>(tpf_of(f));
                // Reference occurrence at tp is an individual occurrence iff
                // the factor's referential part covers [tp, tp+m).
                if (tpf > tp || tpf < tp + m - l) continue;
                Occurrence occ;
                occ.ind_slot = slot;
                occ.fact_ind = fid;
                occ.fact_off = static_cast<uint32_t>(tp - tpf);
                occ.ending_fact_ind = fid;
                occ.ending_fact_off = occ.fact_off + static_cast<uint32_t>(m) - 1;
                occs.push_back(occ);
            }
        }
    }
    return occs;
}

uint32_t LocateEngine::longest_side_suffix_in_ref(std::string_view side) const {
    // Backward scan on the straight index from the last side character.
    uint32_t alive = 0;
    std::optional<SaInterval> iv;
    for (size_t k = 0; k < side.size(); ++k) {
        char c = side[side.size() - 1 - k];
        iv = k == 0 ? ref_.fm.symbol_interval(c) : ref_.fm.extend_backward(*iv, c);
        if (!iv) break;
        ++alive;
    }
    return alive;
}

uint32_t LocateEngine::longest_side_prefix_in_ref(std::string_view side) const {
    // Backward scan on the reverse index from the first side character.
    // Stops at N/non-N transitions like the factorizer does: referential
    // parts are N-homogeneous, so a candidate anchor's key can never match
    // a prefix that crosses such a boundary, and an uncapped prefix would
    // push short boundary factors out of the queried tree interval.
    uint32_t alive = 0;
    std::optional<SaInterval> iv;
    for (size_t k = 0; k < side.size(); ++k) {
        char c = side[k];
        if (k > 0 && (side[k - 1] == 'N') != (c == 'N')) break;
        iv = k == 0 ? ref_.fm_rev.symbol_interval(c) : ref_.fm_rev.extend_backward(*iv, c);
        if (!iv) break;
        ++alive;
    }
    return alive;
}

std::pair<RangeResult, uint32_t> LocateEngine::find_left_side_factors(std::string_view ls) const {
    if (ls.empty()) return {{}, 0};
    uint32_t l = longest_side_suffix_in_ref(ls);
    if (l == 0) return {{}, 0};
    auto lsls = ls.substr(ls.size() - l);
    auto iv = ref_.fm_rev.search_pat_rev(lsls);  // nonempty: lsls occurs in R
    return {b_.tree_range(TreeKind::Reverse, static_cast<int64_t>(iv->sp),
                          static_cast<int64_t>(iv->ep)),
            l};
}

std::pair<RangeResult, uint32_t> LocateEngine::find_right_side_factors(std::string_view rs) const {
    if (rs.empty()) return {{}, 0};
    uint32_t l = longest_side_prefix_in_ref(rs);
    if (l == 0) return {{}, 0};
    auto rslp = rs.substr(0, l);
    auto iv = ref_.fm.backward_search(rslp);
    return {b_.tree_range(TreeKind::Forward, static_cast<int64_t>(iv->sp),
                          static_cast<int64_t>(iv->ep)),
            l};
}

bool LocateEngine::pat_rem_part(std::string_view pattern, uint32_t slot, uint64_t anchor_fid,
                                uint32_t anchor_off, size_t anchor_idx, size_t verified_lo,
                                size_t verified_hi, FactorTextCache& cache,
                                Occurrence& occ) const {
    const size_t m = pattern.size();

    // Walk left to the pattern start, comparing the unverified characters.
    uint64_t f = anchor_fid;
    uint32_t off = anchor_off;
    for (size_t idx = anchor_idx; idx > 0;) {
        --idx;
        if (off > 0) {
            --off;
        } else {
            if (f == 0) return false;  // pattern begins before the sequence
            --f;
            off = cache.factor(slot, f).len - 1;
        }
        if (idx < verified_lo && cache.at(slot, f, off) != pattern[idx]) return false;
    }
    occ.ind_slot = slot;
    occ.fact_ind = f;
    occ.fact_off = off;

    // Walk right to the pattern end.
    f = anchor_fid;
    off = anchor_off;
    const uint64_t fcount = b_.factor_count(slot);
    for (size_t idx = anchor_idx; idx + 1 < m;) {
        ++idx;
        if (off + 1 < cache.factor(slot, f).len) {
            ++off;
        } else {
            if (f + 1 >= fcount) return false;  // pattern runs past the sequence
            ++f;
            off = 0;
        }
        if (idx > verified_hi && cache.at(slot, f, off) != pattern[idx]) return false;
    }
    occ.ending_fact_ind = f;
    occ.ending_fact_off = off;
    return true;
}

std::vector<Occurrence> LocateEngine::locate_external_occs(std::string_view pattern) const {
    std::vector<Occurrence> occs;
    if (pattern.empty()) throw std::invalid_argument("empty pattern");
    const size_t m = pattern.size();
    FactorTextCache cache(b_, ref_.fm_rev);
    std::set<std::tuple<uint32_t, uint64_t, size_t>> tried;  // (slot, anchor, split)

    auto enumerate_mc_anchors = [&](size_t sp) {
        // No tree carries mismatch characters, so the split points that
        // leave no searchable side (pattern lengths 1 and 2) scan factor
        // metadata of the authorized individuals directly.
        const char target = pattern[sp];
        for (uint32_t slot : b_.authorized_slots()) {
            const uint64_t fcount = b_.factor_count(slot);
            for (uint64_t fid = 0; fid < fcount; ++fid) {
                const Factor& f = cache.factor(slot, fid);
                if (f.mc != target) continue;
                Occurrence occ;
                occ.ind_slot = slot;
                if (pat_rem_part(pattern, slot, fid, f.len - 1, sp, sp, sp, cache, occ))
                    occs.push_back(occ);
            }
        }
    };

    for (size_t sp = 0; sp < m; ++sp) {
        const char split_char = pattern[sp];
        if (m == 1) {
            enumerate_mc_anchors(sp);
            continue;
        }
        if (2 * sp > m) {
            // Left side longer: factors expected to end with it are fewer.
            const auto ls = pattern.substr(0, sp);
            auto [cands, lsvl] = find_left_side_factors(ls);
            for (const auto& [slot, fids] : cands) {
                for (uint32_t fid : fids) {
                    const Factor& f = cache.factor(slot, fid);
                    // A left side crossing the factor start is found at a
                    // preceding split point instead.
                    if (static_cast<size_t>(f.len - 1) < ls.size()) continue;
                    if (f.mc != split_char) continue;
                    if (!tried.emplace(slot, fid, sp).second) continue;
                    Occurrence occ;
                    occ.ind_slot = slot;
                    if (pat_rem_part(pattern, slot, fid, f.len - 1, sp, sp - lsvl, sp, cache,
                                     occ))
                        occs.push_back(occ);
                }
            }
        } else {
            const auto rs = pattern.substr(sp + 1);
            if (rs.empty()) {  // only reachable for m == 2, sp == 1
                enumerate_mc_anchors(sp);
                continue;
            }
            auto [cands, rslp] = find_right_side_factors(rs);
            auto try_anchor = [&](uint32_t slot, uint64_t fid, uint32_t rsvl) {
                if (fid == 0) return;  // needs a preceding factor for the split char
                const Factor& pred = cache.factor(slot, fid - 1);
                if (pred.mc != split_char) return;
                if (!tried.emplace(slot, fid, sp).second) return;
                Occurrence occ;
                occ.ind_slot = slot;
                if (pat_rem_part(pattern, slot, fid - 1, pred.len - 1, sp, sp, sp + rsvl,
                                 cache, occ))
                    occs.push_back(occ);
            };
            for (const auto& [slot, fids] : cands) {
                for (uint32_t fid : fids) {
                    const Factor& f = cache.factor(slot, fid);
                    try_anchor(slot, fid, std::min<uint32_t>(rslp, f.len - 1));
                }
            }
            // A final factor cut short by the end of its sequence may start
            // the right side while diverging from R past its referential
            // part; the tree interval cannot surface it, so it is always a
            // candidate (verified from scratch).
            for (uint32_t slot : b_.authorized_slots()) {
                const uint64_t fcount = b_.factor_count(slot);
                if (fcount >= 2) try_anchor(slot, fcount - 1, 0);
            }
        }
    }
    return occs;
}

std::vector<Occurrence> LocateEngine::locate(std::string_view pattern) const {
    auto occs = locate_external_occs(pattern);
    auto internal = locate_internal_occs(pattern);
    occs.insert(occs.end(), internal.begin(), internal.end());

    for (Occurrence& occ : occs) {
        occ.text_position = b_.factor_text_base(occ.ind_slot, occ.fact_ind) + occ.fact_off;
        occ.individual_id = b_.individual_id(occ.ind_slot);
    }
    std::sort(occs.begin(), occs.end(), [](const Occurrence& a, const Occurrence& b) {
        return std::tie(a.ind_slot, a.text_position, a.fact_ind) <
               std::tie(b.ind_slot, b.text_position, b.fact_ind);
    });
    occs.erase(std::unique(occs.begin(), occs.end(),
                           [](const Occurrence& a, const Occurrence& b) {
                               return a.ind_slot == b.ind_slot &&
                                      a.text_position == b.text_position;
                           }),
               occs.end());
    return occs;
}

std::string LocateEngine::extract(uint32_t slot, uint64_t start, uint64_t length) const {
    if (start + length > b_.source_length(slot))
        throw std::out_of_range("extraction out of range");
    std::string out;
    out.reserve(length);
    if (length == 0) return out;

    FactorTextCache cache(b_, ref_.fm_rev);
    auto [fid, off] = b_.factor_covering(slot, start);
    while (out.size() < length) {
        const Factor& f = cache.factor(slot, fid);
        for (uint32_t k = off; k < f.len && out.size() < length; ++k)
            out.push_back(cache.at(slot, fid, k));
        off = 0;
        ++fid;
    }
    return out;
}

// --- in-memory index --------------------------------------------------------

class InMemoryView : public SearchBackend {
public:
    InMemoryView(const ErIndex& idx, std::set<uint32_t> auth)
        : idx_(idx), auth_(std::move(auth)), auth_list_(auth_.begin(), auth_.end()) {}

    uint64_t reference_len() const override { return idx_.ref_->text_len(); }
    uint32_t l_max() const override { return idx_.l_max_; }
    const std::vector<uint32_t>& authorized_slots() const override { return auth_list_; }
    const std::string& individual_id(uint32_t slot) const override { return idx_.ids_.at(slot); }
    uint64_t factor_count(uint32_t slot) const override {
        return idx_.fzs_.at(slot).factor_count();
    }
    uint64_t source_length(uint32_t slot) const override {
        return idx_.fzs_.at(slot).source_length;
    }
    Factor factor(uint32_t slot, uint64_t fid) const override {
        return idx_.fzs_.at(slot).factors.at(fid);
    }
    uint64_t factor_text_base(uint32_t slot, uint64_t fid) const override {
        return idx_.fzs_.at(slot).cum_len.at(fid);
    }
    std::pair<uint64_t, uint32_t> factor_covering(uint32_t slot, uint64_t pos) const override {
        const Factorization& fz = idx_.fzs_.at(slot);
        uint64_t fid = fz.factor_covering(pos);
        return {fid, static_cast<uint32_t>(pos - fz.cum_len[fid])};
    }
    RangeResult tree_range(TreeKind kind, int64_t lo, int64_t hi) const override {
        const BPlusTree& t = kind == TreeKind::Reverse  ? idx_.reverse_tree_
                             : kind == TreeKind::Forward ? idx_.forward_tree_
                                                         : idx_.pos_tree_;
        return t.factors_in_range(lo, hi, &auth_);
    }

private:
    const ErIndex& idx_;
    std::set<uint32_t> auth_;
    std::vector<uint32_t> auth_list_;
};

ErIndex ErIndex::build(const std::vector<Sequence>& collection,
                       std::shared_ptr<const ReferencePack> ref, std::string reference_id,
                       const std::map<std::string, SymmetricKey>& individual_keys,
                       uint32_t block_size, unsigned workers, uint32_t tree_order) {
    if (collection.empty()) throw std::invalid_argument("empty collection");
    if (!ref) throw std::invalid_argument("missing reference pack");

    ErIndex idx;
    idx.ref_ = std::move(ref);
    idx.reference_id_ = std::move(reference_id);
    idx.block_size_ = block_size;

    std::set<std::string> seen;
    for (const Sequence& s : collection) {
        if (!seen.insert(s.id).second)
            throw std::invalid_argument("duplicate individual id: " + s.id);
        auto it = individual_keys.find(s.id);
        if (it == individual_keys.end())
            throw std::invalid_argument("missing key for individual: " + s.id);
        idx.ids_.push_back(s.id);
        idx.keys_.push_back(it->second);
    }

    idx.fzs_ = factorize_parallel(collection, *idx.ref_, block_size, std::max(1u, workers));

    uint32_t lmax = 0;
    for (const Factorization& fz : idx.fzs_) {
        lmax = std::max(lmax, fz.l_max);
        if (fz.factor_count() >= UINT32_MAX)
            throw std::length_error("factor count exceeds the index format");
    }
    idx.l_max_ = lmax;

    // Trees are filled in globally sorted entry order, so rebuilds (and any
    // factorization worker count) produce byte-identical indexes.
    struct Entry {
        uint64_t key;
        uint32_t slot;
        uint32_t fid;
    };
    std::vector<Entry> rev, fwd, pos;
    for (uint32_t slot = 0; slot < idx.fzs_.size(); ++slot) {
        const Factorization& fz = idx.fzs_[slot];
        for (size_t fid = 0; fid < fz.factor_count(); ++fid) {
            if (fz.factors[fid].len < 2) continue;  // mismatch-only: no tree entries
            const FactorKeys& k = fz.keys[fid];
            rev.push_back({k.sai_rev, slot, static_cast<uint32_t>(fid)});
            fwd.push_back({k.sai, slot, static_cast<uint32_t>(fid)});
            pos.push_back({k.tp, slot, static_cast<uint32_t>(fid)});
        }
    }
    if (tree_order == kAdaptiveTreeOrder) {
        // Size leaves so the leaf key span stays near 4096 rows: denser key
        // sets (larger collections) earn larger leaves at the same coded
        // key width.
        uint64_t slots = 4096ull * std::max<size_t>(1, rev.size()) / (idx.ref_->text_len() + 1);
        tree_order = static_cast<uint32_t>(std::clamp<uint64_t>(slots / 2, 48, 512));
    }
    idx.reverse_tree_ = BPlusTree(tree_order);
    idx.forward_tree_ = BPlusTree(tree_order);
    idx.pos_tree_ = BPlusTree(tree_order);

    auto fill = [](BPlusTree& tree, std::vector<Entry>& entries) {
        std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
            return std::tie(a.key, a.slot, a.fid) < std::tie(b.key, b.slot, b.fid);
        });
        for (const Entry& e : entries) tree.insert(e.key, e.slot, e.fid);
    };
    fill(idx.reverse_tree_, rev);
    fill(idx.forward_tree_, fwd);
    fill(idx.pos_tree_, pos);
    return idx;
}

std::vector<Occurrence> ErIndex::locate(std::string_view pattern,
                                        const KeyPortfolio& portfolio) const {
    std::set<uint32_t> auth;
    for (uint32_t slot = 0; slot < ids_.size(); ++slot)
        if (portfolio.has(ids_[slot])) auth.insert(slot);
    InMemoryView view(*this, std::move(auth));
    return LocateEngine(view, *ref_).locate(pattern);
}

std::string ErIndex::extract_text(const std::string& individual_id, uint64_t start,
                                  uint64_t length) const {
    for (uint32_t slot = 0; slot < ids_.size(); ++slot)
        if (ids_[slot] == individual_id)
            return erindex::extract_text(fzs_[slot], ref_->fm_rev, start, length);
    throw std::invalid_argument("unknown individual: " + individual_id);
}

void ErIndex::save(const std::filesystem::path& path, const KeyPortfolio& portfolio,
                   NonceLedger* ledger_out) const {
    NonceLedger ledger;

    for (uint32_t slot = 0; slot < ids_.size(); ++slot) {
        if (portfolio.key_of(ids_[slot]) != keys_[slot])
            throw CryptoError("portfolio key for '" + ids_[slot] +
                              "' does not match the index build key");
    }

    // Factorization sections: header under (k_i, 0), blocks under (k_i, b+1).
    std::vector<std::vector<uint8_t>> fz_sections(ids_.size());
    for (uint32_t slot = 0; slot < ids_.size(); ++slot) {
        const Factorization& fz = fzs_[slot];
        const uint64_t nblocks = fz.block_count();
        if (nblocks > kMaxBlocksPerIndividual)
            throw CryptoError("factorization exceeds the block nonce window");

        std::vector<std::vector<uint8_t>> blocks(nblocks);
        ByteWriter hdr;
        hdr.u64(fz.source_length);
        hdr.u64(fz.factor_count());
        hdr.u32(block_size_);
        hdr.u32(static_cast<uint32_t>(nblocks));
        for (uint64_t b = 0; b < nblocks; ++b) {
            const size_t from = b * block_size_;
            const size_t count = std::min<size_t>(block_size_, fz.factor_count() - from);
            blocks[b] = encode_factor_block(
                std::span<const Factor>(fz.factors.data() + from, count));
            EncryptionContext ec(keys_[slot], b + 1, &ledger);
            ec.apply(blocks[b].data(), blocks[b].size());
            hdr.u32(static_cast<uint32_t>(blocks[b].size()));
            hdr.u64(fz.cum_len[from]);
        }

        ByteWriter section;
        {
            EncryptionContext ec(keys_[slot], 0, &ledger);
            auto cipher = ec.apply_copy(hdr.data());
            section.u32(static_cast<uint32_t>(cipher.size()));
            section.bytes(cipher);
        }
        for (const auto& b : blocks) {
            section.u32(static_cast<uint32_t>(b.size()));
            section.bytes(b);
        }
        fz_sections[slot] = section.take();
    }

    const auto rev_bytes = reverse_tree_.save(kReverseTreeNonce, portfolio.system_key, keys_, ledger);
    const auto fwd_bytes = forward_tree_.save(kForwardTreeNonce, portfolio.system_key, keys_, ledger);
    const auto pos_bytes = pos_tree_.save(kPosTreeNonce, portfolio.system_key, keys_, ledger);

    auto write_header = [&](ByteWriter& out, const std::vector<uint64_t>& fz_offsets,
                            uint64_t rev_off, uint64_t fwd_off, uint64_t pos_off) {
        out.str(reference_id_);
        out.u64(ref_->text_len());
        out.u32(block_size_);
        out.u32(l_max_);
        out.u32(static_cast<uint32_t>(ids_.size()));
        for (uint32_t slot = 0; slot < ids_.size(); ++slot) {
            out.str(ids_[slot]);
            out.u64(fz_offsets[slot]);
            out.u64(fz_sections[slot].size());
            out.u64(fzs_[slot].source_length);
            out.u64(fzs_[slot].factor_count());
        }
        out.u64(rev_off);
        out.u64(rev_bytes.size());
        out.u64(fwd_off);
        out.u64(fwd_bytes.size());
        out.u64(pos_off);
        out.u64(pos_bytes.size());
    };

    // Header size depends only on the id strings; size a dummy first.
    ByteWriter dummy;
    write_header(dummy, std::vector<uint64_t>(ids_.size(), 0), 0, 0, 0);
    const uint64_t header_plain_len = dummy.size();
    uint64_t cursor = 6 + 4 + header_plain_len;  // magic + version + length prefix + cipher

    std::vector<uint64_t> fz_offsets(ids_.size());
    for (uint32_t slot = 0; slot < ids_.size(); ++slot) {
        fz_offsets[slot] = cursor;
        cursor += fz_sections[slot].size();
    }
    const uint64_t rev_off = cursor;
    cursor += rev_bytes.size();
    const uint64_t fwd_off = cursor;
    cursor += fwd_bytes.size();
    const uint64_t pos_off = cursor;

    ByteWriter header;
    write_header(header, fz_offsets, rev_off, fwd_off, pos_off);
    std::vector<uint8_t> header_cipher;
    {
        EncryptionContext ec(portfolio.system_key, 0, &ledger);
        header_cipher = ec.apply_copy(header.data());
    }

    ByteWriter out;
    out.bytes(kErixMagic, 4);
    out.u16(kErixVersion);
    out.u32(static_cast<uint32_t>(header_cipher.size()));
    out.bytes(header_cipher);
    for (const auto& s : fz_sections) out.bytes(s);
    out.bytes(rev_bytes);
    out.bytes(fwd_bytes);
    out.bytes(pos_bytes);
    auto digest = sha256(header_cipher);
    out.bytes(digest.data(), digest.size());

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot write index file: " + path.string());
    f.write(reinterpret_cast<const char*>(out.data().data()),
            static_cast<std::streamsize>(out.size()));
    if (!f) throw FormatError("short write: " + path.string());

    if (ledger_out) *ledger_out = std::move(ledger);
}

// --- opened (lazy) index -----------------------------------------------------

namespace {

class StdFileSlice : public FileSlice {
public:
    explicit StdFileSlice(const std::filesystem::path& path)
        : in_(path, std::ios::binary), path_(path.string()) {
        if (!in_) throw FormatError("cannot open index file: " + path_);
    }
    std::vector<uint8_t> read(uint64_t offset, uint64_t length) const override {
        std::lock_guard lock(mtx_);
        in_.clear();
        in_.seekg(static_cast<std::streamoff>(offset));
        std::vector<uint8_t> buf(length);
        in_.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(length));
        if (static_cast<uint64_t>(in_.gcount()) != length)
            throw CorruptionError("short read from " + path_);
        return buf;
    }

private:
    mutable std::ifstream in_;
    mutable std::mutex mtx_;
    std::string path_;
};

}  // namespace

std::unique_ptr<OpenedErIndex> OpenedErIndex::open(const std::filesystem::path& path,
                                                   const KeyPortfolio& portfolio,
                                                   std::shared_ptr<const ReferencePack> ref,
                                                   size_t cache_budget) {
    auto idx = std::unique_ptr<OpenedErIndex>(new OpenedErIndex());
    idx->ref_ = std::move(ref);
    idx->cache_budget_ = cache_budget;
    const uint64_t file_size = std::filesystem::file_size(path);
    auto file = std::make_shared<StdFileSlice>(path);
    idx->file_ = file;

    auto prefix = file->read(0, 10);
    ByteReader pr(prefix);
    char magic[4];
    pr.bytes(magic, 4);
    if (std::memcmp(magic, kErixMagic, 4) != 0)
        throw FormatError("not an ER-index file: " + path.string());
    if (pr.u16() != kErixVersion) throw FormatError("unsupported ER-index version");
    const uint32_t header_len = pr.u32();

    auto header_cipher = file->read(10, header_len);
    auto trailer = file->read(file_size - 32, 32);
    auto digest = sha256(header_cipher);
    if (std::memcmp(digest.data(), trailer.data(), 32) != 0)
        throw CorruptionError("corrupt header checksum: " + path.string());

    {
        EncryptionContext ec(portfolio.system_key, 0);
        ec.apply(header_cipher.data(), header_cipher.size());
    }
    ByteReader hr(header_cipher);
    idx->reference_id_ = hr.str();
    const uint64_t ref_len = hr.u64();
    if (idx->ref_ && idx->ref_->text_len() != ref_len)
        throw FormatError("reference length mismatch: index was built against another reference");
    idx->block_size_ = hr.u32();
    idx->l_max_ = hr.u32();
    const uint32_t ind_count = hr.u32();
    for (uint32_t slot = 0; slot < ind_count; ++slot) {
        idx->ids_.push_back(hr.str());
        SlotSection sec;
        sec.offset = hr.u64();
        sec.length = hr.u64();
        sec.source_length = hr.u64();
        sec.factor_count = hr.u64();
        idx->sections_.push_back(sec);
        const std::string& id = idx->ids_.back();
        if (portfolio.has(id)) {
            idx->keys_.push_back(portfolio.individual_keys.at(id));
            idx->authorized_.push_back(slot);
        } else {
            idx->keys_.push_back(std::nullopt);
        }
    }
    struct TreeMeta {
        uint64_t off, len;
    } tm[3];
    for (auto& t : tm) {
        t.off = hr.u64();
        t.len = hr.u64();
    }

    idx->sizes_.file = file_size;
    idx->sizes_.reverse_tree = tm[0].len;
    idx->sizes_.forward_tree = tm[1].len;
    idx->sizes_.pos_tree = tm[2].len;
    for (const auto& s : idx->sections_) idx->sizes_.factorizations += s.length;
    idx->sizes_.header = file_size - idx->sizes_.factorizations - tm[0].len - tm[1].len - tm[2].len;

    const size_t tree_budget = cache_budget / 8;
    idx->reverse_tree_ = std::make_unique<EncryptedTreeReader>(
        idx->file_, tm[0].off, kReverseTreeNonce, portfolio.system_key, idx->keys_, tree_budget);
    idx->forward_tree_ = std::make_unique<EncryptedTreeReader>(
        idx->file_, tm[1].off, kForwardTreeNonce, portfolio.system_key, idx->keys_, tree_budget);
    idx->pos_tree_ = std::make_unique<EncryptedTreeReader>(
        idx->file_, tm[2].off, kPosTreeNonce, portfolio.system_key, idx->keys_, tree_budget);

    idx->fz_meta_.resize(ind_count);
    return idx;
}

const SymmetricKey& OpenedErIndex::slot_key(uint32_t slot) const {
    const auto& k = keys_.at(slot);
    if (!k) throw CryptoError("not authorized for individual '" + ids_.at(slot) + "'");
    return *k;
}

const OpenedErIndex::FzMeta& OpenedErIndex::fz_meta(uint32_t slot) const {
    {
        std::lock_guard lock(mtx_);
        if (fz_meta_.at(slot)) return *fz_meta_[slot];
    }
    const SlotSection& sec = sections_.at(slot);
    auto len_raw = file_->read(sec.offset, 4);
    ByteReader lr(len_raw);
    const uint32_t hdr_len = lr.u32();
    auto hdr = file_->read(sec.offset + 4, hdr_len);
    {
        EncryptionContext ec(slot_key(slot), 0);
        ec.apply(hdr.data(), hdr.size());
    }
    ByteReader in(hdr);
    FzMeta meta;
    meta.source_length = in.u64();
    meta.factor_count = in.u64();
    const uint32_t bs = in.u32();
    const uint32_t nblocks = in.u32();
    if (bs != block_size_ || meta.source_length != sec.source_length ||
        meta.factor_count != sec.factor_count)
        throw CorruptionError("factorization header disagrees with the index header");
    uint64_t cursor = sec.offset + 4 + hdr_len;
    meta.blocks.resize(nblocks);
    for (uint32_t b = 0; b < nblocks; ++b) {
        meta.blocks[b].cipher_len = in.u32();
        meta.blocks[b].text_base = in.u64();
        meta.blocks[b].offset = cursor + 4;  // past the segment length prefix
        cursor += 4ull + meta.blocks[b].cipher_len;
    }
    if (cursor != sec.offset + sec.length)
        throw CorruptionError("factorization section size mismatch");

    std::lock_guard lock(mtx_);
    if (!fz_meta_[slot]) fz_meta_[slot] = std::move(meta);
    return *fz_meta_[slot];
}

std::shared_ptr<const OpenedErIndex::DecodedBlock> OpenedErIndex::block(uint32_t slot,
                                                                        uint64_t block_no) const {
    auto key = std::make_pair(slot, block_no);
    {
        std::lock_guard lock(mtx_);
        auto it = blocks_.find(key);
        if (it != blocks_.end()) return it->second;
    }
    const FzMeta& meta = fz_meta(slot);
    const BlockMeta& bm = meta.blocks.at(block_no);
    auto cipher = file_->read(bm.offset, bm.cipher_len);
    EncryptionContext ec(slot_key(slot), block_no + 1);
    ec.apply(cipher.data(), cipher.size());

    auto decoded = std::make_shared<DecodedBlock>();
    decoded->factors = decode_factor_block(cipher);
    decoded->cum.resize(decoded->factors.size() + 1);
    uint64_t acc = 0;
    for (size_t i = 0; i < decoded->factors.size(); ++i) {
        decoded->cum[i] = acc;
        acc += decoded->factors[i].len;
    }
    decoded->cum.back() = acc;

    std::lock_guard lock(mtx_);
    auto it = blocks_.find(key);
    if (it != blocks_.end()) return it->second;  // lost a benign decode race
    const size_t bytes = decoded->factors.size() * (sizeof(Factor) + 8) + 64;
    if (block_cache_bytes_ + bytes > cache_budget_) {  // coarse eviction
        blocks_.clear();
        block_cache_bytes_ = 0;
    }
    blocks_.emplace(key, decoded);
    block_cache_bytes_ += bytes;
    return decoded;
}

uint64_t OpenedErIndex::factor_count(uint32_t slot) const {
    return sections_.at(slot).factor_count;
}

uint64_t OpenedErIndex::source_length(uint32_t slot) const {
    return sections_.at(slot).source_length;
}

Factor OpenedErIndex::factor(uint32_t slot, uint64_t fid) const {
    if (fid >= sections_.at(slot).factor_count)
        throw CorruptionError("factor id out of range");
    auto b = block(slot, fid / block_size_);
    return b->factors.at(fid % block_size_);
}

uint64_t OpenedErIndex::factor_text_base(uint32_t slot, uint64_t fid) const {
    if (fid >= sections_.at(slot).factor_count)
        throw CorruptionError("factor id out of range");
    const FzMeta& meta = fz_meta(slot);
    auto b = block(slot, fid / block_size_);
    return meta.blocks[fid / block_size_].text_base + b->cum.at(fid % block_size_);
}

std::pair<uint64_t, uint32_t> OpenedErIndex::factor_covering(uint32_t slot, uint64_t pos) const {
    const FzMeta& meta = fz_meta(slot);
    if (pos >= meta.source_length) throw std::out_of_range("position beyond sequence end");
    // Block first (header-resident bases), then the in-block prefix sums.
    size_t lo = 0, hi = meta.blocks.size();
    while (hi - lo > 1) {
        size_t mid = (lo + hi) / 2;
        if (meta.blocks[mid].text_base <= pos)
            lo = mid;
        else
            hi = mid;
    }
    auto b = block(slot, lo);
    const uint64_t in_block = pos - meta.blocks[lo].text_base;
    auto it = std::upper_bound(b->cum.begin(), b->cum.end(), in_block);
    const size_t k = static_cast<size_t>(it - b->cum.begin()) - 1;
    return {lo * block_size_ + k, static_cast<uint32_t>(in_block - b->cum[k])};
}

RangeResult OpenedErIndex::tree_range(TreeKind kind, int64_t lo, int64_t hi) const {
    const EncryptedTreeReader& t = kind == TreeKind::Reverse  ? *reverse_tree_
                                   : kind == TreeKind::Forward ? *forward_tree_
                                                               : *pos_tree_;
    return t.factors_in_range(lo, hi);
}

std::vector<Occurrence> OpenedErIndex::locate(std::string_view pattern) const {
    return LocateEngine(*this, *ref_).locate(pattern);
}

std::string OpenedErIndex::extract_text(const std::string& individual_id, uint64_t start,
                                        uint64_t length) const {
    for (uint32_t slot = 0; slot < ids_.size(); ++slot)
        if (ids_[slot] == individual_id)
            return LocateEngine(*this, *ref_).extract(slot, start, length);
    throw std::invalid_argument("unknown individual: " + individual_id);
}

uint64_t OpenedErIndex::total_source_bytes() const {
    uint64_t total = 0;
    for (const auto& s : sections_) total += s.source_length;
    return total;
}

size_t OpenedErIndex::skipped_partition_count() const {
    return reverse_tree_->skipped_partitions() + forward_tree_->skipped_partitions() +
           pos_tree_->skipped_partitions();
}

}  // namespace erindex
