#include "erindex/rlz.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <thread>

#include "erindex/bit_io.hpp"
#include "erindex/errors.hpp"

namespace erindex {

namespace {

bool is_n(char c) { return c == 'N'; }

void finalize(Factorization& fz) {
    fz.cum_len.resize(fz.factors.size() + 1);
    uint64_t acc = 0;
    uint32_t lmax = 0;
    for (size_t k = 0; k < fz.factors.size(); ++k) {
        fz.cum_len[k] = acc;
        acc += fz.factors[k].len;
        lmax = std::max(lmax, fz.factors[k].len);
    }
    fz.cum_len.back() = acc;
    fz.l_max = lmax;
    fz.source_length = acc;
}

}  // namespace

size_t Factorization::factor_covering(uint64_t pos) const {
    if (pos >= source_length) throw std::out_of_range("position beyond sequence end");
    auto it = std::upper_bound(cum_len.begin(), cum_len.end(), pos);
    return static_cast<size_t>(it - cum_len.begin()) - 1;
}

Factorization factorize(const Sequence& s, const ReferencePack& ref, uint32_t block_size) {
    if (s.data.empty()) throw std::invalid_argument("cannot factorize an empty sequence");
    if (block_size < 1) throw std::invalid_argument("block size must be >= 1");

    const FmIndex& fm = ref.fm;
    const FmIndex& fm_rev = ref.fm_rev;
    const std::string& text = s.data;
    const size_t len = text.size();

    Factorization fz;
    fz.individual_id = s.id;
    fz.block_size = block_size;

    // Expected match locus: source position plus the indel drift seen so
    // far. Interval rows are all equivalent for correctness; preferring the
    // one nearest the expected locus keeps tp (and with it the pos-tree
    // factor ids) near-monotone, which the leaf value coding exploits.
    int64_t drift = 0;

    size_t i = 0;
    while (i < len) {
        char nrc = text[i];
        if (i < len - 1 && fm_rev.is_in_ref(nrc)) {
            // Backward search over the reverse reference index, fed source
            // characters in forward order. Stops when the referential part
            // reaches the last-but-one source symbol, the next symbol is
            // absent from R, the backward step fails, or the N/non-N
            // boundary rule fires.
            SaInterval iv = *fm_rev.symbol_interval(nrc);
            uint32_t l = 1;
            char last_nrc = nrc;
            while (i + l < len - 1) {
                nrc = text[i + l];
                if (!fm_rev.is_in_ref(nrc)) break;
                if (is_n(last_nrc) != is_n(nrc)) break;
                auto next = fm_rev.extend_backward(iv, nrc);
                if (!next) break;
                iv = *next;
                ++l;
                last_nrc = nrc;
            }
            uint64_t sai_rev_pref = iv.sp;
            const char mc = text[i + l];
            auto resolve = [&](uint64_t rev_row) {
                // Map to the forward index and walk to the referential
                // part's first character: R2F lands on its last one.
                uint64_t sai = ref.tables.r2f(rev_row);
                for (uint32_t step = 1; step < l; ++step) sai = fm.lf(sai);
                return sai;
            };
            if (iv.ep > iv.sp) {
                // Prefer the occurrence at the expected locus when it is in
                // the interval: the row of the reverse suffix that starts
                // at the reversed referential part's expected position.
                const int64_t expected = static_cast<int64_t>(i) + drift;
                const int64_t n = static_cast<int64_t>(fm.text_len());
                const int64_t rev_pos = n - expected - static_cast<int64_t>(l);
                if (expected >= 0 && rev_pos >= 0 && rev_pos <= n) {
                    uint64_t row = fm_rev.row_of_position(static_cast<uint64_t>(rev_pos));
                    if (row >= iv.sp && row <= iv.ep) sai_rev_pref = row;
                }
            }
            const uint64_t sai_pref = resolve(sai_rev_pref);
            const uint64_t tp = fm.text_position_of_row(sai_pref);
            drift = static_cast<int64_t>(tp) - static_cast<int64_t>(i);
            // One more (cyclic) step and back to the reverse index: the row
            // from which the decode walk emits R[tp], R[tp+1], ...
            const uint64_t sai_rev_start = ref.tables.f2r(fm.lf(sai_pref));

            fz.factors.push_back(Factor{static_cast<uint32_t>(sai_rev_start), l + 1, mc});
            fz.keys.push_back(FactorKeys{static_cast<uint32_t>(sai_rev_pref),
                                         static_cast<uint32_t>(sai_pref),
                                         static_cast<uint32_t>(tp)});
            i += l + 1;
        } else {
            // Mismatch-only factor: symbol absent from R, or the final
            // source symbol.
            fz.factors.push_back(Factor{0, 1, nrc});
            fz.keys.push_back(FactorKeys{});
            i += 1;
        }
    }
    finalize(fz);
    return fz;
}

std::vector<Factorization> factorize_parallel(const std::vector<Sequence>& collection,
                                              const ReferencePack& ref, uint32_t block_size,
                                              unsigned workers) {
    if (workers < 1) throw std::invalid_argument("workers must be >= 1");
    std::vector<Factorization> out(collection.size());
    if (collection.empty()) return out;

    std::atomic<size_t> next{0};
    std::mutex err_mtx;
    std::string first_error;

    auto run = [&] {
        for (size_t k = next.fetch_add(1); k < collection.size(); k = next.fetch_add(1)) {
            try {
                out[k] = factorize(collection[k], ref, block_size);
            } catch (const std::exception& e) {
                std::lock_guard lock(err_mtx);
                if (first_error.empty())
                    first_error = "factorization of individual '" + collection[k].id +
                                  "' failed: " + e.what();
            }
        }
    };

    unsigned spawn = std::min<size_t>(workers, collection.size());
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < spawn; ++t) pool.emplace_back(run);
    run();
    for (auto& t : pool) t.join();

    if (!first_error.empty()) throw std::runtime_error(first_error);
    return out;
}

std::string decode_factor(const Factor& f, const FmIndex& fm_rev) {
    std::string out;
    out.reserve(f.len);
    if (f.len > 1) {
        uint64_t row = f.sai_rev_start;
        for (uint32_t k = 0; k < f.ref_len(); ++k) {
            uint8_t code = fm_rev.bwt_code(row);
            if (code == 0)
                throw CorruptionError("factor decode walked past the reference start");
            out.push_back(fm_rev.unmap(code));
            row = fm_rev.lf(row);
        }
    }
    out.push_back(f.mc);
    return out;
}

char char_at_via_reverse_index(const Factorization& fz, const FmIndex& fm_rev,
                               size_t factor_index, uint32_t offset) {
    const Factor& f = fz.factors.at(factor_index);
    if (offset >= f.len) throw std::out_of_range("offset beyond factor length");
    if (offset == f.len - 1) return f.mc;
    uint64_t row = f.sai_rev_start;
    char c = 0;
    for (uint32_t k = 0; k <= offset; ++k) {
        uint8_t code = fm_rev.bwt_code(row);
        if (code == 0) throw CorruptionError("factor walk past the reference start");
        c = fm_rev.unmap(code);
        row = fm_rev.lf(row);
    }
    return c;
}

std::string extract_text(const Factorization& fz, const FmIndex& fm_rev,
                         uint64_t start, uint64_t length) {
    if (start + length > fz.source_length) throw std::out_of_range("extraction out of range");
    std::string out;
    out.reserve(length);
    if (length == 0) return out;

    size_t fi = fz.factor_covering(start);
    uint64_t off = start - fz.cum_len[fi];
    while (out.size() < length) {
        const Factor& f = fz.factors[fi];
        uint64_t want = length - out.size();
        uint64_t avail = f.len - off;
        uint64_t take = std::min<uint64_t>(want, avail);

        uint64_t from_ref = 0;
        if (off < f.ref_len()) from_ref = std::min<uint64_t>(take, f.ref_len() - off);
        if (from_ref > 0) {
            uint64_t row = f.sai_rev_start;
            for (uint64_t k = 0; k < off; ++k) row = fm_rev.lf(row);  // skip
            for (uint64_t k = 0; k < from_ref; ++k) {
                uint8_t code = fm_rev.bwt_code(row);
                if (code == 0) throw CorruptionError("factor walk past the reference start");
                out.push_back(fm_rev.unmap(code));
                row = fm_rev.lf(row);
            }
        }
        if (take > from_ref) out.push_back(f.mc);

        off = 0;
        ++fi;
    }
    return out;
}

// Block payload: [count u32][w_sai u8][rice_k u8][mc_w u8][bits: per factor
// sai_rev_start (w_sai), len-1 (Rice k), mc (mc_w bits over ACGTN; two
// bits when the block carries no N)].
namespace {

constexpr char kMcAlphabet[] = "ACGTN";

uint32_t mc_code(char c) {
    for (uint32_t i = 0; i < 5; ++i)
        if (kMcAlphabet[i] == c) return i;
    throw std::invalid_argument(std::string("mismatch char outside alphabet: ") + c);
}

}  // namespace

std::vector<uint8_t> encode_factor_block(std::span<const Factor> factors) {
    uint32_t max_sai = 0;
    uint32_t mc_w = 2;
    for (const Factor& f : factors) {
        max_sai = std::max(max_sai, f.sai_rev_start);
        if (f.mc == 'N') mc_w = 3;
    }
    const uint32_t w_sai = bits_for(max_sai);

    uint32_t best_k = 0;
    uint64_t best_cost = UINT64_MAX;
    for (uint32_t k = 0; k <= 24; ++k) {
        uint64_t cost = 0;
        for (const Factor& f : factors) cost += BitWriter::rice_cost(f.len - 1, k);
        if (cost < best_cost) {
            best_cost = cost;
            best_k = k;
        }
    }

    BitWriter bits;
    for (const Factor& f : factors) {
        bits.put(f.sai_rev_start, w_sai);
        bits.put_rice(f.len - 1, best_k);
        bits.put(mc_code(f.mc), mc_w);
    }

    ByteWriter out;
    out.u32(static_cast<uint32_t>(factors.size()));
    out.u8(static_cast<uint8_t>(w_sai));
    out.u8(static_cast<uint8_t>(best_k));
    out.u8(static_cast<uint8_t>(mc_w));
    out.bytes(bits.data());
    return out.take();
}

std::vector<Factor> decode_factor_block(const std::vector<uint8_t>& payload) {
    ByteReader head(payload);
    const uint32_t count = head.u32();
    const uint32_t w_sai = head.u8();
    const uint32_t rice_k = head.u8();
    const uint32_t mc_w = head.u8();
    if (w_sai > 32 || rice_k > 24 || (mc_w != 2 && mc_w != 3) || count > (1u << 28))
        throw CorruptionError("factor block header implausible");

    BitReader bits(payload.data() + 7, payload.size() - 7);
    std::vector<Factor> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        Factor f;
        f.sai_rev_start = static_cast<uint32_t>(bits.get(w_sai));
        uint64_t ref_len = bits.get_rice(rice_k);
        if (ref_len >= UINT32_MAX) throw CorruptionError("factor length implausible");
        f.len = static_cast<uint32_t>(ref_len) + 1;
        uint32_t mcc = static_cast<uint32_t>(bits.get(mc_w));
        if (mcc >= 5) throw CorruptionError("factor mismatch-char code implausible");
        f.mc = kMcAlphabet[mcc];
        out.push_back(f);
    }
    return out;
}

}  // namespace erindex
