#include "erindex/fm_index.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "erindex/errors.hpp"
#include "erindex/suffix_array.hpp"

namespace erindex {

namespace {
constexpr char kErfmMagic[4] = {'E', 'R', 'F', 'M'};
constexpr uint16_t kErfmVersion = 1;
}  // namespace

FmIndex FmIndex::build(std::string_view text, uint32_t sample_rate) {
    return build_with_sa(text, build_suffix_array(text), sample_rate);
}

FmIndex FmIndex::build_with_sa(std::string_view text, const std::vector<uint32_t>& sa,
                               uint32_t sample_rate) {
    if (text.empty()) throw std::invalid_argument("cannot index an empty text");
    if (sample_rate < 1) throw std::invalid_argument("sample_rate must be >= 1");
    if (sa.size() != text.size() + 1) throw std::invalid_argument("suffix array size mismatch");

    FmIndex fm;
    fm.text_len_ = text.size();
    fm.sample_rate_ = sample_rate;

    // Dense remap over exactly the symbols present, ordered by byte value.
    std::array<uint64_t, 256> freq{};
    for (char c : text) ++freq[static_cast<uint8_t>(c)];
    for (int b = 0; b < 256; ++b) {
        if (freq[b] == 0) continue;
        fm.unmap_.push_back(static_cast<char>(b));
        fm.remap_[b] = static_cast<uint8_t>(fm.unmap_.size());
    }
    fm.cum_.assign(fm.unmap_.size() + 2, 0);
    for (size_t code = 1; code <= fm.unmap_.size(); ++code)
        fm.cum_[code + 1] = fm.cum_[code] + freq[static_cast<uint8_t>(fm.unmap_[code - 1])];

    // BWT with the terminator entry dropped from storage.
    fm.bwt_.resize(text.size());
    uint64_t w = 0;
    bool eof_seen = false;
    for (uint64_t i = 0; i < sa.size(); ++i) {
        if (sa[i] == 0) {
            fm.eof_pos_ = i;
            eof_seen = true;
            continue;
        }
        fm.bwt_[w++] = fm.remap_[static_cast<uint8_t>(text[sa[i] - 1])];
    }
    if (!eof_seen || w != text.size()) throw std::logic_error("malformed suffix array");

    fm.build_rank_and_marks(sa);
    return fm;
}

void FmIndex::build_rank_and_marks(const std::vector<uint32_t>& sa) {
    const uint64_t n = text_len_;
    const uint32_t sigma = alphabet_size();
    const uint64_t nblocks = n / kOccBlock + 1;
    occ_blocks_.assign(sigma * nblocks, 0);
    std::vector<uint32_t> running(sigma, 0);
    for (uint64_t i = 0; i < n; ++i) {
        if (i % kOccBlock == 0)
            for (uint32_t c = 0; c < sigma; ++c) occ_blocks_[c * nblocks + i / kOccBlock] = running[c];
        ++running[bwt_[i] - 1];
    }
    if (n % kOccBlock == 0)  // phantom block so occ(c, n) stays a table lookup
        for (uint32_t c = 0; c < sigma; ++c) occ_blocks_[c * nblocks + n / kOccBlock] = running[c];

    const uint64_t rows = n + 1;
    mark_bits_.assign((rows + 63) / 64, 0);
    uint64_t marked = 0;
    for (uint64_t i = 0; i < rows; ++i) {
        if (sa[i] % sample_rate_ == 0 || sa[i] == n) {
            mark_bits_[i >> 6] |= 1ull << (i & 63);
            ++marked;
        }
    }
    mark_rank_.assign(mark_bits_.size() + 1, 0);
    uint32_t acc = 0;
    for (size_t wdx = 0; wdx < mark_bits_.size(); ++wdx) {
        mark_rank_[wdx] = acc;
        acc += static_cast<uint32_t>(__builtin_popcountll(mark_bits_[wdx]));
    }
    mark_rank_.back() = acc;
    mark_pos_.clear();
    mark_pos_.reserve(marked);
    for (uint64_t i = 0; i < rows; ++i)
        if (is_marked(i)) mark_pos_.push_back(sa[i]);

    sample_row_.assign(n / sample_rate_ + 2, 0);
    for (uint64_t i = 0; i < rows; ++i) {
        if (sa[i] % sample_rate_ == 0) sample_row_[sa[i] / sample_rate_] = static_cast<uint32_t>(i);
        if (sa[i] == n) sample_row_.back() = static_cast<uint32_t>(i);
    }
}

uint64_t FmIndex::row_of_position(uint64_t pos) const {
    if (pos > text_len_) throw std::out_of_range("position out of range");
    // Nearest sampled position at or above pos, then walk back down.
    uint64_t anchor_pos;
    uint64_t row;
    uint64_t next = (pos + sample_rate_ - 1) / sample_rate_;
    if (next * sample_rate_ <= text_len_) {
        anchor_pos = next * sample_rate_;
        row = sample_row_[next];
    } else {
        anchor_pos = text_len_;
        row = sample_row_.back();
    }
    for (; anchor_pos > pos; --anchor_pos) row = lf(row);
    return row;
}

uint8_t FmIndex::remap(char c) const {
    uint8_t code = remap_[static_cast<uint8_t>(c)];
    if (code == 0) throw std::out_of_range("symbol not present in indexed text");
    return code;
}

char FmIndex::unmap(uint8_t code) const {
    if (code == 0 || code > unmap_.size()) throw std::out_of_range("bad symbol code");
    return unmap_[code - 1];
}

uint64_t FmIndex::C(char c) const {
    uint8_t b = static_cast<uint8_t>(c);
    uint64_t count = 0;
    for (size_t code = 1; code <= unmap_.size(); ++code) {
        if (static_cast<uint8_t>(unmap_[code - 1]) < b)
            count = cum_[code + 1];
        else
            break;
    }
    return count;
}

uint64_t FmIndex::occ_code(uint8_t code, uint64_t k) const {
    const uint64_t nblocks = text_len_ / kOccBlock + 1;
    const uint64_t block = k / kOccBlock;
    uint64_t count = occ_blocks_[(code - 1) * nblocks + block];
    for (uint64_t i = block * kOccBlock; i < k; ++i)
        if (bwt_[i] == code) ++count;
    return count;
}

uint64_t FmIndex::occ(char c, uint64_t k) const {
    if (k > text_len_) throw std::out_of_range("occ prefix length out of range");
    uint8_t code = remap_[static_cast<uint8_t>(c)];
    if (code == 0) return 0;
    return occ_code(code, k);
}

int64_t FmIndex::eof_shift(int64_t pos) const {
    if (pos < -1 || pos > static_cast<int64_t>(text_len_))
        throw std::out_of_range("eof_shift position out of range");
    return pos < static_cast<int64_t>(eof_pos_) ? pos : pos - 1;
}

uint64_t FmIndex::rank_true(uint8_t code, int64_t pos) const {
    if (pos < 0) return 0;
    return occ_code(code, static_cast<uint64_t>(eof_shift(pos)) + 1);
}

uint8_t FmIndex::bwt_code(uint64_t row) const {
    if (row > text_len_) throw std::out_of_range("row out of range");
    if (row == eof_pos_) return 0;
    return bwt_[row < eof_pos_ ? row : row - 1];
}

uint64_t FmIndex::lf(uint64_t row) const {
    uint8_t code = bwt_code(row);
    if (code == 0) return 0;  // the terminator rotation sorts first
    return cum_[code] + 1 + rank_true(code, static_cast<int64_t>(row)) - 1;
}

std::optional<uint64_t> FmIndex::backward_step(uint64_t row) const {
    if (bwt_code(row) == 0) return std::nullopt;  // start of text
    return lf(row);
}

std::optional<SaInterval> FmIndex::symbol_interval(char c) const {
    uint8_t code = remap_[static_cast<uint8_t>(c)];
    if (code == 0) return std::nullopt;
    // Terminator row 0 precedes all symbol rows.
    SaInterval iv{cum_[code] + 1, cum_[code + 1]};
    if (iv.sp > iv.ep) return std::nullopt;
    return iv;
}

std::optional<SaInterval> FmIndex::extend_backward(const SaInterval& iv, char c) const {
    uint8_t code = remap_[static_cast<uint8_t>(c)];
    if (code == 0) return std::nullopt;
    uint64_t base = cum_[code] + 1;
    uint64_t sp = base + rank_true(code, static_cast<int64_t>(iv.sp) - 1);
    uint64_t ep = base + rank_true(code, static_cast<int64_t>(iv.ep)) - 1;
    if (sp > ep) return std::nullopt;
    return SaInterval{sp, ep};
}

std::optional<SaInterval> FmIndex::backward_search(std::string_view pattern) const {
    if (pattern.empty()) throw std::invalid_argument("empty pattern");
    auto iv = symbol_interval(pattern.back());
    for (size_t i = pattern.size() - 1; iv && i-- > 0;)
        iv = extend_backward(*iv, pattern[i]);
    return iv;
}

std::optional<SaInterval> FmIndex::search_pat_rev(std::string_view pattern) const {
    if (pattern.empty()) throw std::invalid_argument("empty pattern");
    auto iv = symbol_interval(pattern.front());
    for (size_t i = 1; iv && i < pattern.size(); ++i)
        iv = extend_backward(*iv, pattern[i]);
    return iv;
}

uint64_t FmIndex::text_position_of_row(uint64_t row) const {
    if (row > text_len_) throw std::out_of_range("row out of range");
    uint64_t steps = 0;
    uint64_t r = row;
    while (!is_marked(r)) {
        r = lf(r);
        ++steps;
    }
    uint32_t rank = mark_rank_[r >> 6] +
                    static_cast<uint32_t>(__builtin_popcountll(mark_bits_[r >> 6] & ((1ull << (r & 63)) - 1)));
    return mark_pos_[rank] + steps;
}

void FmIndex::serialize(ByteWriter& out) const {
    out.u64(text_len_);
    out.u32(sample_rate_);
    out.u64(eof_pos_);
    out.u8(static_cast<uint8_t>(unmap_.size()));
    out.bytes(unmap_.data(), unmap_.size());
    for (size_t code = 1; code <= unmap_.size() + 1; ++code) out.u64(cum_[code]);
    out.u64(bwt_.size());
    out.bytes(bwt_.data(), bwt_.size());
    out.u64(occ_blocks_.size());
    out.bytes(occ_blocks_.data(), occ_blocks_.size() * sizeof(uint32_t));
    out.u64(mark_bits_.size());
    out.bytes(mark_bits_.data(), mark_bits_.size() * sizeof(uint64_t));
    out.u64(mark_pos_.size());
    out.bytes(mark_pos_.data(), mark_pos_.size() * sizeof(uint32_t));
    out.u64(sample_row_.size());
    out.bytes(sample_row_.data(), sample_row_.size() * sizeof(uint32_t));
}

FmIndex FmIndex::deserialize(ByteReader& in) {
    FmIndex fm;
    fm.text_len_ = in.u64();
    fm.sample_rate_ = in.u32();
    fm.eof_pos_ = in.u64();
    uint8_t sigma = in.u8();
    fm.unmap_.resize(sigma);
    in.bytes(fm.unmap_.data(), sigma);
    for (uint8_t code = 1; code <= sigma; ++code)
        fm.remap_[static_cast<uint8_t>(fm.unmap_[code - 1])] = code;
    fm.cum_.assign(sigma + 2, 0);
    for (size_t code = 1; code <= sigma + 1u; ++code) fm.cum_[code] = in.u64();
    fm.bwt_.resize(in.u64());
    in.bytes(fm.bwt_.data(), fm.bwt_.size());
    fm.occ_blocks_.resize(in.u64());
    in.bytes(fm.occ_blocks_.data(), fm.occ_blocks_.size() * sizeof(uint32_t));
    fm.mark_bits_.resize(in.u64());
    in.bytes(fm.mark_bits_.data(), fm.mark_bits_.size() * sizeof(uint64_t));
    fm.mark_pos_.resize(in.u64());
    in.bytes(fm.mark_pos_.data(), fm.mark_pos_.size() * sizeof(uint32_t));
    fm.sample_row_.resize(in.u64());
    in.bytes(fm.sample_row_.data(), fm.sample_row_.size() * sizeof(uint32_t));
    if (fm.bwt_.size() != fm.text_len_) throw CorruptionError("FM payload size mismatch");

    fm.mark_rank_.assign(fm.mark_bits_.size() + 1, 0);
    uint32_t acc = 0;
    for (size_t w = 0; w < fm.mark_bits_.size(); ++w) {
        fm.mark_rank_[w] = acc;
        acc += static_cast<uint32_t>(__builtin_popcountll(fm.mark_bits_[w]));
    }
    fm.mark_rank_.back() = acc;
    if (acc != fm.mark_pos_.size()) throw CorruptionError("marked-row table mismatch");
    return fm;
}

CorrespondenceTables CorrespondenceTables::build(const std::vector<uint32_t>& sa_fwd,
                                                 const std::vector<uint32_t>& sa_rev) {
    if (sa_fwd.size() != sa_rev.size())
        throw std::invalid_argument("forward/reverse texts must have equal length");
    const uint64_t rows = sa_fwd.size();
    const uint64_t n = rows - 1;

    std::vector<uint32_t> isa_fwd(rows);
    for (uint64_t i = 0; i < rows; ++i) isa_fwd[sa_fwd[i]] = static_cast<uint32_t>(i);

    CorrespondenceTables t;
    t.r2f_.resize(rows);
    t.f2r_.resize(rows);
    for (uint64_t i = 0; i < rows; ++i) {
        uint64_t p = sa_rev[i];
        // R_rev position p holds the same character as R position n-1-p;
        // the terminator suffix maps to the terminator suffix.
        uint64_t fwd_row = (p == n) ? isa_fwd[n] : isa_fwd[n - 1 - p];
        t.r2f_[i] = static_cast<uint32_t>(fwd_row);
        t.f2r_[fwd_row] = static_cast<uint32_t>(i);
    }
    return t;
}

void CorrespondenceTables::serialize(ByteWriter& out) const {
    out.u64(r2f_.size());
    out.bytes(r2f_.data(), r2f_.size() * sizeof(uint32_t));
    out.bytes(f2r_.data(), f2r_.size() * sizeof(uint32_t));
}

CorrespondenceTables CorrespondenceTables::deserialize(ByteReader& in) {
    CorrespondenceTables t;
    uint64_t rows = in.u64();
    t.r2f_.resize(rows);
    in.bytes(t.r2f_.data(), rows * sizeof(uint32_t));
    t.f2r_.resize(rows);
    in.bytes(t.f2r_.data(), rows * sizeof(uint32_t));
    return t;
}

ReferencePack ReferencePack::build(std::string_view reference, uint32_t sample_rate) {
    ReferencePack pack;
    std::string rev(reference.rbegin(), reference.rend());
    auto sa_fwd = build_suffix_array(reference);
    auto sa_rev = build_suffix_array(rev);
    pack.fm = FmIndex::build_with_sa(reference, sa_fwd, sample_rate);
    pack.fm_rev = FmIndex::build_with_sa(rev, sa_rev, sample_rate);
    pack.tables = CorrespondenceTables::build(sa_fwd, sa_rev);
    return pack;
}

void ReferencePack::save(const std::filesystem::path& path) const {
    ByteWriter out;
    out.bytes(kErfmMagic, 4);
    out.u16(kErfmVersion);
    out.u64(fm.text_len());
    out.u32(fm.sample_rate());
    fm.serialize(out);
    fm_rev.serialize(out);
    tables.serialize(out);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot write reference index: " + path.string());
    f.write(reinterpret_cast<const char*>(out.data().data()),
            static_cast<std::streamsize>(out.size()));
    if (!f) throw FormatError("short write: " + path.string());
}

ReferencePack ReferencePack::load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open reference index: " + path.string());
    std::vector<uint8_t> blob((std::istreambuf_iterator<char>(f)),
                              std::istreambuf_iterator<char>());
    ByteReader in(blob);
    char magic[4];
    in.bytes(magic, 4);
    if (std::memcmp(magic, kErfmMagic, 4) != 0)
        throw FormatError("not a reference index file: " + path.string());
    if (in.u16() != kErfmVersion) throw FormatError("unsupported reference index version");
    uint64_t text_len = in.u64();
    uint32_t rate = in.u32();

    ReferencePack pack;
    pack.fm = FmIndex::deserialize(in);
    pack.fm_rev = FmIndex::deserialize(in);
    pack.tables = CorrespondenceTables::deserialize(in);
    if (pack.fm.text_len() != text_len || pack.fm_rev.text_len() != text_len ||
        pack.fm.sample_rate() != rate || pack.tables.size() != text_len + 1)
        throw CorruptionError("reference index sections disagree");
    return pack;
}

}  // namespace erindex
