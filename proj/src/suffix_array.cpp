#include "erindex/suffix_array.hpp"

#include <algorithm>
#include <stdexcept>

namespace erindex {
namespace {

// SA-IS induced sorting. s must end with a unique, smallest sentinel (0).
void sais(const int32_t* s, int32_t* sa, int32_t n, int32_t K) {
    if (n == 1) {
        sa[0] = 0;
        return;
    }
    std::vector<bool> stype(n);
    stype[n - 1] = true;
    for (int32_t i = n - 2; i >= 0; --i)
        stype[i] = s[i] < s[i + 1] || (s[i] == s[i + 1] && stype[i + 1]);

    auto is_lms = [&](int32_t i) { return i > 0 && stype[i] && !stype[i - 1]; };

    std::vector<int32_t> bkt(K);
    auto bucket_bounds = [&](bool ends) {
        std::fill(bkt.begin(), bkt.end(), 0);
        for (int32_t i = 0; i < n; ++i) ++bkt[s[i]];
        int32_t sum = 0;
        for (int32_t c = 0; c < K; ++c) {
            sum += bkt[c];
            bkt[c] = ends ? sum : sum - bkt[c];
        }
    };

    auto induce = [&](auto&& place_lms) {
        std::fill(sa, sa + n, -1);
        bucket_bounds(true);
        place_lms();
        bucket_bounds(false);
        for (int32_t i = 0; i < n; ++i) {
            int32_t j = sa[i] - 1;
            if (sa[i] > 0 && !stype[j]) sa[bkt[s[j]]++] = j;
        }
        bucket_bounds(true);
        for (int32_t i = n - 1; i >= 0; --i) {
            int32_t j = sa[i] - 1;
            if (sa[i] > 0 && stype[j]) sa[--bkt[s[j]]] = j;
        }
    };

    std::vector<int32_t> lms;
    for (int32_t i = 1; i < n; ++i)
        if (is_lms(i)) lms.push_back(i);
    const int32_t nlms = static_cast<int32_t>(lms.size());

    // First pass sorts LMS substrings.
    induce([&] {
        for (auto it = lms.rbegin(); it != lms.rend(); ++it) sa[--bkt[s[*it]]] = *it;
    });

    // Name LMS substrings in their sorted order.
    std::vector<int32_t> sorted_lms;
    sorted_lms.reserve(nlms);
    for (int32_t i = 0; i < n; ++i)
        if (sa[i] > 0 && is_lms(sa[i])) sorted_lms.push_back(sa[i]);

    auto lms_substr_eq = [&](int32_t a, int32_t b) {
        if (s[a] != s[b]) return false;
        for (int32_t k = 1;; ++k) {
            if (a + k >= n || b + k >= n) return false;
            bool al = is_lms(a + k), bl = is_lms(b + k);
            if (al && bl) return true;
            if (al != bl) return false;
            if (s[a + k] != s[b + k]) return false;
        }
    };

    std::vector<int32_t> name_by_index(n, -1);
    int32_t names = 0;
    int32_t prev = -1;
    for (int32_t p : sorted_lms) {
        if (prev >= 0 && !lms_substr_eq(prev, p)) ++names;
        name_by_index[p] = names;
        prev = p;
    }
    ++names;

    std::vector<int32_t> s1(nlms), sa1(nlms);
    for (int32_t k = 0; k < nlms; ++k) s1[k] = name_by_index[lms[k]];
    if (names < nlms) {
        sais(s1.data(), sa1.data(), nlms, names);
    } else {
        for (int32_t k = 0; k < nlms; ++k) sa1[s1[k]] = k;
    }

    // Final pass with LMS suffixes in sorted order.
    induce([&] {
        for (int32_t k = nlms - 1; k >= 0; --k) {
            int32_t p = lms[sa1[k]];
            sa[--bkt[s[p]]] = p;
        }
    });
}

}  // namespace

std::vector<uint32_t> build_suffix_array(std::string_view text) {
    if (text.empty()) throw std::invalid_argument("cannot index an empty text");
    if (text.size() >= (1ull << 31) - 2)
        throw std::length_error("text too long for this suffix array builder");

    const int32_t n = static_cast<int32_t>(text.size()) + 1;
    std::vector<int32_t> s(n);
    for (int32_t i = 0; i + 1 < n; ++i)
        s[i] = static_cast<uint8_t>(text[i]) + 1;
    s[n - 1] = 0;  // sentinel, unique smallest

    std::vector<int32_t> sa(n);
    sais(s.data(), sa.data(), n, 257);

    return std::vector<uint32_t>(sa.begin(), sa.end());
}

}  // namespace erindex
