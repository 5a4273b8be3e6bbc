#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace erindex {

/// Suffix array of text plus a virtual terminator that sorts before every
/// symbol. Returns text.size()+1 entries; entry 0 is always the terminator
/// suffix (position text.size()).
std::vector<uint32_t> build_suffix_array(std::string_view text);

}  // namespace erindex
