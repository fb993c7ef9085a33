#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace tabshot {

inline constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

/// 64-bit FNV-1a over the bytes of `data`, continuing from `state`.
constexpr std::uint64_t fnv1a64(std::string_view data, std::uint64_t state = kFnvOffsetBasis) {
    for (unsigned char c : data) {
        state ^= c;
        state *= kFnvPrime;
    }
    return state;
}

/// Lowercase, zero-padded 16-digit hex rendering of a 64-bit hash.
std::string hex64(std::uint64_t value);

}  // namespace tabshot
