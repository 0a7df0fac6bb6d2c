#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace privq {

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

/// 64-bit FNV-1a; stable across platforms, used for seeds and mock hashing.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Mixes several values into one seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace privq
