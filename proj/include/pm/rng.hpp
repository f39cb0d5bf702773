#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace pm {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Stable child-seed derivation, independent of draw order at the call site.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
    return splitmix64(seed ^ splitmix64(salt + 0x632be59bd9b4e019ull));
}

inline std::string rng_to_string(const std::mt19937_64& g) {
    std::ostringstream os;
    os << g;
    return os.str();
}

inline std::mt19937_64 rng_from_string(const std::string& s) {
    std::mt19937_64 g;
    std::istringstream is(s);
    is >> g;
    return g;
}

} // namespace pm
