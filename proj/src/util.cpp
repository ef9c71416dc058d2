#include <cstdlib>
#include <string>
#include <thread>

#include "vpetabc/parallel.hpp"
#include "vpetabc/rng.hpp"

namespace vpetabc {

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : stage) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return splitmix64_mix(seed ^ h);
}

unsigned default_workers() {
    if (const char* env = std::getenv("VPETABC_WORKERS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) return static_cast<unsigned>(v);
        } catch (...) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

} // namespace vpetabc
