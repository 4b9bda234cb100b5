#include "lpcr/rng.hpp"

namespace lpcr {

namespace {

uint64_t mix(uint64_t h, uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    // splitmix finalizer keeps nearby tuples well separated
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    return h ^ (h >> 31);
}

}  // namespace

uint64_t derive_seed(uint64_t master, std::string_view name, uint64_t a, uint64_t b, uint64_t c) {
    uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    for (char ch : name) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ull;
    }
    h = mix(h, master);
    h = mix(h, a);
    h = mix(h, b);
    h = mix(h, c);
    return h;
}

}  // namespace lpcr
