#include "edgerace/random.hpp"

#include <cmath>

namespace edgerace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

StreamKey::StreamKey(std::uint64_t seed) : state_(splitmix64(seed)) {}

StreamKey StreamKey::child(std::uint64_t index) const {
    return StreamKey(Raw{}, splitmix64(state_ ^ splitmix64(index + 0x632be59bd9b4e019ULL)));
}

Engine StreamKey::engine() const {
    std::seed_seq seq{static_cast<std::uint32_t>(state_), static_cast<std::uint32_t>(state_ >> 32)};
    return Engine(seq);
}

double open_uniform(Engine& engine) {
    // 53 random bits, shifted off zero by half an ulp.
    return (static_cast<double>(engine() >> 11) + 0.5) * 0x1.0p-53;
}

double standard_exponential(Engine& engine) {
    return -std::log(open_uniform(engine));
}

} // namespace edgerace
