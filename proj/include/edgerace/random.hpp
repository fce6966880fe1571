#ifndef EDGERACE_RANDOM_HPP
#define EDGERACE_RANDOM_HPP

#include <cstdint>
#include <random>

namespace edgerace {

using Engine = std::mt19937_64;

/// Names one reproducible random stream. A key is a master seed plus a path
/// of child indices; every child derives its own engine seed by hashing, so
/// replica r of experiment e gets the same numbers no matter how work is
/// scheduled across threads.
class StreamKey {
public:
    explicit StreamKey(std::uint64_t seed);

    StreamKey child(std::uint64_t index) const;
    std::uint64_t value() const { return state_; }
    Engine engine() const;

    friend bool operator==(const StreamKey&, const StreamKey&) = default;

private:
    struct Raw {};
    StreamKey(Raw, std::uint64_t state) : state_(state) {}
    std::uint64_t state_;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Uniform draw in the open interval (0, 1).
double open_uniform(Engine& engine);

/// Standard exponential draw.
double standard_exponential(Engine& engine);

} // namespace edgerace

#endif
