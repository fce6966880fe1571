#ifndef EDGERACE_CONFIGURATION_HPP
#define EDGERACE_CONFIGURATION_HPP

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "edgerace/laplace.hpp"
#include "edgerace/random.hpp"

namespace edgerace {

/// Leading window of a ranked particle configuration: positions sorted
/// descending, complete down to depth W below the leader. W may be infinite
/// for configurations that are finite in full.
class Configuration {
public:
    /// Sorts descending, keeping the input order among ties.
    /// Throws std::invalid_argument on an empty list or a negative depth.
    static Configuration from_points(std::vector<double> points, double window_depth);
    /// Same as from_points with W = x_1 - x_N.
    static Configuration from_points(std::vector<double> points);

    std::span<const double> positions() const { return positions_; }
    std::size_t size() const { return positions_.size(); }
    double leader() const { return positions_.front(); }
    double window_depth() const { return depth_; }
    double window_bottom() const { return positions_.front() - depth_; }
    double operator[](std::size_t i) const { return positions_[i]; }

    /// Every particle moved by b.
    Configuration shifted(double b) const;

private:
    Configuration(std::vector<double> positions, double depth) : positions_(std::move(positions)), depth_(depth) {}
    friend Configuration make_sorted(std::vector<double>, double);
    std::vector<double> positions_;
    double depth_;
};

/// Builds a configuration from positions already sorted descending.
Configuration make_sorted(std::vector<double> positions, double window_depth);

/// Distances behind the leader: u_1 = 0 <= u_2 <= ...
class GapVector {
public:
    explicit GapVector(const Configuration& config);
    std::span<const double> values() const { return values_; }
    std::size_t size() const { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }

private:
    std::vector<double> values_;
};

GapVector gaps(const Configuration& config);

/// Moves the leader to 0.
Configuration normalize_shift(const Configuration& config);

struct ExponentialBound {
    double amplitude = 0.0;  // A
    double rate = 0.0;       // lambda
};

struct OccupancyCount {
    std::size_t count = 0;
    std::optional<bool> within_bound;  // count <= A e^{lambda y}, when a bound was supplied
};

/// Number of particles within distance y of the leader. Throws
/// std::domain_error when y exceeds the window depth.
OccupancyCount count_within(const Configuration& config, double y,
                            std::optional<ExponentialBound> bound = std::nullopt);

/// Sampling depth: either a particle count or a distance below the leader.
struct SampleDepth {
    enum class Kind { count, distance } kind = Kind::count;
    double value = 0.0;
    static SampleDepth particles(std::size_t n) { return {Kind::count, static_cast<double>(n)}; }
    static SampleDepth distance(double w) { return {Kind::distance, w}; }
};

/// Poisson process with expected count F(x) above x: x_k = F^{-1}(Gamma_k)
/// for unit-rate arrival times Gamma_k, built from cumulative exponentials.
Configuration sample_from_tail_intensity(const TailIntensity& f, SampleDepth depth, const StreamKey& stream);

/// Poisson process with intensity s e^{-s (x - z)} dx; x_k = z - ln(Gamma_k) / s.
Configuration sample_rem(double s, double z, SampleDepth depth, const StreamKey& stream);

/// One position per row under the header "position", at 17 significant digits.
void write_configuration_csv(std::ostream& out, const Configuration& config);
/// Reads the format written above. Without a depth the window is x_1 - x_N.
Configuration read_configuration_csv(std::istream& in, std::optional<double> window_depth = std::nullopt);

} // namespace edgerace

#endif
