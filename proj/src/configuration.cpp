#include "edgerace/configuration.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "edgerace/csv.hpp"

namespace edgerace {

Configuration make_sorted(std::vector<double> positions, double window_depth) {
    if (positions.empty()) throw std::invalid_argument("configuration needs at least one particle");
    if (!(window_depth >= 0.0)) throw std::invalid_argument("window depth must be nonnegative");
    for (std::size_t i = 1; i < positions.size(); ++i) {
        if (positions[i] > positions[i - 1]) throw std::invalid_argument("make_sorted: positions are not descending");
    }
    return Configuration(std::move(positions), window_depth);
}

Configuration Configuration::from_points(std::vector<double> points, double window_depth) {
    if (points.empty()) throw std::invalid_argument("configuration needs at least one particle");
    for (double x : points) {
        if (!std::isfinite(x)) throw std::invalid_argument("configuration positions must be finite");
    }
    std::stable_sort(points.begin(), points.end(), std::greater<>());
    return make_sorted(std::move(points), window_depth);
}

Configuration Configuration::from_points(std::vector<double> points) {
    if (points.empty()) throw std::invalid_argument("configuration needs at least one particle");
    auto [lo, hi] = std::minmax_element(points.begin(), points.end());
    double depth = *hi - *lo;
    return from_points(std::move(points), depth);
}

Configuration Configuration::shifted(double b) const {
    std::vector<double> moved(positions_);
    for (double& x : moved) x += b;
    return Configuration(std::move(moved), depth_);
}

GapVector::GapVector(const Configuration& config) {
    values_.reserve(config.size());
    double leader = config.leader();
    for (double x : config.positions()) values_.push_back(leader - x);
}

GapVector gaps(const Configuration& config) { return GapVector(config); }

Configuration normalize_shift(const Configuration& config) {
    if (config.leader() == 0.0) return config;
    return config.shifted(-config.leader());
}

OccupancyCount count_within(const Configuration& config, double y, std::optional<ExponentialBound> bound) {
    if (!(y >= 0.0)) throw std::domain_error("count_within: y must be nonnegative");
    if (y > config.window_depth()) {
        std::ostringstream msg;
        msg << "count_within: y = " << y << " exceeds the window depth " << config.window_depth();
        throw std::domain_error(msg.str());
    }
    double level = config.leader() - y;
    auto pos = config.positions();
    // Descending order: count elements >= level.
    auto it = std::upper_bound(pos.begin(), pos.end(), level, std::greater<>());
    OccupancyCount out;
    out.count = static_cast<std::size_t>(it - pos.begin());
    if (bound) out.within_bound = static_cast<double>(out.count) <= bound->amplitude * std::exp(bound->rate * y);
    return out;
}

namespace {

// Draws arrival times one at a time and maps each through `place`, stopping at
// the requested depth. `place` returns nullopt once the intensity is exhausted.
template <class Place>
Configuration sample_arrivals(SampleDepth depth, const StreamKey& stream, Place place) {
    if (!(depth.value >= 0.0)) throw std::invalid_argument("sampling depth must be nonnegative");
    if (depth.kind == SampleDepth::Kind::count && depth.value < 1.0) {
        throw std::invalid_argument("sampling by count needs at least one particle");
    }
    Engine engine = stream.engine();
    std::vector<double> positions;
    double gamma = 0.0;
    bool exhausted = false;
    if (depth.kind == SampleDepth::Kind::count) {
        auto n = static_cast<std::size_t>(depth.value);
        positions.reserve(n);
        while (positions.size() < n) {
            gamma += standard_exponential(engine);
            auto x = place(gamma);
            if (!x) {
                exhausted = true;
                break;
            }
            positions.push_back(*x);
        }
    } else {
        for (;;) {
            gamma += standard_exponential(engine);
            auto x = place(gamma);
            if (!x) {
                exhausted = true;
                break;
            }
            if (!positions.empty() && *x < positions.front() - depth.value) break;
            positions.push_back(*x);
        }
    }
    if (positions.empty()) throw std::domain_error("sampling: intensity has no mass to place a leader");
    if (exhausted) return make_sorted(std::move(positions), kInf);
    double w = depth.kind == SampleDepth::Kind::count ? positions.front() - positions.back() : depth.value;
    return make_sorted(std::move(positions), w);
}

} // namespace

Configuration sample_from_tail_intensity(const TailIntensity& f, SampleDepth depth, const StreamKey& stream) {
    const double floor = f.floor_level();
    const double ceiling = f.ceiling_level();
    return sample_arrivals(depth, stream, [&](double gamma) -> std::optional<double> {
        if (gamma <= floor) throw std::domain_error("sample_from_tail_intensity: F does not vanish at +inf");
        if (gamma >= ceiling) return std::nullopt;
        return f.inverse(gamma);
    });
}

Configuration sample_rem(double s, double z, SampleDepth depth, const StreamKey& stream) {
    if (!(s > 0.0)) throw std::domain_error("sample_rem: s must be positive");
    return sample_arrivals(depth, stream, [&](double gamma) -> std::optional<double> {
        return z - std::log(gamma) / s;
    });
}

void write_configuration_csv(std::ostream& out, const Configuration& config) {
    out << "position\n";
    for (double x : config.positions()) out << format_number(x) << '\n';
}

Configuration read_configuration_csv(std::istream& in, std::optional<double> window_depth) {
    std::string line;
    if (!std::getline(in, line) || line != "position") {
        throw std::invalid_argument("configuration CSV must start with the header 'position'");
    }
    std::vector<double> points;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::size_t used = 0;
        double x = std::stod(line, &used);
        if (used != line.size()) throw std::invalid_argument("configuration CSV: bad number '" + line + "'");
        points.push_back(x);
    }
    if (window_depth) return Configuration::from_points(std::move(points), *window_depth);
    return Configuration::from_points(std::move(points));
}

} // namespace edgerace
