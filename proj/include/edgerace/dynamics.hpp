#ifndef EDGERACE_DYNAMICS_HPP
#define EDGERACE_DYNAMICS_HPP

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "edgerace/configuration.hpp"
#include "edgerace/increments.hpp"
#include "edgerace/random.hpp"

namespace edgerace {

/// What happens below the window bottom x_1 - W.
enum class WindowPolicy {
    /// Nothing lives below the window; the configuration is what it is.
    truncate,
    /// Below the window sits a Poisson continuation with density
    /// A e^{lambda (b - x)} at depth b - x, fitted to the window.
    /// Continuation particles that jump into the new window are added.
    poisson_continuation,
};

/// Pre-index recorded for particles that entered from the continuation.
inline constexpr std::size_t kFromContinuation = std::numeric_limits<std::size_t>::max();

struct EvolutionRecord {
    Configuration pre;
    Configuration post;
    std::vector<double> increments;          // by pre-order
    std::vector<std::size_t> permutation;    // post rank -> pre index (0-based)
    double front_displacement = 0.0;
    std::size_t dropped = 0;                 // pre particles that fell below the new window
    std::size_t entered = 0;                 // continuation particles that entered it
};

/// One step: every particle gets an independent increment, the result is
/// re-ranked and the window re-anchored at the new leader with the same depth.
EvolutionRecord evolve(const Configuration& config, const IncrementModel& model, const StreamKey& stream,
                       WindowPolicy policy = WindowPolicy::truncate);

/// One step with explicitly supplied increments (one per particle, pre-order).
EvolutionRecord evolve_with(const Configuration& config, std::span<const double> increments);

struct StepSummary {
    double leader_position = 0.0;
    double displacement = 0.0;
    std::size_t dropped = 0;
    std::size_t entered = 0;
};

struct Track {
    Configuration final;
    std::vector<StepSummary> steps;
};

/// Composition of `steps` single steps; step t draws from stream.child(t).
/// Between steps particles are kept unsorted, so only the first step matches
/// evolve() draw for draw; later steps agree in law. With the continuation
/// policy the fit is made once on the input window and then carried forward
/// under the dynamics (same rate, amplitude times e^{Lambda(lambda)} per step).
Track evolve_many(const Configuration& config, const IncrementModel& model, std::size_t steps,
                  const StreamKey& stream, WindowPolicy policy = WindowPolicy::truncate);

/// Expected number of particles above x after one step: sum P(h >= x - x_n).
double regularity_count(const Configuration& config, const IncrementModel& model, double x);

/// Exponential occupancy fit A e^{lambda t} to the particles behind the leader,
/// by maximum likelihood for a density growing with depth t below the leader.
struct TailFit {
    double amplitude = 0.0;  // A: density at the window bottom
    double rate = 0.0;       // lambda
};

/// Throws NumericalError when the window holds fewer than three particles, has
/// zero or infinite depth, or the fitted density does not grow with depth.
TailFit fit_tail(const Configuration& config);

struct TruncationBias {
    double bound = 0.0;
    TailFit fit;
};

/// Expected number of continuation particles below the window that reach
/// `cutoff` after `steps` steps: int_0^inf A e^{lambda d} P(S >= cutoff - b + d) dd.
/// Zero for windows of infinite depth.
TruncationBias truncation_bias(const Configuration& config, const IncrementModel& model, std::size_t steps,
                               double cutoff);
TruncationBias truncation_bias(const Configuration& config, const IncrementModel& model, std::size_t steps,
                               double cutoff, TailFit fit);

/// Evolution trace as CSV: step, leader_position, displacement, dropped_count.
std::string trace_csv(const Track& track, double start_leader);

} // namespace edgerace

#endif
