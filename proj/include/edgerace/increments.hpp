#ifndef EDGERACE_INCREMENTS_HPP
#define EDGERACE_INCREMENTS_HPP

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "edgerace/random.hpp"

namespace edgerace {

struct GridSpec {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t points = 0;
};

/// Cumulant generating function and its first two derivatives at one point.
struct Cumulant {
    double value = 0.0;      // log E e^{lambda h}
    double slope = 0.0;      // tilted mean
    double curvature = 0.0;  // tilted variance
};

/// One-step increment law. Gaussian and uniform laws carry closed forms;
/// tabulated laws hold a piecewise-linear density on a uniform grid and use
/// the trapezoid rule for every moment. Any law may additionally carry an
/// exponential tilt, so tilting never leaves the family.
class IncrementModel {
public:
    enum class Kind { gaussian, uniform, tabulated };

    static IncrementModel gaussian(double mean, double variance);
    static IncrementModel uniform(double lo, double hi);
    /// Density values at grid.points equally spaced nodes; rescaled so the
    /// trapezoid rule integrates them to 1.
    static IncrementModel tabulated(GridSpec grid, std::vector<double> density);

    Kind kind() const;
    std::string describe() const;

    double density(double x) const;
    double cdf(double x) const;
    /// P(h >= x).
    double tail(double x) const;
    /// x with P(h >= x) = p, for p in (0, 1).
    double upper_quantile(double p) const;

    double mean() const;
    double variance() const;
    /// Interval of lambda on which the cumulant is declared trustworthy.
    std::pair<double, double> safe_range() const;
    bool in_safe_range(double lambda) const;
    /// Throws std::domain_error outside safe_range().
    Cumulant cumulant(double lambda) const;

    /// Law with density e^{s h} g(h) / e^{Lambda(s)}.
    IncrementModel tilted(double s) const;

    /// Support bounds (infinite for Gaussian laws).
    std::pair<double, double> support() const;
    /// Grid used for display and for density checks.
    GridSpec quadrature_grid() const;

    double draw(Engine& engine) const;
    void fill(std::span<double> out, Engine& engine) const;

    /// Parameters as (mean, variance) for Gaussian laws; used by exact tails.
    std::pair<double, double> gaussian_parameters() const;

private:
    struct Gaussian {
        double mean, variance;
    };
    struct Uniform {
        double lo, hi, theta;
    };
    struct Tabulated {
        GridSpec grid;
        std::vector<double> density;      // normalized by the trapezoid rule
        std::vector<double> cumulative;   // exact integral of the linear interpolant
        double lambda_lo, lambda_hi;
    };
    using Repr = std::variant<Gaussian, Uniform, Tabulated>;

    explicit IncrementModel(Repr repr) : repr_(std::move(repr)) {}
    static Tabulated make_tabulated(GridSpec grid, std::vector<double> density);

    Repr repr_;
};

Cumulant cumulant(const IncrementModel& model, double lambda);

struct LegendrePoint {
    double eta = 0.0;   // solves Lambda'(eta) = q
    double rate = 0.0;  // Lambda*(q) = eta q - Lambda(eta)
};

/// Convex conjugate at q by bracketed root-finding on Lambda'.
/// Throws std::domain_error when q is outside the attainable tilted means.
LegendrePoint legendre(const IncrementModel& model, double q);

/// Lambda(s) / s.
double front_velocity(const IncrementModel& model, double s);

IncrementModel tilt(const IncrementModel& model, double s);

std::vector<double> sample(const IncrementModel& model, std::size_t n, const StreamKey& stream);

enum class TailBackend { exact, br_approx, saddlepoint, mc_importance };

std::string to_string(TailBackend backend);
TailBackend parse_backend(const std::string& name);

/// Backend used when none is requested: exact when the sum law is known in
/// closed form (Gaussian models, or a single step), saddlepoint otherwise.
TailBackend default_backend(const IncrementModel& model, std::size_t steps);

struct McOptions {
    std::size_t samples = 100000;
    std::uint64_t seed = 0;
    /// Reject the estimate when its relative standard error exceeds this.
    std::optional<double> max_relative_error;
    std::size_t threads = 1;
};

struct TailQuery {
    std::size_t steps = 1;
    double level = 0.0;  // threshold y in P(S_steps >= y)
    TailBackend backend = TailBackend::exact;
    McOptions mc;
};

struct TailEstimate {
    double probability = 0.0;
    double standard_error = 0.0;  // zero for deterministic backends
    // Resolved large-deviation quantities at q = level / steps; left at 0 when
    // the backend does not need them.
    double q = 0.0;
    double eta = 0.0;
    double rate = 0.0;
    double psi = 0.0;
};

/// P(h_1 + ... + h_steps >= level).
TailEstimate sum_tail(const IncrementModel& model, const TailQuery& query);

struct TailRatio {
    double ratio = 0.0;          // P(S >= q tau + x) / P(S >= q tau)
    double standard_error = 0.0;
    double prediction = 0.0;     // e^{-eta(q) x}
    double eta = 0.0;
};

/// Ratio of tail probabilities one offset x apart. Monte Carlo backends use one
/// common tilted sample for numerator and denominator.
/// Throws std::domain_error when |x| > steps^window_exponent.
TailRatio tail_ratio(const IncrementModel& model, std::size_t steps, double q, double x,
                     TailBackend backend, const McOptions& mc = {},
                     double window_exponent = 0.4);

/// Evaluates P(S_steps >= y) for many thresholds with one fixed backend.
/// Monte Carlo evaluations seed each threshold from its bit pattern, so the
/// object stays a pure function of y.
class SumTail {
public:
    SumTail(IncrementModel model, std::size_t steps, TailBackend backend, McOptions mc = {});
    double operator()(double y) const;
    const IncrementModel& model() const { return model_; }
    std::size_t steps() const { return steps_; }
    TailBackend backend() const { return backend_; }
    /// Standard deviation of S_steps.
    double spread() const { return spread_; }
    double center() const { return center_; }

private:
    IncrementModel model_;
    std::size_t steps_;
    TailBackend backend_;
    McOptions mc_;
    double center_ = 0.0;
    double spread_ = 0.0;
};

} // namespace edgerace

#endif
