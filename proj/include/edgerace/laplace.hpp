#ifndef EDGERACE_LAPLACE_HPP
#define EDGERACE_LAPLACE_HPP

#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "edgerace/increments.hpp"
#include "edgerace/numerics.hpp"

namespace edgerace {

struct Atom {
    double location = 0.0;  // u >= 0
    double weight = 0.0;    // w > 0
};

/// Finite atomic measure on [0, inf), sorted by location, locations distinct.
class LaplaceMeasure {
public:
    /// Sorts by location and adds the weights of atoms at identical locations.
    /// Throws std::invalid_argument on empty input, negative locations or
    /// nonpositive weights.
    static LaplaceMeasure from_atoms(std::vector<Atom> atoms);
    static LaplaceMeasure single(double location, double weight = 1.0);

    std::span<const Atom> atoms() const { return atoms_; }
    std::size_t size() const { return atoms_.size(); }
    double total_mass() const;
    /// Sum of w u / total.
    double mean_location() const;

private:
    explicit LaplaceMeasure(std::vector<Atom> atoms) : atoms_(std::move(atoms)) {}
    std::vector<Atom> atoms_;
};

/// R(x) = sum w e^{-x u}, evaluated in log space.
double transform(const LaplaceMeasure& rho, double x);
double log_transform(const LaplaceMeasure& rho, double x);

/// Weights w e^{-alpha u}, so transform(shift(rho, a), x) = transform(rho, x + a).
LaplaceMeasure shift(const LaplaceMeasure& rho, double alpha);

struct Normalization {
    LaplaceMeasure measure;
    double shift = 0.0;  // alpha with transform(rho, alpha) = 1
};

/// Normalizes by shifting, never by rescaling. Throws std::domain_error when
/// every atom sits at u = 0, or when an atom at u = 0 already has mass >= 1.
Normalization normalize(const LaplaceMeasure& rho);

struct Convolution {
    LaplaceMeasure measure;
    double z = 0.0;  // root of sum w e^{Lambda(u) - z u} = 1
};

/// Laplace measure of the normalized tail of F * g, with weights
/// w e^{Lambda(u) - z u}. The input must be normalized to mass 1.
Convolution convolve_g(const LaplaceMeasure& rho, const IncrementModel& model);

/// Decreasing intensity tail F used as the expected count above x. Either
/// laplace-backed, F(x) = R(x + offset), or empirical: strictly positive
/// values on an increasing grid, interpolated log-linearly and extended by the
/// end segments' exponential rates.
class TailIntensity {
public:
    static TailIntensity laplace(LaplaceMeasure rho, double offset = 0.0);
    static TailIntensity exponential(double s, double z = 0.0);  // e^{-s (x - z)}
    static TailIntensity empirical(std::vector<double> xs, std::vector<double> values);

    double operator()(double x) const;
    double log_value(double x) const;
    /// dF/dx.
    double derivative(double x) const;
    /// G^{-1}(a) = inf{x : F(x) <= a}. Throws std::domain_error when a is not in
    /// the open range (F(+inf), F(-inf)).
    double inverse(double level) const;
    /// Integral of F over [x, inf); +inf when F does not vanish at +inf.
    double integral_above(double x) const;
    /// Lower bound on -F'(x) / F(x) over the whole line.
    double min_log_slope() const;
    /// lim F(x) as x -> +inf.
    double floor_level() const;
    /// lim F(x) as x -> -inf.
    double ceiling_level() const;

    /// x -> F(x - b).
    TailIntensity translated(double b) const;
    /// Shift with F(0) = 1 (sup convention on flat stretches).
    TailIntensity normalized() const;

    bool is_laplace() const { return std::holds_alternative<Laplace>(repr_); }
    /// Measure and offset of a laplace-backed intensity.
    const LaplaceMeasure& measure() const;
    double offset() const;

private:
    struct Laplace {
        LaplaceMeasure rho;
        double offset;
    };
    struct Empirical {
        std::vector<double> xs;
        std::vector<double> logs;
        double shift;  // evaluation at x uses the grid at x - shift
    };
    using Repr = std::variant<Laplace, Empirical>;
    explicit TailIntensity(Repr repr) : repr_(std::move(repr)) {}
    Repr repr_;
};

struct LevelPair {
    double a = 0.0;  // a < b
    double b = 0.0;
};

/// All pairs of a log-spaced level grid on [lo, hi] with `points` levels.
std::vector<LevelPair> level_pairs(double lo, double hi, std::size_t points);

struct SteepnessResult {
    bool steeper = true;
    std::optional<LevelPair> witness;  // first violating pair
    double max_excess = -kInf;         // max of G-interval minus F-interval
};

/// G is steeper than F when G^{-1}(a) - G^{-1}(b) <= F^{-1}(a) - F^{-1}(b) + slack
/// for every pair a < b.
SteepnessResult steeper(const TailIntensity& g, const TailIntensity& f, std::span<const LevelPair> levels,
                        double slack = 1e-9);

/// Probability that the first gap of the Poisson process with tail F exceeds u,
/// integrated in the level variable t = F(x).
double gap_functional(const TailIntensity& f, double u);

/// Integral of psi(F(t)) dt for a tabulated psi on [0, a_max] that vanishes at
/// both ends; the part below the first positive node uses psi's linear piece
/// and the exact tail integral of F.
double psi_functional(const TailIntensity& f, const TabulatedFunction& psi);

/// Integral of F^n e^{-F} / n! dt, with both neglected tails bounded below 1e-13.
/// Throws std::domain_error when the integral diverges.
double expected_gap(const TailIntensity& f, int n);

} // namespace edgerace

#endif
