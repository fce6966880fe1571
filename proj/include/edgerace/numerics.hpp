#ifndef EDGERACE_NUMERICS_HPP
#define EDGERACE_NUMERICS_HPP

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace edgerace {

/// Raised when a root bracket, quadrature or fit cannot reach its tolerance.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// P(Z >= z) for a standard normal Z, accurate deep into the upper tail.
double normal_upper_tail(double z);
double normal_cdf(double z);
double normal_density(double z);
/// z with P(Z >= z) = p.
double normal_upper_quantile(double p);

double log_sum_exp(std::span<const double> terms);

struct RootOptions {
    double x_tolerance = 0.0;   // stop once the bracket is this narrow
    double f_tolerance = 0.0;   // stop once |f| is this small
    int max_iterations = 400;
};

/// Root of f on [lo, hi] where f(lo) and f(hi) have opposite signs.
/// Illinois-style secant steps inside the bracket, with a bisection step
/// whenever the bracket fails to halve over two iterations.
double find_root(const std::function<double(double)>& f, double lo, double hi,
                 const RootOptions& options = {});

/// Grows [lo, hi] geometrically around a starting interval until f changes
/// sign. Returns false if the limits are hit first.
bool expand_bracket(const std::function<double(double)>& f, double& lo, double& hi,
                    double lower_limit, double upper_limit, int max_steps = 200);

/// Adaptive Gauss-Kronrod integral of f over [a, b] (b may be +inf).
/// Throws NumericalError when the error estimate exceeds
/// max(abs_tolerance, rel_tolerance * |result|).
double integrate(const std::function<double(double)>& f, double a, double b,
                 double abs_tolerance, double rel_tolerance = 0.0);

/// Piecewise-linear function on a uniform grid, zero outside [lo, hi].
class TabulatedFunction {
public:
    TabulatedFunction(double lo, double hi, std::vector<double> values);
    static TabulatedFunction sample(double lo, double hi, std::size_t points,
                                    const std::function<double(double)>& f);
    static TabulatedFunction zero(double lo, double hi);

    double operator()(double x) const;
    double lo() const { return lo_; }
    double hi() const { return hi_; }
    double step() const { return step_; }
    std::size_t size() const { return values_.size(); }
    double node(std::size_t i) const;
    std::span<const double> values() const { return values_; }

private:
    double lo_, hi_, step_;
    std::vector<double> values_;
};

} // namespace edgerace

#endif
