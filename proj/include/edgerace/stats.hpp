#ifndef EDGERACE_STATS_HPP
#define EDGERACE_STATS_HPP

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "edgerace/configuration.hpp"
#include "edgerace/laplace.hpp"
#include "edgerace/numerics.hpp"

namespace edgerace {

class EmpiricalCdf {
public:
    /// Throws std::invalid_argument on an empty sample or non-finite values.
    explicit EmpiricalCdf(std::vector<double> sample);

    std::size_t size() const { return values_.size(); }
    std::span<const double> values() const { return values_; }
    /// Fraction of the sample <= x.
    double operator()(double x) const;
    double mean() const;
    /// Standard error of the mean.
    double standard_error() const;

private:
    std::vector<double> values_;
};

/// Asymptotic Kolmogorov coefficient: 1.358 for alpha = 0.05, 1.628 for 0.01.
double ks_coefficient(double alpha);

struct KsResult {
    double statistic = 0.0;
    double critical_05 = 0.0;
    double critical_01 = 0.0;
    bool passes(double alpha) const { return statistic < (alpha == 0.01 ? critical_01 : critical_05); }
};

/// sup |F_hat - F_ref|. Needs at least 10 samples; throws std::invalid_argument
/// when the reference is not a cdf on the sample (values outside [0, 1]).
KsResult ks_distance(const EmpiricalCdf& sample, const std::function<double(double)>& reference);

/// Two-sample statistic with critical values c(alpha) sqrt((n + m) / (n m)).
KsResult ks_two_sample(const EmpiricalCdf& a, const EmpiricalCdf& b);

/// Sample of the k-th gap x_k - x_{k+1} (k >= 1) across the ensemble.
EmpiricalCdf empirical_gap_cdf(std::span<const Configuration> ensemble, std::size_t k);

struct MonteCarloMean {
    double mean = 0.0;
    double standard_error = 0.0;
    std::size_t samples = 0;
};

/// Ensemble mean of exp(-sum_n f(x_1 - x_n)), leader term f(0) included.
/// f is read as zero outside its table; every configuration's window must
/// cover the support of f.
MonteCarloMean mpgfl_estimate(std::span<const Configuration> ensemble, const TabulatedFunction& f);

struct PoissonFunctional {
    double value = 0.0;
    double boundary_mass = 0.0;  // probability that the leader falls outside [-W, W]
};

/// Same functional for the Poisson process with tail F, by nested quadrature
/// over leader positions in [-W, W]. Throws std::domain_error when the leader
/// escapes the window with probability above 1e-4.
PoissonFunctional mpgfl_poisson(const TailIntensity& f_tail, const TabulatedFunction& f, double window);

struct ChiSquareResult {
    double statistic = 0.0;
    std::size_t degrees_of_freedom = 0;
    double critical = 0.0;
    bool passes() const { return statistic < critical; }
};

/// Goodness of fit of nonnegative counts to Poisson(mean); cells with
/// expected count below 5 are pooled into the tails.
ChiSquareResult chi_square_poisson(std::span<const std::size_t> counts, double mean, double alpha);

/// Pearson correlation.
double correlation(std::span<const double> a, std::span<const double> b);

} // namespace edgerace

#endif
