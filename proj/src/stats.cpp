#include "edgerace/stats.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/poisson.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace edgerace {

EmpiricalCdf::EmpiricalCdf(std::vector<double> sample) : values_(std::move(sample)) {
    if (values_.empty()) throw std::invalid_argument("EmpiricalCdf: empty sample");
    for (double v : values_) {
        if (!std::isfinite(v)) throw std::invalid_argument("EmpiricalCdf: sample values must be finite");
    }
    std::sort(values_.begin(), values_.end());
}

double EmpiricalCdf::operator()(double x) const {
    auto it = std::upper_bound(values_.begin(), values_.end(), x);
    return static_cast<double>(it - values_.begin()) / static_cast<double>(values_.size());
}

double EmpiricalCdf::mean() const {
    return std::accumulate(values_.begin(), values_.end(), 0.0) / static_cast<double>(values_.size());
}

double EmpiricalCdf::standard_error() const {
    const double n = static_cast<double>(values_.size());
    if (values_.size() < 2) return 0.0;
    double m = mean(), ss = 0.0;
    for (double v : values_) ss += (v - m) * (v - m);
    return std::sqrt(ss / (n - 1.0) / n);
}

double ks_coefficient(double alpha) {
    if (alpha == 0.05) return 1.358;
    if (alpha == 0.01) return 1.628;
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("ks_coefficient: alpha must lie in (0, 1)");
    return std::sqrt(-0.5 * std::log(alpha / 2.0));
}

KsResult ks_distance(const EmpiricalCdf& sample, const std::function<double(double)>& reference) {
    if (sample.size() < 10) throw std::invalid_argument("ks_distance: need at least 10 samples");
    auto v = sample.values();
    const double n = static_cast<double>(v.size());
    double d = 0.0;
    for (std::size_t i = 0; i < v.size();) {
        std::size_t j = i;
        while (j < v.size() && v[j] == v[i]) ++j;
        double ref = reference(v[i]);
        if (!(ref >= 0.0 && ref <= 1.0)) throw std::invalid_argument("ks_distance: reference is not a cdf");
        d = std::max({d, static_cast<double>(j) / n - ref, ref - static_cast<double>(i) / n});
        i = j;
    }
    double root = std::sqrt(n);
    return {d, ks_coefficient(0.05) / root, ks_coefficient(0.01) / root};
}

KsResult ks_two_sample(const EmpiricalCdf& a, const EmpiricalCdf& b) {
    if (a.size() < 10 || b.size() < 10) throw std::invalid_argument("ks_two_sample: need at least 10 samples each");
    auto x = a.values();
    auto y = b.values();
    const double n = static_cast<double>(x.size()), m = static_cast<double>(y.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < x.size() && j < y.size()) {
        double t = std::min(x[i], y[j]);
        while (i < x.size() && x[i] == t) ++i;
        while (j < y.size() && y[j] == t) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
    }
    double scale = std::sqrt((n + m) / (n * m));
    return {d, ks_coefficient(0.05) * scale, ks_coefficient(0.01) * scale};
}

EmpiricalCdf empirical_gap_cdf(std::span<const Configuration> ensemble, std::size_t k) {
    if (k < 1) throw std::invalid_argument("empirical_gap_cdf: rank k starts at 1");
    std::vector<double> sample;
    sample.reserve(ensemble.size());
    for (const auto& config : ensemble) {
        if (config.size() < k + 1) {
            std::ostringstream msg;
            msg << "empirical_gap_cdf: configuration with " << config.size() << " particles has no gap " << k;
            throw std::invalid_argument(msg.str());
        }
        sample.push_back(config[k - 1] - config[k]);
    }
    return EmpiricalCdf(std::move(sample));
}

MonteCarloMean mpgfl_estimate(std::span<const Configuration> ensemble, const TabulatedFunction& f) {
    if (ensemble.empty()) throw std::invalid_argument("mpgfl_estimate: empty ensemble");
    if (f.lo() != 0.0) throw std::invalid_argument("mpgfl_estimate: f must be tabulated on [0, D]");
    // Linear interpolation keeps f nonzero up to the node after its last
    // nonzero value; beyond that the window need not reach.
    auto values = f.values();
    std::size_t last = values.size();
    while (last > 0 && values[last - 1] == 0.0) --last;
    const double reach = last == 0 ? 0.0 : f.node(std::min(last, values.size() - 1));
    double sum = 0.0, sum_sq = 0.0;
    for (const auto& config : ensemble) {
        if (config.window_depth() < reach) {
            std::ostringstream msg;
            msg << "mpgfl_estimate: window depth " << config.window_depth() << " is shallower than supp f = [0, "
                << reach << "]";
            throw std::domain_error(msg.str());
        }
        double exponent = 0.0;
        double leader = config.leader();
        for (double x : config.positions()) {
            double gap = leader - x;
            if (gap > reach) break;
            exponent += f(gap);
        }
        double value = std::exp(-exponent);
        sum += value;
        sum_sq += value * value;
    }
    const double n = static_cast<double>(ensemble.size());
    double mean = sum / n;
    double var = n > 1.0 ? std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0)) : 0.0;
    return {mean, std::sqrt(var / n), ensemble.size()};
}

PoissonFunctional mpgfl_poisson(const TailIntensity& f_tail, const TabulatedFunction& f, double window) {
    if (!(window > 0.0)) throw std::invalid_argument("mpgfl_poisson: window must be positive");
    if (f.lo() != 0.0) throw std::invalid_argument("mpgfl_poisson: f must be tabulated on [0, D]");
    PoissonFunctional out;
    out.boundary_mass = 1.0 - (std::exp(-f_tail(window)) - std::exp(-f_tail(-window)));
    if (out.boundary_mass > 1e-4) {
        std::ostringstream msg;
        msg << "mpgfl_poisson: window too small, leader escapes with probability " << out.boundary_mass;
        throw std::domain_error(msg.str());
    }
    // Between table nodes 1 - e^{-f} is smooth, so each cell gets one
    // Gauss-Kronrod rule in the gap variable v = x - y.
    const std::size_t cells = f.size() - 1;
    auto values = f.values();
    auto inner = [&](double x) {
        double total = 0.0;
        for (std::size_t c = 0; c < cells; ++c) {
            if (values[c] == 0.0 && values[c + 1] == 0.0) continue;
            auto integrand = [&](double v) { return -std::expm1(-f(v)) * -f_tail.derivative(x - v); };
            total += boost::math::quadrature::gauss_kronrod<double, 21>::integrate(integrand, f.node(c), f.node(c + 1), 0);
        }
        return total;
    };
    auto outer = [&](double x) {
        double fx = f_tail(x);
        return -f_tail.derivative(x) * std::exp(-fx - inner(x));
    };
    out.value = std::exp(-f(0.0)) * integrate(outer, -window, window, 1e-7);
    return out;
}

ChiSquareResult chi_square_poisson(std::span<const std::size_t> counts, double mean, double alpha) {
    if (counts.empty()) throw std::invalid_argument("chi_square_poisson: no counts");
    if (!(mean > 0.0)) throw std::invalid_argument("chi_square_poisson: mean must be positive");
    boost::math::poisson_distribution<double> law(mean);
    const double n = static_cast<double>(counts.size());
    // Cells [lo, hi], the last one open-ended.
    struct Cell {
        std::size_t lo, hi;
        double expected;
    };
    std::vector<Cell> cells;
    std::size_t k = 0;
    double acc = boost::math::pdf(law, 0.0);
    while (n * acc < 5.0) acc += boost::math::pdf(law, static_cast<double>(++k));
    cells.push_back({0, k, n * acc});
    std::size_t next = k + 1;
    constexpr std::size_t kOpen = static_cast<std::size_t>(-1);
    for (;;) {
        double rest = n * boost::math::cdf(boost::math::complement(law, static_cast<double>(next) - 1.0));
        if (rest < 10.0) {
            if (rest >= 5.0) {
                cells.push_back({next, kOpen, rest});
            } else {
                cells.back().hi = kOpen;
                cells.back().expected += rest;
            }
            break;
        }
        std::size_t hi = next;
        double expected = n * boost::math::pdf(law, static_cast<double>(hi));
        while (expected < 5.0) expected += n * boost::math::pdf(law, static_cast<double>(++hi));
        cells.push_back({next, hi, expected});
        next = hi + 1;
    }
    std::vector<double> observed(cells.size(), 0.0);
    for (std::size_t c : counts) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (c >= cells[i].lo && c <= cells[i].hi) {
                observed[i] += 1.0;
                break;
            }
        }
    }
    ChiSquareResult out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        double diff = observed[i] - cells[i].expected;
        out.statistic += diff * diff / cells[i].expected;
    }
    out.degrees_of_freedom = cells.size() > 1 ? cells.size() - 1 : 1;
    boost::math::chi_squared_distribution<double> reference(static_cast<double>(out.degrees_of_freedom));
    out.critical = boost::math::quantile(boost::math::complement(reference, alpha));
    return out;
}

double correlation(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("correlation: need two equal-length samples");
    const double n = static_cast<double>(a.size());
    double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

} // namespace edgerace
