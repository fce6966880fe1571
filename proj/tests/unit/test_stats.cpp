#include <doctest.h>

#include <cmath>
#include <random>

#include "edgerace/dynamics.hpp"
#include "edgerace/stats.hpp"
#include "oracles.hpp"

using namespace edgerace;

namespace {

std::vector<Configuration> rem_ensemble(double s, std::size_t replicas, std::size_t particles, std::uint64_t seed) {
    std::vector<Configuration> out;
    StreamKey root(seed);
    for (std::size_t r = 0; r < replicas; ++r) out.push_back(sample_rem(s, 0.0, SampleDepth::particles(particles), root.child(r)));
    return out;
}

// C on (ramp, u], ramping linearly over `ramp` at both ends, zero at 0.
TabulatedFunction plateau(double u, double c, double ramp, double reach) {
    return TabulatedFunction::sample(0.0, reach, static_cast<std::size_t>(std::lround(reach / ramp)) + 1, [&](double w) {
        if (w <= 0.0 || w >= u + ramp) return 0.0;
        if (w < ramp) return c * w / ramp;
        if (w > u) return c * (u + ramp - w) / ramp;
        return c;
    });
}

TabulatedFunction bump(double height, double reach) {
    return TabulatedFunction::sample(0.0, reach, 201, [&](double w) {
        double t = w / reach;
        return height * 16.0 * t * t * (1 - t) * (1 - t);
    });
}

double combined(const MonteCarloMean& a, const MonteCarloMean& b) {
    return std::hypot(a.standard_error, b.standard_error);
}

} // namespace

TEST_CASE("empirical cdf") {
    EmpiricalCdf e({3.0, 1.0, 2.0, 2.0});
    CHECK(e(0.5) == 0.0);
    CHECK(e(2.0) == 0.75);
    CHECK(e(3.0) == 1.0);
    CHECK(e.mean() == 2.0);
    CHECK(e.standard_error() == doctest::Approx(std::sqrt(2.0 / 3.0 / 4.0)));
    CHECK_THROWS_AS(EmpiricalCdf({}), std::invalid_argument);
    CHECK_THROWS_AS(EmpiricalCdf({1.0, NAN}), std::invalid_argument);
}

TEST_CASE("KS calibration") {
    CHECK(ks_coefficient(0.05) == 1.358);
    CHECK(ks_coefficient(0.01) == 1.628);
    int below = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::mt19937_64 engine(1000 + trial);
        std::exponential_distribution<double> law(1.0);
        std::vector<double> sample(10000);
        for (auto& v : sample) v = law(engine);
        auto ks = ks_distance(EmpiricalCdf(sample), [](double x) { return x <= 0 ? 0.0 : -std::expm1(-x); });
        below += ks.passes(0.05);
    }
    CHECK(below >= 93);

    auto constant = ks_distance(EmpiricalCdf(std::vector<double>(50, 0.0)), [](double x) { return oracle::upper_normal(-x); });
    CHECK(constant.statistic >= 0.5);

    std::vector<double> small(100, 1.0), large(200, 1.0);
    auto ref = [](double x) { return x < 1.0 ? 0.0 : 1.0; };
    CHECK(ks_distance(EmpiricalCdf(small), ref).critical_01 / ks_distance(EmpiricalCdf(large), ref).critical_01 ==
          doctest::Approx(std::sqrt(2.0)));
    CHECK_THROWS_AS(ks_distance(EmpiricalCdf({1, 2, 3}), ref), std::invalid_argument);
    CHECK_THROWS_AS(ks_distance(EmpiricalCdf(small), [](double) { return 2.0; }), std::invalid_argument);
}

TEST_CASE("two-sample KS") {
    std::mt19937_64 engine(3);
    std::normal_distribution<double> law;
    std::vector<double> a(5000), b(5000), shifted(5000);
    for (auto& v : a) v = law(engine);
    for (auto& v : b) v = law(engine);
    for (auto& v : shifted) v = law(engine) + 0.2;
    CHECK(ks_two_sample(EmpiricalCdf(a), EmpiricalCdf(b)).passes(0.01));
    CHECK_FALSE(ks_two_sample(EmpiricalCdf(a), EmpiricalCdf(shifted)).passes(0.01));
    CHECK(ks_two_sample(EmpiricalCdf(a), EmpiricalCdf(a)).statistic == 0.0);
}

TEST_CASE("gap samples") {
    auto ensemble = rem_ensemble(1.0, 10000, 8, 11);
    for (std::size_t k = 1; k <= 5; ++k) {
        double rate = static_cast<double>(k);
        auto ks = ks_distance(empirical_gap_cdf(ensemble, k), [&](double u) { return u <= 0 ? 0.0 : -std::expm1(-rate * u); });
        CHECK(ks.passes(0.01));
    }
    std::vector<Configuration> same(20, Configuration::from_points({0, -0.5, -2}));
    auto point = empirical_gap_cdf(same, 2);
    CHECK(point(1.49) == 0.0);
    CHECK(point(1.5) == 1.0);
    CHECK_THROWS_AS(empirical_gap_cdf(same, 3), std::invalid_argument);
    CHECK_THROWS_AS(empirical_gap_cdf(same, 0), std::invalid_argument);
}

TEST_CASE("MPGFL estimates") {
    auto ensemble = rem_ensemble(1.0, 10000, 400, 12);
    auto zero = TabulatedFunction::zero(0.0, 2.0);
    auto one = mpgfl_estimate(ensemble, zero);
    CHECK(one.mean == 1.0);
    CHECK(one.standard_error == 0.0);

    // A tall plateau on [0, u]: exp(-C) P(first gap > u) = exp(-C - u).
    const double c = 20.0, u = 0.7, ramp = 1e-3;
    auto wall = TabulatedFunction::sample(0.0, 1.0, 1001, [&](double w) { return w <= u ? c : w >= u + ramp ? 0.0 : c * (u + ramp - w) / ramp; });
    auto gated = mpgfl_estimate(ensemble, wall);
    CHECK(std::abs(gated.mean / std::exp(-c) - std::exp(-u)) < 4.0 * gated.standard_error / std::exp(-c) + 1e-3);

    auto f = bump(0.8, 3.0);
    auto first = mpgfl_estimate(std::span(ensemble).first(5000), f);
    auto second = mpgfl_estimate(std::span(ensemble).last(5000), f);
    CHECK(std::abs(first.mean - second.mean) < 4.0 * combined(first, second));
    CHECK(first.samples == 5000);

    std::vector<Configuration> shallow{Configuration::from_points({0, -1}, 1.0)};
    CHECK_THROWS_AS(mpgfl_estimate(shallow, f), std::domain_error);
}

TEST_CASE("MPGFL for Poisson intensities") {
    auto rem = TailIntensity::exponential(1.0);
    auto zero = TabulatedFunction::zero(0.0, 2.0);
    auto total = mpgfl_poisson(rem, zero, 12.0);
    CHECK(total.value == doctest::Approx(1.0 - total.boundary_mass).epsilon(1e-6));
    CHECK(total.boundary_mass < 1e-4);
    CHECK_THROWS_AS(mpgfl_poisson(rem, zero, 2.0), std::domain_error);

    for (double s : {0.5, 1.0, 2.0}) {
        auto f_tail = TailIntensity::exponential(s);
        const double u = 0.8;
        auto wall = plateau(u, 40.0, 1e-3, 1.0);
        double window = 12.0 / std::min(s, 1.0);
        CHECK(mpgfl_poisson(f_tail, wall, window).value == doctest::Approx(std::exp(-s * u)).epsilon(5e-3));
    }

    // Shift invariance, and agreement with the gap functional for a two-atom intensity.
    auto two = TailIntensity::laplace(LaplaceMeasure::from_atoms({{1.0, 0.5}, {2.0, 0.5}}));
    auto f = bump(0.8, 3.0);
    double base = mpgfl_poisson(two, f, 14.0).value;
    CHECK(mpgfl_poisson(two.translated(2.5), f, 17.0).value == doctest::Approx(base).epsilon(1e-6));
    CHECK(mpgfl_poisson(two, plateau(1.2, 40.0, 1e-3, 1.5), 14.0).value == doctest::Approx(gap_functional(two, 1.2)).epsilon(5e-3));
}

TEST_CASE("MPGFL estimate agrees with the Poisson value") {
    for (double s : {1.0, 1.5}) {
        auto ensemble = rem_ensemble(s, 10000, 2000, 13);
        auto f = bump(0.8, 3.0);
        auto mc = mpgfl_estimate(ensemble, f);
        auto exact = mpgfl_poisson(TailIntensity::exponential(s), f, 14.0);
        CHECK(std::abs(mc.mean - exact.value) < 4.0 * mc.standard_error);
    }
}

TEST_CASE("MPGFL is invariant under one step from a REM state") {
    auto g = IncrementModel::gaussian(0.0, 1.0);
    auto pre = rem_ensemble(1.0, 8000, 1500, 14);
    std::vector<Configuration> post;
    StreamKey root(15);
    for (std::size_t r = 0; r < pre.size(); ++r) post.push_back(evolve(pre[r], g, root.child(r)).post);
    std::vector<TabulatedFunction> battery{bump(0.5, 1.0), bump(1.0, 2.5), plateau(0.5, 3.0, 0.05, 1.0),
                                           TabulatedFunction::sample(0.0, 2.0, 101, [](double w) { return w < 2.0 ? 0.3 * (2.0 - w) : 0.0; })};
    for (const auto& f : battery) {
        auto a = mpgfl_estimate(pre, f);
        auto b = mpgfl_estimate(post, f);
        CHECK(std::abs(a.mean - b.mean) < 4.0 * combined(a, b));
    }
}

TEST_CASE("chi-square against Poisson counts") {
    std::mt19937_64 engine(5);
    std::poisson_distribution<std::size_t> law(4.0);
    std::vector<std::size_t> counts(10000);
    for (auto& c : counts) c = law(engine);
    auto good = chi_square_poisson(counts, 4.0, 0.01);
    CHECK(good.passes());
    CHECK(good.degrees_of_freedom >= 8);
    CHECK_FALSE(chi_square_poisson(counts, 4.3, 0.01).passes());
    CHECK_THROWS_AS(chi_square_poisson(counts, 0.0, 0.01), std::invalid_argument);
}

TEST_CASE("correlation") {
    std::vector<double> a{1, 2, 3, 4}, b{2, 4, 6, 8}, c{4, 3, 2, 1};
    CHECK(correlation(a, b) == doctest::Approx(1.0));
    CHECK(correlation(a, c) == doctest::Approx(-1.0));
    CHECK_THROWS_AS(correlation(a, std::vector<double>{1.0}), std::invalid_argument);
}
