#include <doctest.h>

#include <cmath>
#include <numeric>

#include "edgerace/increments.hpp"
#include "edgerace/numerics.hpp"
#include "oracles.hpp"

using namespace edgerace;

namespace {

IncrementModel tabulated_gaussian() {
    GridSpec grid{-9.0, 9.0, 3601};
    std::vector<double> values(grid.points);
    for (std::size_t i = 0; i < grid.points; ++i) {
        double x = grid.lo + (grid.hi - grid.lo) * static_cast<double>(i) / static_cast<double>(grid.points - 1);
        values[i] = std::exp(-0.5 * x * x);
    }
    return IncrementModel::tabulated(grid, values);
}

} // namespace

TEST_CASE("gaussian cumulant has the closed form") {
    auto g = IncrementModel::gaussian(0.0, 1.0);
    Cumulant c = cumulant(g, 2.0);
    CHECK(c.value == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(c.slope == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(c.curvature == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("cumulant at zero is exactly zero with mean and variance") {
    for (const auto& model : {IncrementModel::gaussian(0.3, 2.0), IncrementModel::uniform(-1.0, 2.0), tabulated_gaussian()}) {
        Cumulant c = cumulant(model, 0.0);
        CHECK(c.value == 0.0);
        CHECK(c.slope == doctest::Approx(model.mean()));
        CHECK(c.curvature == doctest::Approx(model.variance()));
    }
    auto u = IncrementModel::uniform(-1.0, 2.0);
    CHECK(u.mean() == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(u.variance() == doctest::Approx(9.0 / 12.0).epsilon(1e-14));
}

TEST_CASE("uniform cumulant matches direct quadrature of the tilted density") {
    auto u = IncrementModel::uniform(0.0, 1.0);
    CHECK(cumulant(u, 1.0).value == doctest::Approx(std::log(std::exp(1.0) - 1.0)).epsilon(1e-14));
    for (double lambda : {-30.0, -3.0, -0.05, 1e-4, 0.5, 2.0, 17.0}) {
        double z = oracle::simpson([&](double x) { return std::exp(lambda * x); }, 0.0, 1.0);
        double m1 = oracle::simpson([&](double x) { return x * std::exp(lambda * x); }, 0.0, 1.0) / z;
        double m2 = oracle::simpson([&](double x) { return x * x * std::exp(lambda * x); }, 0.0, 1.0) / z;
        Cumulant c = cumulant(u, lambda);
        CHECK(c.value == doctest::Approx(std::log(z)).epsilon(1e-10));
        CHECK(c.slope == doctest::Approx(m1).epsilon(1e-10));
        CHECK(c.curvature == doctest::Approx(m2 - m1 * m1).epsilon(1e-8));
    }
}

TEST_CASE("tabulated gaussian reproduces the gaussian cumulant") {
    auto t = tabulated_gaussian();
    for (double lambda : {-2.0, -0.5, 0.5, 1.0, 2.0}) {
        Cumulant c = cumulant(t, lambda);
        CHECK(c.value == doctest::Approx(0.5 * lambda * lambda).epsilon(1e-7));
        CHECK(c.slope == doctest::Approx(lambda).epsilon(1e-7));
        CHECK(c.curvature == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("cumulant outside the safe range is an error") {
    auto t = tabulated_gaussian();
    auto [lo, hi] = t.safe_range();
    CHECK(hi > 2.0);
    CHECK(hi < 9.0);
    CHECK(lo == doctest::Approx(-hi));
    CHECK_THROWS_AS(cumulant(t, hi * 1.01), std::domain_error);
    CHECK_THROWS_AS(cumulant(IncrementModel::gaussian(0, 1), 41.0), std::domain_error);
}

TEST_CASE("tabulated density with a zero end is not clipped on that side") {
    // Triangle on [0, 1] peaking at 1: zero at the left end only.
    auto t = IncrementModel::tabulated({0.0, 1.0, 101}, [] {
        std::vector<double> v(101);
        for (int i = 0; i < 101; ++i) v[i] = i / 100.0;
        return v;
    }());
    auto [lo, hi] = t.safe_range();
    CHECK(lo == doctest::Approx(-1e4));
    CHECK(hi < 1.0);
}

TEST_CASE("legendre solves the tilted-mean condition") {
    auto g = IncrementModel::gaussian(0.0, 1.0);
    LegendrePoint lp = legendre(g, 0.3);
    CHECK(lp.eta == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(lp.rate == doctest::Approx(0.045).epsilon(1e-12));
    LegendrePoint at_mean = legendre(g, 0.0);
    CHECK(at_mean.eta == 0.0);
    CHECK(at_mean.rate == 0.0);

    auto u = IncrementModel::uniform(0.0, 1.0);
    double eta = legendre(u, 0.7).eta;
    double reference = oracle::bisect(
        [](double e) { return (std::exp(e) * (e - 1.0) + 1.0) / (e * (std::exp(e) - 1.0)) - 0.7; }, 0.1, 10.0);
    CHECK(eta == doctest::Approx(reference).epsilon(1e-10));
    CHECK_THROWS_AS(legendre(u, 1.5), std::domain_error);
}

TEST_CASE("legendre inverts the tilted mean for random tilts") {
    oracle::Gen gen(11);
    std::vector<IncrementModel> models{IncrementModel::gaussian(0.2, 1.5), IncrementModel::uniform(-1.0, 0.5),
                                       tabulated_gaussian()};
    for (const auto& model : models) {
        for (int i = 0; i < 50; ++i) {
            double eta0 = gen.uniform(-2.0, 2.0);
            double q = cumulant(model, eta0).slope;
            CHECK(legendre(model, q).eta == doctest::Approx(eta0).epsilon(1e-8));
        }
    }
}

TEST_CASE("cumulant is convex across the range") {
    oracle::Gen gen(12);
    for (const auto& model : {IncrementModel::uniform(0.0, 1.0), tabulated_gaussian()}) {
        for (int i = 0; i < 100; ++i) CHECK(cumulant(model, gen.uniform(-2.0, 2.0)).curvature >= -1e-8);
    }
}

TEST_CASE("front velocity") {
    CHECK(front_velocity(IncrementModel::gaussian(0, 1), 1.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(front_velocity(IncrementModel::gaussian(0.2, 3.0), 0.7) == doctest::Approx(0.2 + 3.0 * 0.7 / 2).epsilon(1e-14));
    double oracle_v = std::log(oracle::simpson([](double x) { return std::exp(x); }, 0.0, 1.0));
    CHECK(front_velocity(IncrementModel::uniform(0, 1), 1.0) == doctest::Approx(oracle_v).epsilon(1e-12));
    CHECK(front_velocity(IncrementModel::uniform(0, 1), 1.0) == doctest::Approx(0.5413248546129181).epsilon(1e-14));
    oracle::Gen gen(13);
    for (int i = 0; i < 30; ++i) {
        double s = gen.uniform(0.01, 5.0);
        auto u = IncrementModel::uniform(0, 1);
        CHECK(front_velocity(u, s) > u.mean());
    }
}

TEST_CASE("tilting") {
    auto g = tilt(IncrementModel::gaussian(0.5, 2.0), 0.25);
    auto [m, v] = g.gaussian_parameters();
    CHECK(m == doctest::Approx(1.0));
    CHECK(v == 2.0);
    auto u = IncrementModel::uniform(0, 1);
    auto ut = tilt(u, 1.0);
    for (double x : {0.0, 0.3, 0.9, 1.0}) CHECK(ut.density(x) == doctest::Approx(std::exp(x) / (std::exp(1.0) - 1.0)).epsilon(1e-13));
    CHECK(oracle::simpson([&](double x) { return ut.density(x); }, 0.0, 1.0) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(tilt(u, 0.0).density(0.4) == u.density(0.4));

    auto t = tabulated_gaussian();
    auto back = tilt(tilt(t, 1.3), -1.3);
    GridSpec grid = t.quadrature_grid();
    for (std::size_t i = 0; i < grid.points; i += 37) {
        double x = grid.lo + (grid.hi - grid.lo) * static_cast<double>(i) / static_cast<double>(grid.points - 1);
        CHECK(std::abs(back.density(x) - t.density(x)) <= 1e-8);
    }
    auto ub = tilt(tilt(u, 3.0), -3.0);
    for (double x : {0.1, 0.5, 0.9}) CHECK(std::abs(ub.density(x) - 1.0) <= 1e-8);
}

TEST_CASE("densities integrate to one and cdf, tail, quantile agree") {
    std::vector<IncrementModel> models{IncrementModel::gaussian(0.0, 1.0), tilt(IncrementModel::uniform(0, 2), -2.5),
                                       tilt(IncrementModel::uniform(0, 2), 4.0), tabulated_gaussian()};
    for (const auto& model : models) {
        GridSpec grid = model.quadrature_grid();
        CHECK(oracle::simpson([&](double x) { return model.density(x); }, grid.lo, grid.hi, 40000) ==
              doctest::Approx(1.0).epsilon(1e-8));
        for (double p : {0.01, 0.3, 0.5, 0.9}) {
            double x = model.upper_quantile(p);
            CHECK(model.tail(x) == doctest::Approx(p).epsilon(1e-9));
            CHECK(model.cdf(x) + model.tail(x) == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("sampling") {
    auto g = IncrementModel::gaussian(0.0, 1.0);
    CHECK(sample(g, 0, StreamKey(1)).empty());
    auto xs = sample(g, 100000, StreamKey(2));
    double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
    CHECK(std::abs(mean) < 4.0 / std::sqrt(1e5));
    CHECK(sample(g, 50, StreamKey(3)) == sample(g, 50, StreamKey(3)));
    CHECK(sample(g, 50, StreamKey(3)) != sample(g, 50, StreamKey(4)));

    auto t = tabulated_gaussian();
    auto ts = sample(t, 100000, StreamKey(5));
    double tmean = std::accumulate(ts.begin(), ts.end(), 0.0) / ts.size();
    CHECK(std::abs(tmean) < 4.0 / std::sqrt(1e5));

    auto ut = tilt(IncrementModel::uniform(0, 1), 2.0);
    auto us = sample(ut, 100000, StreamKey(6));
    double umean = std::accumulate(us.begin(), us.end(), 0.0) / us.size();
    CHECK(std::abs(umean - ut.mean()) < 4.0 * std::sqrt(ut.variance() / 1e5));
}

TEST_CASE("exact gaussian sum tail") {
    auto g = IncrementModel::gaussian(0.0, 1.0);
    TailEstimate est = sum_tail(g, {100, 30.0, TailBackend::exact, {}});
    CHECK(est.probability == doctest::Approx(oracle::upper_normal(3.0)).epsilon(1e-13));
    CHECK(est.probability == doctest::Approx(1.3498980316301e-3).epsilon(1e-10));
    CHECK_THROWS_AS(sum_tail(IncrementModel::uniform(0, 1), {5, 3.0, TailBackend::exact, {}}), std::invalid_argument);
    CHECK(sum_tail(IncrementModel::uniform(0, 1), {1, 0.25, TailBackend::exact, {}}).probability == doctest::Approx(0.75));
}

TEST_CASE("tail queries below the mean are rejected where a tilt is needed") {
    auto g = IncrementModel::gaussian(0.0, 1.0);
    CHECK_THROWS_AS(sum_tail(g, {10, -1.0, TailBackend::br_approx, {}}), std::domain_error);
    CHECK_THROWS_AS(sum_tail(g, {10, 0.0, TailBackend::mc_importance, {}}), std::domain_error);
}

TEST_CASE("bahadur-rao approximation for the gaussian") {
    auto g = IncrementModel::gaussian(0.0, 1.0);
    TailEstimate est = sum_tail(g, {100, 30.0, TailBackend::br_approx, {}});
    CHECK(est.q == doctest::Approx(0.3));
    CHECK(est.eta == doctest::Approx(0.3));
    CHECK(est.psi == doctest::Approx(3.0));
    double expected = std::exp(-100 * 0.045) / (0.3 * std::sqrt(2 * M_PI * 100));
    CHECK(est.probability == doctest::Approx(expected).epsilon(1e-12));
    // Mills ratio: the approximation overshoots by about 1/psi^2.
    CHECK(est.probability / oracle::upper_normal(3.0) == doctest::Approx(1.0).epsilon(0.12));
}

TEST_CASE("saddlepoint tail is exact for gaussians and tracks sums of uniforms") {
    auto g = IncrementModel::gaussian(0.1, 2.0);
    for (double y : {-5.0, 0.9, 1.0, 1.1, 8.0}) {
        double exact = sum_tail(g, {10, y, TailBackend::exact, {}}).probability;
        CHECK(sum_tail(g, {10, y, TailBackend::saddlepoint, {}}).probability == doctest::Approx(exact).epsilon(1e-8));
    }
    // Irwin-Hall tail for 4 uniforms by direct convolution quadrature.
    auto u = IncrementModel::uniform(0, 1);
    auto irwin_hall_tail = [](double y) {
        // P(S_4 >= y) = 1 - F(y), F(y) = (1/24) sum_k (-1)^k C(4,k) (y-k)^4_+
        double f = 0.0;
        const int c[5] = {1, 4, 6, 4, 1};
        for (int k = 0; k <= 4; ++k) {
            if (y > k) f += (k % 2 ? -1.0 : 1.0) * c[k] * std::pow(y - k, 4);
        }
        return 1.0 - f / 24.0;
    };
    for (double y : {1.0, 2.0, 2.6, 3.2, 3.8}) {
        double sp = sum_tail(u, {4, y, TailBackend::saddlepoint, {}}).probability;
        CHECK(sp == doctest::Approx(irwin_hall_tail(y)).epsilon(0.02));
    }
    CHECK(sum_tail(u, {4, 4.5, TailBackend::saddlepoint, {}}).probability == 0.0);
    CHECK(sum_tail(u, {4, -0.1, TailBackend::saddlepoint, {}}).probability == 1.0);
}

TEST_CASE("importance sampling agrees with the exact gaussian tail") {
    auto g = IncrementModel::gaussian(0.0, 1.0);
    McOptions mc{1000000, 99, std::nullopt, 1};
    TailEstimate est = sum_tail(g, {100, 30.0, TailBackend::mc_importance, mc});
    CHECK(std::abs(est.probability - oracle::upper_normal(3.0)) < 3.0 * est.standard_error);
    CHECK(est.standard_error > 0.0);

    McOptions small{20000, 7, std::nullopt, 1};
    for (std::size_t tau : {4u, 25u}) {
        for (double q : {0.2, 0.6, 1.2}) {
            double y = q * tau;
            TailEstimate mc_est = sum_tail(g, {tau, y, TailBackend::mc_importance, small});
            double exact = oracle::upper_normal(y / std::sqrt(double(tau)));
            CHECK(std::abs(mc_est.probability - exact) < 4.0 * mc_est.standard_error);
        }
    }
    McOptions capped{100, 7, 1e-6, 1};
    CHECK_THROWS_AS(sum_tail(g, {25, 10.0, TailBackend::mc_importance, capped}), NumericalError);
}

TEST_CASE("importance sampling does not depend on the thread count") {
    auto g = IncrementModel::gaussian(0.0, 1.0);
    McOptions one{50000, 5, std::nullopt, 1};
    McOptions many = one;
    many.threads = 8;
    CHECK(sum_tail(g, {20, 8.0, TailBackend::mc_importance, one}).probability ==
          sum_tail(g, {20, 8.0, TailBackend::mc_importance, many}).probability);
}

TEST_CASE("tail ratio") {
    auto g = IncrementModel::gaussian(0.0, 1.0);
    TailRatio exact = tail_ratio(g, 100, 0.3, 1.0, TailBackend::exact);
    CHECK(exact.ratio == doctest::Approx(oracle::upper_normal(3.1) / oracle::upper_normal(3.0)).epsilon(1e-12));
    CHECK(exact.ratio == doctest::Approx(0.7168).epsilon(1e-3));
    CHECK(exact.prediction == doctest::Approx(std::exp(-0.3)).epsilon(1e-12));
    TailRatio zero = tail_ratio(g, 100, 0.3, 0.0, TailBackend::exact);
    CHECK(zero.ratio == 1.0);
    CHECK(zero.prediction == 1.0);
    CHECK_THROWS_AS(tail_ratio(g, 100, 0.3, 7.0, TailBackend::exact), std::domain_error);

    double previous = 1.0;
    for (std::size_t tau : {25u, 100u, 400u}) {
        TailRatio r = tail_ratio(g, tau, 0.3, 1.0, TailBackend::exact);
        double gap = std::abs(r.ratio - r.prediction);
        CHECK(gap < previous);
        previous = gap;
    }
    McOptions mc{200000, 3, std::nullopt, 1};
    TailRatio sampled = tail_ratio(g, 100, 0.3, 1.0, TailBackend::mc_importance, mc);
    CHECK(std::abs(sampled.ratio - exact.ratio) < 4.0 * sampled.standard_error);
    CHECK(std::abs(sampled.ratio / exact.ratio - 1.0) < 0.05);
}

TEST_CASE("backend names round trip") {
    for (auto b : {TailBackend::exact, TailBackend::br_approx, TailBackend::saddlepoint, TailBackend::mc_importance}) {
        CHECK(parse_backend(to_string(b)) == b);
    }
    CHECK(parse_backend("gaussian-exact") == TailBackend::exact);
    CHECK_THROWS_AS(parse_backend("nope"), std::invalid_argument);
    CHECK(default_backend(IncrementModel::gaussian(0, 1), 10) == TailBackend::exact);
    CHECK(default_backend(IncrementModel::uniform(0, 1), 1) == TailBackend::exact);
    CHECK(default_backend(IncrementModel::uniform(0, 1), 10) == TailBackend::saddlepoint);
}
