#include <doctest.h>

#include <cmath>

#include "edgerace/dynamics.hpp"
#include "edgerace/stats.hpp"
#include "oracles.hpp"

using namespace edgerace;

namespace {

std::vector<double> as_vector(std::span<const double> s) { return {s.begin(), s.end()}; }

// Keeps the particles within w of the leader and declares depth w.
Configuration truncated(const Configuration& c, double w) {
    std::vector<double> kept;
    for (double x : c.positions()) {
        if (c.leader() - x <= w) kept.push_back(x);
    }
    return make_sorted(kept, w);
}

} // namespace

TEST_CASE("explicit increments") {
    auto c = Configuration::from_points({0, -1, -2}, 10.0);
    std::vector<double> h{0.5, 2.0, 0.1};
    auto r = evolve_with(c, h);
    CHECK(as_vector(r.post.positions()) == std::vector<double>{1.0, 0.5, -1.9});
    CHECK(r.permutation == std::vector<std::size_t>{1, 0, 2});
    CHECK(r.front_displacement == 1.0);
    CHECK(r.increments == h);
    CHECK(r.dropped == 0);
    CHECK(r.post.window_depth() == 10.0);

    // Same move with W = 2: the bottom particle lands below 1 - 2 and is dropped.
    auto shallow = evolve_with(Configuration::from_points({0, -1, -2}, 2.0), h);
    CHECK(as_vector(shallow.post.positions()) == std::vector<double>{1.0, 0.5});
    CHECK(shallow.dropped == 1);
    CHECK(shallow.permutation == std::vector<std::size_t>{1, 0});

    auto single = evolve_with(Configuration::from_points({3.0}), std::vector<double>{-0.25});
    CHECK(as_vector(single.post.positions()) == std::vector<double>{2.75});
    CHECK(single.permutation == std::vector<std::size_t>{0});
    CHECK(single.front_displacement == -0.25);

    // Ties keep pre-order.
    auto tie = evolve_with(Configuration::from_points({0, -1}, 5.0), std::vector<double>{0.0, 1.0});
    CHECK(tie.permutation == std::vector<std::size_t>{0, 1});
    CHECK_THROWS_AS(evolve_with(c, std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("near-deterministic drift") {
    auto c = Configuration::from_points({0, -0.5, -1.5, -4}, 6.0);
    auto r = evolve(c, IncrementModel::gaussian(0.7, 1e-12), StreamKey(3));
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(std::abs(r.post[i] - (c[i] + 0.7)) < 1e-5);
    CHECK(r.permutation == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(std::abs(r.front_displacement - 0.7) < 1e-5);
}

TEST_CASE("evolution is reproducible and pure") {
    auto c = sample_rem(1.0, 0.0, SampleDepth::distance(5.0), StreamKey(8));
    auto g = IncrementModel::gaussian(0.0, 1.0);
    auto a = evolve(c, g, StreamKey(99));
    auto b = evolve(c, g, StreamKey(99));
    CHECK(as_vector(a.post.positions()) == as_vector(b.post.positions()));
    CHECK(a.increments == b.increments);
    CHECK(a.increments.size() == c.size());
    // Post positions are the sorted moved positions above the new bottom.
    std::vector<double> moved;
    for (std::size_t i = 0; i < c.size(); ++i) moved.push_back(c[i] + a.increments[i]);
    for (std::size_t k = 0; k < a.post.size(); ++k) CHECK(a.post[k] == moved[a.permutation[k]]);
    CHECK(a.post.size() + a.dropped == c.size());

    auto t0 = evolve_many(c, g, 0, StreamKey(4));
    CHECK(as_vector(t0.final.positions()) == as_vector(c.positions()));
    CHECK(t0.steps.empty());
    auto t1 = evolve_many(c, g, 25, StreamKey(4));
    auto t2 = evolve_many(c, g, 25, StreamKey(4));
    CHECK(as_vector(t1.final.positions()) == as_vector(t2.final.positions()));
    REQUIRE(t1.steps.size() == 25);
    CHECK(t1.steps.back().leader_position == t1.final.leader());
    double total = 0.0;
    for (const auto& s : t1.steps) total += s.displacement;
    CHECK(total == doctest::Approx(t1.final.leader() - c.leader()).epsilon(1e-12));
    // The first step of evolve_many draws what evolve draws on child(0).
    auto first = evolve(c, g, StreamKey(4).child(0));
    CHECK(evolve_many(c, g, 1, StreamKey(4)).final.leader() == first.post.leader());

    auto trace = trace_csv(t1, c.leader());
    CHECK(trace.rfind("step,leader_position,displacement,dropped_count\n0,", 0) == 0);
}

TEST_CASE("regularity count") {
    auto g = IncrementModel::gaussian(0.0, 1.0);
    CHECK(regularity_count(Configuration::from_points({0.0}), g, 0.0) == doctest::Approx(0.5).epsilon(1e-15));
    double expected = oracle::upper_normal(1.0) + oracle::upper_normal(2.0);
    CHECK(regularity_count(Configuration::from_points({0, -1}), g, 1.0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(0.1814).epsilon(1e-3));
    double last = 2.0;
    for (double x = -2.0; x < 40.0; x += 0.5) {
        double v = regularity_count(Configuration::from_points({0, -1}), g, x);
        CHECK(v <= last);
        last = v;
    }
    CHECK(last < 1e-300);
}

TEST_CASE("tail fit") {
    // Points thinning out with depth.
    CHECK_THROWS_AS(fit_tail(Configuration::from_points({0, -0.1, -0.2, -0.5, -1, -3}, 5.0)), NumericalError);
    CHECK_THROWS_AS(fit_tail(Configuration::from_points({0, -1}, 5.0)), NumericalError);
    CHECK_THROWS_AS(fit_tail(Configuration::from_points({0.0})), NumericalError);

    // REM(s) windows recover s and the density at the bottom.
    StreamKey root(21);
    for (double s : {0.7, 1.0, 1.6}) {
        double rate = 0.0, log_amp = 0.0;
        const int reps = 50;
        for (int r = 0; r < reps; ++r) {
            auto c = sample_rem(s, 0.0, SampleDepth::distance(7.0 / s), root.child(r));
            auto fit = fit_tail(c);
            rate += fit.rate / reps;
            // Density at the bottom: s e^{-s (b - z)}.
            log_amp += (std::log(fit.amplitude) - std::log(s * std::exp(-s * c.window_bottom()))) / reps;
        }
        CHECK(rate == doctest::Approx(s).epsilon(0.03));
        CHECK(std::abs(log_amp) < 0.05);
    }
}

TEST_CASE("truncation bias") {
    auto g = IncrementModel::gaussian(0.0, 1.0);
    // Oracle: int_0^inf A e^{lambda d} P(N(0, tau) >= cutoff - b + d) dd by Simpson.
    auto oracle_bias = [](double a, double lambda, double tau, double gap) {
        return oracle::simpson([&](double d) { return a * std::exp(lambda * d) * oracle::upper_normal((gap + d) / std::sqrt(tau)); },
                               0.0, 80.0, 400000);
    };

    // A single particle with no window: the whole continuation mass is reported.
    auto lone = Configuration::from_points({0.0}, 0.0);
    TailFit unit{1.0, 1.0};
    auto b0 = truncation_bias(lone, g, 3, 1.5, unit);
    CHECK(b0.bound == doctest::Approx(oracle_bias(1.0, 1.0, 3.0, 1.5)).epsilon(1e-6));
    CHECK_THROWS_AS(truncation_bias(lone, g, 3, 1.5), NumericalError);

    // REM(1) with W = 40: intensity e^{-x}, density e^{-b} = e^{40 - x_1} at the bottom.
    auto rem = sample_rem(1.0, 0.0, SampleDepth::particles(40), StreamKey(5));
    auto deep = make_sorted(as_vector(rem.positions()), 40.0);
    TailFit rem_fit{std::exp(-deep.window_bottom()), 1.0};
    double cutoff = deep.leader() + 2.5;
    auto b40 = truncation_bias(deep, g, 5, cutoff, rem_fit);
    CHECK(b40.bound < 1e-6);
    CHECK(b40.bound == doctest::Approx(oracle_bias(rem_fit.amplitude, 1.0, 5.0, cutoff - deep.window_bottom())).epsilon(1e-6));

    // Deeper windows of one sample admit fewer hypothetical intruders.
    auto wide = sample_rem(1.0, 0.0, SampleDepth::distance(11.0), StreamKey(6));
    double last = kInf;
    for (double w : {4.0, 6.0, 8.0, 10.0}) {
        auto c = truncated(wide, w);
        double bound = truncation_bias(c, g, 5, wide.leader() + 2.5).bound;
        CHECK(bound < last);
        last = bound;
    }
    CHECK(truncation_bias(Configuration::from_points({0, -1}, kInf), g, 5, 0.0).bound == 0.0);
}

TEST_CASE("REM gap laws are invariant under one step") {
    const int replicas = 10000;
    struct Case {
        IncrementModel model;
        double s;
        double depth;
    };
    std::vector<Case> cases{{IncrementModel::gaussian(0.0, 1.0), 1.0, 6.0},
                            {IncrementModel::uniform(0.0, 1.0), 2.0, 3.0}};
    StreamKey root(31);
    for (std::size_t k = 0; k < cases.size(); ++k) {
        std::vector<double> pre, post;
        for (int r = 0; r < replicas; ++r) {
            auto key = root.child(k).child(r);
            auto c = sample_rem(cases[k].s, 0.0, SampleDepth::distance(cases[k].depth), key.child(0));
            auto rec = evolve(c, cases[k].model, key.child(1));
            pre.push_back(c[0] - c[1]);
            post.push_back(rec.post[0] - rec.post[1]);
        }
        auto ks = ks_two_sample(EmpiricalCdf(pre), EmpiricalCdf(post));
        CHECK(ks.passes(0.01));
        double s = cases[k].s;
        CHECK(ks_distance(EmpiricalCdf(post), [&](double u) { return u <= 0 ? 0.0 : -std::expm1(-s * u); }).passes(0.01));
    }
}

TEST_CASE("increments behind the top ranks are tilted") {
    auto g = IncrementModel::gaussian(0.0, 1.0);
    StreamKey root(41);
    std::vector<double> collected;
    for (int r = 0; r < 2000; ++r) {
        // A fixed count puts the bottom near -ln 3000 whatever the leader does.
        auto c = sample_rem(1.0, 0.0, SampleDepth::particles(3000), root.child(r).child(0));
        auto rec = evolve(c, g, root.child(r).child(1));
        REQUIRE(rec.post.size() >= 10);
        for (std::size_t k = 0; k < 10; ++k) collected.push_back(rec.increments[rec.permutation[k]]);
    }
    auto tilted = tilt(g, 1.0);
    auto ks = ks_distance(EmpiricalCdf(collected), [&](double h) { return tilted.cdf(h); });
    CHECK(ks.passes(0.01));
}

TEST_CASE("two particles spread apart") {
    auto c = Configuration::from_points({0, -0.1}, kInf);
    auto g = IncrementModel::gaussian(0.0, 1.0);
    StreamKey root(51);
    const double y = 1.0;
    double last = -1.0;
    for (std::size_t tau : {1, 10, 100}) {
        int wide = 0;
        const int reps = 2000;
        for (int r = 0; r < reps; ++r) {
            auto t = evolve_many(c, g, tau, root.child(tau).child(r));
            REQUIRE(t.final.size() == 2);
            wide += t.final[0] - t.final[1] > y;
        }
        double p = static_cast<double>(wide) / reps;
        CHECK(p > last);
        last = p;
    }
    CHECK(last > 0.9);
}

TEST_CASE("front velocity with a Poisson continuation") {
    auto g = IncrementModel::gaussian(0.0, 1.0);
    StreamKey root(61);
    const int reps = 100;
    const std::size_t tau = 20;
    double mean = 0.0;
    std::size_t entered = 0;
    for (int r = 0; r < reps; ++r) {
        auto c = sample_rem(1.0, 0.0, SampleDepth::particles(400), root.child(r).child(0));
        auto t = evolve_many(c, g, tau, root.child(r).child(1), WindowPolicy::poisson_continuation);
        mean += (t.final.leader() - c.leader()) / static_cast<double>(tau) / reps;
        for (const auto& s : t.steps) entered += s.entered;
    }
    CHECK(mean == doctest::Approx(0.5).epsilon(0.1));
    CHECK(entered > 0);

    auto c = sample_rem(1.0, 0.0, SampleDepth::particles(400), StreamKey(7));
    auto rec = evolve(c, g, StreamKey(8), WindowPolicy::poisson_continuation);
    CHECK(rec.entered > 0);
    std::size_t from_below = 0;
    for (auto p : rec.permutation) from_below += p == kFromContinuation;
    CHECK(from_below == rec.entered);
}
