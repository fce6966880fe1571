#include "edgerace/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "edgerace/csv.hpp"
#include "edgerace/numerics.hpp"

namespace edgerace {

namespace {

TailFit fit_window(std::size_t n, double sum, double leader, double depth) {
    if (n < 3) throw NumericalError("fit_tail: need at least three particles in the window");
    if (!(depth > 0.0) || !std::isfinite(depth)) throw NumericalError("fit_tail: window depth must be finite and positive");
    const double bottom = leader - depth;
    double mean_height = (sum - leader) / static_cast<double>(n - 1) - bottom;
    // Heights above the bottom have density proportional to e^{-lambda t} on
    // [0, W]: the maximum-likelihood lambda matches the tilted-uniform mean.
    if (!(mean_height < 0.5 * depth) || !(mean_height > 0.0)) {
        std::ostringstream msg;
        msg << "fit_tail: mean height " << mean_height << " above the window bottom does not indicate growth with depth"
            << " (window depth " << depth << ")";
        throw NumericalError(msg.str());
    }
    double rate = -legendre(IncrementModel::uniform(0.0, depth), mean_height).eta;
    double amplitude = static_cast<double>(n - 1) * rate / -std::expm1(-rate * depth);
    return {amplitude, rate};
}

struct Continuation {
    std::vector<double> positions;
    std::vector<double> increments;
};

// Continuation particles that land at or above `floor` after one step. The
// continuation is Poisson with density A e^{lambda (bottom - x)} for x < bottom;
// pairs (x, h) with x + h >= floor are Poisson too, so their count and their
// joint law can be drawn directly instead of evolving the whole continuation.
Continuation continuation_landers(const TailFit& fit, double bottom, double floor, const IncrementModel& model,
                                  Engine& engine) {
    const double lambda = fit.rate;
    const double delta = floor - bottom;
    const IncrementModel lifted = model.tilted(lambda);
    const double lifted_tail = lifted.tail(delta);
    const double log_mgf = model.cumulant(lambda).value;
    // (A / lambda) E[(e^{lambda (h - delta)} - 1)^+]
    double mean = fit.amplitude / lambda * (std::exp(log_mgf - lambda * delta) * lifted_tail - model.tail(delta));
    Continuation out;
    if (!(mean > 0.0)) return out;
    std::poisson_distribution<long long> count_law(mean);
    long long count = count_law(engine);
    out.positions.reserve(static_cast<std::size_t>(count));
    out.increments.reserve(static_cast<std::size_t>(count));
    const bool direct = lifted_tail < 0.05;
    for (long long k = 0; k < count; ++k) {
        // h has density proportional to g(h) (e^{lambda (h - delta)} - 1) on h > delta:
        // propose from the lifted law above delta, accept with 1 - e^{-lambda (h - delta)}.
        double h;
        for (;;) {
            if (direct) {
                h = lifted.upper_quantile(open_uniform(engine) * lifted_tail);
            } else {
                h = lifted.draw(engine);
                if (!(h > delta)) continue;
            }
            if (open_uniform(engine) < -std::expm1(-lambda * (h - delta))) break;
        }
        // Depth below the bottom, density proportional to e^{lambda d} on (0, h - delta].
        double d = std::log1p(open_uniform(engine) * std::expm1(lambda * (h - delta))) / lambda;
        out.positions.push_back(bottom - d + h);
        out.increments.push_back(h);
    }
    return out;
}

struct Advance {
    std::vector<double> moved;       // pre particles after the step, pre-order
    std::vector<double> increments;  // pre-order
    Continuation entrants;
    double leader = 0.0;
};

Advance advance(std::span<const double> pre, double depth, const IncrementModel& model, const StreamKey& stream,
                WindowPolicy policy, std::optional<TailFit> continuation = std::nullopt) {
    Advance out;
    out.increments.resize(pre.size());
    Engine engine = stream.engine();
    model.fill(out.increments, engine);
    out.moved.resize(pre.size());
    double leader = -kInf, pre_leader = -kInf, sum = 0.0;
    for (std::size_t i = 0; i < pre.size(); ++i) {
        out.moved[i] = pre[i] + out.increments[i];
        leader = std::max(leader, out.moved[i]);
        pre_leader = std::max(pre_leader, pre[i]);
        sum += pre[i];
    }
    if (policy == WindowPolicy::poisson_continuation) {
        if (!std::isfinite(depth)) throw std::invalid_argument("poisson continuation needs a finite window depth");
        const double bottom = pre_leader - depth;
        TailFit fit = continuation ? *continuation : fit_window(pre.size(), sum, pre_leader, depth);
        Engine tail_engine = stream.child(1).engine();
        out.entrants = continuation_landers(fit, bottom, leader - depth, model, tail_engine);
        for (double x : out.entrants.positions) leader = std::max(leader, x);
    }
    out.leader = leader;
    return out;
}

} // namespace

EvolutionRecord evolve(const Configuration& config, const IncrementModel& model, const StreamKey& stream,
                       WindowPolicy policy) {
    Advance step = advance(config.positions(), config.window_depth(), model, stream, policy);
    const double floor = step.leader - config.window_depth();
    const std::size_t n = config.size();
    std::vector<double> all = step.moved;
    all.insert(all.end(), step.entrants.positions.begin(), step.entrants.positions.end());
    std::vector<std::size_t> order(all.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return all[a] > all[b]; });

    EvolutionRecord record{config, config, std::move(step.increments), {}, 0.0, 0, 0};
    std::vector<double> post;
    for (std::size_t idx : order) {
        if (all[idx] < floor) {
            if (idx < n) ++record.dropped;
            continue;
        }
        post.push_back(all[idx]);
        record.permutation.push_back(idx < n ? idx : kFromContinuation);
        if (idx >= n) ++record.entered;
    }
    record.post = make_sorted(std::move(post), config.window_depth());
    record.front_displacement = record.post.leader() - config.leader();
    return record;
}

EvolutionRecord evolve_with(const Configuration& config, std::span<const double> increments) {
    if (increments.size() != config.size()) throw std::invalid_argument("evolve_with: one increment per particle");
    const std::size_t n = config.size();
    std::vector<double> moved(n);
    for (std::size_t i = 0; i < n; ++i) moved[i] = config[i] + increments[i];
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return moved[a] > moved[b]; });
    const double floor = moved[order.front()] - config.window_depth();
    EvolutionRecord record{config, config, std::vector<double>(increments.begin(), increments.end()), {}, 0.0, 0, 0};
    std::vector<double> post;
    for (std::size_t idx : order) {
        if (moved[idx] < floor) {
            ++record.dropped;
            continue;
        }
        post.push_back(moved[idx]);
        record.permutation.push_back(idx);
    }
    record.post = make_sorted(std::move(post), config.window_depth());
    record.front_displacement = record.post.leader() - config.leader();
    return record;
}

Track evolve_many(const Configuration& config, const IncrementModel& model, std::size_t steps,
                  const StreamKey& stream, WindowPolicy policy) {
    Track track{config, {}};
    if (steps == 0) return track;
    track.steps.reserve(steps);
    const double depth = config.window_depth();
    std::vector<double> current(config.positions().begin(), config.positions().end());
    double leader = config.leader();
    // The continuation is fitted once, as an intensity e^{log_c - lambda x}.
    // One step maps it to the same rate with c multiplied by e^{Lambda(lambda)},
    // so later steps transport it instead of refitting a possibly sparse window.
    double rate = 0.0, log_c = 0.0, log_growth = 0.0;
    if (policy == WindowPolicy::poisson_continuation) {
        if (!std::isfinite(depth)) throw std::invalid_argument("poisson continuation needs a finite window depth");
        TailFit fit = fit_tail(config);
        rate = fit.rate;
        log_c = std::log(fit.amplitude) + rate * config.window_bottom();
        log_growth = model.cumulant(rate).value;
    }
    for (std::size_t t = 0; t < steps; ++t) {
        std::optional<TailFit> continuation;
        if (policy == WindowPolicy::poisson_continuation) {
            double pre_leader = *std::max_element(current.begin(), current.end());
            continuation = TailFit{std::exp(log_c - rate * (pre_leader - depth)), rate};
            log_c += log_growth;
        }
        Advance step = advance(current, depth, model, stream.child(t), policy, continuation);
        const double floor = step.leader - depth;
        StepSummary summary{step.leader, step.leader - leader, 0, 0};
        current.clear();
        for (double x : step.moved) {
            if (x >= floor) {
                current.push_back(x);
            } else {
                ++summary.dropped;
            }
        }
        for (double x : step.entrants.positions) {
            if (x >= floor) {
                current.push_back(x);
                ++summary.entered;
            }
        }
        leader = step.leader;
        track.steps.push_back(summary);
    }
    std::sort(current.begin(), current.end(), std::greater<>());
    track.final = make_sorted(std::move(current), depth);
    return track;
}

double regularity_count(const Configuration& config, const IncrementModel& model, double x) {
    double total = 0.0;
    for (double p : config.positions()) total += model.tail(x - p);
    return total;
}

TailFit fit_tail(const Configuration& config) {
    auto pos = config.positions();
    double sum = std::accumulate(pos.begin(), pos.end(), 0.0);
    return fit_window(config.size(), sum, config.leader(), config.window_depth());
}

TruncationBias truncation_bias(const Configuration& config, const IncrementModel& model, std::size_t steps,
                               double cutoff) {
    if (!std::isfinite(config.window_depth())) return {0.0, {}};
    return truncation_bias(config, model, steps, cutoff, fit_tail(config));
}

TruncationBias truncation_bias(const Configuration& config, const IncrementModel& model, std::size_t steps,
                               double cutoff, TailFit fit) {
    if (!std::isfinite(config.window_depth())) return {0.0, fit};
    if (!(fit.amplitude > 0.0) || !std::isfinite(fit.rate)) throw std::invalid_argument("truncation_bias: invalid fit");
    SumTail tail(model, steps, default_backend(model, steps));
    const double gap = cutoff - config.window_bottom();
    const double log_a = std::log(fit.amplitude);
    auto integrand = [&](double d) {
        double p = tail(gap + d);
        if (p <= 0.0) return 0.0;
        return std::exp(log_a + fit.rate * d + std::log(p));
    };
    // The integrand peaks near d = lambda Var(S) - (gap - E S); split there.
    double peak = std::max(0.0, fit.rate * tail.spread() * tail.spread() - (gap - tail.center()));
    double bound = integrate(integrand, 0.0, peak, 1e-300, 1e-7) + integrate(integrand, peak, kInf, 1e-300, 1e-7);
    return {bound, fit};
}

std::string trace_csv(const Track& track, double start_leader) {
    CsvTable table({"step", "leader_position", "displacement", "dropped_count"});
    table.add_row({0LL, start_leader, 0.0, 0LL});
    for (std::size_t t = 0; t < track.steps.size(); ++t) {
        const auto& s = track.steps[t];
        table.add_row({static_cast<long long>(t + 1), s.leader_position, s.displacement,
                       static_cast<long long>(s.dropped)});
    }
    return table.str();
}

} // namespace edgerace
