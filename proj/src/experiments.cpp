#include "edgerace/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/random/normal_distribution.hpp>

#include "edgerace/csv.hpp"
#include "edgerace/dynamics.hpp"
#include "edgerace/laplace.hpp"
#include "edgerace/parallel.hpp"
#include "edgerace/poissonization.hpp"
#include "edgerace/stats.hpp"

namespace edgerace {

namespace {

using json = nlohmann::json;

struct Definition {
    ExperimentInfo info;
    std::vector<std::size_t> default_taus;
    std::map<std::string, double> tolerances;
    std::set<std::string> params;
};

const std::vector<Definition>& definitions() {
    static const std::vector<Definition> defs{
        {{"rem-stationarity", "k-th gap samples before and after one step (two-sample KS), first gap vs Exp(s), MPGFL battery"},
         {1},
         {{"alpha", 0.01}, {"mpgfl_se", 4.0}},
         {"battery", "gaps"}},
        {{"velocity", "mean per-step leader displacement vs Lambda(s)/s"},
         {200},
         {{"velocity", 0.05}},
         {"policy"}},
        {{"backward-tilt", "increments of the top-M particles after one step vs the tilted law e^{sh}g(h)/e^{Lambda(s)}, with truncation certificate"},
         {1},
         {{"alpha", 0.01}, {"truncation", 1e-4}},
         {"top"}},
        {{"poissonize", "median leader-law distance (exact vs Poisson surrogate) across tau; extraction round-trip first-gap KS"},
         {1, 32},
         {{"alpha", 0.01}, {"ratio", 2.0}},
         {"roundtrip", "roundtrip_samples", "roundtrip_config"}},
        {{"contraction", "cumulative-mass concentration, steepness and gap-functional strictness under convolve_g; collapse of a two-atom measure"},
         {1},
         {{"slack", 1e-9}, {"margin", 1e-9}, {"equality", 1e-9}, {"iterations", 1.0}},
         {"atoms", "levels", "gap_points", "singles", "collapse", "collapse_target"}},
        {{"tails", "tail ratio P(S >= q tau + x) / P(S >= q tau) by Monte Carlo vs reference, and its approach to e^{-eta x}"},
         {25, 100, 400},
         {{"relative", 0.05}},
         {"q", "x", "samples"}},
        {{"gaps", "mean k-th gap vs 1/(ks), k-th gap KS vs Exp(ks), expected-gap quadrature"},
         {1},
         {{"se", 3.0}, {"alpha", 0.01}, {"quadrature", 1e-8}},
         {"ranks", "ks_ranks"}},
    };
    return defs;
}

const Definition* find_definition(const std::string& name) {
    for (const auto& d : definitions()) {
        if (d.info.name == name) return &d;
    }
    return nullptr;
}

std::string no_commas(std::string text) {
    std::replace(text.begin(), text.end(), ',', ';');
    std::replace(text.begin(), text.end(), '\n', ' ');
    return text;
}

double number_field(const json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number()) throw SpecError(std::string("'") + key + "' must be a number");
    return j.at(key).get<double>();
}

std::size_t count_field(const json& j, const char* key, std::size_t fallback, std::size_t minimum) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < static_cast<long long>(minimum)) {
        throw SpecError(std::string("'") + key + "' must be an integer >= " + std::to_string(minimum));
    }
    return v.get<std::size_t>();
}

std::vector<double> number_list(const json& j, const char* key, std::vector<double> fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_array() || v.empty()) throw SpecError(std::string("'") + key + "' must be a nonempty array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
        if (!e.is_number()) throw SpecError(std::string("'") + key + "' must be a nonempty array of numbers");
        out.push_back(e.get<double>());
    }
    return out;
}

IncrementModel parse_model(const json& j) {
    if (!j.is_object() || !j.contains("family") || !j.at("family").is_string()) {
        throw SpecError("model needs a 'family' string");
    }
    const auto family = j.at("family").get<std::string>();
    try {
        if (family == "gaussian") return IncrementModel::gaussian(number_field(j, "mean", 0.0), number_field(j, "variance", 1.0));
        if (family == "uniform") return IncrementModel::uniform(number_field(j, "lo", 0.0), number_field(j, "hi", 1.0));
        if (family == "tabulated") {
            auto density = number_list(j, "density", {});
            if (!j.contains("lo") || !j.contains("hi")) throw SpecError("tabulated model needs 'lo' and 'hi'");
            GridSpec grid{number_field(j, "lo", 0.0), number_field(j, "hi", 0.0), density.size()};
            return IncrementModel::tabulated(grid, std::move(density));
        }
    } catch (const std::invalid_argument& e) {
        throw SpecError(std::string("model: ") + e.what());
    } catch (const std::domain_error& e) {
        throw SpecError(std::string("model: ") + e.what());
    }
    throw SpecError("unknown model family '" + family + "'");
}

std::vector<LabeledModel> parse_models(const json& j) {
    std::vector<json> items;
    if (j.is_array()) {
        items.assign(j.begin(), j.end());
    } else {
        items.push_back(j);
    }
    if (items.empty()) throw SpecError("'model' must not be empty");
    std::vector<LabeledModel> out;
    std::map<std::string, int> seen;
    for (const auto& item : items) {
        auto model = parse_model(item);
        std::string label = item.at("family").get<std::string>();
        int n = seen[label]++;
        if (n > 0) label += std::to_string(n + 1);
        out.push_back({label, std::move(model)});
    }
    return out;
}

const std::set<std::string> kCommonKeys{"name", "seed", "model", "s", "replicas", "particles",
                                        "window", "tau", "backend", "tolerances", "output"};

// ---------------------------------------------------------------------------
// Report assembly

class Rows {
public:
    explicit Rows(ExperimentReport& report) : report_(report) {}

    void within(std::string metric, double value, double target, double tolerance) {
        add(std::move(metric), value, target, tolerance, std::abs(value - target) <= tolerance);
    }
    void below(std::string metric, double value, double threshold, double tolerance) {
        add(std::move(metric), value, threshold, tolerance, value < threshold);
    }
    void at_least(std::string metric, double value, double threshold, double tolerance) {
        add(std::move(metric), value, threshold, tolerance, value >= threshold);
    }
    void add(std::string metric, double value, double reference, double tolerance, bool pass) {
        report_.rows.push_back({std::move(metric), value, reference, tolerance, pass && std::isfinite(value)});
    }

private:
    ExperimentReport& report_;
};

std::string tag(const std::string& metric, const std::string& label) { return metric + ":" + label; }

double critical_value(const KsResult& ks, double alpha) { return alpha == 0.01 ? ks.critical_01 : ks.critical_05; }

void check_alpha(double alpha) {
    if (alpha != 0.01 && alpha != 0.05) throw SpecError("tolerance 'alpha' must be 0.01 or 0.05");
}

template <class T, class Make>
std::vector<T> by_replica(std::size_t n, std::size_t threads, Make&& make) {
    std::vector<std::optional<T>> slots(n);
    parallel_for(n, threads, [&](std::size_t i) { slots[i].emplace(make(i)); });
    std::vector<T> out;
    out.reserve(n);
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Keeps the particles within `keep` of the leader, and at least `at_least` of
// them, so large ensembles stay small.
Configuration leading_part(const Configuration& c, double keep, std::size_t at_least) {
    if (c.size() < at_least) {
        throw NumericalError("window holds fewer than " + std::to_string(at_least) + " particles");
    }
    double depth = std::min(std::max(keep, c.leader() - c[at_least - 1]), c.window_depth());
    double floor = c.leader() - depth;
    // leader - (leader - x) can round past x, so the first at_least are taken as given.
    std::vector<double> kept(c.positions().begin(), c.positions().begin() + static_cast<std::ptrdiff_t>(at_least));
    for (std::size_t i = at_least; i < c.size() && c[i] >= floor; ++i) kept.push_back(c[i]);
    return make_sorted(std::move(kept), depth);
}

// ---------------------------------------------------------------------------
// rem-stationarity

std::vector<TabulatedFunction> default_battery() {
    auto bump = [](double height, double reach) {
        return TabulatedFunction::sample(0.0, reach, 201, [=](double w) {
            double t = w / reach;
            return height * 16.0 * t * t * (1 - t) * (1 - t);
        });
    };
    return {bump(0.5, 1.0), bump(1.0, 2.5),
            TabulatedFunction::sample(0.0, 2.0, 101, [](double w) { return 0.3 * (2.0 - w); })};
}

std::vector<TabulatedFunction> parse_battery(const json& params) {
    if (!params.contains("battery")) return default_battery();
    const auto& list = params.at("battery");
    if (!list.is_array() || list.empty()) throw SpecError("'battery' must be a nonempty array");
    std::vector<TabulatedFunction> out;
    for (const auto& item : list) {
        if (!item.is_object()) throw SpecError("battery entries need 'reach' and 'values'");
        double reach = number_field(item, "reach", 0.0);
        auto values = number_list(item, "values", {});
        if (!(reach > 0.0) || values.size() < 2) throw SpecError("battery entries need reach > 0 and at least two values");
        out.emplace_back(0.0, reach, std::move(values));
    }
    return out;
}

void rem_stationarity(const ExperimentSpec& spec, std::size_t threads, ExperimentReport& report) {
    const double alpha = spec.tolerances.at("alpha");
    check_alpha(alpha);
    const double se_limit = spec.tolerances.at("mpgfl_se");
    const std::size_t kmax = count_field(spec.params, "gaps", 5, 1);
    const auto battery = parse_battery(spec.params);
    double reach = 0.0;
    for (const auto& f : battery) reach = std::max(reach, f.hi());
    Rows rows(report);
    StreamKey root(spec.seed);

    CsvTable cdfs({"model", "k", "u", "pre_cdf", "post_cdf", "exponential_cdf"});
    CsvTable functionals({"model", "function", "pre_mean", "pre_se", "post_mean", "post_se"});
    for (std::size_t m = 0; m < spec.models.size(); ++m) {
        const auto& [label, model] = spec.models[m];
        const StreamKey base = root.child(m);
        struct Pair {
            Configuration pre, post;
        };
        auto pairs = by_replica<Pair>(spec.replicas, threads, [&](std::size_t r) {
            auto pre = sample_rem(spec.s, 0.0, spec.depth, base.child(0).child(r));
            auto post = evolve(pre, model, base.child(1).child(r)).post;
            double keep = reach + 1.0;
            return Pair{leading_part(pre, keep, kmax + 1), leading_part(post, keep, kmax + 1)};
        });
        std::vector<Configuration> pre, post;
        for (auto& p : pairs) {
            pre.push_back(std::move(p.pre));
            post.push_back(std::move(p.post));
        }
        for (std::size_t k = 1; k <= kmax; ++k) {
            EmpiricalCdf a = empirical_gap_cdf(pre, k), b = empirical_gap_cdf(post, k);
            auto ks = ks_two_sample(a, b);
            rows.below(tag("gap_ks:k=" + std::to_string(k), label), ks.statistic, critical_value(ks, alpha), alpha);
            double rate = spec.s * static_cast<double>(k);
            for (int i = 0; i <= 100; ++i) {
                double u = 6.0 / rate * i / 100.0;
                cdfs.add_row({label, static_cast<long long>(k), u, a(u), b(u), -std::expm1(-rate * u)});
            }
        }
        EmpiricalCdf first = empirical_gap_cdf(post, 1);
        auto ks = ks_distance(first, [&](double u) { return u <= 0 ? 0.0 : -std::expm1(-spec.s * u); });
        rows.below(tag("first_gap_exponential_ks", label), ks.statistic, critical_value(ks, alpha), alpha);

        for (std::size_t i = 0; i < battery.size(); ++i) {
            auto a = mpgfl_estimate(pre, battery[i]);
            auto b = mpgfl_estimate(post, battery[i]);
            double se = std::hypot(a.standard_error, b.standard_error);
            double z = se > 0 ? std::abs(a.mean - b.mean) / se : (a.mean == b.mean ? 0.0 : kInf);
            rows.below(tag("mpgfl_shift_in_se:f=" + std::to_string(i + 1), label), z, se_limit, se_limit);
            functionals.add_row({label, static_cast<long long>(i + 1), a.mean, a.standard_error, b.mean, b.standard_error});
        }
    }
    report.data.push_back({"gap_cdf.csv", cdfs.str()});
    report.data.push_back({"mpgfl.csv", functionals.str()});
}

// ---------------------------------------------------------------------------
// velocity

WindowPolicy parse_policy(const json& params) {
    if (!params.contains("policy")) return WindowPolicy::poisson_continuation;
    const auto& v = params.at("policy");
    if (v == "continuation") return WindowPolicy::poisson_continuation;
    if (v == "truncate") return WindowPolicy::truncate;
    throw SpecError("'policy' must be \"continuation\" or \"truncate\"");
}

void velocity(const ExperimentSpec& spec, std::size_t threads, ExperimentReport& report) {
    const double tol = spec.tolerances.at("velocity");
    const auto policy = parse_policy(spec.params);
    const std::size_t horizon = *std::max_element(spec.taus.begin(), spec.taus.end());
    Rows rows(report);
    StreamKey root(spec.seed);

    CsvTable replicas({"model", "replica", "displacement_per_step", "dropped", "entered", "final_particles"});
    CsvTable mean_track({"model", "step", "mean_leader_offset", "velocity_line"});
    for (std::size_t m = 0; m < spec.models.size(); ++m) {
        const auto& [label, model] = spec.models[m];
        const double v = front_velocity(model, spec.s);
        const StreamKey base = root.child(m);
        struct Run {
            std::vector<double> offsets;  // leader minus starting leader, after each step
            std::size_t dropped = 0, entered = 0, final_particles = 0;
        };
        auto runs = by_replica<Run>(spec.replicas, threads, [&](std::size_t r) {
            auto start = sample_rem(spec.s, 0.0, spec.depth, base.child(0).child(r));
            auto track = evolve_many(start, model, horizon, base.child(1).child(r), policy);
            Run out;
            for (const auto& step : track.steps) {
                out.offsets.push_back(step.leader_position - start.leader());
                out.dropped += step.dropped;
                out.entered += step.entered;
            }
            out.final_particles = track.final.size();
            return out;
        });
        for (std::size_t r = 0; r < runs.size(); ++r) {
            const auto& run = runs[r];
            replicas.add_row({label, static_cast<long long>(r), run.offsets.back() / static_cast<double>(horizon),
                              static_cast<long long>(run.dropped), static_cast<long long>(run.entered),
                              static_cast<long long>(run.final_particles)});
        }
        std::vector<double> mean(horizon, 0.0);
        for (const auto& run : runs) {
            for (std::size_t t = 0; t < horizon; ++t) mean[t] += run.offsets[t];
        }
        for (std::size_t t = 0; t < horizon; ++t) {
            mean[t] /= static_cast<double>(runs.size());
            mean_track.add_row({label, static_cast<long long>(t + 1), mean[t], v * static_cast<double>(t + 1)});
        }
        for (std::size_t tau : spec.taus) {
            rows.within(tag("velocity:tau=" + std::to_string(tau), label), mean[tau - 1] / static_cast<double>(tau), v, tol);
        }
    }
    report.data.push_back({"replicas.csv", replicas.str()});
    report.data.push_back({"mean_track.csv", mean_track.str()});
}

// ---------------------------------------------------------------------------
// backward-tilt

void backward_tilt(const ExperimentSpec& spec, std::size_t threads, ExperimentReport& report) {
    const double alpha = spec.tolerances.at("alpha");
    check_alpha(alpha);
    const double certificate = spec.tolerances.at("truncation");
    std::size_t fallback = spec.depth.kind == SampleDepth::Kind::count ? static_cast<std::size_t>(spec.depth.value) / 100 : 0;
    const std::size_t top = count_field(spec.params, "top", fallback, 1);
    if (top == 0) throw SpecError("'top' is required when the depth is a distance");
    Rows rows(report);
    StreamKey root(spec.seed);

    CsvTable cdf({"model", "h", "empirical_cdf", "tilted_cdf"});
    CsvTable certificates({"model", "replica", "cutoff", "bound"});
    for (std::size_t m = 0; m < spec.models.size(); ++m) {
        const auto& [label, model] = spec.models[m];
        const IncrementModel tilted = tilt(model, spec.s);
        const StreamKey base = root.child(m);
        struct Draw {
            std::vector<double> increments;
            double cutoff = 0.0, bound = 0.0;
        };
        auto draws = by_replica<Draw>(spec.replicas, threads, [&](std::size_t r) {
            auto pre = sample_rem(spec.s, 0.0, spec.depth, base.child(0).child(r));
            auto rec = evolve(pre, model, base.child(1).child(r));
            if (rec.post.size() < top) throw NumericalError("post window holds fewer than 'top' particles");
            Draw d;
            for (std::size_t i = 0; i < top; ++i) d.increments.push_back(rec.increments[rec.permutation[i]]);
            d.cutoff = rec.post[top - 1];
            d.bound = truncation_bias(pre, model, 1, d.cutoff).bound;
            return d;
        });
        std::vector<double> pooled;
        double worst = 0.0;
        for (std::size_t r = 0; r < draws.size(); ++r) {
            pooled.insert(pooled.end(), draws[r].increments.begin(), draws[r].increments.end());
            worst = std::max(worst, draws[r].bound);
            certificates.add_row({label, static_cast<long long>(r), draws[r].cutoff, draws[r].bound});
        }
        EmpiricalCdf sample(pooled);
        auto ks = ks_distance(sample, [&](double h) { return tilted.cdf(h); });
        rows.below(tag("tilt_ks:top=" + std::to_string(top), label), ks.statistic, critical_value(ks, alpha), alpha);
        rows.below(tag("truncation_bias_max", label), worst, certificate, certificate);
        const double mean = tilted.mean(), sd = std::sqrt(tilted.variance());
        for (int i = 0; i <= 200; ++i) {
            double h = mean - 5.0 * sd + 10.0 * sd * i / 200.0;
            cdf.add_row({label, h, sample(h), tilted.cdf(h)});
        }
    }
    report.data.push_back({"tilt_cdf.csv", cdf.str()});
    report.data.push_back({"certificates.csv", certificates.str()});
}

// ---------------------------------------------------------------------------
// poissonize

// First gap after `steps` steps of direct evolution, drawing each particle's
// sum in one go when the model is Gaussian.
double direct_first_gap(const Configuration& c, const IncrementModel& model, std::size_t steps, Engine& engine) {
    double first = -kInf, second = -kInf;
    const bool gaussian = model.kind() == IncrementModel::Kind::gaussian;
    boost::random::normal_distribution<double> normal;
    double mean = 0.0, sd = 0.0;
    if (gaussian) {
        auto [mu, var] = model.gaussian_parameters();
        mean = mu * static_cast<double>(steps);
        sd = std::sqrt(var * static_cast<double>(steps));
    }
    std::vector<double> h(steps);
    for (double x : c.positions()) {
        double sum;
        if (gaussian) {
            sum = mean + sd * normal(engine);
        } else {
            model.fill(h, engine);
            sum = 0.0;
            for (double v : h) sum += v;
        }
        double y = x + sum;
        if (y > first) {
            second = first;
            first = y;
        } else if (y > second) {
            second = y;
        }
    }
    return first - second;
}

void poissonize(const ExperimentSpec& spec, std::size_t threads, ExperimentReport& report) {
    const double alpha = spec.tolerances.at("alpha");
    check_alpha(alpha);
    const double ratio_floor = spec.tolerances.at("ratio");
    if (spec.taus.size() < 2) throw SpecError("poissonize needs at least two tau values");
    std::vector<double> trip_list = number_list(spec.params, "roundtrip", {16, 32});
    const std::size_t trip_samples = count_field(spec.params, "roundtrip_samples", 10000, 10);
    const std::size_t trip_config = count_field(spec.params, "roundtrip_config", 0, 0);
    if (trip_config >= spec.replicas) throw SpecError("'roundtrip_config' must index one of the replicas");
    Rows rows(report);
    StreamKey root(spec.seed);
    std::set<std::string> backends;

    CsvTable distances({"model", "config", "tau", "z", "distance"});
    CsvTable trips({"model", "tau", "u", "direct_cdf", "poisson_cdf"});
    for (std::size_t m = 0; m < spec.models.size(); ++m) {
        const auto& [label, model] = spec.models[m];
        const StreamKey base = root.child(m);
        auto configs = by_replica<Configuration>(spec.replicas, threads, [&](std::size_t r) {
            return sample_rem(spec.s, 0.0, spec.depth, base.child(0).child(r));
        });
        std::vector<double> medians;
        for (std::size_t tau : spec.taus) {
            SumTail tail(model, tau, spec.backend.value_or(default_backend(model, tau)));
            backends.insert(to_string(tail.backend()));
            struct Point {
                double z, distance;
            };
            auto points = by_replica<Point>(configs.size(), threads, [&](std::size_t r) {
                auto laws = leader_laws(configs[r], tail, default_leader_grid(configs[r], tail));
                return Point{z_front(configs[r], tail), law_distance(laws.exact, laws.surrogate)};
            });
            std::vector<double> d;
            for (std::size_t r = 0; r < points.size(); ++r) {
                d.push_back(points[r].distance);
                distances.add_row({label, static_cast<long long>(r), static_cast<long long>(tau), points[r].z, points[r].distance});
            }
            medians.push_back(median(d));
            auto laws = leader_laws(configs[0], tail, default_leader_grid(configs[0], tail));
            report.data.push_back({"leader_law_" + label + "_tau" + std::to_string(tau) + ".csv", leader_law_csv(laws)});
        }
        rows.at_least(tag("median_distance_ratio:tau=" + std::to_string(spec.taus.front()) + "/" +
                              std::to_string(spec.taus.back()),
                          label),
                      medians.front() / medians.back(), ratio_floor, ratio_floor);

        const Configuration& c = configs[trip_config];
        for (double tau_value : trip_list) {
            if (!(tau_value >= 1.0) || tau_value != std::floor(tau_value)) throw SpecError("'roundtrip' entries must be integers >= 1");
            const auto tau = static_cast<std::size_t>(tau_value);
            SumTail tail(model, tau, spec.backend.value_or(default_backend(model, tau)));
            backends.insert(to_string(tail.backend()));
            auto ex = extract_laplace(c, tail);
            report.data.push_back({"measure_" + label + "_tau" + std::to_string(tau) + ".csv", measure_csv(ex.measure)});
            const StreamKey trip = base.child(2).child(tau);
            auto direct = by_replica<double>(trip_samples, threads, [&](std::size_t j) {
                Engine engine = trip.child(0).child(j).engine();
                return direct_first_gap(c, model, tau, engine);
            });
            auto poisson = by_replica<double>(trip_samples, threads, [&](std::size_t j) {
                Engine engine = trip.child(1).child(j).engine();
                auto [a, b] = poisson_top_two(ex.measure, ex.z, engine);
                return a - b;
            });
            EmpiricalCdf a(direct), b(poisson);
            auto ks = ks_two_sample(a, b);
            rows.below(tag("roundtrip_first_gap_ks:tau=" + std::to_string(tau), label), ks.statistic,
                       critical_value(ks, alpha), alpha);
            for (int i = 0; i <= 100; ++i) {
                double u = 4.0 * i / 100.0;
                trips.add_row({label, static_cast<long long>(tau), u, a(u), b(u)});
            }
        }
    }
    std::string joined;
    for (const auto& b : backends) joined += (joined.empty() ? "" : ";") + b;
    report.backend = joined;
    report.data.push_back({"distances.csv", distances.str()});
    report.data.push_back({"roundtrip.csv", trips.str()});
}

// ---------------------------------------------------------------------------
// contraction

LaplaceMeasure random_measure(Engine& engine, int min_atoms, int max_atoms) {
    std::uniform_int_distribution<int> count(min_atoms, max_atoms);
    int k = count(engine);
    std::vector<double> locations;
    while (static_cast<int>(locations.size()) < k) {
        double u = 0.1 + 2.9 * open_uniform(engine);
        bool apart = std::all_of(locations.begin(), locations.end(), [&](double v) { return std::abs(u - v) >= 0.05; });
        if (apart) locations.push_back(u);
    }
    std::vector<double> weights;
    double total = 0.0;
    for (int i = 0; i < k; ++i) {
        weights.push_back(0.05 + 0.95 * open_uniform(engine));
        total += weights.back();
    }
    std::vector<Atom> atoms;
    for (int i = 0; i < k; ++i) atoms.push_back({locations[i], weights[i] / total});
    return LaplaceMeasure::from_atoms(std::move(atoms));
}

// Smallest over atom locations of (F mass up to u) - (G mass up to u).
double concentration_slack(const LaplaceMeasure& f, const LaplaceMeasure& g) {
    double cf = 0.0, cg = 0.0, slack = kInf;
    auto fa = f.atoms(), ga = g.atoms();
    std::size_t i = 0, j = 0;
    while (i < fa.size() || j < ga.size()) {
        double u = std::min(i < fa.size() ? fa[i].location : kInf, j < ga.size() ? ga[j].location : kInf);
        while (i < fa.size() && fa[i].location == u) cf += fa[i++].weight;
        while (j < ga.size() && ga[j].location == u) cg += ga[j++].weight;
        slack = std::min(slack, cf - cg);
    }
    return slack;
}

// Weights of the iterated map computed straight from the cumulant: each step
// multiplies w_i by e^{Lambda(u_i) - z u_i} with z re-solved for unit mass.
std::size_t predicted_collapse(const std::vector<Atom>& start, const IncrementModel& model, double target,
                               std::size_t limit, std::vector<double>& trace) {
    std::vector<double> w, growth, u;
    for (const auto& a : start) {
        w.push_back(a.weight);
        u.push_back(a.location);
        growth.push_back(model.cumulant(a.location).value);
    }
    trace.assign(1, w[0]);
    for (std::size_t n = 1; n <= limit; ++n) {
        auto mass = [&](double z) {
            double total = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) total += w[i] * std::exp(growth[i] - z * u[i]);
            return total - 1.0;
        };
        double lo = -1.0, hi = 1.0;
        if (!expand_bracket(mass, lo, hi, -1e6, 1e6)) throw NumericalError("collapse oracle: no bracket");
        double z = find_root(mass, lo, hi, {1e-15, 0.0, 400});
        double total = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            w[i] *= std::exp(growth[i] - z * u[i]);
            total += w[i];
        }
        for (double& v : w) v /= total;
        trace.push_back(w[0]);
        if (w[0] < target) return n;
    }
    return limit + 1;
}

void contraction(const ExperimentSpec& spec, std::size_t threads, ExperimentReport& report) {
    const double slack_tol = spec.tolerances.at("slack");
    const double margin = spec.tolerances.at("margin");
    const double equality = spec.tolerances.at("equality");
    const double iteration_tol = spec.tolerances.at("iterations");
    auto atoms_range = number_list(spec.params, "atoms", {2, 6});
    if (atoms_range.size() != 2 || atoms_range[0] < 2 || atoms_range[1] < atoms_range[0]) {
        throw SpecError("'atoms' must be [min, max] with 2 <= min <= max");
    }
    const std::size_t level_count = count_field(spec.params, "levels", 17, 2);
    const auto gap_points = number_list(spec.params, "gap_points", {0.5, 1.0, 1.5, 2.0, 2.5, 3.0});
    const std::size_t singles = count_field(spec.params, "singles", 100, 0);
    const double target = spec.params.contains("collapse_target") ? number_field(spec.params, "collapse_target", 0.0) : 1e-3;
    std::vector<Atom> start{{1.0, 0.5}, {2.0, 0.5}};
    if (spec.params.contains("collapse")) {
        start.clear();
        const auto& list = spec.params.at("collapse");
        if (!list.is_array()) throw SpecError("'collapse' must be an array of [location, weight] pairs");
        for (const auto& pair : list) {
            if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number() || !pair[1].is_number()) {
                throw SpecError("'collapse' must be an array of [location, weight] pairs");
            }
            start.push_back({pair[0].get<double>(), pair[1].get<double>()});
        }
    }
    LaplaceMeasure collapse_start = [&] {
        try {
            return LaplaceMeasure::from_atoms(start);
        } catch (const std::invalid_argument& e) {
            throw SpecError(std::string("'collapse': ") + e.what());
        }
    }();
    if (collapse_start.size() < 2) throw SpecError("'collapse' needs at least two atoms");
    const auto levels = level_pairs(1e-4, 1e4, level_count);
    Rows rows(report);
    StreamKey root(spec.seed);

    auto corpus = by_replica<LaplaceMeasure>(spec.replicas, threads, [&](std::size_t i) {
        Engine engine = root.child(0).child(i).engine();
        return random_measure(engine, static_cast<int>(atoms_range[0]), static_cast<int>(atoms_range[1]));
    });
    auto single_atoms = by_replica<LaplaceMeasure>(singles, threads, [&](std::size_t i) {
        Engine engine = root.child(1).child(i).engine();
        return LaplaceMeasure::single(0.1 + 2.9 * open_uniform(engine));
    });

    CsvTable table({"model", "measure", "atoms", "concentration_slack", "steeper", "max_excess", "gap_margin"});
    CsvTable collapse({"model", "iteration", "weight_smallest_u", "predicted_weight"});
    for (const auto& [label, model] : spec.models) {
        struct Check {
            double slack, excess, margin;
            bool steep;
        };
        auto checks = by_replica<Check>(corpus.size(), threads, [&](std::size_t i) {
            const auto& rho = corpus[i];
            auto g = convolve_g(rho, model);
            auto f_tail = TailIntensity::laplace(rho), g_tail = TailIntensity::laplace(g.measure);
            auto steep = steeper(g_tail, f_tail, levels, slack_tol);
            double least = kInf;
            for (double u : gap_points) least = std::min(least, gap_functional(f_tail, u) - gap_functional(g_tail, u));
            return Check{concentration_slack(rho, g.measure), steep.max_excess, least, steep.steeper};
        });
        std::size_t concentration_bad = 0, steep_bad = 0, strict_bad = 0;
        for (std::size_t i = 0; i < checks.size(); ++i) {
            const auto& c = checks[i];
            concentration_bad += c.slack < -slack_tol;
            steep_bad += !c.steep;
            strict_bad += !(c.margin > margin);
            table.add_row({label, static_cast<long long>(i), static_cast<long long>(corpus[i].size()), c.slack,
                           static_cast<long long>(c.steep), c.excess, c.margin});
        }
        rows.add(tag("concentration_violations", label), static_cast<double>(concentration_bad), 0.0, slack_tol, concentration_bad == 0);
        rows.add(tag("steepness_violations", label), static_cast<double>(steep_bad), 0.0, slack_tol, steep_bad == 0);
        rows.add(tag("strictness_violations", label), static_cast<double>(strict_bad), 0.0, margin, strict_bad == 0);

        auto single_diffs = by_replica<double>(single_atoms.size(), threads, [&](std::size_t i) {
            auto f_tail = TailIntensity::laplace(single_atoms[i]);
            auto g_tail = TailIntensity::laplace(convolve_g(single_atoms[i], model).measure);
            double worst = 0.0;
            for (double u : gap_points) worst = std::max(worst, std::abs(gap_functional(f_tail, u) - gap_functional(g_tail, u)));
            return worst;
        });
        if (!single_diffs.empty()) {
            rows.add(tag("single_atom_max_difference", label), *std::max_element(single_diffs.begin(), single_diffs.end()),
                     0.0, equality, *std::max_element(single_diffs.begin(), single_diffs.end()) <= equality);
        }

        const std::size_t limit = 100000;
        std::vector<double> predicted_trace;
        std::vector<Atom> start_atoms(collapse_start.atoms().begin(), collapse_start.atoms().end());
        std::size_t predicted = predicted_collapse(start_atoms, model, target, limit, predicted_trace);
        LaplaceMeasure rho = collapse_start;
        std::vector<double> trace{rho.atoms()[0].weight};
        std::size_t n = 0;
        while (trace.back() >= target && n <= limit) {
            rho = normalize(convolve_g(rho, model).measure).measure;
            ++n;
            trace.push_back(rho.atoms()[0].weight);
        }
        for (std::size_t i = 0; i < trace.size(); ++i) {
            collapse.add_row({label, static_cast<long long>(i), trace[i],
                              i < predicted_trace.size() ? predicted_trace[i] : std::nan("")});
        }
        rows.within(tag("collapse_iterations", label), static_cast<double>(n), static_cast<double>(predicted), iteration_tol);
    }
    report.data.push_back({"corpus.csv", table.str()});
    report.data.push_back({"collapse.csv", collapse.str()});
}

// ---------------------------------------------------------------------------
// tails

void tails(const ExperimentSpec& spec, std::size_t threads, ExperimentReport& report) {
    const double relative = spec.tolerances.at("relative");
    const double q = number_field(spec.params, "q", 0.3);
    const double x = number_field(spec.params, "x", 1.0);
    const std::size_t samples = count_field(spec.params, "samples", 400000, 100);
    const TailBackend estimate = spec.backend.value_or(TailBackend::mc_importance);
    std::vector<std::size_t> taus = spec.taus;
    std::sort(taus.begin(), taus.end());
    Rows rows(report);
    StreamKey root(spec.seed);
    std::set<std::string> backends;

    CsvTable table({"model", "tau", "reference_ratio", "estimate_ratio", "estimate_se", "prediction", "eta", "discrepancy"});
    for (std::size_t m = 0; m < spec.models.size(); ++m) {
        const auto& [label, model] = spec.models[m];
        const TailBackend reference =
            model.kind() == IncrementModel::Kind::gaussian ? TailBackend::exact : TailBackend::saddlepoint;
        backends.insert(to_string(reference) + " vs " + to_string(estimate));
        double previous = kInf;
        for (std::size_t tau : taus) {
            McOptions mc;
            mc.samples = samples;
            mc.seed = root.child(m).child(tau).value();
            mc.threads = threads;
            auto ref = tail_ratio(model, tau, q, x, reference);
            auto est = tail_ratio(model, tau, q, x, estimate, mc);
            double discrepancy = std::abs(ref.ratio - ref.prediction);
            rows.within(tag("estimate_relative_error:tau=" + std::to_string(tau), label), est.ratio / ref.ratio - 1.0, 0.0, relative);
            rows.below(tag("discrepancy:tau=" + std::to_string(tau), label), discrepancy, previous, 0.0);
            previous = discrepancy;
            table.add_row({label, static_cast<long long>(tau), ref.ratio, est.ratio, est.standard_error, ref.prediction,
                           ref.eta, discrepancy});
        }
    }
    std::string joined;
    for (const auto& b : backends) joined += (joined.empty() ? "" : ";") + b;
    report.backend = joined;
    report.data.push_back({"ratios.csv", table.str()});
}

// ---------------------------------------------------------------------------
// gaps

void gaps_experiment(const ExperimentSpec& spec, std::size_t threads, ExperimentReport& report) {
    const double se_limit = spec.tolerances.at("se");
    const double alpha = spec.tolerances.at("alpha");
    check_alpha(alpha);
    const double quadrature = spec.tolerances.at("quadrature");
    const std::size_t ranks = count_field(spec.params, "ranks", 10, 1);
    const std::size_t ks_ranks = count_field(spec.params, "ks_ranks", 5, 0);
    const std::size_t needed = std::max(ranks, ks_ranks) + 1;
    Rows rows(report);
    StreamKey root(spec.seed);

    auto ensemble = by_replica<Configuration>(spec.replicas, threads, [&](std::size_t r) {
        return sample_rem(spec.s, 0.0, SampleDepth::particles(needed), root.child(0).child(r));
    });
    const auto exponential = TailIntensity::exponential(spec.s);
    CsvTable table({"n", "mean_gap", "standard_error", "expected", "quadrature"});
    for (std::size_t n = 1; n <= ranks; ++n) {
        const double expected = 1.0 / (static_cast<double>(n) * spec.s);
        EmpiricalCdf sample = empirical_gap_cdf(ensemble, n);
        double limit = se_limit * sample.standard_error();
        rows.within("mean_gap:n=" + std::to_string(n), sample.mean(), expected, limit);
        double integral = expected_gap(exponential, static_cast<int>(n));
        rows.within("expected_gap_quadrature:n=" + std::to_string(n), integral / expected - 1.0, 0.0, quadrature);
        table.add_row({static_cast<long long>(n), sample.mean(), sample.standard_error(), expected, integral});
    }
    for (std::size_t k = 1; k <= ks_ranks; ++k) {
        const double rate = spec.s * static_cast<double>(k);
        auto ks = ks_distance(empirical_gap_cdf(ensemble, k), [&](double u) { return u <= 0 ? 0.0 : -std::expm1(-rate * u); });
        rows.below("gap_exponential_ks:k=" + std::to_string(k), ks.statistic, critical_value(ks, alpha), alpha);
    }
    report.data.push_back({"gaps.csv", table.str()});
}

} // namespace

const std::vector<ExperimentInfo>& experiment_catalog() {
    static const std::vector<ExperimentInfo> catalog = [] {
        std::vector<ExperimentInfo> out;
        for (const auto& d : definitions()) out.push_back(d.info);
        return out;
    }();
    return catalog;
}

ExperimentSpec parse_spec(const std::string& text) {
    json j;
    try {
        j = json::parse(text, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw SpecError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw SpecError("config must be a JSON object");
    if (!j.contains("name") || !j.at("name").is_string()) throw SpecError("config needs a 'name' string");
    ExperimentSpec spec;
    spec.name = j.at("name").get<std::string>();
    const Definition* def = find_definition(spec.name);
    if (!def) throw SpecError("unknown experiment '" + spec.name + "'");

    for (const auto& [key, value] : j.items()) {
        if (kCommonKeys.count(key)) continue;
        if (!def->params.count(key)) throw SpecError("unknown key '" + key + "' for experiment " + spec.name);
        spec.params[key] = value;
    }

    if (!j.contains("seed")) throw SpecError("config needs a 'seed'");
    if (!j.at("seed").is_number_unsigned()) throw SpecError("'seed' must be a nonnegative integer");
    spec.seed = j.at("seed").get<std::uint64_t>();

    spec.models = parse_models(j.contains("model") ? j.at("model") : json{{"family", "gaussian"}});
    spec.s = number_field(j, "s", 1.0);
    if (!(spec.s > 0.0) || !std::isfinite(spec.s)) throw SpecError("'s' must be positive");
    spec.replicas = count_field(j, "replicas", 1000, 1);

    if (j.contains("particles") && j.contains("window")) throw SpecError("give either 'particles' or 'window', not both");
    if (j.contains("window")) {
        double w = number_field(j, "window", 0.0);
        if (!(w > 0.0) || !std::isfinite(w)) throw SpecError("'window' must be positive and finite");
        spec.depth = SampleDepth::distance(w);
    } else {
        spec.depth = SampleDepth::particles(count_field(j, "particles", 1000, 2));
    }

    if (j.contains("tau")) {
        const auto& t = j.at("tau");
        std::vector<json> items = t.is_array() ? std::vector<json>(t.begin(), t.end()) : std::vector<json>{t};
        if (items.empty()) throw SpecError("'tau' must not be empty");
        for (const auto& item : items) {
            if (!item.is_number_integer() || item.get<long long>() < 1) throw SpecError("'tau' values must be integers >= 1");
            spec.taus.push_back(item.get<std::size_t>());
        }
    } else {
        spec.taus = def->default_taus;
    }

    if (j.contains("backend")) {
        if (!j.at("backend").is_string()) throw SpecError("'backend' must be a string");
        try {
            spec.backend = parse_backend(j.at("backend").get<std::string>());
        } catch (const std::invalid_argument& e) {
            throw SpecError(e.what());
        }
    }

    spec.tolerances = def->tolerances;
    if (j.contains("tolerances")) {
        const auto& t = j.at("tolerances");
        if (!t.is_object()) throw SpecError("'tolerances' must be an object");
        for (const auto& [key, value] : t.items()) {
            if (!spec.tolerances.count(key)) throw SpecError("unknown tolerance '" + key + "' for experiment " + spec.name);
            if (!value.is_number()) throw SpecError("tolerance '" + key + "' must be a number");
            spec.tolerances[key] = value.get<double>();
        }
    }

    if (j.contains("output")) {
        if (!j.at("output").is_string()) throw SpecError("'output' must be a string");
        spec.output = j.at("output").get<std::string>();
    } else {
        spec.output = std::filesystem::path("out") / spec.name;
    }
    return spec;
}

ExperimentSpec load_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SpecError("cannot read config " + path.string());
    std::stringstream text;
    text << in.rdbuf();
    return parse_spec(text.str());
}

bool ExperimentReport::verdict() const {
    return std::all_of(rows.begin(), rows.end(), [](const MetricRow& r) { return r.pass; });
}

ExperimentReport run(const ExperimentSpec& spec, std::size_t threads) {
    const Definition* def = find_definition(spec.name);
    if (!def) throw SpecError("unknown experiment '" + spec.name + "'");
    if (spec.replicas < 1) throw SpecError("ensemble size must be at least 1");
    if (spec.models.empty()) throw SpecError("no model given");
    if (spec.taus.empty()) throw SpecError("no tau values given");

    ExperimentReport report;
    report.experiment = spec.name;
    report.seed = spec.seed;
    report.backend = "none";
    report.tolerances = spec.tolerances;
    for (const auto& [label, model] : spec.models) report.inputs.emplace_back("model:" + label, no_commas(model.describe()));
    report.inputs.emplace_back("s", format_number(spec.s));
    report.inputs.emplace_back("replicas", std::to_string(spec.replicas));
    report.inputs.emplace_back(spec.depth.kind == SampleDepth::Kind::count ? "particles" : "window", format_number(spec.depth.value));
    std::string taus;
    for (std::size_t t : spec.taus) taus += (taus.empty() ? "" : ";") + std::to_string(t);
    report.inputs.emplace_back("tau", taus);
    for (const auto& [key, value] : spec.params.items()) report.inputs.emplace_back(key, no_commas(value.dump()));

    if (spec.name == "rem-stationarity") rem_stationarity(spec, threads, report);
    else if (spec.name == "velocity") velocity(spec, threads, report);
    else if (spec.name == "backward-tilt") backward_tilt(spec, threads, report);
    else if (spec.name == "poissonize") poissonize(spec, threads, report);
    else if (spec.name == "contraction") contraction(spec, threads, report);
    else if (spec.name == "tails") tails(spec, threads, report);
    else gaps_experiment(spec, threads, report);
    return report;
}

std::string report_csv(const ExperimentReport& report) {
    CsvTable table({"metric", "value", "reference", "tolerance", "pass"});
    for (const auto& r : report.rows) {
        table.add_row({r.metric, r.value, r.reference, r.tolerance, static_cast<long long>(r.pass)});
    }
    return table.str();
}

std::string manifest_csv(const ExperimentReport& report) {
    CsvTable table({"key", "value"});
    table.add_row({std::string("experiment"), report.experiment});
    table.add_row({std::string("seed"), std::to_string(report.seed)});
    table.add_row({std::string("backend"), report.backend});
    for (const auto& [key, value] : report.inputs) table.add_row({"input." + key, value});
    for (const auto& [key, value] : report.tolerances) table.add_row({"tolerance." + key, format_number(value)});
    for (const auto& file : report.data) table.add_row({std::string("data"), file.name});
    table.add_row({std::string("verdict"), std::string(report.verdict() ? "pass" : "fail")});
    return table.str();
}

void write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());
    write_file_atomically(dir / "report.csv", report_csv(report));
    for (const auto& file : report.data) write_file_atomically(dir / file.name, file.contents);
    write_file_atomically(dir / "manifest.csv", manifest_csv(report));
}

} // namespace edgerace
