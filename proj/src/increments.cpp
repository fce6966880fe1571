#include "edgerace/increments.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <boost/random/normal_distribution.hpp>

#include "edgerace/numerics.hpp"
#include "edgerace/parallel.hpp"

namespace edgerace {

namespace {

constexpr double kGaussianReach = 40.0;     // |lambda| sigma
constexpr double kUniformReach = 1.0e6;     // |lambda| (hi - lo)
constexpr double kTabulatedReach = 1.0e4;   // |lambda| (hi - lo)
constexpr double kEdgeShare = 1.0e-10;

// log((e^t - 1) / t), the log-mgf of uniform(0, 1) at t.
double log_mgf_unit(double t) {
    if (std::abs(t) < 1e-2) {
        double t2 = t * t;
        return t / 2.0 + t2 / 24.0 - t2 * t2 / 2880.0 + t2 * t2 * t2 / 181440.0;
    }
    if (t > 0.0) return t + std::log(-std::expm1(-t)) - std::log(t);
    return std::log(-std::expm1(t)) - std::log(-t);
}

// Mean of the uniform(0, 1) law tilted by t.
double mean_unit(double t) {
    if (std::abs(t) < 1e-2) {
        double t2 = t * t;
        return 0.5 + t / 12.0 - t * t2 / 720.0 + t * t2 * t2 / 30240.0;
    }
    if (t < 0.0) return 1.0 - mean_unit(-t);
    return 1.0 / (-std::expm1(-t)) - 1.0 / t;
}

// Variance of the uniform(0, 1) law tilted by t.
double variance_unit(double t) {
    double a = std::abs(t);
    if (a < 0.1) {
        double t2 = t * t;
        return 1.0 / 12.0 - t2 / 240.0 + t2 * t2 / 6048.0 - t2 * t2 * t2 / 172800.0;
    }
    double e = std::expm1(-a);
    return 1.0 / (a * a) - std::exp(-a) / (e * e);
}

// Tilted uniform on [lo, hi] with theta > 0, expressed relative to hi.
double tilted_uniform_tail(double lo, double hi, double theta, double x) {
    if (x <= lo) return 1.0;
    if (x >= hi) return 0.0;
    return -std::expm1(theta * (x - hi)) / (-std::expm1(-theta * (hi - lo)));
}

double tilted_uniform_cdf(double lo, double hi, double theta, double x) {
    if (x <= lo) return 0.0;
    if (x >= hi) return 1.0;
    return std::exp(theta * (x - hi)) * (-std::expm1(-theta * (x - lo))) /
           (-std::expm1(-theta * (hi - lo)));
}

double tilted_uniform_upper_quantile(double lo, double hi, double theta, double p) {
    return hi + std::log1p(-p * (-std::expm1(-theta * (hi - lo)))) / theta;
}

double tilted_uniform_lower_quantile(double lo, double hi, double theta, double p) {
    return hi + std::log(p + (1.0 - p) * std::exp(-theta * (hi - lo))) / theta;
}

double trapezoid_weight(std::size_t i, std::size_t n, double h) {
    return (i == 0 || i + 1 == n) ? 0.5 * h : h;
}

double node(const GridSpec& g, std::size_t i) {
    if (i + 1 == g.points) return g.hi;
    return g.lo + (g.hi - g.lo) * static_cast<double>(i) / static_cast<double>(g.points - 1);
}

// Stabilized trapezoid sums of e^{lambda x} g(x) x^k for k = 0, 1, 2.
struct TiltedSums {
    double log_z;
    double mean;
    double variance;
};

TiltedSums tilted_sums(const GridSpec& g, const std::vector<double>& density, double lambda) {
    const std::size_t n = g.points;
    const double h = (g.hi - g.lo) / static_cast<double>(n - 1);
    double top = -kInf;
    for (std::size_t i = 0; i < n; ++i) {
        if (density[i] > 0.0) top = std::max(top, lambda * node(g, i));
    }
    double z = 0.0, m1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (density[i] <= 0.0) continue;
        double x = node(g, i);
        double w = trapezoid_weight(i, n, h) * density[i] * std::exp(lambda * x - top);
        z += w;
        m1 += w * x;
    }
    double mean = m1 / z;
    double m2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (density[i] <= 0.0) continue;
        double x = node(g, i);
        double w = trapezoid_weight(i, n, h) * density[i] * std::exp(lambda * x - top);
        m2 += w * (x - mean) * (x - mean);
    }
    return {top + std::log(z), mean, m2 / z};
}

// Share of the tilted trapezoid mass carried by one end node.
double edge_share(const GridSpec& g, const std::vector<double>& density, double lambda, bool right) {
    const std::size_t n = g.points;
    const double h = (g.hi - g.lo) / static_cast<double>(n - 1);
    std::size_t i = right ? n - 1 : 0;
    if (density[i] <= 0.0) return 0.0;
    double log_edge = std::log(0.5 * h * density[i]) + lambda * node(g, i);
    return std::exp(log_edge - tilted_sums(g, density, lambda).log_z);
}

} // namespace

IncrementModel IncrementModel::gaussian(double mean, double variance) {
    if (!std::isfinite(mean) || !(variance > 0.0) || !std::isfinite(variance)) {
        throw std::invalid_argument("gaussian increment model needs finite mean and positive variance");
    }
    return IncrementModel(Gaussian{mean, variance});
}

IncrementModel IncrementModel::uniform(double lo, double hi) {
    if (!std::isfinite(lo) || !std::isfinite(hi) || !(hi > lo)) {
        throw std::invalid_argument("uniform increment model needs finite lo < hi");
    }
    return IncrementModel(Uniform{lo, hi, 0.0});
}

IncrementModel::Tabulated IncrementModel::make_tabulated(GridSpec grid, std::vector<double> density) {
    if (grid.points < 3 || !(grid.hi > grid.lo) || density.size() != grid.points) {
        throw std::invalid_argument("tabulated increment model needs >= 3 grid points matching the density");
    }
    const std::size_t n = grid.points;
    const double h = (grid.hi - grid.lo) / static_cast<double>(n - 1);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(density[i] >= 0.0) || !std::isfinite(density[i])) {
            throw std::invalid_argument("tabulated density must be finite and nonnegative");
        }
        total += trapezoid_weight(i, n, h) * density[i];
    }
    if (!(total > 0.0)) throw std::invalid_argument("tabulated density has zero mass");
    for (double& v : density) v /= total;
    std::vector<double> cumulative(n, 0.0);
    for (std::size_t i = 1; i < n; ++i) {
        cumulative[i] = cumulative[i - 1] + 0.5 * h * (density[i - 1] + density[i]);
    }

    // An end node with zero density is a support boundary; a positive one is a
    // truncation, so lambda is clipped where that node carries real mass.
    const double cap = kTabulatedReach / (grid.hi - grid.lo);
    auto limit = [&](bool right) {
        double sign = right ? 1.0 : -1.0;
        auto excess = [&](double a) { return std::log(edge_share(grid, density, sign * a, right) + 1e-300) - std::log(kEdgeShare); };
        if (density[right ? n - 1 : 0] <= 0.0 || excess(cap) <= 0.0) return cap;
        if (excess(0.0) > 0.0) return 0.0;
        return find_root(excess, 0.0, cap, {.x_tolerance = 1e-12 * cap});
    };
    double hi_limit = limit(true);
    double lo_limit = -limit(false);
    return Tabulated{grid, std::move(density), std::move(cumulative), lo_limit, hi_limit};
}

IncrementModel IncrementModel::tabulated(GridSpec grid, std::vector<double> density) {
    return IncrementModel(make_tabulated(grid, std::move(density)));
}

IncrementModel::Kind IncrementModel::kind() const {
    return static_cast<Kind>(repr_.index());
}

std::string IncrementModel::describe() const {
    std::ostringstream out;
    out.precision(17);
    std::visit(
        [&](const auto& r) {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, Gaussian>) {
                out << "gaussian(" << r.mean << ", " << r.variance << ")";
            } else if constexpr (std::is_same_v<T, Uniform>) {
                out << "uniform(" << r.lo << ", " << r.hi << ")";
                if (r.theta != 0.0) out << " tilted by " << r.theta;
            } else {
                out << "tabulated[" << r.grid.lo << ", " << r.grid.hi << "; " << r.grid.points << "]";
            }
        },
        repr_);
    return out.str();
}

double IncrementModel::density(double x) const {
    return std::visit(
        [&](const auto& r) -> double {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, Gaussian>) {
                double sd = std::sqrt(r.variance);
                return normal_density((x - r.mean) / sd) / sd;
            } else if constexpr (std::is_same_v<T, Uniform>) {
                if (x < r.lo || x > r.hi) return 0.0;
                double len = r.hi - r.lo;
                if (r.theta == 0.0) return 1.0 / len;
                if (r.theta > 0.0) return r.theta * std::exp(r.theta * (x - r.hi)) / (-std::expm1(-r.theta * len));
                return -r.theta * std::exp(r.theta * (x - r.lo)) / (-std::expm1(r.theta * len));
            } else {
                if (x < r.grid.lo || x > r.grid.hi) return 0.0;
                double h = (r.grid.hi - r.grid.lo) / static_cast<double>(r.grid.points - 1);
                double pos = (x - r.grid.lo) / h;
                auto i = std::min(static_cast<std::size_t>(pos), r.grid.points - 2);
                double t = pos - static_cast<double>(i);
                return r.density[i] + t * (r.density[i + 1] - r.density[i]);
            }
        },
        repr_);
}

double IncrementModel::cdf(double x) const {
    return std::visit(
        [&](const auto& r) -> double {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, Gaussian>) {
                return normal_cdf((x - r.mean) / std::sqrt(r.variance));
            } else if constexpr (std::is_same_v<T, Uniform>) {
                if (r.theta == 0.0) return std::clamp((x - r.lo) / (r.hi - r.lo), 0.0, 1.0);
                if (r.theta > 0.0) return tilted_uniform_cdf(r.lo, r.hi, r.theta, x);
                return tilted_uniform_tail(r.lo, r.hi, -r.theta, r.lo + r.hi - x);
            } else {
                if (x <= r.grid.lo) return 0.0;
                if (x >= r.grid.hi) return 1.0;
                double h = (r.grid.hi - r.grid.lo) / static_cast<double>(r.grid.points - 1);
                double pos = (x - r.grid.lo) / h;
                auto i = std::min(static_cast<std::size_t>(pos), r.grid.points - 2);
                double d = x - node(r.grid, i);
                double slope = (r.density[i + 1] - r.density[i]) / h;
                return std::min(1.0, r.cumulative[i] + r.density[i] * d + 0.5 * slope * d * d);
            }
        },
        repr_);
}

double IncrementModel::tail(double x) const {
    return std::visit(
        [&](const auto& r) -> double {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, Gaussian>) {
                return normal_upper_tail((x - r.mean) / std::sqrt(r.variance));
            } else if constexpr (std::is_same_v<T, Uniform>) {
                if (r.theta == 0.0) return std::clamp((r.hi - x) / (r.hi - r.lo), 0.0, 1.0);
                if (r.theta > 0.0) return tilted_uniform_tail(r.lo, r.hi, r.theta, x);
                return tilted_uniform_cdf(r.lo, r.hi, -r.theta, r.lo + r.hi - x);
            } else {
                return std::max(0.0, 1.0 - cdf(x));
            }
        },
        repr_);
}

double IncrementModel::upper_quantile(double p) const {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("upper_quantile: p must lie in (0, 1)");
    return std::visit(
        [&](const auto& r) -> double {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, Gaussian>) {
                return r.mean + std::sqrt(r.variance) * normal_upper_quantile(p);
            } else if constexpr (std::is_same_v<T, Uniform>) {
                if (r.theta == 0.0) return r.hi - p * (r.hi - r.lo);
                if (r.theta > 0.0) return tilted_uniform_upper_quantile(r.lo, r.hi, r.theta, p);
                return r.lo + r.hi - tilted_uniform_lower_quantile(r.lo, r.hi, -r.theta, p);
            } else {
                double target = 1.0 - p;
                auto it = std::upper_bound(r.cumulative.begin(), r.cumulative.end(), target);
                std::size_t i = it == r.cumulative.begin() ? 0 : static_cast<std::size_t>(it - r.cumulative.begin()) - 1;
                i = std::min(i, r.grid.points - 2);
                double h = (r.grid.hi - r.grid.lo) / static_cast<double>(r.grid.points - 1);
                double m = std::max(0.0, target - r.cumulative[i]);
                double slope = (r.density[i + 1] - r.density[i]) / h;
                double root = std::sqrt(std::max(0.0, r.density[i] * r.density[i] + 2.0 * slope * m));
                double denom = r.density[i] + root;
                double d = denom > 0.0 ? 2.0 * m / denom : 0.0;
                return node(r.grid, i) + std::clamp(d, 0.0, h);
            }
        },
        repr_);
}

double IncrementModel::mean() const { return cumulant(0.0).slope; }

double IncrementModel::variance() const { return cumulant(0.0).curvature; }

std::pair<double, double> IncrementModel::safe_range() const {
    return std::visit(
        [&](const auto& r) -> std::pair<double, double> {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, Gaussian>) {
                double reach = kGaussianReach / std::sqrt(r.variance);
                return {-reach, reach};
            } else if constexpr (std::is_same_v<T, Uniform>) {
                double reach = kUniformReach / (r.hi - r.lo);
                return {-reach - r.theta, reach - r.theta};
            } else {
                return {r.lambda_lo, r.lambda_hi};
            }
        },
        repr_);
}

bool IncrementModel::in_safe_range(double lambda) const {
    auto [lo, hi] = safe_range();
    return lambda >= lo && lambda <= hi;
}

Cumulant IncrementModel::cumulant(double lambda) const {
    if (!in_safe_range(lambda)) {
        std::ostringstream msg;
        msg << "cumulant: lambda = " << lambda << " outside the safe range of " << describe();
        throw std::domain_error(msg.str());
    }
    return std::visit(
        [&](const auto& r) -> Cumulant {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, Gaussian>) {
                return {lambda * r.mean + 0.5 * r.variance * lambda * lambda, r.mean + r.variance * lambda,
                        r.variance};
            } else if constexpr (std::is_same_v<T, Uniform>) {
                double len = r.hi - r.lo;
                double t = (lambda + r.theta) * len;
                double value = lambda == 0.0 ? 0.0
                                             : lambda * r.lo + log_mgf_unit(t) - log_mgf_unit(r.theta * len);
                return {value, r.lo + len * mean_unit(t), len * len * variance_unit(t)};
            } else {
                TiltedSums at = tilted_sums(r.grid, r.density, lambda);
                double value = 0.0;
                if (lambda != 0.0) value = at.log_z - tilted_sums(r.grid, r.density, 0.0).log_z;
                return {value, at.mean, at.variance};
            }
        },
        repr_);
}

IncrementModel IncrementModel::tilted(double s) const {
    if (s == 0.0) return *this;
    if (!in_safe_range(s)) {
        std::ostringstream msg;
        msg << "tilt: s = " << s << " outside the safe range of " << describe();
        throw std::domain_error(msg.str());
    }
    return std::visit(
        [&](const auto& r) -> IncrementModel {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, Gaussian>) {
                return IncrementModel(Gaussian{r.mean + r.variance * s, r.variance});
            } else if constexpr (std::is_same_v<T, Uniform>) {
                return IncrementModel(Uniform{r.lo, r.hi, r.theta + s});
            } else {
                std::vector<double> values(r.grid.points);
                double top = -kInf;
                for (std::size_t i = 0; i < values.size(); ++i) top = std::max(top, s * node(r.grid, i));
                for (std::size_t i = 0; i < values.size(); ++i) {
                    values[i] = r.density[i] * std::exp(s * node(r.grid, i) - top);
                }
                return IncrementModel(make_tabulated(r.grid, std::move(values)));
            }
        },
        repr_);
}

std::pair<double, double> IncrementModel::support() const {
    return std::visit(
        [&](const auto& r) -> std::pair<double, double> {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, Gaussian>) {
                return {-kInf, kInf};
            } else if constexpr (std::is_same_v<T, Uniform>) {
                return {r.lo, r.hi};
            } else {
                return {r.grid.lo, r.grid.hi};
            }
        },
        repr_);
}

GridSpec IncrementModel::quadrature_grid() const {
    return std::visit(
        [&](const auto& r) -> GridSpec {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, Gaussian>) {
                double sd = std::sqrt(r.variance);
                return {r.mean - 12.0 * sd, r.mean + 12.0 * sd, 2401};
            } else if constexpr (std::is_same_v<T, Uniform>) {
                return {r.lo, r.hi, 2001};
            } else {
                return r.grid;
            }
        },
        repr_);
}

double IncrementModel::draw(Engine& engine) const {
    double value = 0.0;
    fill(std::span<double>(&value, 1), engine);
    return value;
}

void IncrementModel::fill(std::span<double> out, Engine& engine) const {
    std::visit(
        [&](const auto& r) {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, Gaussian>) {
                boost::random::normal_distribution<double> normal(r.mean, std::sqrt(r.variance));
                for (double& v : out) v = normal(engine);
            } else if constexpr (std::is_same_v<T, Uniform>) {
                double len = r.hi - r.lo;
                for (double& v : out) {
                    double u = open_uniform(engine);
                    if (r.theta == 0.0) {
                        v = r.lo + u * len;
                    } else if (r.theta > 0.0) {
                        v = tilted_uniform_upper_quantile(r.lo, r.hi, r.theta, u);
                    } else {
                        v = r.lo + r.hi - tilted_uniform_upper_quantile(r.lo, r.hi, -r.theta, u);
                    }
                }
            } else {
                for (double& v : out) v = upper_quantile(open_uniform(engine));
            }
        },
        repr_);
}

std::pair<double, double> IncrementModel::gaussian_parameters() const {
    const auto* g = std::get_if<Gaussian>(&repr_);
    if (!g) throw std::logic_error("gaussian_parameters: model is not gaussian");
    return {g->mean, g->variance};
}

Cumulant cumulant(const IncrementModel& model, double lambda) { return model.cumulant(lambda); }

LegendrePoint legendre(const IncrementModel& model, double q) {
    const double mu = model.mean();
    if (q == mu) return {0.0, 0.0};
    auto [lambda_lo, lambda_hi] = model.safe_range();
    const double limit = q > mu ? lambda_hi : lambda_lo;
    auto excess = [&](double eta) { return model.cumulant(eta).slope - q; };
    double step = std::min(std::abs(limit), 1.0 / std::sqrt(model.variance()));
    double far = q > mu ? step : -step;
    while ((q > mu ? excess(far) < 0.0 : excess(far) > 0.0)) {
        if (far == limit) {
            std::ostringstream msg;
            msg << "legendre: q = " << q << " is outside the attainable tilted means of " << model.describe();
            throw std::domain_error(msg.str());
        }
        far = q > mu ? std::min(limit, 2.0 * far) : std::max(limit, 2.0 * far);
    }
    double eta = find_root(excess, 0.0, far, {.x_tolerance = 0.0, .f_tolerance = 1e-14 * (1.0 + std::abs(q))});
    return {eta, eta * q - model.cumulant(eta).value};
}

double front_velocity(const IncrementModel& model, double s) {
    if (!(s > 0.0)) throw std::domain_error("front_velocity: s must be positive");
    return model.cumulant(s).value / s;
}

IncrementModel tilt(const IncrementModel& model, double s) { return model.tilted(s); }

std::vector<double> sample(const IncrementModel& model, std::size_t n, const StreamKey& stream) {
    std::vector<double> out(n);
    Engine engine = stream.engine();
    model.fill(out, engine);
    return out;
}

std::string to_string(TailBackend backend) {
    switch (backend) {
    case TailBackend::exact: return "exact";
    case TailBackend::br_approx: return "br-approx";
    case TailBackend::saddlepoint: return "saddlepoint";
    case TailBackend::mc_importance: return "mc-importance";
    }
    return "unknown";
}

TailBackend parse_backend(const std::string& name) {
    if (name == "exact" || name == "gaussian-exact") return TailBackend::exact;
    if (name == "br-approx") return TailBackend::br_approx;
    if (name == "saddlepoint") return TailBackend::saddlepoint;
    if (name == "mc-importance") return TailBackend::mc_importance;
    throw std::invalid_argument("unknown tail backend '" + name + "'");
}

TailBackend default_backend(const IncrementModel& model, std::size_t steps) {
    if (model.kind() == IncrementModel::Kind::gaussian || steps == 1) return TailBackend::exact;
    return TailBackend::saddlepoint;
}

namespace {

void require_steps(std::size_t steps) {
    if (steps == 0) throw std::invalid_argument("tail query needs at least one step");
}

double exact_tail(const IncrementModel& model, std::size_t steps, double y) {
    if (model.kind() == IncrementModel::Kind::gaussian) {
        auto [m, v] = model.gaussian_parameters();
        double tau = static_cast<double>(steps);
        return normal_upper_tail((y - tau * m) / std::sqrt(tau * v));
    }
    if (steps == 1) return model.tail(y);
    throw std::invalid_argument("exact tail backend needs a gaussian model or a single step");
}

// Resolves q, eta, Lambda*(q) and psi for q strictly above the mean.
TailEstimate resolve_upper(const IncrementModel& model, std::size_t steps, double y) {
    double tau = static_cast<double>(steps);
    TailEstimate est;
    est.q = y / tau;
    if (!(est.q > model.mean())) {
        std::ostringstream msg;
        msg << "tail query: q = " << est.q << " must exceed the mean " << model.mean();
        throw std::domain_error(msg.str());
    }
    LegendrePoint lp = legendre(model, est.q);
    est.eta = lp.eta;
    est.rate = lp.rate;
    est.psi = lp.eta * std::sqrt(tau * model.cumulant(lp.eta).curvature);
    return est;
}

double lugannani_rice(const IncrementModel& model, double tau, double q) {
    LegendrePoint lp = legendre(model, q);
    double w = std::copysign(std::sqrt(std::max(0.0, 2.0 * tau * lp.rate)), lp.eta);
    double psi = lp.eta * std::sqrt(tau * model.cumulant(lp.eta).curvature);
    return normal_upper_tail(w) + normal_density(w) * (1.0 / psi - 1.0 / w);
}

double saddlepoint_tail(const IncrementModel& model, std::size_t steps, double y) {
    const double tau = static_cast<double>(steps);
    auto [lo, hi] = model.support();
    if (y >= tau * hi) return 0.0;
    if (y <= tau * lo) return 1.0;
    const double q = y / tau;
    const double mu = model.mean();
    const double scale = std::sqrt(model.variance() / tau);
    const double near = 1e-3 * scale;
    if (std::abs(q - mu) < near) {
        double below = lugannani_rice(model, tau, mu - near);
        double above = lugannani_rice(model, tau, mu + near);
        return below + (above - below) * (q - (mu - near)) / (2.0 * near);
    }
    try {
        return std::clamp(lugannani_rice(model, tau, q), 0.0, 1.0);
    } catch (const std::domain_error&) {
        // Beyond the reachable tilt: bound by Chernoff at the edge of the range.
        auto [lambda_lo, lambda_hi] = model.safe_range();
        double edge = q > mu ? lambda_hi : lambda_lo;
        double bound = std::exp(-tau * (edge * q - model.cumulant(edge).value));
        if (bound <= 1e-12) return q > mu ? 0.0 : 1.0;
        throw;
    }
}

struct TiltedMoments {
    double sum = 0.0, sum_sq = 0.0;
    double num = 0.0, num_sq = 0.0, cross = 0.0;
};

// Importance sampling under the eta-tilted law in fixed-size blocks; block b
// always uses substream b, so the result does not depend on the thread count.
TiltedMoments tilted_blocks(const IncrementModel& model, std::size_t steps, double eta, double y_den,
                            std::optional<double> y_num, const McOptions& mc) {
    constexpr std::size_t kBlock = 4096;
    const IncrementModel tilted_model = model.tilted(eta);
    const double log_shift = static_cast<double>(steps) * model.cumulant(eta).value;
    const std::size_t blocks = (mc.samples + kBlock - 1) / kBlock;
    std::vector<TiltedMoments> partial(blocks);
    StreamKey root(mc.seed);
    parallel_for(blocks, mc.threads, [&](std::size_t b) {
        Engine engine = root.child(b).engine();
        std::size_t count = std::min(kBlock, mc.samples - b * kBlock);
        std::vector<double> h(steps);
        TiltedMoments m;
        for (std::size_t i = 0; i < count; ++i) {
            tilted_model.fill(h, engine);
            double s = 0.0;
            for (double v : h) s += v;
            double weight = std::exp(-eta * s + log_shift);
            double d = s >= y_den ? weight : 0.0;
            m.sum += d;
            m.sum_sq += d * d;
            if (y_num) {
                double n = s >= *y_num ? weight : 0.0;
                m.num += n;
                m.num_sq += n * n;
                m.cross += n * d;
            }
        }
        partial[b] = m;
    });
    TiltedMoments total;
    for (const auto& m : partial) {
        total.sum += m.sum;
        total.sum_sq += m.sum_sq;
        total.num += m.num;
        total.num_sq += m.num_sq;
        total.cross += m.cross;
    }
    return total;
}

} // namespace

TailEstimate sum_tail(const IncrementModel& model, const TailQuery& query) {
    require_steps(query.steps);
    const double y = query.level;
    switch (query.backend) {
    case TailBackend::exact: {
        TailEstimate est;
        est.q = y / static_cast<double>(query.steps);
        est.probability = exact_tail(model, query.steps, y);
        return est;
    }
    case TailBackend::br_approx: {
        TailEstimate est = resolve_upper(model, query.steps, y);
        double tau = static_cast<double>(query.steps);
        double curvature = model.cumulant(est.eta).curvature;
        est.probability = std::exp(-tau * est.rate) / (est.eta * std::sqrt(2.0 * std::numbers::pi * tau * curvature));
        return est;
    }
    case TailBackend::saddlepoint: {
        TailEstimate est;
        est.q = y / static_cast<double>(query.steps);
        est.probability = saddlepoint_tail(model, query.steps, y);
        return est;
    }
    case TailBackend::mc_importance: {
        if (query.mc.samples < 2) throw std::invalid_argument("mc-importance needs at least two samples");
        TailEstimate est = resolve_upper(model, query.steps, y);
        TiltedMoments m = tilted_blocks(model, query.steps, est.eta, y, std::nullopt, query.mc);
        double n = static_cast<double>(query.mc.samples);
        double mean = m.sum / n;
        double var = std::max(0.0, (m.sum_sq - n * mean * mean) / (n - 1.0));
        est.probability = mean;
        est.standard_error = std::sqrt(var / n);
        if (query.mc.max_relative_error && est.standard_error > *query.mc.max_relative_error * mean) {
            std::ostringstream msg;
            msg << "mc-importance: relative standard error " << est.standard_error / mean << " exceeds cap "
                << *query.mc.max_relative_error;
            throw NumericalError(msg.str());
        }
        return est;
    }
    }
    throw std::invalid_argument("unknown tail backend");
}

TailRatio tail_ratio(const IncrementModel& model, std::size_t steps, double q, double x, TailBackend backend,
                     const McOptions& mc, double window_exponent) {
    require_steps(steps);
    const double tau = static_cast<double>(steps);
    if (std::abs(x) > std::pow(tau, window_exponent)) {
        std::ostringstream msg;
        msg << "tail_ratio: |x| = " << std::abs(x) << " exceeds the window tau^" << window_exponent;
        throw std::domain_error(msg.str());
    }
    TailRatio out;
    out.eta = legendre(model, q).eta;
    out.prediction = std::exp(-out.eta * x);
    if (x == 0.0) {
        out.ratio = 1.0;
        return out;
    }
    if (backend == TailBackend::mc_importance) {
        if (mc.samples < 2) throw std::invalid_argument("mc-importance needs at least two samples");
        if (!(q > model.mean())) throw std::domain_error("tail_ratio: q must exceed the mean for mc-importance");
        TiltedMoments m = tilted_blocks(model, steps, out.eta, q * tau, q * tau + x, mc);
        double n = static_cast<double>(mc.samples);
        double den = m.sum / n, num = m.num / n;
        out.ratio = num / den;
        // Delta method on the ratio of two correlated means.
        double var = (m.num_sq - 2.0 * out.ratio * m.cross + out.ratio * out.ratio * m.sum_sq) / n -
                     (num - out.ratio * den) * (num - out.ratio * den);
        out.standard_error = std::sqrt(std::max(0.0, var) / (n - 1.0)) / den;
        return out;
    }
    TailQuery base{steps, q * tau, backend, mc};
    TailQuery shifted{steps, q * tau + x, backend, mc};
    out.ratio = sum_tail(model, shifted).probability / sum_tail(model, base).probability;
    return out;
}

SumTail::SumTail(IncrementModel model, std::size_t steps, TailBackend backend, McOptions mc)
    : model_(std::move(model)), steps_(steps), backend_(backend), mc_(mc) {
    require_steps(steps);
    double tau = static_cast<double>(steps);
    center_ = tau * model_.mean();
    spread_ = std::sqrt(tau * model_.variance());
    if (backend_ == TailBackend::exact) exact_tail(model_, steps_, center_);
}

double SumTail::operator()(double y) const {
    if (backend_ == TailBackend::exact) return exact_tail(model_, steps_, y);
    if (backend_ == TailBackend::saddlepoint) return saddlepoint_tail(model_, steps_, y);
    TailQuery query{steps_, y, backend_, mc_};
    if (backend_ == TailBackend::mc_importance) {
        query.mc.seed = splitmix64(mc_.seed ^ std::bit_cast<std::uint64_t>(y));
        query.mc.threads = 1;
    }
    return sum_tail(model_, query).probability;
}

} // namespace edgerace
