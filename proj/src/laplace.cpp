#include "edgerace/laplace.hpp"

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace edgerace {

namespace {

// Atoms as (u, log w) so that weights like w e^{Lambda(u)} never overflow.
struct LogAtom {
    double u;
    double log_w;
};

double log_sum(std::span<const LogAtom> atoms, double y) {
    double top = -kInf;
    for (const auto& a : atoms) top = std::max(top, a.log_w - y * a.u);
    if (!std::isfinite(top)) return top;
    double sum = 0.0;
    for (const auto& a : atoms) sum += std::exp(a.log_w - y * a.u - top);
    return top + std::log(sum);
}

// Weighted mean of u under the weights w e^{-y u}.
double tilted_location(std::span<const LogAtom> atoms, double y) {
    double top = -kInf;
    for (const auto& a : atoms) top = std::max(top, a.log_w - y * a.u);
    double sum = 0.0, first = 0.0;
    for (const auto& a : atoms) {
        double w = std::exp(a.log_w - y * a.u - top);
        sum += w;
        first += w * a.u;
    }
    return first / sum;
}

// Solves log R(y) = log_level. log R is convex and decreasing, so Newton steps
// from a point left of the root increase monotonically to it. The start is the
// smallest single-atom solution, where log R >= log_level holds termwise.
double solve_log_level(std::span<const LogAtom> atoms, double log_level) {
    double floor_mass = 0.0;
    double start = kInf;
    std::size_t moving = 0;
    for (const auto& a : atoms) {
        if (a.u == 0.0) {
            floor_mass += std::exp(a.log_w);
        } else {
            start = std::min(start, (a.log_w - log_level) / a.u);
            ++moving;
        }
    }
    if (moving == 0 || std::log(floor_mass) >= log_level) {
        std::ostringstream msg;
        msg << "laplace inverse: level " << std::exp(log_level) << " is not above the mass at u = 0 ("
            << floor_mass << ")";
        throw std::domain_error(msg.str());
    }
    if (atoms.size() == 1) return start;
    double y = start;
    for (int it = 0; it < 500; ++it) {
        double excess = log_sum(atoms, y) - log_level;
        if (excess <= 0.0) return y;
        double step = excess / tilted_location(atoms, y);
        y += step;
        if (step <= 1e-15 * (1.0 + std::abs(y))) return y;
    }
    // Very flat stretch near an atom at u = 0; finish by bracketing.
    double hi = y + 1.0;
    auto f = [&](double v) { return log_sum(atoms, v) - log_level; };
    while (f(hi) > 0.0) hi = y + 2.0 * (hi - y);
    return find_root(f, y, hi, {.x_tolerance = 1e-14 * (1.0 + std::abs(y))});
}

std::vector<LogAtom> log_atoms(const LaplaceMeasure& rho) {
    std::vector<LogAtom> out;
    out.reserve(rho.size());
    for (const auto& a : rho.atoms()) out.push_back({a.location, std::log(a.weight)});
    return out;
}

} // namespace

LaplaceMeasure LaplaceMeasure::from_atoms(std::vector<Atom> atoms) {
    if (atoms.empty()) throw std::invalid_argument("LaplaceMeasure: no atoms");
    for (const auto& a : atoms) {
        if (!(a.location >= 0.0) || !std::isfinite(a.location)) {
            throw std::invalid_argument("LaplaceMeasure: atom locations must be finite and nonnegative");
        }
        if (!(a.weight > 0.0) || !std::isfinite(a.weight)) {
            throw std::invalid_argument("LaplaceMeasure: atom weights must be finite and positive");
        }
    }
    std::stable_sort(atoms.begin(), atoms.end(),
                     [](const Atom& x, const Atom& y) { return x.location < y.location; });
    std::vector<Atom> merged;
    for (const auto& a : atoms) {
        if (!merged.empty() && merged.back().location == a.location) {
            merged.back().weight += a.weight;
        } else {
            merged.push_back(a);
        }
    }
    return LaplaceMeasure(std::move(merged));
}

LaplaceMeasure LaplaceMeasure::single(double location, double weight) {
    return from_atoms({{location, weight}});
}

double LaplaceMeasure::total_mass() const {
    double sum = 0.0;
    for (const auto& a : atoms_) sum += a.weight;
    return sum;
}

double LaplaceMeasure::mean_location() const {
    double sum = 0.0;
    for (const auto& a : atoms_) sum += a.weight * a.location;
    return sum / total_mass();
}

double log_transform(const LaplaceMeasure& rho, double x) {
    auto atoms = log_atoms(rho);
    return log_sum(atoms, x);
}

double transform(const LaplaceMeasure& rho, double x) { return std::exp(log_transform(rho, x)); }

LaplaceMeasure shift(const LaplaceMeasure& rho, double alpha) {
    if (alpha == 0.0) return rho;
    std::vector<Atom> atoms(rho.atoms().begin(), rho.atoms().end());
    for (auto& a : atoms) a.weight = std::exp(std::log(a.weight) - alpha * a.location);
    return LaplaceMeasure::from_atoms(std::move(atoms));
}

Normalization normalize(const LaplaceMeasure& rho) {
    if (rho.total_mass() == 1.0) return {rho, 0.0};
    auto atoms = log_atoms(rho);
    double alpha = solve_log_level(atoms, 0.0);
    return {shift(rho, alpha), alpha};
}

Convolution convolve_g(const LaplaceMeasure& rho, const IncrementModel& model) {
    double mass = rho.total_mass();
    if (std::abs(mass - 1.0) > 1e-9) {
        std::ostringstream msg;
        msg << "convolve_g: input measure has mass " << mass << ", expected 1";
        throw std::invalid_argument(msg.str());
    }
    std::vector<LogAtom> tilted;
    tilted.reserve(rho.size());
    for (const auto& a : rho.atoms()) {
        tilted.push_back({a.location, std::log(a.weight) + model.cumulant(a.location).value});
    }
    double z = solve_log_level(tilted, 0.0);
    std::vector<Atom> out;
    out.reserve(tilted.size());
    for (const auto& a : tilted) out.push_back({a.u, std::exp(a.log_w - z * a.u)});
    return {LaplaceMeasure::from_atoms(std::move(out)), z};
}

// ---------------------------------------------------------------------------

TailIntensity TailIntensity::laplace(LaplaceMeasure rho, double offset) {
    return TailIntensity(Laplace{std::move(rho), offset});
}

TailIntensity TailIntensity::exponential(double s, double z) {
    if (!(s > 0.0)) throw std::domain_error("exponential intensity needs s > 0");
    return laplace(LaplaceMeasure::single(s, 1.0), -z);
}

TailIntensity TailIntensity::empirical(std::vector<double> xs, std::vector<double> values) {
    if (xs.size() < 2 || xs.size() != values.size()) {
        throw std::invalid_argument("empirical intensity needs at least two (x, F) pairs");
    }
    std::vector<double> logs(values.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!(values[i] > 0.0) || !std::isfinite(values[i])) {
            throw std::invalid_argument("empirical intensity values must be positive and finite");
        }
        if (i > 0 && !(xs[i] > xs[i - 1])) throw std::invalid_argument("empirical intensity grid must increase");
        if (i > 0 && values[i] > values[i - 1]) {
            throw std::invalid_argument("empirical intensity values must be nonincreasing");
        }
        logs[i] = std::log(values[i]);
    }
    return TailIntensity(Empirical{std::move(xs), std::move(logs), 0.0});
}

namespace {

double segment_slope(const std::vector<double>& xs, const std::vector<double>& logs, std::size_t i) {
    return (logs[i + 1] - logs[i]) / (xs[i + 1] - xs[i]);
}

// Segment index for x, with -1 meaning left of the grid and n-1 meaning right.
std::ptrdiff_t locate(const std::vector<double>& xs, double x) {
    auto it = std::upper_bound(xs.begin(), xs.end(), x);
    return static_cast<std::ptrdiff_t>(it - xs.begin()) - 1;
}

} // namespace

double TailIntensity::log_value(double x) const {
    if (const auto* l = std::get_if<Laplace>(&repr_)) return log_transform(l->rho, x + l->offset);
    const auto& e = std::get<Empirical>(repr_);
    double xe = x - e.shift;
    const std::size_t n = e.xs.size();
    std::ptrdiff_t i = locate(e.xs, xe);
    if (i < 0) return e.logs[0] + segment_slope(e.xs, e.logs, 0) * (xe - e.xs[0]);
    if (static_cast<std::size_t>(i) >= n - 1) {
        return e.logs[n - 1] + segment_slope(e.xs, e.logs, n - 2) * (xe - e.xs[n - 1]);
    }
    auto k = static_cast<std::size_t>(i);
    return e.logs[k] + segment_slope(e.xs, e.logs, k) * (xe - e.xs[k]);
}

double TailIntensity::operator()(double x) const { return std::exp(log_value(x)); }

double TailIntensity::derivative(double x) const {
    if (const auto* l = std::get_if<Laplace>(&repr_)) {
        double sum = 0.0;
        for (const auto& a : l->rho.atoms()) sum -= a.location * a.weight * std::exp(-(x + l->offset) * a.location);
        return sum;
    }
    const auto& e = std::get<Empirical>(repr_);
    const std::size_t n = e.xs.size();
    std::ptrdiff_t i = locate(e.xs, x - e.shift);
    auto k = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 2));
    return (*this)(x) * segment_slope(e.xs, e.logs, k);
}

double TailIntensity::floor_level() const {
    if (const auto* l = std::get_if<Laplace>(&repr_)) {
        double mass = 0.0;
        for (const auto& a : l->rho.atoms()) {
            if (a.location == 0.0) mass += a.weight;
        }
        return mass;
    }
    const auto& e = std::get<Empirical>(repr_);
    std::size_t n = e.xs.size();
    return segment_slope(e.xs, e.logs, n - 2) < 0.0 ? 0.0 : std::exp(e.logs[n - 1]);
}

double TailIntensity::ceiling_level() const {
    if (const auto* l = std::get_if<Laplace>(&repr_)) {
        for (const auto& a : l->rho.atoms()) {
            if (a.location > 0.0) return kInf;
        }
        return l->rho.total_mass();
    }
    const auto& e = std::get<Empirical>(repr_);
    return segment_slope(e.xs, e.logs, 0) < 0.0 ? kInf : std::exp(e.logs[0]);
}

double TailIntensity::min_log_slope() const {
    if (const auto* l = std::get_if<Laplace>(&repr_)) return l->rho.atoms().front().location;
    const auto& e = std::get<Empirical>(repr_);
    double slope = kInf;
    for (std::size_t i = 0; i + 1 < e.xs.size(); ++i) slope = std::min(slope, -segment_slope(e.xs, e.logs, i));
    return slope;
}

double TailIntensity::inverse(double level) const {
    if (!(level > floor_level() && level < ceiling_level())) {
        std::ostringstream msg;
        msg << "TailIntensity::inverse: level " << level << " outside (" << floor_level() << ", "
            << ceiling_level() << ")";
        throw std::domain_error(msg.str());
    }
    double la = std::log(level);
    if (const auto* l = std::get_if<Laplace>(&repr_)) {
        auto atoms = log_atoms(l->rho);
        return solve_log_level(atoms, la) - l->offset;
    }
    const auto& e = std::get<Empirical>(repr_);
    const std::size_t n = e.xs.size();
    if (la >= e.logs[0]) return e.shift + e.xs[0] + (la - e.logs[0]) / segment_slope(e.xs, e.logs, 0);
    if (la < e.logs[n - 1]) {
        return e.shift + e.xs[n - 1] + (la - e.logs[n - 1]) / segment_slope(e.xs, e.logs, n - 2);
    }
    // First node at or below the level; the infimum lies in the segment before it.
    auto it = std::lower_bound(e.logs.begin(), e.logs.end(), la, [](double v, double t) { return v > t; });
    auto i = static_cast<std::size_t>(it - e.logs.begin());
    double frac = (la - e.logs[i - 1]) / (e.logs[i] - e.logs[i - 1]);
    return e.shift + e.xs[i - 1] + frac * (e.xs[i] - e.xs[i - 1]);
}

double TailIntensity::integral_above(double x) const {
    if (const auto* l = std::get_if<Laplace>(&repr_)) {
        double sum = 0.0;
        for (const auto& a : l->rho.atoms()) {
            if (a.location == 0.0) return kInf;
            sum += a.weight * std::exp(-(x + l->offset) * a.location) / a.location;
        }
        return sum;
    }
    const auto& e = std::get<Empirical>(repr_);
    const std::size_t n = e.xs.size();
    double right = segment_slope(e.xs, e.logs, n - 2);
    if (!(right < 0.0)) return kInf;
    double xe = x - e.shift;
    // Exact integral of the piecewise exponential.
    auto piece = [](double x0, double x1, double log0, double slope) {
        if (slope == 0.0) return std::exp(log0) * (x1 - x0);
        return std::exp(log0) * std::expm1(slope * (x1 - x0)) / slope;
    };
    double total = 0.0;
    std::ptrdiff_t i = locate(e.xs, xe);
    if (i < 0) {
        total += piece(xe, e.xs[0], log_value(x), segment_slope(e.xs, e.logs, 0));
        i = 0;
        xe = e.xs[0];
    }
    for (auto k = static_cast<std::size_t>(i); k + 1 < n; ++k) {
        double start = std::max(xe, e.xs[k]);
        double log0 = e.logs[k] + segment_slope(e.xs, e.logs, k) * (start - e.xs[k]);
        total += piece(start, e.xs[k + 1], log0, segment_slope(e.xs, e.logs, k));
    }
    double tail_start = std::max(xe, e.xs[n - 1]);
    double tail_log = e.logs[n - 1] + right * (tail_start - e.xs[n - 1]);
    total += std::exp(tail_log) / -right;
    return total;
}

TailIntensity TailIntensity::translated(double b) const {
    if (const auto* l = std::get_if<Laplace>(&repr_)) return TailIntensity(Laplace{l->rho, l->offset - b});
    Empirical e = std::get<Empirical>(repr_);
    e.shift += b;
    return TailIntensity(std::move(e));
}

TailIntensity TailIntensity::normalized() const {
    if (const auto* l = std::get_if<Laplace>(&repr_)) {
        Normalization n = normalize(shift(l->rho, l->offset));
        return laplace(n.measure, 0.0);
    }
    // sup{z : F(z) >= 1}: the right end of any flat stretch at level 1.
    const auto& e = std::get<Empirical>(repr_);
    const std::size_t n = e.xs.size();
    double z;
    if (!(1.0 < ceiling_level() || e.logs[0] >= 0.0) || !(1.0 > floor_level())) {
        throw std::domain_error("TailIntensity::normalized: F never crosses 1");
    }
    if (e.logs[0] < 0.0) {
        z = e.xs[0] + (0.0 - e.logs[0]) / segment_slope(e.xs, e.logs, 0);
    } else if (e.logs[n - 1] >= 0.0) {
        z = e.xs[n - 1] + (0.0 - e.logs[n - 1]) / segment_slope(e.xs, e.logs, n - 2);
    } else {
        // Last node at or above level 1.
        auto it = std::lower_bound(e.logs.begin(), e.logs.end(), 0.0, [](double v, double t) { return v >= t; });
        auto i = static_cast<std::size_t>(it - e.logs.begin()) - 1;
        double frac = (0.0 - e.logs[i]) / (e.logs[i + 1] - e.logs[i]);
        z = e.xs[i] + frac * (e.xs[i + 1] - e.xs[i]);
    }
    return translated(-(z + e.shift));
}

const LaplaceMeasure& TailIntensity::measure() const {
    const auto* l = std::get_if<Laplace>(&repr_);
    if (!l) throw std::logic_error("TailIntensity::measure: intensity is empirical");
    return l->rho;
}

double TailIntensity::offset() const {
    const auto* l = std::get_if<Laplace>(&repr_);
    if (!l) throw std::logic_error("TailIntensity::offset: intensity is empirical");
    return l->offset;
}

// ---------------------------------------------------------------------------

std::vector<LevelPair> level_pairs(double lo, double hi, std::size_t points) {
    if (!(lo > 0.0 && hi > lo) || points < 2) throw std::invalid_argument("level_pairs: need 0 < lo < hi, points >= 2");
    std::vector<double> levels(points);
    double step = std::log(hi / lo) / static_cast<double>(points - 1);
    for (std::size_t i = 0; i < points; ++i) levels[i] = i + 1 == points ? hi : lo * std::exp(step * static_cast<double>(i));
    std::vector<LevelPair> out;
    for (std::size_t i = 0; i < points; ++i) {
        for (std::size_t j = i + 1; j < points; ++j) out.push_back({levels[i], levels[j]});
    }
    return out;
}

SteepnessResult steeper(const TailIntensity& g, const TailIntensity& f, std::span<const LevelPair> levels,
                        double slack) {
    std::vector<double> distinct;
    for (const auto& p : levels) {
        if (!(p.a < p.b)) throw std::invalid_argument("steeper: level pairs need a < b");
        distinct.push_back(p.a);
        distinct.push_back(p.b);
    }
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    std::vector<double> g_inv(distinct.size()), f_inv(distinct.size());
    for (std::size_t i = 0; i < distinct.size(); ++i) {
        g_inv[i] = g.inverse(distinct[i]);
        f_inv[i] = f.inverse(distinct[i]);
    }
    auto index = [&](double level) {
        return static_cast<std::size_t>(std::lower_bound(distinct.begin(), distinct.end(), level) - distinct.begin());
    };
    SteepnessResult result;
    for (const auto& p : levels) {
        std::size_t ia = index(p.a), ib = index(p.b);
        double excess = (g_inv[ia] - g_inv[ib]) - (f_inv[ia] - f_inv[ib]);
        result.max_excess = std::max(result.max_excess, excess);
        if (excess > slack && result.steeper) {
            result.steeper = false;
            result.witness = p;
        }
    }
    return result;
}

double gap_functional(const TailIntensity& f, double u) {
    if (!(u >= 0.0)) throw std::domain_error("gap_functional: u must be nonnegative");
    if (u == 0.0) return 1.0;
    // The integrand is bounded by e^{-t}, so stopping at 45 drops < 3e-20.
    const double lo = f.floor_level();
    const double hi = std::min(45.0, f.ceiling_level());
    if (f.is_laplace() && lo < 1.0 && hi > 1.0) {
        // In position space, t = F(x): no inversion per node, and the
        // integrand is a smooth sum of exponentials.
        auto density = [&](double x) { return -std::exp(-f(x - u)) * f.derivative(x); };
        const double x_lo = hi < f.ceiling_level() ? f.inverse(hi) : -kInf;
        const double x_mid = f.inverse(1.0);
        return integrate(density, x_lo, x_mid, 1e-11) + integrate(density, x_mid, kInf, 1e-11);
    }
    auto integrand = [&](double t) { return std::exp(-f(f.inverse(t) - u)); };
    // Near t = lo the integrand goes like powers (t - lo)^{u_j / u_min} that
    // Gauss-Kronrod handles badly; t = lo + (1 - lo) e^{-v} makes them smooth.
    double total = 0.0, a = lo;
    if (hi > 1.0 && lo < 1.0) {
        const double span = 1.0 - lo;
        auto mapped = [&](double v) {
            double t = lo + span * std::exp(-v);
            return t > lo ? integrand(t) * span * std::exp(-v) : 0.0;
        };
        total += integrate(mapped, 0.0, 60.0, 1e-10);
        a = 1.0;
    }
    // Most of the mass sits in t < 5; splitting keeps the root-finding noise
    // in F^{-1} from swamping the error estimate of one long panel.
    for (double b : {5.0, 15.0, hi}) {
        b = std::min(b, hi);
        if (b <= a) continue;
        total += integrate(integrand, a, b, 1e-10);
        a = b;
    }
    return total;
}

double psi_functional(const TailIntensity& f, const TabulatedFunction& psi) {
    auto values = psi.values();
    if (psi.lo() != 0.0 || values.front() != 0.0 || values.back() != 0.0) {
        throw std::domain_error("psi_functional: psi must start at 0 and vanish at both ends of its table");
    }
    bool all_zero = std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
    if (all_zero) return 0.0;
    if (f.floor_level() > 0.0) throw std::domain_error("psi_functional: F does not vanish at +inf, integral diverges");
    if (!(f.ceiling_level() > psi.hi())) {
        throw std::domain_error("psi_functional: F does not exceed the top of the psi table");
    }
    // Between consecutive table nodes psi(F(t)) is smooth, so integrate segment
    // by segment in t, with the breakpoints at t_j = F^{-1}(a_j).
    const std::size_t n = psi.size();
    std::vector<double> t(n);
    for (std::size_t j = 1; j < n; ++j) t[j] = f.inverse(psi.node(j));
    auto integrand = [&](double x) { return psi(f(x)); };
    double total = 0.0;
    for (std::size_t j = 1; j + 1 < n; ++j) {
        if (values[j] == 0.0 && values[j + 1] == 0.0) continue;
        double err = 0.0;
        total += boost::math::quadrature::gauss_kronrod<double, 21>::integrate(integrand, t[j + 1], t[j], 6, 1e-12, &err);
    }
    double first_slope = values[1] / psi.node(1);
    if (first_slope != 0.0) total += first_slope * f.integral_above(t[1]);
    return total;
}

double expected_gap(const TailIntensity& f, int n) {
    if (n < 1) throw std::invalid_argument("expected_gap: n must be positive");
    if (f.floor_level() > 0.0 || !std::isfinite(f.integral_above(0.0))) {
        throw std::domain_error("expected_gap: F does not vanish fast enough at +inf, integral diverges");
    }
    const double kappa = f.min_log_slope();
    if (!(kappa > 0.0)) throw NumericalError("expected_gap: cannot bound the upper-level tail without a decay rate");
    const double dn = static_cast<double>(n);
    const double log_factorial = std::lgamma(dn + 1.0);
    auto psi_n = [&](double level) {
        if (level <= 0.0) return 0.0;
        return std::exp(dn * std::log(level) - level - log_factorial);
    };
    constexpr double kTail = 1e-14;
    // Levels above A contribute at most Q(n, A) / (kappa n).
    double top = dn + 10.0;
    while (boost::math::gamma_q(dn, top) / (kappa * dn) > kTail) top *= 1.5;
    if (!(top < f.ceiling_level())) throw std::domain_error("expected_gap: F is bounded, integral diverges");
    // Positions beyond T contribute at most F(T)^{n-1} int_T^inf F / n!.
    double bottom = 1.0;
    double t_hi = f.inverse(bottom);
    while (std::exp((dn - 1.0) * std::log(bottom) - log_factorial) * f.integral_above(t_hi) > kTail) {
        bottom *= 0.5;
        t_hi = f.inverse(bottom);
    }
    double t_lo = f.inverse(top);
    return integrate([&](double x) { return psi_n(f(x)); }, t_lo, t_hi, 1e-11, 1e-12);
}

} // namespace edgerace
