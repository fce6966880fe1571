#include "edgerace/poissonization.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "edgerace/csv.hpp"
#include "edgerace/numerics.hpp"
#include "edgerace/random.hpp"

namespace edgerace {

namespace {

constexpr std::size_t kGridPoints = 2001;
constexpr double kLawEdge = 1e-6;

// Terms P(S >= x - x_n) decrease along the descending configuration, so the
// remainder after term n is at most (N - n) times that term.
template <class Visit>
void visit_terms(const Configuration& config, const SumTail& tail, double x, Visit visit) {
    auto pos = config.positions();
    double total = 0.0;
    for (std::size_t n = 0; n < pos.size(); ++n) {
        double p = tail(x - pos[n]);
        if (!visit(p)) return;
        total += p;
        double remaining = static_cast<double>(pos.size() - n - 1);
        if (p == 0.0 || remaining * p < 1e-17 * total) return;
    }
}

struct LawPoint {
    double exact;
    double surrogate;
};

LawPoint law_point(const Configuration& config, const SumTail& tail, double x) {
    double sum = 0.0, log_exact = 0.0;
    visit_terms(config, tail, x, [&](double p) {
        sum += p;
        log_exact += p >= 1.0 ? -kInf : std::log1p(-p);
        // Both laws are below e^{-745}, the smallest double.
        return sum <= 745.0;
    });
    return {std::exp(log_exact), std::exp(-sum)};
}

} // namespace

double f_omega_tau(const Configuration& config, const SumTail& tail, double x) {
    double total = 0.0;
    visit_terms(config, tail, x, [&](double p) {
        total += p;
        return true;
    });
    return total;
}

double z_front(const Configuration& config, const SumTail& tail) {
    auto excess = [&](double z) { return f_omega_tau(config, tail, z) - 1.0; };
    const double scale = std::max(tail.spread(), 1e-3);
    double lo = config.leader() + tail.center() - scale;
    double hi = config.leader() + tail.center() + scale;
    double reach = 100.0 * scale + (config.leader() - config.positions().back());
    // The count must exceed 1 strictly somewhere: a single particle only
    // reaches P = 1 in rounding, which is no crossing.
    if (!expand_bracket(excess, lo, hi, lo - reach, hi + reach) || !(excess(lo) > 0.0)) {
        throw NumericalError("z_front: the expected count never crosses 1 on the searchable range");
    }
    return find_root(excess, lo, hi, {.x_tolerance = 1e-10});
}

std::vector<double> default_leader_grid(const Configuration& config, const SumTail& tail) {
    double center;
    try {
        center = z_front(config, tail);
    } catch (const NumericalError&) {
        center = config.leader() + tail.center();
    }
    double half = 10.0 * std::max(tail.spread(), 1e-3);
    // Widen until the exact law is inside (1e-6, 1 - 1e-6) at both ends.
    for (int attempt = 0; attempt < 40; ++attempt) {
        LawPoint low = law_point(config, tail, center - half);
        LawPoint high = law_point(config, tail, center + half);
        if (low.exact < kLawEdge && high.exact > 1.0 - kLawEdge && high.surrogate > 1.0 - kLawEdge) break;
        half *= 1.5;
    }
    std::vector<double> grid(kGridPoints);
    for (std::size_t i = 0; i < kGridPoints; ++i) {
        grid[i] = center - half + 2.0 * half * static_cast<double>(i) / static_cast<double>(kGridPoints - 1);
    }
    return grid;
}

LeaderLaws leader_laws(const Configuration& config, const SumTail& tail, const std::vector<double>& grid) {
    if (grid.size() < 2 || !std::is_sorted(grid.begin(), grid.end())) {
        throw std::invalid_argument("leader_laws: grid must be increasing with at least two points");
    }
    LeaderLaws laws{{LeaderLaw::Kind::exact, grid, std::vector<double>(grid.size())},
                    {LeaderLaw::Kind::surrogate, grid, std::vector<double>(grid.size())}};
    for (std::size_t i = 0; i < grid.size(); ++i) {
        LawPoint point = law_point(config, tail, grid[i]);
        laws.exact.cdf[i] = point.exact;
        laws.surrogate.cdf[i] = point.surrogate;
    }
    // A finite configuration leaves the surrogate at e^{-N} far left, so only
    // the exact law is required to start below 1e-6.
    if (!(laws.exact.cdf.front() < kLawEdge && laws.exact.cdf.back() > 1.0 - kLawEdge &&
          laws.surrogate.cdf.back() > 1.0 - kLawEdge)) {
        std::ostringstream msg;
        msg << "leader_laws: grid too narrow (exact law " << laws.exact.cdf.front() << " .. " << laws.exact.cdf.back()
            << ", surrogate reaches " << laws.surrogate.cdf.back() << ")";
        throw std::domain_error(msg.str());
    }
    return laws;
}

double law_distance(const LeaderLaw& p, const LeaderLaw& q) {
    if (p.grid != q.grid || p.cdf.size() != p.grid.size() || q.cdf.size() != q.grid.size()) {
        throw std::invalid_argument("law_distance: laws must share one grid");
    }
    const std::size_t n = p.grid.size();
    double total = std::abs(p.cdf[0] - q.cdf[0]);
    for (std::size_t i = 1; i < n; ++i) {
        total += std::abs((p.cdf[i] - p.cdf[i - 1]) - (q.cdf[i] - q.cdf[i - 1]));
    }
    total += std::abs((1.0 - p.cdf[n - 1]) - (1.0 - q.cdf[n - 1]));
    return total;
}

namespace {

struct RawAtom {
    double q;
    double weight;
};

LaplaceMeasure merge_atoms(std::vector<Atom> atoms) {
    std::sort(atoms.begin(), atoms.end(), [](const Atom& a, const Atom& b) { return a.location < b.location; });
    std::vector<Atom> merged;
    for (const auto& a : atoms) {
        if (!merged.empty() && a.location - merged.back().location <= 1e-9) {
            merged.back().weight += a.weight;
        } else {
            merged.push_back(a);
        }
    }
    return LaplaceMeasure::from_atoms(std::move(merged));
}

} // namespace

Extraction extract_laplace(const Configuration& config, const SumTail& tail, std::optional<double> cutoff) {
    const IncrementModel& model = tail.model();
    const double tau = static_cast<double>(tail.steps());
    const double mu = model.mean();
    Extraction out{LaplaceMeasure::single(1.0), 0.0, z_front(config, tail), 0.0, 0};

    std::vector<RawAtom> raw;
    for (double x : config.positions()) {
        double p = tail(out.z - x);
        if (p == 0.0) break;
        raw.push_back({(out.z - x) / tau, p});
    }
    auto location = [&](double q) {
        if (!(q > mu)) {
            std::ostringstream msg;
            msg << "extract_laplace: particle at tilted mean " << q << " is not above the increment mean " << mu
                << ", so its atom would sit below u = 0";
            throw std::domain_error(msg.str());
        }
        return legendre(model, q).eta;
    };

    if (cutoff) {
        out.cutoff = *cutoff;
    } else {
        double mass = 0.0, first = 0.0;
        for (const auto& a : raw) {
            double u = location(a.q);
            mass += a.weight;
            first += a.weight * u;
        }
        double target = 10.0 * first / mass;
        double reach = model.safe_range().second;
        out.cutoff = model.cumulant(std::min(target, reach)).slope - mu;
    }

    std::vector<Atom> atoms;
    for (const auto& a : raw) {
        if (a.q > mu + out.cutoff) break;
        atoms.push_back({location(a.q), a.weight});
        out.total_weight += a.weight;
    }
    if (atoms.empty()) throw std::domain_error("extract_laplace: the cutoff removed every particle");
    out.retained = atoms.size();
    out.measure = merge_atoms(std::move(atoms));
    return out;
}

TailIntensity empirical_intensity(const Configuration& config, const SumTail& tail, const std::vector<double>& grid) {
    std::vector<double> values(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) values[i] = f_omega_tau(config, tail, grid[i]);
    return TailIntensity::empirical(grid, std::move(values));
}

std::pair<double, double> poisson_top_two(const LaplaceMeasure& rho, double z, Engine& engine) {
    double first = -kInf, second = -kInf;
    for (const auto& a : rho.atoms()) {
        if (!(a.location > 0.0)) throw std::domain_error("atom at u = 0 gives infinitely many points");
        double g1 = standard_exponential(engine);
        double g2 = g1 + standard_exponential(engine);
        double lw = std::log(a.weight);
        double y1 = z + (lw - std::log(g1)) / a.location;
        double y2 = z + (lw - std::log(g2)) / a.location;
        if (y1 > first) {
            second = std::max(first, y2);
            first = y1;
        } else if (y1 > second) {
            second = y1;
        }
    }
    return {first, second};
}

std::string leader_law_csv(const LeaderLaws& laws) {
    CsvTable table({"x", "exact_cdf", "surrogate_cdf"});
    for (std::size_t i = 0; i < laws.exact.grid.size(); ++i) {
        table.add_row({laws.exact.grid[i], laws.exact.cdf[i], laws.surrogate.cdf[i]});
    }
    return table.str();
}

std::string measure_csv(const LaplaceMeasure& rho) {
    CsvTable table({"u", "w"});
    for (const auto& a : rho.atoms()) table.add_row({a.location, a.weight});
    return table.str();
}

LaplaceMeasure read_measure_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "u,w") throw std::invalid_argument("measure CSV must start with 'u,w'");
    std::vector<Atom> atoms;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != 2) throw std::invalid_argument("measure CSV: expected two columns in '" + line + "'");
        atoms.push_back({std::stod(cells[0]), std::stod(cells[1])});
    }
    return LaplaceMeasure::from_atoms(std::move(atoms));
}

} // namespace edgerace
