#ifndef EDGERACE_POISSONIZATION_HPP
#define EDGERACE_POISSONIZATION_HPP

#include <cstddef>
#include <optional>
#include <utility>
#include <string>
#include <vector>

#include "edgerace/configuration.hpp"
#include "edgerace/increments.hpp"
#include "edgerace/laplace.hpp"

namespace edgerace {

/// Expected number of particles above x after `steps` steps:
/// sum over particles of P(S_steps >= x - x_m).
double f_omega_tau(const Configuration& config, const SumTail& tail, double x);

/// Root of f_omega_tau(z) = 1, to 1e-10 in z. Throws NumericalError when the
/// expected count never reaches 1 (for instance a single particle).
double z_front(const Configuration& config, const SumTail& tail);

struct LeaderLaw {
    enum class Kind { exact, surrogate };
    Kind kind = Kind::exact;
    std::vector<double> grid;  // increasing
    std::vector<double> cdf;   // P(leader <= grid point)
};

struct LeaderLaws {
    LeaderLaw exact;      // prod (1 - p_n)
    LeaderLaw surrogate;  // exp(-sum p_n)
};

/// 2001 points spanning z +- 10 standard deviations of S_steps.
std::vector<double> default_leader_grid(const Configuration& config, const SumTail& tail);

/// Leader laws at time `steps`, both evaluated on the same grid. Throws
/// std::domain_error when either law fails to climb from below 1e-6 to above
/// 1 - 1e-6 across the grid.
LeaderLaws leader_laws(const Configuration& config, const SumTail& tail, const std::vector<double>& grid);

/// Total variation of the difference of the grid measures, counting the mass
/// below the first and above the last grid point. Grids must match.
double law_distance(const LeaderLaw& p, const LeaderLaw& q);

struct Extraction {
    LaplaceMeasure measure;
    double total_weight = 0.0;  // mass kept after the cutoff
    double z = 0.0;
    double cutoff = 0.0;        // K: particles with z - x_n <= (E h + K) steps are kept
    std::size_t retained = 0;
};

/// Atoms u_n = eta((z - x_n) / steps) with weights P(S_steps >= z - x_n).
/// Without a cutoff, K is set so that eta(E h + K) >= 10 times the weighted
/// mean location of a pilot extraction. Atoms within 1e-9 merge.
Extraction extract_laplace(const Configuration& config, const SumTail& tail, std::optional<double> cutoff = std::nullopt);

/// F_omega_tau on a grid, as an empirical tail intensity.
TailIntensity empirical_intensity(const Configuration& config, const SumTail& tail, const std::vector<double>& grid);

/// Top two points of the Poisson process with tail sum_n w_n e^{-u_n (x - z)},
/// drawn as a superposition of one exponential process per atom.
std::pair<double, double> poisson_top_two(const LaplaceMeasure& rho, double z, Engine& engine);

std::string leader_law_csv(const LeaderLaws& laws);
std::string measure_csv(const LaplaceMeasure& rho);
LaplaceMeasure read_measure_csv(const std::string& text);

} // namespace edgerace

#endif
