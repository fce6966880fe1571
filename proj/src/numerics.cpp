#include "edgerace/numerics.hpp"

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <limits>
#include <numbers>
#include <sstream>

namespace edgerace {

double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_density(double z) {
    return std::exp(-0.5 * z * z) * (std::numbers::inv_sqrtpi / std::numbers::sqrt2);
}

double normal_upper_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_upper_quantile: p must lie in (0, 1)");
    return std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

double log_sum_exp(std::span<const double> terms) {
    if (terms.empty()) return -kInf;
    double top = *std::max_element(terms.begin(), terms.end());
    if (!std::isfinite(top)) return top;
    double sum = 0.0;
    for (double t : terms) sum += std::exp(t - top);
    return top + std::log(sum);
}

double find_root(const std::function<double(double)>& f, double lo, double hi,
                 const RootOptions& options) {
    double a = lo, b = hi;
    double fa = f(a), fb = f(b);
    if (fa == 0.0) return a;
    if (fb == 0.0) return b;
    if (std::isnan(fa) || std::isnan(fb) || (fa > 0.0) == (fb > 0.0)) {
        std::ostringstream msg;
        msg << "find_root: no sign change on [" << lo << ", " << hi << "] (f = " << fa << ", " << fb << ")";
        throw NumericalError(msg.str());
    }
    // Illinois false position: b is the newest point, a the retained one.
    int side = 0;
    double width_two_back = std::abs(b - a) * 2.0;
    double width_prev = std::abs(b - a);
    for (int it = 0; it < options.max_iterations; ++it) {
        double width = std::abs(b - a);
        if (width <= options.x_tolerance ||
            width <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(a), std::abs(b))) {
            break;
        }
        double c;
        if (width > 0.5 * width_two_back) {
            c = a + 0.5 * (b - a);
        } else {
            c = (a * fb - b * fa) / (fb - fa);
            double left = std::min(a, b), right = std::max(a, b);
            if (!(c > left && c < right)) c = a + 0.5 * (b - a);
        }
        width_two_back = width_prev;
        width_prev = width;
        double fc = f(c);
        if (std::isnan(fc)) throw NumericalError("find_root: function returned NaN");
        if (fc == 0.0 || std::abs(fc) <= options.f_tolerance) return c;
        if ((fc > 0.0) == (fb > 0.0)) {
            // c replaces b; a stays. Halve fa if a was kept last time too.
            b = c;
            fb = fc;
            if (side == -1) fa *= 0.5;
            side = -1;
        } else {
            a = b;
            fa = fb;
            b = c;
            fb = fc;
            side = +1;
        }
    }
    return std::abs(fa) < std::abs(fb) ? a : b;
}

bool expand_bracket(const std::function<double(double)>& f, double& lo, double& hi,
                    double lower_limit, double upper_limit, int max_steps) {
    auto straddles = [](double u, double v) { return u == 0.0 || v == 0.0 || (u > 0.0) != (v > 0.0); };
    double flo = f(lo), fhi = f(hi);
    for (int step = 0; step < max_steps && !straddles(flo, fhi); ++step) {
        double width = hi - lo;
        if (lo <= lower_limit && hi >= upper_limit) return false;
        if (lo > lower_limit) {
            lo = std::max(lower_limit, lo - width);
            flo = f(lo);
        }
        if (hi < upper_limit && !straddles(flo, fhi)) {
            hi = std::min(upper_limit, hi + width);
            fhi = f(hi);
        }
    }
    return straddles(flo, fhi);
}

double integrate(const std::function<double(double)>& f, double a, double b,
                 double abs_tolerance, double rel_tolerance) {
    if (a == b) return 0.0;
    double error = 0.0, l1 = 0.0;
    double value = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
        f, a, b, 15, 1e-13, &error, &l1);
    if (!std::isfinite(value) || error > std::max(abs_tolerance, rel_tolerance * std::abs(value))) {
        std::ostringstream msg;
        msg << "integrate: error estimate " << error << " exceeds tolerance on [" << a << ", " << b << "]";
        throw NumericalError(msg.str());
    }
    return value;
}

TabulatedFunction::TabulatedFunction(double lo, double hi, std::vector<double> values)
    : lo_(lo), hi_(hi), step_(0.0), values_(std::move(values)) {
    if (!(hi > lo) || values_.size() < 2) {
        throw std::invalid_argument("TabulatedFunction: need hi > lo and at least two values");
    }
    for (double v : values_) {
        if (!std::isfinite(v)) throw std::invalid_argument("TabulatedFunction: values must be finite");
    }
    step_ = (hi_ - lo_) / static_cast<double>(values_.size() - 1);
}

TabulatedFunction TabulatedFunction::sample(double lo, double hi, std::size_t points,
                                            const std::function<double(double)>& f) {
    if (points < 2) throw std::invalid_argument("TabulatedFunction::sample: need at least two points");
    std::vector<double> values(points);
    double step = (hi - lo) / static_cast<double>(points - 1);
    for (std::size_t i = 0; i < points; ++i) {
        values[i] = f(i + 1 == points ? hi : lo + step * static_cast<double>(i));
    }
    return TabulatedFunction(lo, hi, std::move(values));
}

TabulatedFunction TabulatedFunction::zero(double lo, double hi) {
    return TabulatedFunction(lo, hi, {0.0, 0.0});
}

double TabulatedFunction::node(std::size_t i) const {
    return i + 1 == values_.size() ? hi_ : lo_ + step_ * static_cast<double>(i);
}

double TabulatedFunction::operator()(double x) const {
    if (!(x >= lo_ && x <= hi_)) return 0.0;
    double pos = (x - lo_) / step_;
    auto i = static_cast<std::size_t>(pos);
    if (i + 1 >= values_.size()) return values_.back();
    double t = pos - static_cast<double>(i);
    return values_[i] + t * (values_[i + 1] - values_[i]);
}

} // namespace edgerace
