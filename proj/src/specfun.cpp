#include "ancflow/specfun.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "ancflow/errors.hpp"

#if defined(__GLIBC__) || defined(__linux__)
extern "C" double lgamma_r(double, int*);
#define ANCFLOW_HAVE_LGAMMA_R 1
#endif

namespace ancflow {

namespace {

void require_finite_positive(double x, const char* name) {
    if (!std::isfinite(x) || x <= 0.0) {
        throw std::domain_error(std::string(name) + " must be finite and > 0, got " +
                                std::to_string(x));
    }
}

// Lentz continued fraction for I_z(a,b), valid (and fast) for
// z <= a/(a+b); the caller applies the symmetry I_z(a,b) = 1 - I_{1-z}(b,a)
// on the other side.
double beta_cont_frac(double a, double b, double z) {
    constexpr double tiny = 1e-300;
    constexpr double stop = 1e-16;
    constexpr int max_iter = 2000;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;

    double c = 1.0;
    double d = 1.0 - qab * z / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double f = d;

    for (int m = 1; m <= max_iter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * z / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        f *= d * c;

        aa = -(a + m) * (qab + m) * z / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        f *= del;
        if (std::fabs(del - 1.0) < stop) return f;
    }
    throw NumericError("reg_inc_beta continued fraction did not converge (a=" +
                       std::to_string(a) + ", b=" + std::to_string(b) +
                       ", z=" + std::to_string(z) + ")");
}

// Stirling correction del(x) = lgamma(x) - [(x-1/2)ln x - x + ln(2*pi)/2],
// asymptotic series valid to ~1e-15 for x >= 10.
double stirling_del(double x) {
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    return inv * (1.0 / 12.0 +
                  inv2 * (-1.0 / 360.0 +
                          inv2 * (1.0 / 1260.0 +
                                  inv2 * (-1.0 / 1680.0 +
                                          inv2 * (1.0 / 1188.0 -
                                                  inv2 * 691.0 / 360360.0)))));
}

constexpr double kHalfLog2Pi = 0.91893853320467274178;

}  // namespace

double log_gamma(double x) {
    require_finite_positive(x, "log_gamma argument");
#ifdef ANCFLOW_HAVE_LGAMMA_R
    int sign = 0;
    return lgamma_r(x, &sign);
#else
    return std::lgamma(x);
#endif
}

double log_beta(double a, double b) {
    require_finite_positive(a, "log_beta a");
    require_finite_positive(b, "log_beta b");
    const double p = std::min(a, b);
    const double q = std::max(a, b);
    if (p >= 10.0) {
        // Both large: difference the Stirling expansions directly, which
        // avoids the cancellation of three O(x ln x) lgamma values.
        const double u = p / (p + q);
        return kHalfLog2Pi - 0.5 * std::log(p + q) + (p - 0.5) * std::log(u) +
               (q - 0.5) * std::log1p(-u) + stirling_del(p) + stirling_del(q) -
               stirling_del(p + q);
    }
    if (q >= 10.0) {
        // lgamma(q) - lgamma(p+q) expanded so no large terms cancel.
        const double diff = -(q - 0.5) * std::log1p(p / q) - p * std::log(p + q) + p +
                            stirling_del(q) - stirling_del(p + q);
        return log_gamma(p) + diff;
    }
    return log_gamma(p) + log_gamma(q) - log_gamma(p + q);
}

double reg_inc_beta(double z, double a, double b) {
    require_finite_positive(a, "reg_inc_beta a");
    require_finite_positive(b, "reg_inc_beta b");
    if (!(z >= 0.0 && z <= 1.0)) {
        throw std::domain_error("reg_inc_beta z must lie in [0,1], got " + std::to_string(z));
    }
    if (z == 0.0) return 0.0;
    if (z == 1.0) return 1.0;

    const double log_front =
        a * std::log(z) + b * std::log1p(-z) - log_beta(a, b);
    if (z <= a / (a + b)) {
        return std::exp(log_front) * beta_cont_frac(a, b, z) / a;
    }
    return 1.0 - std::exp(log_front) * beta_cont_frac(b, a, 1.0 - z) / b;
}

double d_a_reg_inc_beta(double z, double a, double b) {
    require_finite_positive(a, "d_a_reg_inc_beta a");
    require_finite_positive(b, "d_a_reg_inc_beta b");
    if (!(z >= 0.0 && z <= 1.0)) {
        throw std::domain_error("d_a_reg_inc_beta z must lie in [0,1], got " + std::to_string(z));
    }
    // I_0 = 0 and I_1 = 1 for every (a,b), so the a-derivative vanishes
    // identically at the endpoints.
    if (z == 0.0 || z == 1.0) return 0.0;

    const double h = std::max(1e-5, 1e-4 * a);
    auto central = [&](double step) {
        return (reg_inc_beta(z, a + step, b) - reg_inc_beta(z, a - step, b)) / (2.0 * step);
    };
    // One Richardson level: (4 D(h/2) - D(h)) / 3 cancels the O(h^2) term.
    const double coarse = central(h);
    const double fine = central(0.5 * h);
    return (4.0 * fine - coarse) / 3.0;
}

double sample_gamma(double shape, RandomStream& stream) {
    require_finite_positive(shape, "sample_gamma shape");
    // Marsaglia-Tsang squeeze; shapes below one are boosted through
    // Gamma(shape) = Gamma(shape+1) * U^{1/shape}.
    double boost = 1.0;
    double a = shape;
    if (a < 1.0) {
        boost = std::pow(stream.uniform_pos(), 1.0 / a);
        a += 1.0;
    }
    const double d = a - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x;
        double v;
        do {
            x = stream.normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = stream.uniform_pos();
        const double x2 = x * x;
        if (u < 1.0 - 0.0331 * x2 * x2 ||
            std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) {
            const double g = boost * d * v;
            // The boost can underflow for extreme shapes; keep the draw in
            // the open support.
            return g > 0.0 ? g : std::numeric_limits<double>::min();
        }
    }
}

SimplexVector sample_dirichlet(std::span<const double> alpha, RandomStream& stream) {
    if (alpha.empty()) throw std::domain_error("sample_dirichlet needs K >= 1");
    if (alpha.size() == 1) {
        require_finite_positive(alpha[0], "sample_dirichlet alpha");
        return {1.0};
    }
    SimplexVector out(alpha.size());
    double total = 0.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        out[i] = sample_gamma(alpha[i], stream);
        total += out[i];
    }
    for (double& v : out) v /= total;
    return out;
}

std::size_t sample_categorical(std::span<const double> probs, RandomStream& stream) {
    SimplexVector p(probs.begin(), probs.end());
    validate_and_renormalize_simplex(p);
    const double u = stream.uniform01();
    double cum = 0.0;
    for (std::size_t i = 0; i + 1 < p.size(); ++i) {
        cum += p[i];
        if (u < cum) return i;
    }
    return p.size() - 1;
}

double shannon_entropy(std::span<const double> probs) {
    SimplexVector p(probs.begin(), probs.end());
    validate_and_renormalize_simplex(p);
    double h = 0.0;
    for (const double v : p) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

double log_sum_exp(std::span<const double> values) {
    if (values.empty()) throw std::domain_error("log_sum_exp needs a non-empty vector");
    const double m = *std::max_element(values.begin(), values.end());
    if (!std::isfinite(m)) {
        // All -inf collapses to -inf; a +inf or NaN input is a caller bug.
        if (std::isnan(m) || m > 0.0) throw std::domain_error("log_sum_exp got a non-finite value");
        return m;
    }
    double acc = 0.0;
    for (const double v : values) acc += std::exp(v - m);
    return m + std::log(acc);
}

void validate_and_renormalize_simplex(std::span<double> probs, double sum_tol, double neg_tol) {
    if (probs.empty()) throw std::domain_error("simplex vector must be non-empty");
    double sum = 0.0;
    for (const double v : probs) {
        if (!std::isfinite(v)) throw std::domain_error("simplex component is not finite");
        if (v < -neg_tol) {
            throw std::domain_error("simplex component " + std::to_string(v) +
                                    " below tolerance " + std::to_string(-neg_tol));
        }
        sum += v;
    }
    if (std::fabs(sum - 1.0) > sum_tol) {
        throw std::domain_error("simplex sum " + std::to_string(sum) +
                                " outside tolerance " + std::to_string(sum_tol));
    }
    for (double& v : probs) v = std::max(v, 0.0) / sum;
}

}  // namespace ancflow
