#include "ancflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "ancflow/errors.hpp"

namespace ancflow {

namespace {

std::size_t grid_index(double t, double dt) {
    // Snap with a small epsilon so exact boundaries like 0.3/0.01 do not
    // land one step short.
    return static_cast<std::size_t>(std::floor(t / dt + 1e-9));
}

void fill_uniform_row(Matrix& m, std::size_t row) {
    const double u = 1.0 / static_cast<double>(m.cols());
    for (std::size_t a = 0; a < m.cols(); ++a) m(row, a) = u;
}

}  // namespace

std::size_t SimplexState::n_gaps() const {
    std::size_t n = 0;
    for (const bool g : gap_mask) n += g ? 1 : 0;
    return n;
}

void FlowConfig::validate() const {
    if (!(t_max > 0.0)) throw std::domain_error("FlowConfig t_max must be > 0");
    if (n_steps < 1) throw std::domain_error("FlowConfig n_steps must be >= 1");
    if (!(z_clamp > 0.0 && z_clamp < 0.5)) {
        throw std::domain_error("FlowConfig z_clamp must lie in (0, 0.5)");
    }
}

SimplexVector sample_path_point(std::span<const double> alpha_site, std::size_t target,
                                double t, double t_max, RandomStream& stream) {
    if (target >= alpha_site.size()) {
        throw std::domain_error("sample_path_point target out of range");
    }
    if (!(t >= 0.0 && t <= 1.0)) {
        throw std::domain_error("sample_path_point t must lie in [0,1]");
    }
    std::vector<double> alpha(alpha_site.begin(), alpha_site.end());
    alpha[target] += t_max * t;
    return sample_dirichlet(alpha, stream);
}

double conditional_speed(double z, double t, double alpha_i, double b, double t_max,
                         double z_clamp) {
    const double zc = std::clamp(z, z_clamp, 1.0 - z_clamp);
    const double a = alpha_i + t_max * t;
    const double da = d_a_reg_inc_beta(zc, a, b);
    // log of B(a,b) / (z^(a-1) (1-z)^b); the derivative factor carries the
    // sign and is folded back in linear space.
    const double log_ratio =
        log_beta(a, b) - (a - 1.0) * std::log(zc) - b * std::log1p(-zc);
    const double c = -t_max * da * std::exp(log_ratio);
    if (!std::isfinite(c)) {
        throw NumericError("conditional_speed produced a non-finite value at z=" +
                           std::to_string(zc) + ", a=" + std::to_string(a) +
                           ", b=" + std::to_string(b));
    }
    return std::max(c, 0.0);
}

std::vector<double> conditional_field(std::span<const double> x_site, std::size_t target,
                                      double t, std::span<const double> alpha_site,
                                      double t_max, double z_clamp) {
    if (x_site.size() != alpha_site.size()) {
        throw std::domain_error("conditional_field size mismatch");
    }
    if (target >= x_site.size()) {
        throw std::domain_error("conditional_field target out of range");
    }
    double b = 0.0;
    for (std::size_t j = 0; j < alpha_site.size(); ++j) {
        if (j != target) b += alpha_site[j];
    }
    const double c = conditional_speed(x_site[target], t, alpha_site[target], b, t_max,
                                       z_clamp);
    std::vector<double> field(x_site.size());
    for (std::size_t j = 0; j < x_site.size(); ++j) {
        field[j] = c * ((j == target ? 1.0 : 0.0) - x_site[j]);
    }
    return field;
}

std::vector<double> posterior_drift(std::span<const double> x_site,
                                    std::span<const double> classifier_probs, double t,
                                    std::span<const double> alpha_site, double t_max,
                                    double z_clamp) {
    if (classifier_probs.size() != x_site.size()) {
        throw std::domain_error("posterior_drift probability size mismatch");
    }
    const std::size_t K = x_site.size();
    double alpha_total = 0.0;
    for (const double a : alpha_site) alpha_total += a;

    std::vector<double> drift(K, 0.0);
    for (std::size_t i = 0; i < K; ++i) {
        const double p = classifier_probs[i];
        if (p <= 0.0) continue;
        const double c = conditional_speed(x_site[i], t, alpha_site[i],
                                           alpha_total - alpha_site[i], t_max, z_clamp);
        const double pc = p * c;
        for (std::size_t j = 0; j < K; ++j) drift[j] -= pc * x_site[j];
        drift[i] += pc;
    }
    return drift;
}

void euler_step(SimplexState& state, const Matrix& drift, double dt) {
    if (drift.rows() != state.length() || drift.cols() != state.K()) {
        throw std::domain_error("euler_step drift shape mismatch");
    }
    if (!(dt > 0.0)) throw std::domain_error("euler_step dt must be > 0");
    for (std::size_t l = 0; l < state.length(); ++l) {
        if (state.gap_mask[l]) continue;  // gap drift is masked to zero
        auto row = state.sites.row(l);
        double sum = 0.0;
        for (std::size_t a = 0; a < row.size(); ++a) {
            row[a] = std::clamp(row[a] + dt * drift(l, a), 0.0, 1.0);
            sum += row[a];
        }
        if (!(sum > 0.0)) {
            throw NumericError("euler_step renormalization failed at site " +
                               std::to_string(l));
        }
        for (double& v : row) v /= sum;
    }
    state.t += dt;
}

SimplexState init_state(const FamilyPrior& prior, RandomStream& stream) {
    if (prior.gap_rates.size() != prior.length()) {
        throw std::domain_error("init_state prior is missing gap rates");
    }
    SimplexState state;
    state.family_id = prior.family_id;
    state.sites = Matrix(prior.length(), prior.K());
    state.gap_mask.assign(prior.length(), false);
    state.t = 0.0;
    for (std::size_t l = 0; l < prior.length(); ++l) {
        state.gap_mask[l] = stream.bernoulli(prior.gap_rates[l]);
        if (state.gap_mask[l]) {
            fill_uniform_row(state.sites, l);
            continue;
        }
        const auto x = sample_dirichlet(prior.alpha.row(l), stream);
        for (std::size_t a = 0; a < x.size(); ++a) state.sites(l, a) = x[a];
    }
    return state;
}

SimplexState integrate(const SimplexState& state, const DenoiserInterface& denoiser,
                       const FamilyPrior& prior, double t_from, double t_to,
                       const FlowConfig& config, std::vector<StepRecord>* trace) {
    config.validate();
    if (!(t_from >= 0.0 && t_from <= t_to && t_to <= 1.0)) {
        throw std::domain_error("integrate needs 0 <= t_from <= t_to <= 1");
    }
    if (std::fabs(state.t - t_from) > 1e-6) {
        throw std::domain_error("integrate: state.t does not match t_from");
    }
    if (prior.length() != state.length() || prior.K() != state.K()) {
        throw std::domain_error("integrate: prior shape does not match the state");
    }
    const double dt = 1.0 / static_cast<double>(config.n_steps);
    const std::size_t n_from = grid_index(t_from, dt);
    const std::size_t n_to = grid_index(t_to, dt);

    SimplexState current = state;
    Matrix drift(current.length(), current.K());
    for (std::size_t n = n_from; n < n_to; ++n) {
        const double t = static_cast<double>(n) * dt;
        Matrix probs;
        try {
            probs = denoiser.evaluate(current, t);
        } catch (const std::exception& e) {
            throw NumericError("denoiser failed at step " + std::to_string(n) + ": " +
                               e.what());
        }
        for (std::size_t l = 0; l < current.length(); ++l) {
            auto out = drift.row(l);
            if (current.gap_mask[l]) {
                std::fill(out.begin(), out.end(), 0.0);
                continue;
            }
            auto p = probs.row(l);
            std::vector<double> normed(p.begin(), p.end());
            validate_and_renormalize_simplex(normed, config.simplex_tolerance);
            const auto d = posterior_drift(current.sites.row(l), normed, t,
                                           prior.alpha.row(l), config.t_max,
                                           config.z_clamp);
            std::copy(d.begin(), d.end(), out.begin());
        }
        euler_step(current, drift, dt);
        if (trace) {
            double mean_max = 0.0;
            double mean_ent = 0.0;
            std::size_t counted = 0;
            for (std::size_t l = 0; l < current.length(); ++l) {
                if (current.gap_mask[l]) continue;
                const auto row = current.sites.row(l);
                mean_max += *std::max_element(row.begin(), row.end());
                mean_ent += shannon_entropy(row);
                ++counted;
            }
            if (counted > 0) {
                mean_max /= static_cast<double>(counted);
                mean_ent /= static_cast<double>(counted);
            }
            trace->push_back({n, current.t, mean_max, mean_ent});
        }
    }
    return current;
}

std::string decode(const SimplexState& state) {
    std::string out;
    out.reserve(state.length());
    for (std::size_t l = 0; l < state.length(); ++l) {
        if (state.gap_mask[l]) continue;
        const auto row = state.sites.row(l);
        std::size_t best = 0;
        for (std::size_t a = 1; a < row.size(); ++a) {
            if (row[a] > row[best]) best = a;
        }
        out.push_back(kAminoAlphabet[best]);
    }
    return out;
}

std::string write_trajectory_trace(const std::vector<StepRecord>& trace) {
    std::string out = "step\tt\tmean_max_prob\tmean_entropy\n";
    char buf[128];
    for (const auto& rec : trace) {
        std::snprintf(buf, sizeof(buf), "%zu\t%.6f\t%.10g\t%.10g\n", rec.step, rec.t,
                      rec.mean_max_prob, rec.mean_entropy);
        out += buf;
    }
    return out;
}

}  // namespace ancflow
