#include "ancflow/reroute.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "ancflow/errors.hpp"
#include "ancflow/specfun.hpp"

namespace ancflow {

void MutationConfig::validate() const {
    if (!(mu >= 0.0 && mu <= 1.0)) throw std::domain_error("mutation mu must lie in [0,1]");
    if (!(gamma >= 0.0)) throw std::domain_error("mutation gamma must be >= 0");
    if (!(rho >= 0.0 && rho <= 1.0)) throw std::domain_error("mutation rho must lie in [0,1]");
    if (!(tau_tok > 0.0)) throw std::domain_error("mutation tau_tok must be > 0");
}

double RerouteConfig::beta_for_round(std::size_t round) const {
    if (betas.empty()) throw std::domain_error("reroute betas must be non-empty");
    return betas.size() == 1 ? betas.front() : betas.at(round);
}

void RerouteConfig::validate() const {
    if (rounds < 1) throw std::domain_error("reroute rounds must be >= 1");
    if (betas.empty() || (betas.size() != 1 && betas.size() != rounds)) {
        throw std::domain_error("reroute betas must hold one entry or one per round");
    }
    for (const double b : betas) {
        if (!(b >= 0.0)) throw std::domain_error("reroute betas must be >= 0");
    }
    if (!(t_int >= 0.0 && t_int <= 1.0)) {
        throw std::domain_error("reroute t_int must lie in [0,1]");
    }
}

std::vector<double> mutation_probabilities(const FamilyPrior& prior, double mu,
                                           double gamma,
                                           const std::vector<bool>& valid_sites) {
    if (valid_sites.size() != prior.length()) {
        throw std::domain_error("mutation_probabilities mask length mismatch");
    }
    const std::size_t L = prior.length();
    const double log_k = std::log(static_cast<double>(prior.K()));
    std::vector<double> gate(L, 0.0);
    double gate_sum = 0.0;
    std::size_t n_valid = 0;
    std::vector<double> mean(prior.K());
    for (std::size_t l = 0; l < L; ++l) {
        if (!valid_sites[l]) continue;
        double total = 0.0;
        for (std::size_t a = 0; a < prior.K(); ++a) total += prior.alpha(l, a);
        for (std::size_t a = 0; a < prior.K(); ++a) mean[a] = prior.alpha(l, a) / total;
        gate[l] = std::pow(shannon_entropy(mean) / log_k, gamma);
        gate_sum += gate[l];
        ++n_valid;
    }
    std::vector<double> probs(L, 0.0);
    if (n_valid == 0 || gate_sum <= 0.0) return probs;
    const double gate_mean = gate_sum / static_cast<double>(n_valid);
    for (std::size_t l = 0; l < L; ++l) {
        if (!valid_sites[l]) continue;
        probs[l] = std::clamp(mu * gate[l] / gate_mean, 0.0, 1.0);
    }
    return probs;
}

std::vector<std::size_t> mutation_mask(const FamilyPrior& prior, double mu, double gamma,
                                       const std::vector<bool>& valid_sites,
                                       RandomStream& stream) {
    const auto probs = mutation_probabilities(prior, mu, gamma, valid_sites);
    std::vector<std::size_t> mask;
    for (std::size_t l = 0; l < probs.size(); ++l) {
        if (probs[l] > 0.0 && stream.bernoulli(probs[l])) mask.push_back(l);
    }
    return mask;
}

SimplexState token_dirichlet_mutate(const SimplexState& state,
                                    const DenoiserInterface& denoiser,
                                    const FamilyPrior& prior,
                                    const MutationConfig& config, double t_max,
                                    RandomStream& stream) {
    config.validate();
    if (prior.length() != state.length() || prior.K() != state.K()) {
        throw std::domain_error("token_dirichlet_mutate prior/state shape mismatch");
    }
    std::vector<bool> valid(state.length());
    for (std::size_t l = 0; l < state.length(); ++l) valid[l] = !state.gap_mask[l];
    const auto mask = mutation_mask(prior, config.mu, config.gamma, valid, stream);

    SimplexState out = state;
    if (mask.empty()) return out;

    // The denoiser is only consulted when the posterior mixing weight is
    // non-zero; at rho = 0 the token distribution is the prior mean alone.
    Matrix probs;
    if (config.rho > 0.0) probs = denoiser.evaluate(state, state.t);

    const std::size_t K = state.K();
    std::vector<double> token(K);
    std::vector<double> alpha(K);
    const double s = t_max * state.t;
    for (const std::size_t l : mask) {
        double alpha_total = 0.0;
        for (std::size_t a = 0; a < K; ++a) alpha_total += prior.alpha(l, a);

        double model_norm = 0.0;
        if (config.rho > 0.0) {
            for (std::size_t a = 0; a < K; ++a) {
                // softmax(logits/tau) == p^(1/tau) renormalized
                token[a] = std::pow(std::max(probs(l, a), 1e-300), 1.0 / config.tau_tok);
                model_norm += token[a];
            }
        }
        for (std::size_t a = 0; a < K; ++a) {
            const double model_part =
                config.rho > 0.0 ? config.rho * token[a] / model_norm : 0.0;
            token[a] = model_part + (1.0 - config.rho) * prior.alpha(l, a) / alpha_total;
        }
        const std::size_t y = sample_categorical(token, stream);
        for (std::size_t a = 0; a < K; ++a) alpha[a] = prior.alpha(l, a);
        alpha[y] += s;
        const auto x = sample_dirichlet(alpha, stream);
        for (std::size_t a = 0; a < K; ++a) out.sites(l, a) = x[a];
    }
    return out;
}

namespace {

double masked_mean_logprob(const SimplexState& state, const PSSM& pssm,
                           std::span<const std::size_t> sites) {
    double total = 0.0;
    for (const std::size_t l : sites) {
        double site = 0.0;
        for (std::size_t a = 0; a < state.K(); ++a) {
            site += state.sites(l, a) * pssm.log_probs(l, a);
        }
        total += site;
    }
    return total / static_cast<double>(sites.size());
}

}  // namespace

double pssm_soft_mask_score(const SimplexState& state, const PSSM& pssm, double p_mask,
                            std::size_t n_masks, RandomStream& stream) {
    if (!(p_mask > 0.0 && p_mask < 1.0)) {
        throw std::domain_error("pssm_soft_mask_score p_mask must lie in (0,1)");
    }
    if (n_masks < 1) throw std::domain_error("pssm_soft_mask_score needs G >= 1");
    if (pssm.length() != state.length() || pssm.K() != state.K()) {
        throw std::domain_error("pssm_soft_mask_score shape mismatch");
    }
    std::vector<std::size_t> non_gap;
    for (std::size_t l = 0; l < state.length(); ++l) {
        if (!state.gap_mask[l]) non_gap.push_back(l);
    }
    if (non_gap.empty()) {
        throw std::domain_error("pssm_soft_mask_score: no non-gap sites");
    }
    double total = 0.0;
    std::vector<std::size_t> mask;
    for (std::size_t g = 0; g < n_masks; ++g) {
        mask.clear();
        for (const std::size_t l : non_gap) {
            if (stream.bernoulli(p_mask)) mask.push_back(l);
        }
        if (mask.empty()) {
            mask.push_back(non_gap[stream.uniform_below(non_gap.size())]);
        }
        total += masked_mean_logprob(state, pssm, mask);
    }
    return total / static_cast<double>(n_masks);
}

std::vector<std::size_t> changed_site_set(const SimplexState& state_mut,
                                          const SimplexState& state_base, double delta) {
    if (state_mut.length() != state_base.length() || state_mut.K() != state_base.K()) {
        throw std::domain_error("changed_site_set shape mismatch");
    }
    std::vector<std::size_t> changed;
    for (std::size_t l = 0; l < state_mut.length(); ++l) {
        const auto a = state_mut.sites.row(l);
        const auto b = state_base.sites.row(l);
        const std::size_t arg_a = std::max_element(a.begin(), a.end()) - a.begin();
        const std::size_t arg_b = std::max_element(b.begin(), b.end()) - b.begin();
        double tv = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) tv += std::fabs(a[k] - b[k]);
        tv *= 0.5;
        if (arg_a != arg_b || tv > delta) changed.push_back(l);
    }
    return changed;
}

double hybrid_fitness(const SimplexState& state_mut, const SimplexState& state_base,
                      const PSSM& pssm, double delta, double p_mask, std::size_t n_masks,
                      RandomStream& stream) {
    const double global = pssm_soft_mask_score(state_mut, pssm, p_mask, n_masks, stream);
    const auto changed = changed_site_set(state_mut, state_base, delta);
    if (changed.empty()) return global;
    const double local = masked_mean_logprob(state_mut, pssm, changed) -
                         masked_mean_logprob(state_base, pssm, changed);
    return global + local;
}

std::vector<double> select_weights(std::span<const double> scores, double beta) {
    if (scores.empty()) throw std::domain_error("select_weights needs scores");
    if (!(beta >= 0.0)) throw std::domain_error("select_weights beta must be >= 0");
    for (const double s : scores) {
        if (!std::isfinite(s)) throw std::domain_error("select_weights: non-finite score");
    }
    const double max_score = *std::max_element(scores.begin(), scores.end());
    std::vector<double> weights(scores.size());
    double total = 0.0;
    for (std::size_t m = 0; m < scores.size(); ++m) {
        weights[m] = std::exp(beta * (scores[m] - max_score));
        total += weights[m];
    }
    for (double& w : weights) w /= total;
    return weights;
}

ParticlePopulation resample(const ParticlePopulation& population, ResampleScheme scheme,
                            RandomStream& stream) {
    const std::size_t m = population.size();
    if (m == 0) throw std::domain_error("resample needs particles");
    if (population.weights.size() != m) {
        throw std::domain_error("resample needs normalized weights");
    }
    double sum = 0.0;
    for (const double w : population.weights) {
        if (w < 0.0) throw std::domain_error("resample: negative weight");
        sum += w;
    }
    if (std::fabs(sum - 1.0) > 1e-9) {
        throw std::domain_error("resample: weights are not normalized");
    }

    std::vector<std::size_t> parents(m);
    if (scheme == ResampleScheme::multinomial) {
        for (std::size_t i = 0; i < m; ++i) {
            parents[i] = sample_categorical(population.weights, stream);
        }
    } else {
        const double step = 1.0 / static_cast<double>(m);
        double u = stream.uniform01() * step;
        double cum = population.weights[0];
        std::size_t idx = 0;
        for (std::size_t i = 0; i < m; ++i) {
            while (u > cum && idx + 1 < m) cum += population.weights[++idx];
            parents[i] = idx;
            u += step;
        }
    }

    ParticlePopulation out;
    out.particles.reserve(m);
    out.scores.reserve(m);
    for (const std::size_t p : parents) {
        out.particles.push_back(population.particles[p]);
        if (!population.scores.empty()) out.scores.push_back(population.scores[p]);
    }
    out.weights.assign(m, 1.0 / static_cast<double>(m));
    return out;
}

SimplexState reroute(const ParticlePopulation& population,
                     const DenoiserInterface& denoiser, const FitnessScorer& scorer,
                     const FamilyPrior& prior, const MutationConfig& mconfig,
                     const RerouteConfig& rconfig, double t_max, RandomStream& stream,
                     std::vector<RerouteRound>* trace,
                     ParticlePopulation* final_population) {
    mconfig.validate();
    rconfig.validate();
    if (population.size() == 0) throw std::domain_error("reroute needs particles");
    const double t_shared = population.particles.front().t;
    for (const auto& p : population.particles) {
        if (std::fabs(p.t - t_shared) > 1e-9) {
            throw std::domain_error("reroute particles must share their time");
        }
    }

    ParticlePopulation pop = population;
    pop.scores.assign(pop.size(), 0.0);
    for (std::size_t r = 0; r < rconfig.rounds; ++r) {
        // One mask seed per round: every particle's scorer sees identical
        // masks, so scores are comparable within the round.
        const std::uint64_t mask_seed = stream.next_u64();
        for (std::size_t m = 0; m < pop.size(); ++m) {
            SimplexState base = pop.particles[m];
            pop.particles[m] =
                token_dirichlet_mutate(base, denoiser, prior, mconfig, t_max, stream);
            RandomStream mask_stream(mask_seed, r);
            pop.scores[m] =
                scorer.score_with_base(pop.particles[m], base, mask_stream);
        }
        pop.weights = select_weights(pop.scores, rconfig.beta_for_round(r));
        if (trace) {
            double lo = pop.scores[0], hi = pop.scores[0], mean = 0.0, w2 = 0.0;
            for (std::size_t m = 0; m < pop.size(); ++m) {
                lo = std::min(lo, pop.scores[m]);
                hi = std::max(hi, pop.scores[m]);
                mean += pop.scores[m];
                w2 += pop.weights[m] * pop.weights[m];
            }
            trace->push_back({r, lo, mean / static_cast<double>(pop.size()), hi,
                              1.0 / w2});
        }
        pop = resample(pop, rconfig.scheme, stream);
    }

    std::size_t best = 0;
    for (std::size_t m = 1; m < pop.size(); ++m) {
        if (pop.scores[m] > pop.scores[best]) best = m;
    }
    SimplexState winner = pop.particles[best];
    if (final_population) *final_population = std::move(pop);
    return winner;
}

std::string write_reroute_trace(const std::vector<RerouteRound>& trace) {
    std::string out = "round\tmin_score\tmean_score\tmax_score\tess\n";
    char buf[128];
    for (const auto& r : trace) {
        std::snprintf(buf, sizeof(buf), "%zu\t%.10g\t%.10g\t%.10g\t%.6f\n", r.round,
                      r.min_score, r.mean_score, r.max_score, r.effective_sample_size);
        out += buf;
    }
    return out;
}

std::vector<double> tilted_distribution_oracle(std::span<const double> support_probs,
                                               std::span<const double> j_values,
                                               double beta) {
    if (support_probs.size() != j_values.size() || support_probs.empty()) {
        throw std::domain_error("tilted_distribution_oracle size mismatch");
    }
    double p_sum = 0.0;
    for (const double p : support_probs) {
        if (p < 0.0) throw std::domain_error("tilted_distribution_oracle: negative p");
        p_sum += p;
    }
    if (p_sum <= 0.0) throw std::domain_error("tilted_distribution_oracle: all-zero p");

    std::vector<double> log_terms(support_probs.size(),
                                  -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < support_probs.size(); ++i) {
        if (support_probs[i] > 0.0) {
            log_terms[i] = std::log(support_probs[i]) + beta * j_values[i];
        }
    }
    const double log_z = log_sum_exp(log_terms);
    std::vector<double> q(support_probs.size(), 0.0);
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (support_probs[i] > 0.0) q[i] = std::exp(log_terms[i] - log_z);
    }
    return q;
}

double kl_objective(std::span<const double> q, std::span<const double> p_mut,
                    std::span<const double> j_values, double beta) {
    if (q.size() != p_mut.size() || q.size() != j_values.size() || q.empty()) {
        throw std::domain_error("kl_objective size mismatch");
    }
    if (!(beta > 0.0)) throw std::domain_error("kl_objective beta must be > 0");
    double expected_j = 0.0;
    double kl = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i] < 0.0) throw std::domain_error("kl_objective: negative q");
        if (q[i] == 0.0) continue;
        if (p_mut[i] <= 0.0) {
            throw std::domain_error("kl_objective: q not absolutely continuous w.r.t. p");
        }
        expected_j += q[i] * j_values[i];
        kl += q[i] * std::log(q[i] / p_mut[i]);
    }
    return expected_j - kl / beta;
}

}  // namespace ancflow
