#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "ancflow/flow.hpp"
#include "ancflow/lineage.hpp"
#include "ancflow/random.hpp"

namespace ancflow {

// Particle population at one shared intervention time.
struct ParticlePopulation {
    std::vector<SimplexState> particles;
    std::vector<double> scores;   // empty until scored
    std::vector<double> weights;  // empty until selected; normalized when set

    std::size_t size() const { return particles.size(); }
};

struct MutationConfig {
    double mu = 0.25;       // expected mutated fraction of valid sites
    double gamma = 1.0;     // entropy-gate exponent
    double rho = 0.8;       // posterior vs prior-mean mixing
    double tau_tok = 1.0;   // token temperature

    void validate() const;
};

enum class ResampleScheme { multinomial, systematic };

struct RerouteConfig {
    std::size_t rounds = 3;
    std::vector<double> betas = {4.0};  // broadcast when a single entry
    double t_int = 0.5;
    ResampleScheme scheme = ResampleScheme::systematic;

    double beta_for_round(std::size_t round) const;
    void validate() const;
};

// Fitness contract: higher is better, deterministic given the injected
// stream (used for any internal masking).
class FitnessScorer {
public:
    virtual ~FitnessScorer() = default;
    virtual double score(const SimplexState& state, RandomStream& stream) const = 0;
    // Hybrid scorers may use the pre-mutation state; the default ignores it.
    virtual double score_with_base(const SimplexState& state, const SimplexState&,
                                   RandomStream& stream) const {
        return score(state, stream);
    }
};

// Per-site inclusion probabilities p_l proportional to the normalized
// prior-mean entropy gate (H/ln K)^gamma, scaled so the mean over valid
// sites is mu, clipped to [0,1]. Invalid sites get probability 0.
std::vector<double> mutation_probabilities(const FamilyPrior& prior, double mu,
                                           double gamma,
                                           const std::vector<bool>& valid_sites);

// Independent Bernoulli site subset under mutation_probabilities.
std::vector<std::size_t> mutation_mask(const FamilyPrior& prior, double mu, double gamma,
                                       const std::vector<bool>& valid_sites,
                                       RandomStream& stream);

// Token-Dirichlet proposal: at each masked site, sample a residue from
// rho * model^(1/tau) + (1-rho) * normalized prior mean, then redraw the
// site from Dir(alpha + t_max*t e_y). Gap and unselected sites unchanged.
SimplexState token_dirichlet_mutate(const SimplexState& state,
                                    const DenoiserInterface& denoiser,
                                    const FamilyPrior& prior,
                                    const MutationConfig& config, double t_max,
                                    RandomStream& stream);

// Soft-masked positional plausibility: mean over G random masks of the
// per-masked-site expected log-probability under the PSSM columns.
double pssm_soft_mask_score(const SimplexState& state, const PSSM& pssm, double p_mask,
                            std::size_t n_masks, RandomStream& stream);

// Sites whose argmax changed or whose total-variation distance moved by
// more than delta.
std::vector<std::size_t> changed_site_set(const SimplexState& state_mut,
                                          const SimplexState& state_base, double delta);

// Hybrid score: global soft-masked term plus the local delta restricted
// to the changed set (zero when nothing changed).
double hybrid_fitness(const SimplexState& state_mut, const SimplexState& state_base,
                      const PSSM& pssm, double delta, double p_mask, std::size_t n_masks,
                      RandomStream& stream);

// Default fitness: PSSM soft-mask global score with the hybrid delta term.
class PssmHybridScorer : public FitnessScorer {
public:
    PssmHybridScorer(const PSSM& pssm, double p_mask = 0.15, std::size_t n_masks = 8,
                     double delta = 0.1)
        : pssm_(&pssm), p_mask_(p_mask), n_masks_(n_masks), delta_(delta) {}

    double score(const SimplexState& state, RandomStream& stream) const override {
        return pssm_soft_mask_score(state, *pssm_, p_mask_, n_masks_, stream);
    }
    double score_with_base(const SimplexState& state, const SimplexState& base,
                           RandomStream& stream) const override {
        return hybrid_fitness(state, base, *pssm_, delta_, p_mask_, n_masks_, stream);
    }

private:
    const PSSM* pssm_;
    double p_mask_;
    std::size_t n_masks_;
    double delta_;
};

// Exponential-tilt weights w_m proportional to exp(beta*J_m), max-shifted.
std::vector<double> select_weights(std::span<const double> scores, double beta);

ParticlePopulation resample(const ParticlePopulation& population, ResampleScheme scheme,
                            RandomStream& stream);

struct RerouteRound {
    std::size_t round;
    double min_score;
    double mean_score;
    double max_score;
    double effective_sample_size;  // 1 / sum w^2
};

// Alg-2 Phase B: rounds of mutate -> select -> amplify; returns the
// highest-score particle after the final round (ties to the lowest
// index). Scorer mask randomness is re-seeded identically across the
// particles of one round so their scores share masks. A non-null
// final_population receives the post-amplification population.
SimplexState reroute(const ParticlePopulation& population,
                     const DenoiserInterface& denoiser, const FitnessScorer& scorer,
                     const FamilyPrior& prior, const MutationConfig& mconfig,
                     const RerouteConfig& rconfig, double t_max, RandomStream& stream,
                     std::vector<RerouteRound>* trace = nullptr,
                     ParticlePopulation* final_population = nullptr);

std::string write_reroute_trace(const std::vector<RerouteRound>& trace);

// Finite-support tilt q_beta(x) = exp(beta*J(x)) p(x) / Z_beta.
std::vector<double> tilted_distribution_oracle(std::span<const double> support_probs,
                                               std::span<const double> j_values,
                                               double beta);

// E_q[J] - (1/beta) KL(q || p_mut) on a finite support.
double kl_objective(std::span<const double> q, std::span<const double> p_mut,
                    std::span<const double> j_values, double beta);

}  // namespace ancflow
