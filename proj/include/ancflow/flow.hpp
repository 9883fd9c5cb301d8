#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ancflow/lineage.hpp"
#include "ancflow/matrix.hpp"
#include "ancflow/random.hpp"
#include "ancflow/specfun.hpp"

namespace ancflow {

// Per-site categorical relaxation of one aligned sequence at flow time t.
// Gap rows are pinned to the uniform vector and never move.
struct SimplexState {
    std::string family_id;
    Matrix sites;                // L x K, non-gap rows on the simplex
    std::vector<bool> gap_mask;  // L entries
    double t = 0.0;

    std::size_t length() const { return sites.rows(); }
    std::size_t K() const { return sites.cols(); }
    std::size_t n_gaps() const;
};

struct FlowConfig {
    double t_max = 6.0;
    std::size_t n_steps = 100;
    double z_clamp = 1e-6;
    double simplex_tolerance = 1e-9;

    void validate() const;
};

// Classifier contract: per-site categorical distributions over terminal
// residues. Implementations must be safe for concurrent const evaluation;
// gap rows of the output are ignored downstream.
class DenoiserInterface {
public:
    virtual ~DenoiserInterface() = default;
    virtual Matrix evaluate(const SimplexState& state, double t) const = 0;
};

// Optional per-step integration trace record.
struct StepRecord {
    std::size_t step;
    double t;
    double mean_max_prob;
    double mean_entropy;
};

// Draw from the conditional path Dir(alpha + (t_max*t) e_target).
SimplexVector sample_path_point(std::span<const double> alpha_site, std::size_t target,
                                double t, double t_max, RandomStream& stream);

// Scalar transport speed: with a(t) = alpha_i + t_max*t and b the sum of
// the other concentrations,
//   c = -t_max * dI_z(a,b)/da * B(a,b) / (z^(a-1) (1-z)^b),
// assembled in log space; z is clamped to [z_clamp, 1-z_clamp] first.
double conditional_speed(double z, double t, double alpha_i, double b, double t_max,
                         double z_clamp = 1e-6);

// Conditional vector field c(x_i, t) * (e_i - x); tangent to the simplex.
std::vector<double> conditional_field(std::span<const double> x_site, std::size_t target,
                                      double t, std::span<const double> alpha_site,
                                      double t_max, double z_clamp = 1e-6);

// Classifier-weighted drift: sum_i p_i * conditional_field(., i, .).
std::vector<double> posterior_drift(std::span<const double> x_site,
                                    std::span<const double> classifier_probs, double t,
                                    std::span<const double> alpha_site, double t_max,
                                    double z_clamp = 1e-6);

// One Euler step: x += dt*drift, clamp to [0,1], renormalize; gap rows are
// untouched and t advances by dt.
void euler_step(SimplexState& state, const Matrix& drift, double dt);

// Gap mask ~ Bernoulli(gap_rates); gap rows uniform, the rest Dirichlet
// draws from the prior. Returns the state at t = 0.
SimplexState init_state(const FamilyPrior& prior, RandomStream& stream);

// Fixed-step Euler over the global n_steps grid, covering the step indices
// in [floor(t_from/dt), floor(t_to/dt)). The denoiser is queried once per
// step for the whole sequence; site drifts are the classifier-weighted
// conditional fields under the family prior. A non-null trace collects
// per-step records.
SimplexState integrate(const SimplexState& state, const DenoiserInterface& denoiser,
                       const FamilyPrior& prior, double t_from, double t_to,
                       const FlowConfig& config, std::vector<StepRecord>* trace = nullptr);

// Per-site argmax (ties to the lowest index) over non-gap sites, gaps
// removed; returns the ungapped amino string.
std::string decode(const SimplexState& state);

std::string write_trajectory_trace(const std::vector<StepRecord>& trace);

}  // namespace ancflow
