#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ancflow/flow.hpp"
#include "ancflow/lineage.hpp"
#include "ancflow/matrix.hpp"
#include "ancflow/random.hpp"

namespace ancflow {

// Exact posterior over the terminal residue given one corrupted site:
// p(y=i | x) proportional to q_i * Dir(x; alpha + s e_i) with s = t_max*t,
// evaluated through log-density differences and softmax-normalized.
SimplexVector oracle_posterior(std::span<const double> x_site, double t,
                               std::span<const double> alpha_site,
                               std::span<const double> q_site, double t_max,
                               double z_clamp = 1e-6);

// Ground-truth denoiser for synthetic families, where the per-site data
// distributions are known exactly.
class BayesOracleDenoiser : public DenoiserInterface {
public:
    BayesOracleDenoiser(FamilyPrior prior, Matrix site_distributions, double t_max);
    Matrix evaluate(const SimplexState& state, double t) const override;

    const FamilyPrior& prior() const { return prior_; }

private:
    FamilyPrior prior_;
    Matrix q_;  // L x K exact site categoricals
    double t_max_;
};

struct AccuracyPoint {
    double t;
    double accuracy;
    double std_error;
};

// Monte-Carlo estimate of the Bayes-optimal denoising accuracy
// E[max_i p(y=i | x_t)] along the conditional path, per grid time.
//
// The uniform-prior comparison passes an all-ones prior together with the
// pooled marginal label law replicated per site: a context-free decoder
// has no access to the site identity, and under the uniform path x_t
// carries none, so its label prior is the corpus marginal.
std::vector<AccuracyPoint> bayes_accuracy_curve(const FamilyPrior& prior,
                                                const Matrix& site_distributions,
                                                std::span<const double> time_grid,
                                                std::size_t n_mc, double t_max,
                                                RandomStream& stream);

// Mean residue distribution pooled over sites and families: the label
// prior available to a decoder without phylogenetic context.
SimplexVector marginal_label_distribution(const std::vector<const Matrix*>& site_laws);

// All-ones concentrations with the marginal law in every row; feeds the
// uniform-prior side of the comparison.
std::pair<FamilyPrior, Matrix> uniform_comparison_inputs(
    const std::vector<const Matrix*>& site_laws, std::size_t L, std::size_t K);

// Sequence-averaged cross-entropy over valid sites; predictions are
// floored at 1e-12 inside the log. targets[l] < 0 marks an invalid site.
double cross_entropy_loss(const Matrix& predictions, std::span<const int> targets);

struct DenoiserArch {
    std::size_t K = 20;
    std::size_t window_radius = 5;
    std::size_t hidden1 = 128;
    std::size_t hidden2 = 128;
    std::size_t time_frequencies = 8;

    std::size_t input_dim() const { return (2 * window_radius + 1) * (K + 1); }
    std::size_t time_dim() const { return 2 * time_frequencies; }
};

// Windowed feed-forward classifier: per site, the concatenated simplex
// rows of the surrounding window plus missing flags feed two tanh layers;
// the sinusoidal time embedding enters as a bias after the first layer.
class TrainableDenoiser : public DenoiserInterface {
public:
    TrainableDenoiser(const DenoiserArch& arch, RandomStream& init_stream);

    Matrix evaluate(const SimplexState& state, double t) const override;

    // Cross-entropy loss of one corrupted sample plus parameter gradient,
    // accumulated into grad (same layout as params). Returns the loss;
    // counts argmax hits over valid sites for accuracy tracking.
    double sample_loss_and_grad(const SimplexState& state, std::span<const int> targets,
                                double t, std::span<double> grad, std::size_t* n_correct,
                                std::size_t* n_valid) const;

    void apply_update(std::span<const double> grad, double learning_rate);

    const DenoiserArch& arch() const { return arch_; }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    std::uint64_t train_step() const { return train_step_; }
    void set_train_step(std::uint64_t step) { train_step_ = step; }

    std::string save_bytes() const;
    static TrainableDenoiser load_bytes(std::string_view bytes);

private:
    explicit TrainableDenoiser(const DenoiserArch& arch);

    DenoiserArch arch_;
    std::vector<double> params_;
    std::uint64_t train_step_ = 0;
};

struct TrainConfig {
    double learning_rate = 1e-2;
    std::size_t batch_size = 8;
    std::size_t n_steps = 2000;
    double t_max = 6.0;
    std::size_t log_interval = 50;
    // Token accuracy in the earliest time bin (t <= hard_regime_cutoff) is
    // tracked separately in the trace.
    double hard_regime_cutoff = 0.2;
};

struct TraceRow {
    std::uint64_t step;
    double loss;
    double hard_accuracy;  // NaN when the interval saw no hard-regime samples
};

struct TrainResult {
    std::vector<TraceRow> trace;
    std::size_t skipped_samples = 0;
};

using TrainingSet = std::vector<std::pair<const AlignedFamily*, const FamilyPrior*>>;

// Algorithm: sample a training row, a uniform time, corrupt valid sites
// along the family-specific Dirichlet path, take a gradient step on the
// masked cross-entropy. Rows with no valid sites are skipped and counted.
TrainResult train(const TrainingSet& dataset, TrainableDenoiser& model,
                  const TrainConfig& config, RandomStream& stream);

std::string write_loss_trace(const std::vector<TraceRow>& trace);

}  // namespace ancflow
