#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ancflow/matrix.hpp"
#include "ancflow/random.hpp"

namespace ancflow {

// Canonical 20-letter amino alphabet; synthetic families with K < 20 use
// its first K letters. '-' marks alignment gaps and 'X' unknown residues;
// both are treated as missing data everywhere.
inline constexpr std::string_view kAminoAlphabet = "ACDEFGHIKLMNPQRSTVWY";
inline constexpr char kGapChar = '-';
inline constexpr char kUnknownChar = 'X';

// Index into kAminoAlphabet, or -1 for gaps/unknowns.
int amino_index(char c);

inline bool is_missing_char(char c) { return c == kGapChar || c == kUnknownChar; }

enum class SplitTag { train, test };

// One aligned family: equal-length rows over the amino alphabet plus
// missing markers, with a per-row train/test tag.
struct AlignedFamily {
    std::string family_id;
    std::vector<std::string> rows;
    std::vector<SplitTag> split_tags;  // same length as rows; default train

    std::size_t n_rows() const { return rows.size(); }
    std::size_t length() const { return rows.empty() ? 0 : rows.front().size(); }
    std::size_t n_train() const;
    std::size_t n_test() const { return n_rows() - n_train(); }
};

// Site-wise root posterior: each row a categorical over K residues.
struct RootPosterior {
    std::string family_id;
    Matrix probs;  // L x K
};

// Family prior: site-wise Dirichlet concentrations plus per-column
// missing rates.
struct FamilyPrior {
    std::string family_id;
    Matrix alpha;                  // L x K, all entries > 0
    std::vector<double> gap_rates; // L entries in [0,1]; empty until estimated

    std::size_t length() const { return alpha.rows(); }
    std::size_t K() const { return alpha.cols(); }
};

// Position-specific scoring matrix with pseudocount smoothing.
struct PSSM {
    std::string family_id;
    Matrix log_probs;                // L x K, rows exp-sum to 1
    std::vector<double> background;  // K log-probabilities

    std::size_t length() const { return log_probs.rows(); }
    std::size_t K() const { return log_probs.cols(); }
};

struct FamilyEntry {
    AlignedFamily family;
    FamilyPrior prior;
    PSSM pssm;
};

struct FamilyRegistry {
    std::map<std::string, FamilyEntry> families;
    // (family_id, pi_h), strictly positive, summing to 1.
    std::vector<std::pair<std::string, double>> weights;
};

struct CleanFilters {
    std::size_t min_len = 20;
    std::size_t max_len = 2000;
    std::size_t depth_cap = 5000;
    double col_missing_max = 0.95;
    std::size_t min_depth = 100;
};

struct SynthConfig {
    std::size_t L = 60;
    std::size_t K = 20;
    std::size_t depth = 300;
    double conserved_fraction = 0.5;
    // Dirichlet boost on the consensus letter at conserved sites; +inf
    // makes the site distribution exactly one-hot.
    double conserved_concentration = 50.0;
    // Symmetric Dirichlet concentration at variable sites.
    double variable_concentration = 2.0;
    double mutation_rate = 0.05;
    double gap_rate = 0.0;
};

// Parses aligned FASTA. '.' maps to '-', letters are uppercased, and any
// letter outside the 20-residue alphabet becomes 'X'. Lines starting with
// '#' or ';' are comments. Unequal row lengths raise ParseError naming the
// offending 1-based record.
AlignedFamily parse_aligned_fasta(std::string_view bytes, std::string family_id);

std::string write_aligned_fasta(const AlignedFamily& family);

// Cleaning pipeline: column-length filter, uniform row subsampling to
// depth_cap, drop of columns with missing fraction > col_missing_max,
// minimum-depth filter. Returns nullopt when the family is rejected.
// Idempotent: cleaning a cleaned family is a no-op.
std::optional<AlignedFamily> clean_family(const AlignedFamily& family,
                                          const CleanFilters& filters,
                                          RandomStream& stream);

// Deterministic within-family split; held-out count is
// clamp(round(fraction*N), 1, N-1).
AlignedFamily split_family(const AlignedFamily& family, double holdout_fraction,
                           RandomStream& stream);

// alpha[l][a] = epsilon + lambda * p_root[l][a]; gap rates left unset.
FamilyPrior posterior_to_prior(const RootPosterior& posterior, double lambda,
                               double epsilon);

// alpha_mix = (1-rho)*alpha + rho*(|alpha|_1/K)*1 per site; total
// concentration per site unchanged.
FamilyPrior mix_with_uniform(const FamilyPrior& prior, double rho);

// Per-column fraction of '-'/'X' over the training rows.
std::vector<double> estimate_gap_rates(const AlignedFamily& family);

// Synthetic family generator: per-site root categoricals (conserved sites
// sharply peaked, variable sites diffuse), rows drawn from them with a
// uniform-substitution rate and optional gap rate. The returned posterior
// holds the exact generating categoricals.
std::pair<AlignedFamily, RootPosterior> synth_family(const SynthConfig& config,
                                                     std::string family_id,
                                                     RandomStream& stream);

// Smoothed family-frequency weights pi_h proportional to n_h^tau over the
// (at most cap) highest-weight families.
std::vector<std::pair<std::string, double>> compute_family_weights(
    const FamilyRegistry& registry, double tau, std::size_t cap);

// One family id drawn from the smoothed weights.
std::string family_sampler(const FamilyRegistry& registry, double tau,
                           std::size_t cap, RandomStream& stream);

// Column frequencies over train rows with additive pseudocount; columns
// with no residue observations fall back to the uniform background.
PSSM build_pssm(const AlignedFamily& family, double pseudocount, std::size_t K = 20);

// --- External file formats --------------------------------------------
// RootPosterior file: header "family_id L K", then L tab-separated rows of
// K probabilities (row sums within 1e-6 of 1). Prior file: same layout
// with concentrations and a trailing gap-rate column. Lines starting with
// '#' are comments.

std::string write_root_posterior(const RootPosterior& posterior);
RootPosterior read_root_posterior(std::string_view bytes);

std::string write_family_prior(const FamilyPrior& prior);
FamilyPrior read_family_prior(std::string_view bytes);

}  // namespace ancflow
