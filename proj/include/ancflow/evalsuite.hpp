#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ancflow/flow.hpp"
#include "ancflow/lineage.hpp"

namespace ancflow {

struct GeneratedSample {
    std::string sequence;  // ungapped amino string
    std::string intended_family;
    std::optional<SimplexState> aligned_state;

    std::size_t length() const { return sequence.size(); }
};

// Best ungapped placement of the sequence against the PSSM columns (the
// shorter of the two slides fully inside the longer). Score is the summed
// log-odds against the background; coverage the matched fraction of the
// shorter side.
std::pair<double, double> pssm_align_score(const std::string& sequence, const PSSM& pssm);

// Argmax family by PSSM score; ties go to the lexicographically smallest
// id. Returns (family_id, best score, runner-up score).
struct FamilyAssignment {
    std::string family_id;
    double top_score;
    double second_score;
};
FamilyAssignment assign_family(const std::string& sequence, const FamilyRegistry& registry);

double family_accuracy(const std::vector<GeneratedSample>& samples,
                       const FamilyRegistry& registry);

// Fraction of samples whose best score across families reaches the
// calibrated threshold (score semantics stand in for E-values).
double hit_any(const std::vector<GeneratedSample>& samples, const FamilyRegistry& registry,
               double score_threshold);

// Maximal identity over all ungapped relative offsets whose overlap covers
// at least min_coverage of BOTH sequences; nullopt when no placement
// qualifies.
std::optional<double> nn_identity(const std::string& sequence,
                                  const std::vector<std::string>& reference_set,
                                  double min_coverage);

// Among samples with an identity hit, the fraction with NNId < delta;
// nullopt when no sample has a hit.
std::optional<double> novelty_at(const std::vector<GeneratedSample>& samples,
                                 const std::vector<std::string>& reference_set,
                                 double delta, double min_coverage);

// Greedy single-linkage clustering in input order against cluster
// representatives; returns per-sequence cluster ids.
std::vector<int> cluster_assignments(const std::vector<std::string>& sequences,
                                     double identity_threshold, double min_coverage);

std::size_t diversity_clusters(const std::vector<GeneratedSample>& samples,
                               double identity_threshold, double min_coverage);

struct EvalOptions {
    double score_threshold = 0.0;     // hit_any / default foldability cut
    double min_coverage = 0.8;
    double identity_threshold = 0.8;  // diversity clustering
    double novelty_high = 0.8;
    double novelty_low = 0.6;
    std::size_t n_bins = 4;
    // Foldability stand-in; the default (null) accepts samples whose
    // self-family score reaches score_threshold.
    std::function<bool(const GeneratedSample&, double top_score)> foldable;
};

struct SampleRecord {
    std::size_t index = 0;
    std::string intended_family;
    std::string assigned_family;
    double top_score = 0.0;
    double second_score = 0.0;
    double fitness = 0.0;  // score against the intended family's PSSM
    std::size_t length = 0;
    bool foldable = false;
    std::optional<double> nn_id;  // empty = no hit
    int cluster_id = -1;          // -1 = outside the clustered subset
};

struct LengthBin {
    std::size_t lo = 0;  // inclusive length bounds observed in the bin
    std::size_t hi = 0;
    std::size_t count = 0;
    double mean_validity = 0.0;
    double mean_fitness = 0.0;
    std::optional<double> mean_novelty;  // 1 - NNId over the hit subset
};

struct Aggregates {
    double acc_fam = 0.0;
    double hit_any_rate = 0.0;
    std::optional<double> nn_id_mean;
    std::optional<double> nn_id_std;
    std::optional<double> novelty_high;
    std::optional<double> novelty_low;
    std::size_t diversity = 0;
    std::vector<LengthBin> bins;
};

struct MetricsReport {
    std::vector<SampleRecord> records;
    Aggregates aggregates;
    double score_threshold = 0.0;
    std::size_t n_bins = 0;
};

// Full evaluation: assignment + scores for every sample, novelty and
// clustering on the foldable subset, quantile length strata.
MetricsReport compute_metrics(const std::vector<GeneratedSample>& samples,
                              const FamilyRegistry& registry,
                              const std::vector<std::string>& reference_set,
                              const EvalOptions& options);

// Aggregates recomputed from the per-sample records alone; compute_metrics
// stores exactly this.
Aggregates aggregate_records(const std::vector<SampleRecord>& records,
                             const EvalOptions& options);

// Calibration threshold for hit_any: the 1st percentile (nearest-rank) of
// held-out members' self-family scores across the registry.
double calibrate_score_threshold(const FamilyRegistry& registry);

std::string write_sample_records(const MetricsReport& report);
std::vector<SampleRecord> read_sample_records(std::string_view bytes);
std::string write_aggregates(const MetricsReport& report, const std::string& label);

}  // namespace ancflow
