#include "ancflow/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "ancflow/errors.hpp"

namespace ancflow {

namespace {

double mean_of(const std::vector<double>& xs) {
    double m = 0.0;
    for (const double x : xs) m += x;
    return m / static_cast<double>(xs.size());
}

double identity_over_overlap(const std::string& a, const std::string& b, long offset,
                             std::size_t overlap) {
    // offset is the position of a's start relative to b's start.
    const std::size_t a_begin = offset < 0 ? static_cast<std::size_t>(-offset) : 0;
    const std::size_t b_begin = offset > 0 ? static_cast<std::size_t>(offset) : 0;
    std::size_t matches = 0;
    for (std::size_t i = 0; i < overlap; ++i) {
        matches += a[a_begin + i] == b[b_begin + i] ? 1 : 0;
    }
    return static_cast<double>(matches) / static_cast<double>(overlap);
}

}  // namespace

std::pair<double, double> pssm_align_score(const std::string& sequence, const PSSM& pssm) {
    if (sequence.empty()) throw std::domain_error("pssm_align_score needs a non-empty sequence");
    const std::size_t m = sequence.size();
    const std::size_t L = pssm.length();
    const std::size_t K = pssm.K();
    const std::size_t span = std::min(m, L);
    const std::size_t n_offsets = std::max(m, L) - span + 1;

    double best = -std::numeric_limits<double>::infinity();
    double best_cov = 0.0;
    for (std::size_t off = 0; off < n_offsets; ++off) {
        double score = 0.0;
        std::size_t matched = 0;
        for (std::size_t i = 0; i < span; ++i) {
            const std::size_t seq_pos = m <= L ? i : off + i;
            const std::size_t col = m <= L ? off + i : i;
            const int a = amino_index(sequence[seq_pos]);
            if (a < 0 || static_cast<std::size_t>(a) >= K) continue;
            score += pssm.log_probs(col, a) - pssm.background[a];
            ++matched;
        }
        if (score > best) {
            best = score;
            best_cov = static_cast<double>(matched) / static_cast<double>(span);
        }
    }
    return {best, best_cov};
}

FamilyAssignment assign_family(const std::string& sequence, const FamilyRegistry& registry) {
    if (registry.families.empty()) {
        throw std::domain_error("assign_family needs a non-empty registry");
    }
    FamilyAssignment out;
    out.top_score = -std::numeric_limits<double>::infinity();
    out.second_score = -std::numeric_limits<double>::infinity();
    for (const auto& [id, entry] : registry.families) {
        const auto [score, cov] = pssm_align_score(sequence, entry.pssm);
        if (score > out.top_score) {
            out.second_score = out.top_score;
            out.top_score = score;
            out.family_id = id;
        } else if (score > out.second_score) {
            out.second_score = score;
        }
    }
    return out;
}

double family_accuracy(const std::vector<GeneratedSample>& samples,
                       const FamilyRegistry& registry) {
    if (samples.empty()) throw std::domain_error("family_accuracy needs samples");
    std::size_t correct = 0;
    for (const auto& s : samples) {
        correct += assign_family(s.sequence, registry).family_id == s.intended_family ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

double hit_any(const std::vector<GeneratedSample>& samples, const FamilyRegistry& registry,
               double score_threshold) {
    if (samples.empty()) throw std::domain_error("hit_any needs samples");
    std::size_t hits = 0;
    for (const auto& s : samples) {
        hits += assign_family(s.sequence, registry).top_score >= score_threshold ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

std::optional<double> nn_identity(const std::string& sequence,
                                  const std::vector<std::string>& reference_set,
                                  double min_coverage) {
    if (!(min_coverage > 0.0 && min_coverage <= 1.0)) {
        throw std::domain_error("nn_identity min_coverage must lie in (0,1]");
    }
    const long m = static_cast<long>(sequence.size());
    std::optional<double> best;
    for (const std::string& ref : reference_set) {
        const long n = static_cast<long>(ref.size());
        for (long offset = -(m - 1); offset < n; ++offset) {
            const long lo = std::max(0L, offset);
            const long hi = std::min(n, offset + m);
            const long overlap = hi - lo;
            if (overlap <= 0) continue;
            const double ov = static_cast<double>(overlap);
            if (ov < min_coverage * static_cast<double>(m) ||
                ov < min_coverage * static_cast<double>(n)) {
                continue;
            }
            const double id = identity_over_overlap(sequence, ref, offset,
                                                    static_cast<std::size_t>(overlap));
            if (!best || id > *best) best = id;
        }
    }
    return best;
}

std::optional<double> novelty_at(const std::vector<GeneratedSample>& samples,
                                 const std::vector<std::string>& reference_set,
                                 double delta, double min_coverage) {
    if (!(delta > 0.0 && delta < 1.0)) {
        throw std::domain_error("novelty_at delta must lie in (0,1)");
    }
    std::size_t with_hit = 0;
    std::size_t novel = 0;
    for (const auto& s : samples) {
        const auto id = nn_identity(s.sequence, reference_set, min_coverage);
        if (!id) continue;
        ++with_hit;
        novel += *id < delta ? 1 : 0;
    }
    if (with_hit == 0) return std::nullopt;
    return static_cast<double>(novel) / static_cast<double>(with_hit);
}

std::vector<int> cluster_assignments(const std::vector<std::string>& sequences,
                                     double identity_threshold, double min_coverage) {
    std::vector<int> ids(sequences.size(), -1);
    std::vector<std::size_t> representatives;
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        int assigned = -1;
        for (std::size_t c = 0; c < representatives.size(); ++c) {
            const auto id = nn_identity(sequences[i], {sequences[representatives[c]]},
                                        min_coverage);
            if (id && *id >= identity_threshold) {
                assigned = static_cast<int>(c);
                break;
            }
        }
        if (assigned < 0) {
            assigned = static_cast<int>(representatives.size());
            representatives.push_back(i);
        }
        ids[i] = assigned;
    }
    return ids;
}

std::size_t diversity_clusters(const std::vector<GeneratedSample>& samples,
                               double identity_threshold, double min_coverage) {
    std::vector<std::string> seqs;
    seqs.reserve(samples.size());
    for (const auto& s : samples) seqs.push_back(s.sequence);
    const auto ids = cluster_assignments(seqs, identity_threshold, min_coverage);
    int max_id = -1;
    for (const int id : ids) max_id = std::max(max_id, id);
    return static_cast<std::size_t>(max_id + 1);
}

Aggregates aggregate_records(const std::vector<SampleRecord>& records,
                             const EvalOptions& options) {
    Aggregates agg;
    if (records.empty()) return agg;
    const double n = static_cast<double>(records.size());

    std::size_t correct = 0;
    std::size_t hits = 0;
    std::vector<double> nn_values;
    std::size_t novel_high = 0;
    std::size_t novel_low = 0;
    int max_cluster = -1;
    for (const auto& r : records) {
        correct += r.assigned_family == r.intended_family ? 1 : 0;
        hits += r.top_score >= options.score_threshold ? 1 : 0;
        if (r.foldable && r.nn_id) {
            nn_values.push_back(*r.nn_id);
            novel_high += *r.nn_id < options.novelty_high ? 1 : 0;
            novel_low += *r.nn_id < options.novelty_low ? 1 : 0;
        }
        max_cluster = std::max(max_cluster, r.cluster_id);
    }
    agg.acc_fam = static_cast<double>(correct) / n;
    agg.hit_any_rate = static_cast<double>(hits) / n;
    agg.diversity = static_cast<std::size_t>(max_cluster + 1);
    if (!nn_values.empty()) {
        const double mean = mean_of(nn_values);
        double var = 0.0;
        for (const double v : nn_values) var += (v - mean) * (v - mean);
        var /= static_cast<double>(nn_values.size());
        agg.nn_id_mean = mean;
        agg.nn_id_std = std::sqrt(var);
        agg.novelty_high = static_cast<double>(novel_high) /
                           static_cast<double>(nn_values.size());
        agg.novelty_low = static_cast<double>(novel_low) /
                          static_cast<double>(nn_values.size());
    }

    // Quantile bins over length, nearest-rank edges, ties to the lower bin.
    const std::size_t n_bins = std::max<std::size_t>(1, options.n_bins);
    std::vector<std::size_t> lengths;
    lengths.reserve(records.size());
    for (const auto& r : records) lengths.push_back(r.length);
    std::sort(lengths.begin(), lengths.end());
    std::vector<std::size_t> edges;
    for (std::size_t k = 1; k < n_bins; ++k) {
        const std::size_t rank = (k * records.size() + n_bins - 1) / n_bins;  // ceil
        edges.push_back(lengths[std::min(rank, records.size() - 1)]);
    }
    auto bin_of = [&](std::size_t len) {
        std::size_t b = 0;
        for (const std::size_t e : edges) b += e < len ? 1 : 0;
        return b;
    };
    struct BinAccum {
        std::size_t count = 0;
        std::size_t lo = 0, hi = 0;
        double validity = 0.0, fitness = 0.0;
        std::vector<double> novelty;
    };
    std::vector<BinAccum> accum(n_bins);
    for (const auto& r : records) {
        auto& bin = accum[bin_of(r.length)];
        if (bin.count == 0) {
            bin.lo = bin.hi = r.length;
        } else {
            bin.lo = std::min(bin.lo, r.length);
            bin.hi = std::max(bin.hi, r.length);
        }
        ++bin.count;
        bin.validity += r.assigned_family == r.intended_family ? 1.0 : 0.0;
        bin.fitness += r.fitness;
        if (r.foldable && r.nn_id) bin.novelty.push_back(1.0 - *r.nn_id);
    }
    agg.bins.resize(n_bins);
    for (std::size_t b = 0; b < n_bins; ++b) {
        auto& out = agg.bins[b];
        out.lo = accum[b].lo;
        out.hi = accum[b].hi;
        out.count = accum[b].count;
        if (accum[b].count > 0) {
            out.mean_validity = accum[b].validity / static_cast<double>(accum[b].count);
            out.mean_fitness = accum[b].fitness / static_cast<double>(accum[b].count);
        }
        if (!accum[b].novelty.empty()) out.mean_novelty = mean_of(accum[b].novelty);
    }
    return agg;
}

MetricsReport compute_metrics(const std::vector<GeneratedSample>& samples,
                              const FamilyRegistry& registry,
                              const std::vector<std::string>& reference_set,
                              const EvalOptions& options) {
    if (samples.empty()) throw std::domain_error("compute_metrics needs samples");
    MetricsReport report;
    report.score_threshold = options.score_threshold;
    report.n_bins = options.n_bins;
    report.records.resize(samples.size());

    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto& rec = report.records[i];
        const auto& sample = samples[i];
        rec.index = i;
        rec.intended_family = sample.intended_family;
        rec.length = sample.length();
        const auto assignment = assign_family(sample.sequence, registry);
        rec.assigned_family = assignment.family_id;
        rec.top_score = assignment.top_score;
        rec.second_score = assignment.second_score;
        const auto it = registry.families.find(sample.intended_family);
        if (it != registry.families.end()) {
            rec.fitness = pssm_align_score(sample.sequence, it->second.pssm).first;
        }
        rec.foldable = options.foldable
                           ? options.foldable(sample, assignment.top_score)
                           : assignment.top_score >= options.score_threshold;
        rec.nn_id = nn_identity(sample.sequence, reference_set, options.min_coverage);
    }

    // Cluster the foldable subset only; others keep cluster_id = -1.
    std::vector<std::size_t> foldable_idx;
    std::vector<std::string> foldable_seqs;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (report.records[i].foldable) {
            foldable_idx.push_back(i);
            foldable_seqs.push_back(samples[i].sequence);
        }
    }
    const auto cluster_ids = cluster_assignments(foldable_seqs, options.identity_threshold,
                                                 options.min_coverage);
    for (std::size_t j = 0; j < foldable_idx.size(); ++j) {
        report.records[foldable_idx[j]].cluster_id = cluster_ids[j];
    }

    report.aggregates = aggregate_records(report.records, options);
    return report;
}

double calibrate_score_threshold(const FamilyRegistry& registry) {
    std::vector<double> self_scores;
    for (const auto& [id, entry] : registry.families) {
        for (std::size_t i = 0; i < entry.family.n_rows(); ++i) {
            if (entry.family.split_tags[i] != SplitTag::test) continue;
            std::string ungapped;
            for (const char c : entry.family.rows[i]) {
                if (!is_missing_char(c)) ungapped.push_back(c);
            }
            if (ungapped.empty()) continue;
            self_scores.push_back(pssm_align_score(ungapped, entry.pssm).first);
        }
    }
    if (self_scores.empty()) {
        throw std::domain_error("calibrate_score_threshold: no held-out members");
    }
    std::sort(self_scores.begin(), self_scores.end());
    // Nearest-rank 1st percentile.
    const std::size_t rank = (self_scores.size() + 99) / 100;
    return self_scores[rank - 1];
}

// --- persistence ---------------------------------------------------------

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

constexpr const char* kNa = "NA";

}  // namespace

std::string write_sample_records(const MetricsReport& report) {
    std::string out =
        "index\tintended_family\tassigned_family\ttop_score\tsecond_score\tfitness\t"
        "length\tfoldable\tnn_id\tcluster_id\n";
    for (const auto& r : report.records) {
        out += std::to_string(r.index) + '\t' + r.intended_family + '\t' +
               r.assigned_family + '\t' + fmt(r.top_score) + '\t' + fmt(r.second_score) +
               '\t' + fmt(r.fitness) + '\t' + std::to_string(r.length) + '\t' +
               (r.foldable ? "1" : "0") + '\t' + (r.nn_id ? fmt(*r.nn_id) : kNa) + '\t' +
               std::to_string(r.cluster_id) + '\n';
    }
    return out;
}

std::vector<SampleRecord> read_sample_records(std::string_view bytes) {
    std::vector<SampleRecord> records;
    std::istringstream in{std::string(bytes)};
    std::string line;
    bool seen_header = false;
    while (std::getline(in, line)) {
        if (line.empty() || line.front() == '#') continue;
        if (!seen_header) {
            seen_header = true;  // column header
            continue;
        }
        std::istringstream fields(line);
        SampleRecord r;
        std::string foldable, nn;
        if (!(fields >> r.index >> r.intended_family >> r.assigned_family >>
              r.top_score >> r.second_score >> r.fitness >> r.length >> foldable >>
              nn >> r.cluster_id)) {
            throw ParseError("sample records: malformed row '" + line + "'");
        }
        r.foldable = foldable == "1";
        if (nn != kNa) r.nn_id = std::stod(nn);
        records.push_back(std::move(r));
    }
    return records;
}

std::string write_aggregates(const MetricsReport& report, const std::string& label) {
    const auto& a = report.aggregates;
    std::string out;
    auto kv = [&](const std::string& key, const std::string& value) {
        out += label + '.' + key + " = " + value + '\n';
    };
    kv("n_samples", std::to_string(report.records.size()));
    kv("score_threshold", fmt(report.score_threshold));
    kv("acc_fam", fmt(a.acc_fam));
    kv("hit_any", fmt(a.hit_any_rate));
    kv("nn_id_mean", a.nn_id_mean ? fmt(*a.nn_id_mean) : kNa);
    kv("nn_id_std", a.nn_id_std ? fmt(*a.nn_id_std) : kNa);
    kv("novelty_0.8", a.novelty_high ? fmt(*a.novelty_high) : kNa);
    kv("novelty_0.6", a.novelty_low ? fmt(*a.novelty_low) : kNa);
    kv("diversity", std::to_string(a.diversity));
    for (std::size_t b = 0; b < a.bins.size(); ++b) {
        const auto& bin = a.bins[b];
        const std::string prefix = "bin" + std::to_string(b);
        kv(prefix + ".count", std::to_string(bin.count));
        kv(prefix + ".len_lo", std::to_string(bin.lo));
        kv(prefix + ".len_hi", std::to_string(bin.hi));
        kv(prefix + ".mean_validity", bin.count ? fmt(bin.mean_validity) : kNa);
        kv(prefix + ".mean_fitness", bin.count ? fmt(bin.mean_fitness) : kNa);
        kv(prefix + ".mean_novelty", bin.mean_novelty ? fmt(*bin.mean_novelty) : kNa);
    }
    return out;
}

}  // namespace ancflow
