#include "ancflow/lineage.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "ancflow/errors.hpp"
#include "ancflow/specfun.hpp"

namespace ancflow {

namespace {

// Uniformly selects n_keep of n indices, preserving original order.
std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t n_keep,
                                           RandomStream& stream) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < n_keep; ++i) {
        const std::size_t j = i + stream.uniform_below(n - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(n_keep);
    std::sort(idx.begin(), idx.end());
    return idx;
}

std::vector<std::size_t> train_row_indices(const AlignedFamily& family) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < family.n_rows(); ++i) {
        if (family.split_tags[i] == SplitTag::train) idx.push_back(i);
    }
    return idx;
}

}  // namespace

int amino_index(char c) {
    const auto pos = kAminoAlphabet.find(c);
    return pos == std::string_view::npos ? -1 : static_cast<int>(pos);
}

std::size_t AlignedFamily::n_train() const {
    std::size_t n = 0;
    for (const SplitTag t : split_tags) n += t == SplitTag::train ? 1 : 0;
    return n;
}

AlignedFamily parse_aligned_fasta(std::string_view bytes, std::string family_id) {
    AlignedFamily family;
    family.family_id = std::move(family_id);

    std::string current;
    bool in_record = false;
    std::size_t record_index = 0;

    auto flush = [&]() {
        if (!in_record) return;
        ++record_index;
        if (!family.rows.empty() && current.size() != family.rows.front().size()) {
            throw ParseError("aligned FASTA row " + std::to_string(record_index) +
                             " has length " + std::to_string(current.size()) +
                             ", expected " + std::to_string(family.rows.front().size()));
        }
        if (current.empty()) {
            throw ParseError("aligned FASTA row " + std::to_string(record_index) +
                             " is empty");
        }
        family.rows.push_back(current);
        current.clear();
    };

    std::size_t line_start = 0;
    while (line_start <= bytes.size()) {
        const std::size_t eol = bytes.find('\n', line_start);
        std::string_view line = bytes.substr(
            line_start, eol == std::string_view::npos ? std::string_view::npos
                                                      : eol - line_start);
        line_start = eol == std::string_view::npos ? bytes.size() + 1 : eol + 1;
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) {
            line.remove_suffix(1);
        }
        if (line.empty() || line.front() == '#' || line.front() == ';') continue;
        if (line.front() == '>') {
            flush();
            in_record = true;
            continue;
        }
        if (!in_record) {
            throw ParseError("aligned FASTA: sequence data before the first '>' header");
        }
        for (const char raw : line) {
            if (raw == ' ' || raw == '\t') continue;
            char c = raw;
            if (c == '.') c = kGapChar;
            if (c >= 'a' && c <= 'z') c = static_cast<char>(std::toupper(c));
            if (c != kGapChar) {
                if (c < 'A' || c > 'Z') {
                    throw ParseError(std::string("aligned FASTA: illegal character '") +
                                     raw + "' in record " +
                                     std::to_string(record_index + 1));
                }
                if (amino_index(c) < 0) c = kUnknownChar;
            }
            current.push_back(c);
        }
    }
    flush();
    if (family.rows.empty()) throw ParseError("aligned FASTA input holds no records");
    family.split_tags.assign(family.rows.size(), SplitTag::train);
    return family;
}

std::string write_aligned_fasta(const AlignedFamily& family) {
    std::string out;
    for (std::size_t i = 0; i < family.n_rows(); ++i) {
        out += '>';
        out += family.family_id;
        out += '/';
        out += std::to_string(i);
        out += '\n';
        out += family.rows[i];
        out += '\n';
    }
    return out;
}

std::optional<AlignedFamily> clean_family(const AlignedFamily& family,
                                          const CleanFilters& filters,
                                          RandomStream& stream) {
    const std::size_t L = family.length();
    if (L < filters.min_len || L > filters.max_len) return std::nullopt;

    AlignedFamily out;
    out.family_id = family.family_id;
    if (family.n_rows() > filters.depth_cap) {
        for (const std::size_t i :
             subsample_indices(family.n_rows(), filters.depth_cap, stream)) {
            out.rows.push_back(family.rows[i]);
            out.split_tags.push_back(family.split_tags[i]);
        }
    } else {
        out.rows = family.rows;
        out.split_tags = family.split_tags;
    }

    std::vector<bool> keep_col(L, false);
    std::size_t kept = 0;
    for (std::size_t l = 0; l < L; ++l) {
        std::size_t missing = 0;
        for (const std::string& row : out.rows) missing += is_missing_char(row[l]) ? 1 : 0;
        const double frac = static_cast<double>(missing) / static_cast<double>(out.n_rows());
        keep_col[l] = frac <= filters.col_missing_max;
        kept += keep_col[l] ? 1 : 0;
    }
    if (kept < L) {
        for (std::string& row : out.rows) {
            std::string filtered;
            filtered.reserve(kept);
            for (std::size_t l = 0; l < L; ++l) {
                if (keep_col[l]) filtered.push_back(row[l]);
            }
            row = std::move(filtered);
        }
    }
    // Re-check the length so a second pass over the output is a no-op.
    if (kept < filters.min_len || kept > filters.max_len) return std::nullopt;
    if (out.n_rows() < filters.min_depth) return std::nullopt;
    return out;
}

AlignedFamily split_family(const AlignedFamily& family, double holdout_fraction,
                           RandomStream& stream) {
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
        throw std::domain_error("split_family fraction must lie in (0,1)");
    }
    const std::size_t n = family.n_rows();
    if (n < 2) throw std::domain_error("split_family needs at least 2 rows");

    const auto raw = static_cast<std::size_t>(
        std::llround(holdout_fraction * static_cast<double>(n)));
    const std::size_t n_test = std::clamp<std::size_t>(raw, 1, n - 1);

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const std::size_t j = i + stream.uniform_below(n - i);
        std::swap(idx[i], idx[j]);
    }
    AlignedFamily out = family;
    out.split_tags.assign(n, SplitTag::train);
    for (std::size_t i = 0; i < n_test; ++i) out.split_tags[idx[i]] = SplitTag::test;
    return out;
}

FamilyPrior posterior_to_prior(const RootPosterior& posterior, double lambda,
                               double epsilon) {
    if (!(lambda > 0.0) || !(epsilon > 0.0)) {
        throw std::domain_error("posterior_to_prior needs lambda > 0 and epsilon > 0");
    }
    FamilyPrior prior;
    prior.family_id = posterior.family_id;
    prior.alpha = Matrix(posterior.probs.rows(), posterior.probs.cols());
    for (std::size_t l = 0; l < posterior.probs.rows(); ++l) {
        for (std::size_t a = 0; a < posterior.probs.cols(); ++a) {
            prior.alpha(l, a) = epsilon + lambda * posterior.probs(l, a);
        }
    }
    return prior;
}

FamilyPrior mix_with_uniform(const FamilyPrior& prior, double rho) {
    if (!(rho >= 0.0 && rho <= 1.0)) {
        throw std::domain_error("mix_with_uniform rho must lie in [0,1]");
    }
    FamilyPrior out = prior;
    const std::size_t K = prior.K();
    for (std::size_t l = 0; l < prior.length(); ++l) {
        double total = 0.0;
        for (std::size_t a = 0; a < K; ++a) total += prior.alpha(l, a);
        const double uniform = total / static_cast<double>(K);
        for (std::size_t a = 0; a < K; ++a) {
            out.alpha(l, a) = (1.0 - rho) * prior.alpha(l, a) + rho * uniform;
        }
    }
    return out;
}

std::vector<double> estimate_gap_rates(const AlignedFamily& family) {
    const auto train = train_row_indices(family);
    if (train.empty()) throw std::domain_error("estimate_gap_rates: empty train split");
    std::vector<double> rates(family.length(), 0.0);
    for (std::size_t l = 0; l < family.length(); ++l) {
        std::size_t missing = 0;
        for (const std::size_t i : train) missing += is_missing_char(family.rows[i][l]) ? 1 : 0;
        rates[l] = static_cast<double>(missing) / static_cast<double>(train.size());
    }
    return rates;
}

std::pair<AlignedFamily, RootPosterior> synth_family(const SynthConfig& config,
                                                     std::string family_id,
                                                     RandomStream& stream) {
    if (config.L < 1 || config.K < 2 || config.depth < 2) {
        throw std::domain_error("synth_family needs L >= 1, K >= 2, depth >= 2");
    }
    if (config.K > kAminoAlphabet.size()) {
        throw std::domain_error("synth_family K exceeds the amino alphabet size");
    }
    if (!(config.conserved_fraction >= 0.0 && config.conserved_fraction <= 1.0) ||
        !(config.mutation_rate >= 0.0 && config.mutation_rate <= 1.0) ||
        !(config.gap_rate >= 0.0 && config.gap_rate <= 1.0)) {
        throw std::domain_error("synth_family fractions must lie in [0,1]");
    }

    const std::size_t L = config.L;
    const std::size_t K = config.K;

    const auto n_cons = static_cast<std::size_t>(
        std::llround(config.conserved_fraction * static_cast<double>(L)));
    std::vector<std::size_t> order(L);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i + 1 < L; ++i) {
        const std::size_t j = i + stream.uniform_below(L - i);
        std::swap(order[i], order[j]);
    }
    std::vector<bool> conserved(L, false);
    for (std::size_t i = 0; i < n_cons; ++i) conserved[order[i]] = true;

    RootPosterior posterior;
    posterior.family_id = family_id;
    posterior.probs = Matrix(L, K);
    for (std::size_t l = 0; l < L; ++l) {
        if (conserved[l]) {
            const std::size_t c = stream.uniform_below(K);
            if (std::isinf(config.conserved_concentration)) {
                posterior.probs(l, c) = 1.0;
            } else {
                std::vector<double> alpha(K, 0.1);
                alpha[c] += config.conserved_concentration;
                const auto q = sample_dirichlet(alpha, stream);
                for (std::size_t a = 0; a < K; ++a) posterior.probs(l, a) = q[a];
            }
        } else {
            std::vector<double> alpha(K, config.variable_concentration);
            const auto q = sample_dirichlet(alpha, stream);
            for (std::size_t a = 0; a < K; ++a) posterior.probs(l, a) = q[a];
        }
    }

    AlignedFamily family;
    family.family_id = std::move(family_id);
    family.rows.reserve(config.depth);
    for (std::size_t n = 0; n < config.depth; ++n) {
        std::string row(L, kGapChar);
        for (std::size_t l = 0; l < L; ++l) {
            if (config.gap_rate > 0.0 && stream.bernoulli(config.gap_rate)) continue;
            std::size_t y;
            if (config.mutation_rate > 0.0 && stream.bernoulli(config.mutation_rate)) {
                y = stream.uniform_below(K);
            } else {
                y = sample_categorical(posterior.probs.row(l), stream);
            }
            row[l] = kAminoAlphabet[y];
        }
        family.rows.push_back(std::move(row));
    }
    family.split_tags.assign(config.depth, SplitTag::train);
    return {std::move(family), std::move(posterior)};
}

std::vector<std::pair<std::string, double>> compute_family_weights(
    const FamilyRegistry& registry, double tau, std::size_t cap) {
    if (registry.families.empty()) {
        throw std::domain_error("family weights need a non-empty registry");
    }
    if (!(tau >= 0.0)) throw std::domain_error("family weight tau must be >= 0");
    if (cap < 1) throw std::domain_error("family cap must be >= 1");

    std::vector<std::pair<std::string, double>> weights;
    weights.reserve(registry.families.size());
    for (const auto& [id, entry] : registry.families) {
        const auto n = static_cast<double>(entry.family.n_train());
        weights.emplace_back(id, std::pow(n, tau));
    }
    if (weights.size() > cap) {
        std::stable_sort(weights.begin(), weights.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        weights.resize(cap);
        std::sort(weights.begin(), weights.end());
    }
    double total = 0.0;
    for (const auto& [id, w] : weights) total += w;
    for (auto& [id, w] : weights) w /= total;
    return weights;
}

std::string family_sampler(const FamilyRegistry& registry, double tau,
                           std::size_t cap, RandomStream& stream) {
    const auto weights = compute_family_weights(registry, tau, cap);
    const double u = stream.uniform01();
    double cum = 0.0;
    for (const auto& [id, w] : weights) {
        cum += w;
        if (u < cum) return id;
    }
    return weights.back().first;
}

PSSM build_pssm(const AlignedFamily& family, double pseudocount, std::size_t K) {
    if (!(pseudocount > 0.0)) throw std::domain_error("PSSM pseudocount must be > 0");
    const auto train = train_row_indices(family);
    if (train.empty()) throw std::domain_error("build_pssm: empty train split");

    PSSM pssm;
    pssm.family_id = family.family_id;
    pssm.log_probs = Matrix(family.length(), K);
    pssm.background.assign(K, -std::log(static_cast<double>(K)));

    for (std::size_t l = 0; l < family.length(); ++l) {
        std::vector<double> counts(K, 0.0);
        double total = 0.0;
        for (const std::size_t i : train) {
            const int a = amino_index(family.rows[i][l]);
            if (a >= 0 && static_cast<std::size_t>(a) < K) {
                counts[a] += 1.0;
                total += 1.0;
            }
        }
        if (total == 0.0) {
            for (std::size_t a = 0; a < K; ++a) pssm.log_probs(l, a) = pssm.background[a];
            continue;
        }
        const double denom = total + pseudocount * static_cast<double>(K);
        for (std::size_t a = 0; a < K; ++a) {
            pssm.log_probs(l, a) = std::log((counts[a] + pseudocount) / denom);
        }
    }
    return pssm;
}

// --- file formats -------------------------------------------------------

namespace {

struct TableData {
    std::string family_id;
    std::size_t L = 0;
    std::size_t K = 0;
    std::vector<std::vector<double>> rows;
};

TableData read_table(std::string_view bytes, std::size_t extra_cols, const char* what) {
    TableData table;
    std::istringstream in{std::string(bytes)};
    std::string line;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (line.empty() || line.front() == '#') continue;
        std::istringstream fields(line);
        if (!have_header) {
            if (!(fields >> table.family_id >> table.L >> table.K)) {
                throw ParseError(std::string(what) + ": malformed header line");
            }
            have_header = true;
            continue;
        }
        std::vector<double> row;
        double v = 0.0;
        while (fields >> v) row.push_back(v);
        if (row.size() != table.K + extra_cols) {
            throw ParseError(std::string(what) + ": row " +
                             std::to_string(table.rows.size() + 1) + " has " +
                             std::to_string(row.size()) + " fields, expected " +
                             std::to_string(table.K + extra_cols));
        }
        table.rows.push_back(std::move(row));
    }
    if (!have_header) throw ParseError(std::string(what) + ": missing header line");
    if (table.rows.size() != table.L) {
        throw ParseError(std::string(what) + ": expected " + std::to_string(table.L) +
                         " rows, found " + std::to_string(table.rows.size()));
    }
    return table;
}

std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string write_root_posterior(const RootPosterior& posterior) {
    std::string out = posterior.family_id + "\t" + std::to_string(posterior.probs.rows()) +
                      "\t" + std::to_string(posterior.probs.cols()) + "\n";
    for (std::size_t l = 0; l < posterior.probs.rows(); ++l) {
        for (std::size_t a = 0; a < posterior.probs.cols(); ++a) {
            if (a) out += '\t';
            out += format_value(posterior.probs(l, a));
        }
        out += '\n';
    }
    return out;
}

RootPosterior read_root_posterior(std::string_view bytes) {
    const TableData table = read_table(bytes, 0, "root posterior");
    RootPosterior posterior;
    posterior.family_id = table.family_id;
    posterior.probs = Matrix(table.L, table.K);
    for (std::size_t l = 0; l < table.L; ++l) {
        double sum = 0.0;
        for (std::size_t a = 0; a < table.K; ++a) {
            const double p = table.rows[l][a];
            if (p < 0.0) {
                throw ParseError("root posterior: negative probability at row " +
                                 std::to_string(l + 1));
            }
            posterior.probs(l, a) = p;
            sum += p;
        }
        if (std::fabs(sum - 1.0) > 1e-6) {
            throw ParseError("root posterior: row " + std::to_string(l + 1) +
                             " sums to " + std::to_string(sum));
        }
    }
    return posterior;
}

std::string write_family_prior(const FamilyPrior& prior) {
    std::string out = prior.family_id + "\t" + std::to_string(prior.length()) + "\t" +
                      std::to_string(prior.K()) + "\n";
    for (std::size_t l = 0; l < prior.length(); ++l) {
        for (std::size_t a = 0; a < prior.K(); ++a) {
            if (a) out += '\t';
            out += format_value(prior.alpha(l, a));
        }
        out += '\t';
        out += format_value(prior.gap_rates.empty() ? 0.0 : prior.gap_rates[l]);
        out += '\n';
    }
    return out;
}

FamilyPrior read_family_prior(std::string_view bytes) {
    const TableData table = read_table(bytes, 1, "family prior");
    FamilyPrior prior;
    prior.family_id = table.family_id;
    prior.alpha = Matrix(table.L, table.K);
    prior.gap_rates.assign(table.L, 0.0);
    for (std::size_t l = 0; l < table.L; ++l) {
        for (std::size_t a = 0; a < table.K; ++a) {
            const double v = table.rows[l][a];
            if (!(v > 0.0)) {
                throw ParseError("family prior: non-positive concentration at row " +
                                 std::to_string(l + 1));
            }
            prior.alpha(l, a) = v;
        }
        const double rate = table.rows[l][table.K];
        if (rate < 0.0 || rate > 1.0) {
            throw ParseError("family prior: gap rate outside [0,1] at row " +
                             std::to_string(l + 1));
        }
        prior.gap_rates[l] = rate;
    }
    return prior;
}

}  // namespace ancflow
