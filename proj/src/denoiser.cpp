#include "ancflow/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <stdexcept>

#include "ancflow/errors.hpp"
#include "ancflow/specfun.hpp"

namespace ancflow {

SimplexVector oracle_posterior(std::span<const double> x_site, double t,
                               std::span<const double> alpha_site,
                               std::span<const double> q_site, double t_max,
                               double z_clamp) {
    const std::size_t K = x_site.size();
    if (alpha_site.size() != K || q_site.size() != K) {
        throw std::domain_error("oracle_posterior size mismatch");
    }
    const double s = t_max * t;
    std::vector<double> log_post(K);
    bool any_positive = false;
    for (std::size_t i = 0; i < K; ++i) {
        if (q_site[i] <= 0.0) {
            log_post[i] = -std::numeric_limits<double>::infinity();
            continue;
        }
        any_positive = true;
        const double x = std::clamp(x_site[i], z_clamp, 1.0 - z_clamp);
        // log q_i + s ln x_i + lgamma(alpha_i) - lgamma(alpha_i + s); the
        // remaining multivariate-beta terms are shared across i.
        log_post[i] = std::log(q_site[i]) + s * std::log(x) + log_gamma(alpha_site[i]) -
                      log_gamma(alpha_site[i] + s);
    }
    if (!any_positive) throw std::domain_error("oracle_posterior: all q_i are zero");
    const double norm = log_sum_exp(log_post);
    SimplexVector post(K);
    for (std::size_t i = 0; i < K; ++i) {
        post[i] = std::isinf(log_post[i]) ? 0.0 : std::exp(log_post[i] - norm);
    }
    return post;
}

BayesOracleDenoiser::BayesOracleDenoiser(FamilyPrior prior, Matrix site_distributions,
                                         double t_max)
    : prior_(std::move(prior)), q_(std::move(site_distributions)), t_max_(t_max) {
    if (q_.rows() != prior_.length() || q_.cols() != prior_.K()) {
        throw std::domain_error("BayesOracleDenoiser shape mismatch");
    }
}

Matrix BayesOracleDenoiser::evaluate(const SimplexState& state, double t) const {
    if (state.length() != prior_.length() || state.K() != prior_.K()) {
        throw std::domain_error("BayesOracleDenoiser: state shape mismatch");
    }
    Matrix out(state.length(), state.K());
    const double uniform = 1.0 / static_cast<double>(state.K());
    for (std::size_t l = 0; l < state.length(); ++l) {
        if (state.gap_mask[l]) {
            for (std::size_t a = 0; a < state.K(); ++a) out(l, a) = uniform;
            continue;
        }
        const auto post =
            oracle_posterior(state.sites.row(l), t, prior_.alpha.row(l), q_.row(l), t_max_);
        for (std::size_t a = 0; a < state.K(); ++a) out(l, a) = post[a];
    }
    return out;
}

std::vector<AccuracyPoint> bayes_accuracy_curve(const FamilyPrior& prior,
                                                const Matrix& site_distributions,
                                                std::span<const double> time_grid,
                                                std::size_t n_mc, double t_max,
                                                RandomStream& stream) {
    const std::size_t L = prior.length();
    const std::size_t K = prior.K();
    if (site_distributions.rows() != L || site_distributions.cols() != K) {
        throw std::domain_error("bayes_accuracy_curve shape mismatch");
    }
    std::vector<AccuracyPoint> out;
    out.reserve(time_grid.size());
    std::vector<double> alpha(K);
    for (const double t : time_grid) {
        double sum = 0.0;
        double sum_sq = 0.0;
        for (std::size_t n = 0; n < n_mc; ++n) {
            const std::size_t l = stream.uniform_below(L);
            const auto q = site_distributions.row(l);
            const std::size_t y = sample_categorical(q, stream);
            for (std::size_t a = 0; a < K; ++a) alpha[a] = prior.alpha(l, a);
            alpha[y] += t_max * t;
            const auto x = sample_dirichlet(alpha, stream);
            const auto post = oracle_posterior(x, t, prior.alpha.row(l), q, t_max);
            const double acc = *std::max_element(post.begin(), post.end());
            sum += acc;
            sum_sq += acc * acc;
        }
        const double mean = sum / static_cast<double>(n_mc);
        const double var =
            std::max(0.0, sum_sq / static_cast<double>(n_mc) - mean * mean);
        out.push_back({t, mean, std::sqrt(var / static_cast<double>(n_mc))});
    }
    return out;
}

SimplexVector marginal_label_distribution(const std::vector<const Matrix*>& site_laws) {
    if (site_laws.empty()) {
        throw std::domain_error("marginal_label_distribution needs input laws");
    }
    const std::size_t K = site_laws.front()->cols();
    SimplexVector marginal(K, 0.0);
    double total = 0.0;
    for (const Matrix* q : site_laws) {
        if (q->cols() != K) {
            throw std::domain_error("marginal_label_distribution: mixed alphabet sizes");
        }
        for (std::size_t l = 0; l < q->rows(); ++l) {
            for (std::size_t a = 0; a < K; ++a) {
                marginal[a] += (*q)(l, a);
                total += (*q)(l, a);
            }
        }
    }
    for (double& v : marginal) v /= total;
    return marginal;
}

std::pair<FamilyPrior, Matrix> uniform_comparison_inputs(
    const std::vector<const Matrix*>& site_laws, std::size_t L, std::size_t K) {
    const auto marginal = marginal_label_distribution(site_laws);
    if (marginal.size() != K) {
        throw std::domain_error("uniform_comparison_inputs: K mismatch");
    }
    FamilyPrior prior;
    prior.family_id = "uniform";
    prior.alpha = Matrix(L, K, 1.0);
    prior.gap_rates.assign(L, 0.0);
    Matrix rows(L, K);
    for (std::size_t l = 0; l < L; ++l) {
        for (std::size_t a = 0; a < K; ++a) rows(l, a) = marginal[a];
    }
    return {std::move(prior), std::move(rows)};
}

double cross_entropy_loss(const Matrix& predictions, std::span<const int> targets) {
    if (predictions.rows() != targets.size()) {
        throw std::domain_error("cross_entropy_loss shape mismatch");
    }
    double loss = 0.0;
    std::size_t n_valid = 0;
    for (std::size_t l = 0; l < targets.size(); ++l) {
        if (targets[l] < 0) continue;
        if (static_cast<std::size_t>(targets[l]) >= predictions.cols()) {
            throw std::domain_error("cross_entropy_loss target out of range");
        }
        loss -= std::log(std::max(predictions(l, targets[l]), 1e-12));
        ++n_valid;
    }
    if (n_valid == 0) throw std::domain_error("cross_entropy_loss: no valid sites");
    return loss / static_cast<double>(n_valid);
}

// --- trainable denoiser ---------------------------------------------------

namespace {

// Flat parameter layout.
struct ParamOffsets {
    std::size_t w1, b1, wt, w2, b2, w3, b3, total;
};

ParamOffsets offsets_of(const DenoiserArch& arch) {
    ParamOffsets off{};
    const std::size_t D = arch.input_dim();
    const std::size_t T = arch.time_dim();
    off.w1 = 0;
    off.b1 = off.w1 + arch.hidden1 * D;
    off.wt = off.b1 + arch.hidden1;
    off.w2 = off.wt + arch.hidden1 * T;
    off.b2 = off.w2 + arch.hidden2 * arch.hidden1;
    off.w3 = off.b2 + arch.hidden2;
    off.b3 = off.w3 + arch.K * arch.hidden2;
    off.total = off.b3 + arch.K;
    return off;
}

void time_embedding(const DenoiserArch& arch, double t, std::vector<double>& out) {
    out.resize(arch.time_dim());
    double omega = M_PI;
    for (std::size_t i = 0; i < arch.time_frequencies; ++i) {
        out[2 * i] = std::sin(omega * t);
        out[2 * i + 1] = std::cos(omega * t);
        omega *= 2.0;
    }
}

// Window features for one site: simplex rows with a trailing missing flag
// per window slot; out-of-range and gap slots read as uniform + flag.
void site_features(const SimplexState& state, const DenoiserArch& arch, std::size_t site,
                   std::vector<double>& out) {
    const std::size_t K = arch.K;
    const double uniform = 1.0 / static_cast<double>(K);
    out.resize(arch.input_dim());
    std::size_t pos = 0;
    const long r = static_cast<long>(arch.window_radius);
    for (long w = -r; w <= r; ++w) {
        const long j = static_cast<long>(site) + w;
        const bool missing = j < 0 || j >= static_cast<long>(state.length()) ||
                             state.gap_mask[static_cast<std::size_t>(j)];
        if (missing) {
            for (std::size_t a = 0; a < K; ++a) out[pos + a] = uniform;
        } else {
            const auto row = state.sites.row(static_cast<std::size_t>(j));
            for (std::size_t a = 0; a < K; ++a) out[pos + a] = row[a];
        }
        out[pos + K] = missing ? 1.0 : 0.0;
        pos += K + 1;
    }
}

void matvec_accum(const double* W, std::size_t rows, std::size_t cols, const double* x,
                  double* out) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = W + r * cols;
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
        out[r] += acc;
    }
}

struct ForwardScratch {
    std::vector<double> features, temb, z1, h1, h2, logits, probs;
    std::vector<double> dlogits, dh2, dz2, dh1, dz1;
};

void forward_site(const DenoiserArch& arch, const ParamOffsets& off,
                  const std::vector<double>& params, ForwardScratch& s) {
    const std::size_t D = arch.input_dim();
    const std::size_t T = arch.time_dim();
    const std::size_t H1 = arch.hidden1;
    const std::size_t H2 = arch.hidden2;
    const std::size_t K = arch.K;

    s.z1.assign(params.begin() + off.b1, params.begin() + off.b1 + H1);
    matvec_accum(params.data() + off.w1, H1, D, s.features.data(), s.z1.data());
    matvec_accum(params.data() + off.wt, H1, T, s.temb.data(), s.z1.data());
    s.h1.resize(H1);
    for (std::size_t i = 0; i < H1; ++i) s.h1[i] = std::tanh(s.z1[i]);

    s.h2.assign(params.begin() + off.b2, params.begin() + off.b2 + H2);
    matvec_accum(params.data() + off.w2, H2, H1, s.h1.data(), s.h2.data());
    for (std::size_t i = 0; i < H2; ++i) s.h2[i] = std::tanh(s.h2[i]);

    s.logits.assign(params.begin() + off.b3, params.begin() + off.b3 + K);
    matvec_accum(params.data() + off.w3, K, H2, s.h2.data(), s.logits.data());

    const double m = *std::max_element(s.logits.begin(), s.logits.end());
    double total = 0.0;
    s.probs.resize(K);
    for (std::size_t i = 0; i < K; ++i) {
        s.probs[i] = std::exp(s.logits[i] - m);
        total += s.probs[i];
    }
    for (double& p : s.probs) p /= total;
}

}  // namespace

TrainableDenoiser::TrainableDenoiser(const DenoiserArch& arch) : arch_(arch) {
    params_.assign(offsets_of(arch).total, 0.0);
}

TrainableDenoiser::TrainableDenoiser(const DenoiserArch& arch, RandomStream& init_stream)
    : TrainableDenoiser(arch) {
    const auto off = offsets_of(arch_);
    auto xavier = [&](std::size_t begin, std::size_t rows, std::size_t cols) {
        const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
        for (std::size_t i = 0; i < rows * cols; ++i) {
            params_[begin + i] = limit * (2.0 * init_stream.uniform01() - 1.0);
        }
    };
    xavier(off.w1, arch_.hidden1, arch_.input_dim());
    xavier(off.wt, arch_.hidden1, arch_.time_dim());
    xavier(off.w2, arch_.hidden2, arch_.hidden1);
    xavier(off.w3, arch_.K, arch_.hidden2);
}

Matrix TrainableDenoiser::evaluate(const SimplexState& state, double t) const {
    if (state.K() != arch_.K) {
        throw std::domain_error("TrainableDenoiser: state K does not match the model");
    }
    const auto off = offsets_of(arch_);
    Matrix out(state.length(), arch_.K);
    ForwardScratch scratch;
    time_embedding(arch_, t, scratch.temb);
    const double uniform = 1.0 / static_cast<double>(arch_.K);
    for (std::size_t l = 0; l < state.length(); ++l) {
        if (state.gap_mask[l]) {
            for (std::size_t a = 0; a < arch_.K; ++a) out(l, a) = uniform;
            continue;
        }
        site_features(state, arch_, l, scratch.features);
        forward_site(arch_, off, params_, scratch);
        for (std::size_t a = 0; a < arch_.K; ++a) out(l, a) = scratch.probs[a];
    }
    return out;
}

double TrainableDenoiser::sample_loss_and_grad(const SimplexState& state,
                                               std::span<const int> targets, double t,
                                               std::span<double> grad,
                                               std::size_t* n_correct,
                                               std::size_t* n_valid) const {
    const auto off = offsets_of(arch_);
    if (grad.size() != params_.size()) {
        throw std::domain_error("sample_loss_and_grad gradient size mismatch");
    }
    if (targets.size() != state.length()) {
        throw std::domain_error("sample_loss_and_grad target size mismatch");
    }
    std::size_t valid = 0;
    for (const int y : targets) valid += y >= 0 ? 1 : 0;
    if (valid == 0) throw std::domain_error("sample_loss_and_grad: no valid sites");
    const double inv_valid = 1.0 / static_cast<double>(valid);

    const std::size_t D = arch_.input_dim();
    const std::size_t T = arch_.time_dim();
    const std::size_t H1 = arch_.hidden1;
    const std::size_t H2 = arch_.hidden2;
    const std::size_t K = arch_.K;

    ForwardScratch s;
    time_embedding(arch_, t, s.temb);
    double loss = 0.0;
    std::size_t correct = 0;

    for (std::size_t l = 0; l < state.length(); ++l) {
        const int y = targets[l];
        if (y < 0) continue;
        site_features(state, arch_, l, s.features);
        forward_site(arch_, off, params_, s);

        loss -= std::log(std::max(s.probs[y], 1e-12)) * inv_valid;
        const auto argmax =
            std::max_element(s.probs.begin(), s.probs.end()) - s.probs.begin();
        correct += argmax == y ? 1 : 0;

        // Softmax + cross-entropy backward, scaled by 1/|V|.
        s.dlogits = s.probs;
        s.dlogits[y] -= 1.0;
        for (double& v : s.dlogits) v *= inv_valid;

        for (std::size_t i = 0; i < K; ++i) {
            const double d = s.dlogits[i];
            grad[off.b3 + i] += d;
            double* gw3 = grad.data() + off.w3 + i * H2;
            for (std::size_t j = 0; j < H2; ++j) gw3[j] += d * s.h2[j];
        }
        s.dh2.assign(H2, 0.0);
        for (std::size_t i = 0; i < K; ++i) {
            const double d = s.dlogits[i];
            const double* w3 = params_.data() + off.w3 + i * H2;
            for (std::size_t j = 0; j < H2; ++j) s.dh2[j] += d * w3[j];
        }
        s.dz2.resize(H2);
        for (std::size_t j = 0; j < H2; ++j) {
            s.dz2[j] = s.dh2[j] * (1.0 - s.h2[j] * s.h2[j]);
        }
        s.dh1.assign(H1, 0.0);
        for (std::size_t j = 0; j < H2; ++j) {
            const double d = s.dz2[j];
            grad[off.b2 + j] += d;
            double* gw2 = grad.data() + off.w2 + j * H1;
            const double* w2 = params_.data() + off.w2 + j * H1;
            for (std::size_t i = 0; i < H1; ++i) {
                gw2[i] += d * s.h1[i];
                s.dh1[i] += d * w2[i];
            }
        }
        s.dz1.resize(H1);
        for (std::size_t i = 0; i < H1; ++i) {
            s.dz1[i] = s.dh1[i] * (1.0 - s.h1[i] * s.h1[i]);
        }
        for (std::size_t i = 0; i < H1; ++i) {
            const double d = s.dz1[i];
            grad[off.b1 + i] += d;
            double* gw1 = grad.data() + off.w1 + i * D;
            for (std::size_t c = 0; c < D; ++c) gw1[c] += d * s.features[c];
            double* gwt = grad.data() + off.wt + i * T;
            for (std::size_t c = 0; c < T; ++c) gwt[c] += d * s.temb[c];
        }
    }
    if (n_correct) *n_correct = correct;
    if (n_valid) *n_valid = valid;
    return loss;
}

void TrainableDenoiser::apply_update(std::span<const double> grad, double learning_rate) {
    if (grad.size() != params_.size()) {
        throw std::domain_error("apply_update gradient size mismatch");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        params_[i] -= learning_rate * grad[i];
    }
}

std::string TrainableDenoiser::save_bytes() const {
    std::string out = "ANCDN1\n";
    const auto push_u64 = [&](std::uint64_t v) {
        char buf[8];
        std::memcpy(buf, &v, 8);
        out.append(buf, 8);
    };
    push_u64(arch_.K);
    push_u64(arch_.window_radius);
    push_u64(arch_.hidden1);
    push_u64(arch_.hidden2);
    push_u64(arch_.time_frequencies);
    push_u64(train_step_);
    push_u64(params_.size());
    out.append(reinterpret_cast<const char*>(params_.data()),
               params_.size() * sizeof(double));
    return out;
}

TrainableDenoiser TrainableDenoiser::load_bytes(std::string_view bytes) {
    constexpr std::string_view magic = "ANCDN1\n";
    if (bytes.substr(0, magic.size()) != magic) {
        throw ParseError("denoiser checkpoint: bad magic header");
    }
    std::size_t pos = magic.size();
    const auto read_u64 = [&]() {
        if (pos + 8 > bytes.size()) throw ParseError("denoiser checkpoint: truncated");
        std::uint64_t v;
        std::memcpy(&v, bytes.data() + pos, 8);
        pos += 8;
        return v;
    };
    DenoiserArch arch;
    arch.K = read_u64();
    arch.window_radius = read_u64();
    arch.hidden1 = read_u64();
    arch.hidden2 = read_u64();
    arch.time_frequencies = read_u64();
    const std::uint64_t step = read_u64();
    const std::uint64_t n_params = read_u64();

    TrainableDenoiser model(arch);
    if (model.params_.size() != n_params) {
        throw ParseError("denoiser checkpoint: parameter count mismatch");
    }
    if (pos + n_params * sizeof(double) > bytes.size()) {
        throw ParseError("denoiser checkpoint: truncated parameters");
    }
    std::memcpy(model.params_.data(), bytes.data() + pos, n_params * sizeof(double));
    model.train_step_ = step;
    return model;
}

TrainResult train(const TrainingSet& dataset, TrainableDenoiser& model,
                  const TrainConfig& config, RandomStream& stream) {
    // Flatten the train rows so sampling is uniform over (family, row)
    // pairs.
    struct RowRef {
        const AlignedFamily* family;
        const FamilyPrior* prior;
        std::size_t row;
    };
    std::vector<RowRef> rows;
    for (const auto& [family, prior] : dataset) {
        if (family->length() != prior->length()) {
            throw std::domain_error("train: family/prior length mismatch for " +
                                    family->family_id);
        }
        for (std::size_t i = 0; i < family->n_rows(); ++i) {
            if (family->split_tags[i] == SplitTag::train) {
                rows.push_back({family, prior, i});
            }
        }
    }
    if (rows.empty()) throw std::domain_error("train: no training rows");

    const std::size_t K = model.arch().K;
    TrainResult result;
    std::vector<double> grad(model.params().size(), 0.0);
    std::vector<double> alpha(K);

    double interval_loss = 0.0;
    std::size_t interval_count = 0;
    std::size_t hard_correct = 0;
    std::size_t hard_total = 0;

    for (std::size_t step = 0; step < config.n_steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double batch_loss = 0.0;
        std::size_t batch_used = 0;
        for (std::size_t b = 0; b < config.batch_size; ++b) {
            const RowRef& ref = rows[stream.uniform_below(rows.size())];
            const std::string& row = ref.family->rows[ref.row];
            const double t = stream.uniform01();

            const std::size_t L = row.size();
            SimplexState state;
            state.family_id = ref.family->family_id;
            state.sites = Matrix(L, K);
            state.gap_mask.assign(L, false);
            state.t = t;
            std::vector<int> targets(L, -1);
            bool any_valid = false;
            for (std::size_t l = 0; l < L; ++l) {
                const int a = amino_index(row[l]);
                const bool valid = a >= 0 && static_cast<std::size_t>(a) < K;
                if (!valid) {
                    state.gap_mask[l] = true;
                    for (std::size_t k = 0; k < K; ++k) {
                        state.sites(l, k) = 1.0 / static_cast<double>(K);
                    }
                    continue;
                }
                any_valid = true;
                targets[l] = a;
                for (std::size_t k = 0; k < K; ++k) alpha[k] = ref.prior->alpha(l, k);
                alpha[a] += config.t_max * t;
                const auto x = sample_dirichlet(alpha, stream);
                for (std::size_t k = 0; k < K; ++k) state.sites(l, k) = x[k];
            }
            if (!any_valid) {
                ++result.skipped_samples;
                continue;
            }
            std::size_t n_correct = 0;
            std::size_t n_valid = 0;
            batch_loss +=
                model.sample_loss_and_grad(state, targets, t, grad, &n_correct, &n_valid);
            ++batch_used;
            if (t <= config.hard_regime_cutoff) {
                hard_correct += n_correct;
                hard_total += n_valid;
            }
        }
        if (batch_used > 0) {
            const double scale = 1.0 / static_cast<double>(batch_used);
            for (double& g : grad) g *= scale;
            model.apply_update(grad, config.learning_rate);
            interval_loss += batch_loss * scale;
            ++interval_count;
        }
        model.set_train_step(model.train_step() + 1);

        if ((step + 1) % config.log_interval == 0 || step + 1 == config.n_steps) {
            const double mean_loss =
                interval_count ? interval_loss / static_cast<double>(interval_count)
                               : std::numeric_limits<double>::quiet_NaN();
            const double hard_acc =
                hard_total ? static_cast<double>(hard_correct) /
                                 static_cast<double>(hard_total)
                           : std::numeric_limits<double>::quiet_NaN();
            result.trace.push_back({model.train_step(), mean_loss, hard_acc});
            interval_loss = 0.0;
            interval_count = 0;
            hard_correct = 0;
            hard_total = 0;
        }
    }
    return result;
}

std::string write_loss_trace(const std::vector<TraceRow>& trace) {
    std::string out = "step\tloss\thard_regime_accuracy\n";
    char buf[96];
    for (const auto& row : trace) {
        if (std::isnan(row.hard_accuracy)) {
            std::snprintf(buf, sizeof(buf), "%llu\t%.10g\tNA\n",
                          static_cast<unsigned long long>(row.step), row.loss);
        } else {
            std::snprintf(buf, sizeof(buf), "%llu\t%.10g\t%.10g\n",
                          static_cast<unsigned long long>(row.step), row.loss,
                          row.hard_accuracy);
        }
        out += buf;
    }
    return out;
}

}  // namespace ancflow
