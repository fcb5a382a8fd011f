#ifndef PRIVRES_TRAIN_HPP
#define PRIVRES_TRAIN_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "privres/common.hpp"
#include "privres/model.hpp"

namespace privres {

// ---------------------------------------------------------------------------
// Cross-entropy over token sequences
// ---------------------------------------------------------------------------

// Sum of next-token negative log-likelihoods over one sequence; dlogits is
// filled as (softmax - onehot) per predicted position when non-null. The
// caller is responsible for averaging.
inline double sequence_ce(const Params& params, const std::vector<int>& seq,
                          detail::Activations* acts, Vec* dlogits) {
    if (seq.size() < 2) throw ContractError("sequence_ce: need at least two tokens");
    Vec logits = forward(params, seq, nullptr, acts, nullptr, false);
    const int V = params.cfg.vocab_size;
    const std::size_t L = seq.size();
    if (dlogits) dlogits->assign(L * static_cast<std::size_t>(V), 0.0);
    double nll = 0.0;
    for (std::size_t t = 0; t + 1 < L; ++t) {
        Vec lsm = log_softmax({&logits[t * static_cast<std::size_t>(V)],
                               static_cast<std::size_t>(V)});
        const int target = seq[t + 1];
        nll -= lsm[static_cast<std::size_t>(target)];
        if (dlogits) {
            for (int i = 0; i < V; ++i)
                (*dlogits)[t * static_cast<std::size_t>(V) + static_cast<std::size_t>(i)] =
                    std::exp(lsm[static_cast<std::size_t>(i)]);
            (*dlogits)[t * static_cast<std::size_t>(V) + static_cast<std::size_t>(target)] -= 1.0;
        }
    }
    return nll;
}

inline double mean_ce_per_token(const Params& params,
                                const std::vector<std::vector<int>>& seqs) {
    double nll = 0.0;
    std::size_t tokens = 0;
    for (const auto& s : seqs) {
        nll += sequence_ce(params, s, nullptr, nullptr);
        tokens += s.size() - 1;
    }
    return nll / static_cast<double>(tokens);
}

// ---------------------------------------------------------------------------
// Adam optimizer over the full parameter set
// ---------------------------------------------------------------------------

struct AdamState {
    Params m, v;
    long step = 0;
};

inline void adam_update(Params& params, Params& grads, AdamState& st, double lr,
                        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    ++st.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
    std::vector<Vec*> pb, gb, mb, vb;
    params.for_each_block([&](const std::string&, Vec& x) { pb.push_back(&x); });
    grads.for_each_block([&](const std::string&, Vec& x) { gb.push_back(&x); });
    st.m.for_each_block([&](const std::string&, Vec& x) { mb.push_back(&x); });
    st.v.for_each_block([&](const std::string&, Vec& x) { vb.push_back(&x); });
    for (std::size_t b = 0; b < pb.size(); ++b) {
        Vec& p = *pb[b];
        Vec& g = *gb[b];
        Vec& m = *mb[b];
        Vec& v = *vb[b];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Base-model pretraining
// ---------------------------------------------------------------------------

struct TrainHyperparams {
    int epochs = 10;
    int batch_size = 16;
    double learning_rate = 3e-3;
    std::uint64_t seed = 0;
};

struct TrainHistory {
    std::vector<double> train_ce;     // per epoch, mean per token
    std::vector<double> heldout_ce;   // per epoch
    double initial_heldout_ce = 0.0;
    double final_heldout_ce = 0.0;
};

// Next-token pretraining of the whole parameter set. Aborts with a diagnostic
// on divergence. Zero epochs leaves the seeded initialization untouched.
inline TrainHistory train_base(Params& params, const std::vector<std::vector<int>>& train_seqs,
                               const std::vector<std::vector<int>>& heldout_seqs,
                               const TrainHyperparams& hp) {
    if (train_seqs.empty()) throw ConfigError("train_base: empty training corpus");

    TrainHistory hist;
    hist.initial_heldout_ce =
        heldout_seqs.empty() ? 0.0 : mean_ce_per_token(params, heldout_seqs);

    AdamState adam;
    adam.m = zero_like(params);
    adam.v = zero_like(params);
    auto rng = rng_stream(hp.seed, "train/base");

    std::vector<std::size_t> order(train_seqs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    detail::Activations acts;
    Vec dlogits;
    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_nll = 0.0;
        std::size_t epoch_tokens = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(hp.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(hp.batch_size));
            Params grads = zero_like(params);
            std::size_t batch_tokens = 0;
            for (std::size_t b = start; b < stop; ++b)
                batch_tokens += train_seqs[order[b]].size() - 1;
            double batch_nll = 0.0;
            for (std::size_t b = start; b < stop; ++b) {
                const auto& seq = train_seqs[order[b]];
                batch_nll += sequence_ce(params, seq, &acts, &dlogits);
                const double scale = 1.0 / static_cast<double>(batch_tokens);
                for (auto& g : dlogits) g *= scale;
                backward(params, acts, nullptr, dlogits, &grads, nullptr);
            }
            if (!std::isfinite(batch_nll))
                throw ContractError("train_base: loss diverged (non-finite) at epoch " +
                                    std::to_string(epoch));
            adam_update(params, grads, adam, hp.learning_rate);
            epoch_nll += batch_nll;
            epoch_tokens += batch_tokens;
        }
        hist.train_ce.push_back(epoch_nll / static_cast<double>(epoch_tokens));
        if (!heldout_seqs.empty())
            hist.heldout_ce.push_back(mean_ce_per_token(params, heldout_seqs));
    }
    hist.final_heldout_ce =
        heldout_seqs.empty()
            ? (hist.train_ce.empty() ? hist.initial_heldout_ce : hist.train_ce.back())
            : (hist.heldout_ce.empty() ? hist.initial_heldout_ce : hist.heldout_ce.back());
    return hist;
}

// ---------------------------------------------------------------------------
// Masked-token pretraining for the bidirectional client encoder
// ---------------------------------------------------------------------------

struct MlmHyperparams {
    int epochs = 8;
    int batch_size = 16;
    double learning_rate = 3e-3;
    double mask_fraction = 0.15;
    int mask_token = 1;
    std::uint64_t seed = 0;
};

// Cross-entropy at masked positions only; every sequence keeps at least one
// masked position.
inline double masked_ce(const Params& params, const std::vector<int>& seq,
                        const std::vector<int>& mask_positions,
                        detail::Activations* acts, Vec* dlogits, int mask_token) {
    std::vector<int> masked = seq;
    for (int pos : mask_positions) masked[static_cast<std::size_t>(pos)] = mask_token;
    Vec logits = forward(params, masked, nullptr, acts, nullptr, false);
    const int V = params.cfg.vocab_size;
    if (dlogits) dlogits->assign(logits.size(), 0.0);
    double nll = 0.0;
    for (int pos : mask_positions) {
        const std::size_t p = static_cast<std::size_t>(pos);
        Vec lsm = log_softmax({&logits[p * static_cast<std::size_t>(V)],
                               static_cast<std::size_t>(V)});
        nll -= lsm[static_cast<std::size_t>(seq[p])];
        if (dlogits) {
            for (int i = 0; i < V; ++i)
                (*dlogits)[p * static_cast<std::size_t>(V) + static_cast<std::size_t>(i)] =
                    std::exp(lsm[static_cast<std::size_t>(i)]);
            (*dlogits)[p * static_cast<std::size_t>(V) +
                       static_cast<std::size_t>(seq[p])] -= 1.0;
        }
    }
    return nll;
}

inline TrainHistory train_mlm(Params& params, const std::vector<std::vector<int>>& seqs,
                              const MlmHyperparams& hp) {
    if (seqs.empty()) throw ConfigError("train_mlm: empty training corpus");
    if (params.cfg.causal)
        throw ConfigError("train_mlm: masked-token training expects a bidirectional model");

    TrainHistory hist;
    AdamState adam;
    adam.m = zero_like(params);
    adam.v = zero_like(params);
    auto rng = rng_stream(hp.seed, "train/mlm");
    std::vector<std::size_t> order(seqs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    detail::Activations acts;
    Vec dlogits;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_nll = 0.0;
        std::size_t epoch_masks = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(hp.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(hp.batch_size));
            Params grads = zero_like(params);
            std::size_t batch_masks = 0;
            std::vector<std::vector<int>> batch_positions;
            for (std::size_t b = start; b < stop; ++b) {
                const auto& seq = seqs[order[b]];
                std::vector<int> positions;
                for (std::size_t p = 0; p < seq.size(); ++p)
                    if (u(rng) < hp.mask_fraction) positions.push_back(static_cast<int>(p));
                if (positions.empty()) {
                    std::uniform_int_distribution<std::size_t> pick(0, seq.size() - 1);
                    positions.push_back(static_cast<int>(pick(rng)));
                }
                batch_masks += positions.size();
                batch_positions.push_back(std::move(positions));
            }
            for (std::size_t b = start; b < stop; ++b) {
                const auto& seq = seqs[order[b]];
                epoch_nll += masked_ce(params, seq, batch_positions[b - start], &acts,
                                       &dlogits, hp.mask_token);
                const double scale = 1.0 / static_cast<double>(batch_masks);
                for (auto& g : dlogits) g *= scale;
                backward(params, acts, nullptr, dlogits, &grads, nullptr);
            }
            if (!std::isfinite(epoch_nll))
                throw ContractError("train_mlm: loss diverged (non-finite)");
            adam_update(params, grads, adam, hp.learning_rate);
            epoch_masks += batch_masks;
        }
        hist.train_ce.push_back(epoch_nll / static_cast<double>(epoch_masks));
    }
    if (!hist.train_ce.empty()) hist.final_heldout_ce = hist.train_ce.back();
    return hist;
}

// ---------------------------------------------------------------------------
// Sequence-level label prediction (the client scorer's objective): the model
// must predict the record's answer token from every position, which forces
// its attention onto the tokens that determine the answer.
// ---------------------------------------------------------------------------

inline double label_ce(const Params& params, const std::vector<int>& seq, int label,
                       detail::Activations* acts, Vec* dlogits) {
    Vec logits = forward(params, seq, nullptr, acts, nullptr, false);
    const int V = params.cfg.vocab_size;
    const std::size_t L = seq.size();
    if (dlogits) dlogits->assign(logits.size(), 0.0);
    double nll = 0.0;
    for (std::size_t t = 0; t < L; ++t) {
        Vec lsm = log_softmax({&logits[t * static_cast<std::size_t>(V)],
                               static_cast<std::size_t>(V)});
        nll -= lsm[static_cast<std::size_t>(label)];
        if (dlogits) {
            const double scale = 1.0 / static_cast<double>(L);
            for (int i = 0; i < V; ++i)
                (*dlogits)[t * static_cast<std::size_t>(V) + static_cast<std::size_t>(i)] =
                    std::exp(lsm[static_cast<std::size_t>(i)]) * scale;
            (*dlogits)[t * static_cast<std::size_t>(V) + static_cast<std::size_t>(label)] -=
                scale;
        }
    }
    return nll / static_cast<double>(L);
}

inline TrainHistory train_label_encoder(Params& params,
                                        const std::vector<std::vector<int>>& queries,
                                        const std::vector<int>& labels,
                                        const TrainHyperparams& hp) {
    if (queries.empty() || queries.size() != labels.size())
        throw ConfigError("train_label_encoder: bad dataset");
    TrainHistory hist;
    AdamState adam;
    adam.m = zero_like(params);
    adam.v = zero_like(params);
    auto rng = rng_stream(hp.seed, "train/label-encoder");
    std::vector<std::size_t> order(queries.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    detail::Activations acts;
    Vec dlogits;
    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_nll = 0.0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(hp.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(hp.batch_size));
            Params grads = zero_like(params);
            for (std::size_t b = start; b < stop; ++b) {
                epoch_nll += label_ce(params, queries[order[b]], labels[order[b]], &acts,
                                      &dlogits);
                const double scale = 1.0 / static_cast<double>(stop - start);
                for (auto& g : dlogits) g *= scale;
                backward(params, acts, nullptr, dlogits, &grads, nullptr);
            }
            if (!std::isfinite(epoch_nll))
                throw ContractError("train_label_encoder: loss diverged (non-finite)");
            adam_update(params, grads, adam, hp.learning_rate);
        }
        hist.train_ce.push_back(epoch_nll / static_cast<double>(queries.size()));
    }
    if (!hist.train_ce.empty()) hist.final_heldout_ce = hist.train_ce.back();
    return hist;
}

// ---------------------------------------------------------------------------
// Gradient checking against central finite differences
// ---------------------------------------------------------------------------

struct GradProbe {
    double* coord;
    double analytic;
};

// Central finite differences at step 1e-5; returns the max relative error over
// the probed coordinates. `loss` must be a deterministic function of the
// probed storage.
inline double grad_check(const std::function<double()>& loss,
                         const std::vector<GradProbe>& probes, double step = 1e-5) {
    double worst = 0.0;
    for (const auto& p : probes) {
        const double x0 = *p.coord;
        *p.coord = x0 + step;
        const double lp = loss();
        *p.coord = x0 - step;
        const double lm = loss();
        *p.coord = x0;
        const double fd = (lp - lm) / (2.0 * step);
        const double denom = std::max({std::abs(fd), std::abs(p.analytic), 1e-8});
        worst = std::max(worst, std::abs(fd - p.analytic) / denom);
    }
    return worst;
}

}  // namespace privres

#endif  // PRIVRES_TRAIN_HPP
