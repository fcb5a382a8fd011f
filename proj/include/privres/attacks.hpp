#ifndef PRIVRES_ATTACKS_HPP
#define PRIVRES_ATTACKS_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "privres/common.hpp"
#include "privres/corpus.hpp"
#include "privres/metrics.hpp"
#include "privres/model.hpp"
#include "privres/privacy.hpp"
#include "privres/restoration.hpp"

namespace privres {

// ---------------------------------------------------------------------------
// Linear multilabel probe (the attribute-inference attacker)
// ---------------------------------------------------------------------------

struct AttackHyperparams {
    int epochs = 400;
    double learning_rate = 0.8;
    double momentum = 0.9;
    std::uint64_t seed = 0;
};

struct MultiLabelProbe {
    Mat w;  // n_labels x dim
    Vec b;

    std::vector<char> predict(std::span<const double> x) const {
        std::vector<char> out(static_cast<std::size_t>(w.rows), 0);
        for (int r = 0; r < w.rows; ++r) {
            const double z = dot(w.row(r), x) + b[static_cast<std::size_t>(r)];
            out[static_cast<std::size_t>(r)] = z >= 0.0 ? 1 : 0;  // sigma(z) >= 0.5
        }
        return out;
    }
};

inline MultiLabelProbe train_multilabel_probe(const std::vector<Vec>& xs,
                                              const std::vector<std::vector<char>>& ys,
                                              int n_labels,
                                              const AttackHyperparams& hp) {
    if (xs.empty() || xs.size() != ys.size())
        throw ContractError("train_multilabel_probe: bad dataset");
    const int dim = static_cast<int>(xs[0].size());
    MultiLabelProbe probe;
    probe.w = Mat(n_labels, dim);
    probe.b.assign(static_cast<std::size_t>(n_labels), 0.0);
    Mat vel_w(n_labels, dim);
    Vec vel_b(static_cast<std::size_t>(n_labels), 0.0);
    Mat gw(n_labels, dim);
    Vec gb(static_cast<std::size_t>(n_labels), 0.0);

    const double inv_m = 1.0 / static_cast<double>(xs.size());
    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        std::fill(gw.d.begin(), gw.d.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (std::size_t i = 0; i < xs.size(); ++i) {
            for (int r = 0; r < n_labels; ++r) {
                const double z = dot(probe.w.row(r), xs[i]) + probe.b[static_cast<std::size_t>(r)];
                const double p = 1.0 / (1.0 + std::exp(-z));
                const double y = ys[i][static_cast<std::size_t>(r)] ? 1.0 : 0.0;
                const double g = (p - y) * inv_m;
                axpy(g, xs[i], gw.row(r));
                gb[static_cast<std::size_t>(r)] += g;
            }
        }
        for (std::size_t j = 0; j < probe.w.d.size(); ++j) {
            vel_w.d[j] = hp.momentum * vel_w.d[j] + gw.d[j];
            probe.w.d[j] -= hp.learning_rate * vel_w.d[j];
        }
        for (std::size_t r = 0; r < probe.b.size(); ++r) {
            vel_b[r] = hp.momentum * vel_b[r] + gb[r];
            probe.b[r] -= hp.learning_rate * vel_b[r];
        }
    }
    return probe;
}

// Trains on the training pairs only and reports micro-F1 on the disjoint test
// pairs at threshold 0.5.
inline double attribute_inference(const std::vector<Vec>& train_x,
                                  const std::vector<std::vector<char>>& train_y,
                                  const std::vector<Vec>& test_x,
                                  const std::vector<std::vector<char>>& test_y,
                                  int n_labels, const AttackHyperparams& hp) {
    auto probe = train_multilabel_probe(train_x, train_y, n_labels, hp);
    std::vector<std::vector<char>> preds;
    preds.reserve(test_x.size());
    for (const auto& x : test_x) preds.push_back(probe.predict(x));
    return micro_f1(preds, test_y);
}

// ---------------------------------------------------------------------------
// Embedding inversion at desk scale: enumerate unit-normalized weighted
// combinations of bank rows (sizes 1..3 over a small weight grid), decode a
// noised meta vector to the nearest candidate and score the recovered surface
// forms against the true span text with ROUGE-L.
// ---------------------------------------------------------------------------

struct InversionCandidate {
    std::vector<int> types;
    Vec direction;  // unit norm
};

inline std::vector<InversionCandidate> enumerate_bank_combinations(
    const RestorationBank& bank, int max_size = 3) {
    const int n = bank.n_types();
    if (n == 0) throw ContractError("enumerate_bank_combinations: empty bank");
    if (max_size > 3) max_size = 3;
    std::vector<InversionCandidate> out;

    auto push = [&](std::vector<int> types, const std::vector<double>& weights) {
        Vec s(static_cast<std::size_t>(bank.meta_dim()), 0.0);
        for (std::size_t i = 0; i < types.size(); ++i)
            axpy(weights[i], bank.row(types[i]), s);
        const double norm = l2_norm(s);
        if (norm < 1e-12) return;
        for (auto& v : s) v /= norm;
        out.push_back({std::move(types), std::move(s)});
    };

    for (int a = 0; a < n; ++a) push({a}, {1.0});
    if (max_size >= 2) {
        const std::vector<std::pair<double, double>> grid2 = {
            {1.0, 1.0}, {1.0, 2.0}, {2.0, 1.0}, {1.0, 3.0}, {3.0, 1.0}};
        for (int a = 0; a < n; ++a)
            for (int b = a + 1; b < n; ++b)
                for (const auto& [wa, wb] : grid2) push({a, b}, {wa, wb});
    }
    if (max_size >= 3) {
        const std::vector<std::array<double, 3>> grid3 = {
            {1.0, 1.0, 1.0}, {2.0, 1.0, 1.0}, {1.0, 2.0, 1.0}, {1.0, 1.0, 2.0}};
        for (int a = 0; a < n; ++a)
            for (int b = a + 1; b < n; ++b)
                for (int c = b + 1; c < n; ++c)
                    for (const auto& g : grid3) push({a, b, c}, {g[0], g[1], g[2]});
    }
    return out;
}

// Canonical textual rendering of a recovered type set.
inline std::vector<std::string> render_types(const std::vector<int>& types,
                                             const SpanTypeRegistry& registry) {
    std::vector<std::string> out;
    for (int t : types) {
        const auto& form = registry.types[static_cast<std::size_t>(t)].surface_forms.front();
        out.insert(out.end(), form.begin(), form.end());
    }
    return out;
}

struct InversionSample {
    Vec meta;                             // noised R
    std::vector<std::string> span_text;   // ground-truth protected text
};

inline double embedding_inversion(const RestorationBank& bank,
                                  const std::vector<InversionSample>& samples,
                                  const SpanTypeRegistry& registry, int max_size = 3) {
    const auto candidates = enumerate_bank_combinations(bank, max_size);
    if (samples.empty()) return 0.0;
    double total = 0.0;
    for (const auto& s : samples) {
        double best_dist = 1e300;
        const InversionCandidate* best = nullptr;
        for (const auto& cand : candidates) {
            double d = 0.0;
            for (std::size_t i = 0; i < s.meta.size(); ++i) {
                const double diff = s.meta[i] - cand.direction[i];
                d += diff * diff;
            }
            if (d < best_dist) {
                best_dist = d;
                best = &cand;
            }
        }
        total += rouge_l(s.span_text, render_types(best->types, registry));
    }
    return total / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// Word-level d_chi baseline: noise each protected token's embedding and
// replace the token by its nearest vocabulary neighbour. Per-token epsilon is
// a mechanism parameter; the total budget grows linearly with the number of
// protected tokens.
// ---------------------------------------------------------------------------

inline int nearest_token(std::span<const double> point, const Mat& embeddings) {
    int best = 0;
    double best_d = 1e300;
    for (int r = 0; r < embeddings.rows; ++r) {
        double d = 0.0;
        const auto row = embeddings.row(r);
        for (std::size_t i = 0; i < row.size(); ++i) {
            const double diff = point[i] - row[i];
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = r;
        }
    }
    return best;
}

inline std::vector<int> dchi_garble_tokens(const std::vector<int>& tokens,
                                           const std::vector<int>& positions,
                                           const Mat& embeddings, double epsilon,
                                           std::mt19937_64& rng) {
    NoiseParams np{epsilon, embeddings.cols};
    std::vector<int> out = tokens;
    for (int pos : positions) {
        if (pos < 0 || pos >= static_cast<int>(tokens.size()))
            throw ContractError("dchi_garble_tokens: position out of range");
        Vec noised(static_cast<std::size_t>(embeddings.cols));
        const auto row = embeddings.row(tokens[static_cast<std::size_t>(pos)]);
        Vec noise = sample_noise(np, rng);
        for (std::size_t i = 0; i < noised.size(); ++i) noised[i] = row[i] + noise[i];
        out[static_cast<std::size_t>(pos)] = nearest_token(noised, embeddings);
    }
    return out;
}

// Exact maximum pairwise embedding distance over the vocabulary (the d_e the
// accountant consumes at desk scale).
inline double max_embedding_distance(const Mat& embeddings) {
    double best = 0.0;
    for (int a = 0; a < embeddings.rows; ++a)
        for (int b = a + 1; b < embeddings.rows; ++b) {
            double d = 0.0;
            for (int i = 0; i < embeddings.cols; ++i) {
                const double diff = embeddings.at(a, i) - embeddings.at(b, i);
                d += diff * diff;
            }
            best = std::max(best, d);
        }
    return std::sqrt(best);
}

// ---------------------------------------------------------------------------
// Prompt-injection echo against the word-level baseline: the attacker wraps
// the garbled query in echo instructions; a compliant responder reflects the
// garbled text, so the attack recovers whatever survives the token noise.
// Scored as ROUGE-L between the echoed protected tokens and the originals.
// ---------------------------------------------------------------------------

inline double prompt_injection_echo(const std::vector<std::string>& garbled_protected,
                                    const std::vector<std::string>& original_protected) {
    return rouge_l(original_protected, garbled_protected);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct AttackPoint {
    double axis_value = 0.0;  // epsilon or alpha
    double score = 0.0;       // F1 or ROUGE-L
};

struct AttackReport {
    std::string attack;
    std::string target;  // meta_vector | redacted_query | output
    std::string axis;    // "epsilon" | "alpha"
    std::vector<AttackPoint> points;
    std::uint64_t seed = 0;
};

}  // namespace privres

#endif  // PRIVRES_ATTACKS_HPP
