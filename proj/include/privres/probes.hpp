#ifndef PRIVRES_PROBES_HPP
#define PRIVRES_PROBES_HPP

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "privres/common.hpp"
#include "privres/corpus.hpp"
#include "privres/model.hpp"

namespace privres {

// ---------------------------------------------------------------------------
// State collection: one last-token head state per (record, head) plus
// per-type presence labels.
// ---------------------------------------------------------------------------

struct StateDataset {
    int n_heads_total = 0;
    int d_head = 0;
    int n_types = 0;
    std::vector<HeadId> heads;            // canonical order
    std::vector<Vec> states;              // [head index] -> m x d_head row-major
    std::vector<std::vector<char>> labels;  // [type] -> m flags
    std::size_t size = 0;                 // m
};

inline StateDataset collect_states(const Params& params,
                                   const std::vector<QueryRecord>& records,
                                   const Vocabulary& vocab, int n_types) {
    if (records.empty()) throw ContractError("collect_states: empty corpus");
    const ModelConfig& cfg = params.cfg;
    StateDataset ds;
    ds.n_heads_total = cfg.n_layers * cfg.n_heads;
    ds.d_head = cfg.d_head();
    ds.n_types = n_types;
    ds.size = records.size();
    for (int l = 0; l < cfg.n_layers; ++l)
        for (int h = 0; h < cfg.n_heads; ++h) ds.heads.push_back({l, h});
    ds.states.assign(static_cast<std::size_t>(ds.n_heads_total),
                     Vec(records.size() * static_cast<std::size_t>(ds.d_head), 0.0));
    ds.labels.assign(static_cast<std::size_t>(n_types),
                     std::vector<char>(records.size(), 0));

    for (std::size_t i = 0; i < records.size(); ++i) {
        const QueryRecord& rec = records[i];
        ForwardTrace trace;
        forward(params, vocab.encode(rec.complete_query), nullptr, &trace);
        for (int hid = 0; hid < ds.n_heads_total; ++hid) {
            const Vec& u = trace.head_outputs[static_cast<std::size_t>(hid)];
            std::copy(u.begin(), u.end(),
                      ds.states[static_cast<std::size_t>(hid)].begin() +
                          static_cast<std::ptrdiff_t>(i) * ds.d_head);
        }
        for (const auto& s : rec.spans)
            if (s.type_id >= 0 && s.type_id < n_types)
                ds.labels[static_cast<std::size_t>(s.type_id)][i] = 1;
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Logistic probes
// ---------------------------------------------------------------------------

struct Probe {
    HeadId head;
    int span_type = -1;
    Vec weights;
    double bias = 0.0;
    double dev_accuracy = 0.0;
    bool degenerate = false;  // single-class training data

    double score(std::span<const double> u, bool include_bias = true) const {
        return dot(weights, u) + (include_bias ? bias : 0.0);
    }
};

struct ProbeHyperparams {
    int epochs = 300;
    double learning_rate = 0.5;
    double train_fraction = 0.8;  // held-out remainder measures dev_accuracy
    std::uint64_t seed = 0;
    bool use_bias = true;  // the strict formulation scores without a bias term
};

// Fits sigma(theta . u (+ b)) by full-batch gradient descent with
// inverse-frequency class weights; accuracy is measured on the held-out
// fraction only, at threshold 0.5.
inline Probe train_probe(const Vec& states, std::size_t m, int d, const std::vector<char>& labels,
                         const ProbeHyperparams& hp, HeadId head = {}, int span_type = -1) {
    if (labels.size() != m) throw ContractError("train_probe: label/state size mismatch");
    if (m == 0) throw ContractError("train_probe: empty dataset");

    Probe probe;
    probe.head = head;
    probe.span_type = span_type;
    probe.weights.assign(static_cast<std::size_t>(d), 0.0);

    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    auto rng = rng_stream(hp.seed, "probe/split",
                          static_cast<std::uint64_t>(span_type) * 10007 +
                              static_cast<std::uint64_t>(head.layer * 101 + head.head));
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_train = std::max<std::size_t>(
        1, static_cast<std::size_t>(hp.train_fraction * static_cast<double>(m)));

    std::size_t pos = 0, neg = 0;
    for (std::size_t i = 0; i < n_train; ++i)
        (labels[order[i]] ? pos : neg) += 1;

    auto majority_rate = [&](std::size_t from, std::size_t to) {
        std::size_t p = 0;
        for (std::size_t i = from; i < to; ++i) p += labels[order[i]] ? 1 : 0;
        const std::size_t total = to - from;
        if (total == 0) return 1.0;
        return static_cast<double>(std::max(p, total - p)) / static_cast<double>(total);
    };

    if (pos == 0 || neg == 0) {
        probe.degenerate = true;
        probe.dev_accuracy = majority_rate(n_train, m);
        return probe;
    }

    const double w_pos = static_cast<double>(n_train) / (2.0 * static_cast<double>(pos));
    const double w_neg = static_cast<double>(n_train) / (2.0 * static_cast<double>(neg));

    Vec gw(static_cast<std::size_t>(d), 0.0);
    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        std::fill(gw.begin(), gw.end(), 0.0);
        double gb = 0.0;
        for (std::size_t i = 0; i < n_train; ++i) {
            const std::size_t row = order[i];
            std::span<const double> u{states.data() + row * static_cast<std::size_t>(d),
                                      static_cast<std::size_t>(d)};
            const double y = labels[row] ? 1.0 : 0.0;
            const double z = probe.score(u, hp.use_bias);
            const double p = 1.0 / (1.0 + std::exp(-z));
            const double w = labels[row] ? w_pos : w_neg;
            const double g = w * (p - y) / static_cast<double>(n_train);
            axpy(g, u, gw);
            gb += g;
        }
        axpy(-hp.learning_rate, gw, probe.weights);
        if (hp.use_bias) probe.bias -= hp.learning_rate * gb;
    }

    std::size_t correct = 0, total = 0;
    for (std::size_t i = n_train; i < m; ++i) {
        const std::size_t row = order[i];
        std::span<const double> u{states.data() + row * static_cast<std::size_t>(d),
                                  static_cast<std::size_t>(d)};
        const bool pred = probe.score(u, hp.use_bias) >= 0.0;  // sigma(0) = 0.5
        correct += (pred == (labels[row] != 0)) ? 1 : 0;
        ++total;
    }
    probe.dev_accuracy =
        total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
    return probe;
}

// All probes for one span type across every head, keyed canonically.
inline std::vector<Probe> train_probes_for_type(const StateDataset& ds, int span_type,
                                                const ProbeHyperparams& hp) {
    std::vector<Probe> out;
    for (int hid = 0; hid < ds.n_heads_total; ++hid)
        out.push_back(train_probe(ds.states[static_cast<std::size_t>(hid)], ds.size,
                                  ds.d_head, ds.labels[static_cast<std::size_t>(span_type)],
                                  hp, ds.heads[static_cast<std::size_t>(hid)], span_type));
    return out;
}

// ---------------------------------------------------------------------------
// Per-type top-K ranking
// ---------------------------------------------------------------------------

struct TopKHeads {
    int span_type = -1;
    std::vector<HeadId> heads;       // descending accuracy, ties canonical
    std::vector<double> accuracies;  // aligned with heads
};

inline TopKHeads rank_heads(const std::vector<Probe>& probes, int k) {
    if (probes.empty()) throw ContractError("rank_heads: no probes");
    if (k < 1 || static_cast<std::size_t>(k) > probes.size())
        throw ContractError("rank_heads: K out of range");
    std::vector<std::size_t> order(probes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (probes[a].dev_accuracy != probes[b].dev_accuracy)
            return probes[a].dev_accuracy > probes[b].dev_accuracy;
        return probes[a].head < probes[b].head;
    });
    TopKHeads out;
    out.span_type = probes[order[0]].span_type;
    for (int i = 0; i < k; ++i) {
        out.heads.push_back(probes[order[static_cast<std::size_t>(i)]].head);
        out.accuracies.push_back(probes[order[static_cast<std::size_t>(i)]].dev_accuracy);
    }
    return out;
}

}  // namespace privres

#endif  // PRIVRES_PROBES_HPP
