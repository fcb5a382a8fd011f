#include <gtest/gtest.h>

#include <random>

#include "privres/corpus.hpp"
#include "privres/probes.hpp"

using namespace privres;

namespace {

ModelConfig small_config(int vocab) {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 8;
    cfg.vocab_size = vocab;
    cfg.max_seq_len = 48;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST(CollectStates, ShapesAndLabels) {
    auto corpus = generate_corpus(3, 40, 6, 1.0);
    Vocabulary vocab = make_vocabulary(corpus.registry);
    auto params = init_params(small_config(vocab.size()));

    auto ds = collect_states(params, corpus.records, vocab, 6);
    EXPECT_EQ(ds.n_heads_total, 4);
    EXPECT_EQ(ds.size, corpus.records.size());
    for (const auto& s : ds.states)
        EXPECT_EQ(s.size(), corpus.records.size() * static_cast<std::size_t>(ds.d_head));

    for (std::size_t i = 0; i < corpus.records.size(); ++i) {
        std::set<int> present;
        for (const auto& s : corpus.records[i].spans) present.insert(s.type_id);
        for (int type = 0; type < 6; ++type)
            EXPECT_EQ(ds.labels[static_cast<std::size_t>(type)][i] != 0,
                      present.count(type) != 0);
    }
}

TEST(CollectStates, EmptyCorpusRejected) {
    auto corpus = generate_corpus(3, 5, 6, 1.0);
    Vocabulary vocab = make_vocabulary(corpus.registry);
    auto params = init_params(small_config(vocab.size()));
    EXPECT_THROW(collect_states(params, {}, vocab, 6), ContractError);
}

TEST(TrainProbe, LinearlySeparableReachesPerfectAccuracy) {
    // States on two sides of a hyperplane; labels follow the side.
    const int d = 4;
    const std::size_t m = 200;
    Vec states(m * d, 0.0);
    std::vector<char> labels(m, 0);
    auto rng = rng_stream(11, "test/separable");
    std::normal_distribution<double> gauss(0.0, 0.5);
    for (std::size_t i = 0; i < m; ++i) {
        const bool pos = i % 2 == 0;
        labels[i] = pos ? 1 : 0;
        states[i * d] = (pos ? 3.0 : -3.0) + gauss(rng);
        for (int j = 1; j < d; ++j) states[i * d + static_cast<std::size_t>(j)] = gauss(rng);
    }
    ProbeHyperparams hp;
    hp.epochs = 800;
    hp.learning_rate = 1.0;
    auto probe = train_probe(states, m, d, labels, hp);
    EXPECT_FALSE(probe.degenerate);
    EXPECT_DOUBLE_EQ(probe.dev_accuracy, 1.0);
}

TEST(TrainProbe, UninformativeStatesStayNearPrior) {
    // Labels independent of states: accuracy should hover at the majority
    // prior (the permutation oracle bound).
    const int d = 6;
    const std::size_t m = 600;
    Vec states(m * d, 0.0);
    std::vector<char> labels(m, 0);
    auto rng = rng_stream(13, "test/uninformative");
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t positives = 0;
    for (std::size_t i = 0; i < m; ++i) {
        for (int j = 0; j < d; ++j) states[i * d + static_cast<std::size_t>(j)] = gauss(rng);
        labels[i] = u(rng) < 0.3 ? 1 : 0;
        positives += labels[i];
    }
    ProbeHyperparams hp;
    hp.epochs = 200;
    auto probe = train_probe(states, m, d, labels, hp);
    const double prior =
        std::max(static_cast<double>(positives), static_cast<double>(m - positives)) /
        static_cast<double>(m);
    // Class-weighted training pushes toward balanced predictions, so allow a
    // generous band around the prior.
    EXPECT_NEAR(probe.dev_accuracy, prior, 0.25);
    EXPECT_LT(probe.dev_accuracy, 0.85);
}

TEST(TrainProbe, SingleClassDegenerate) {
    const int d = 3;
    const std::size_t m = 50;
    Vec states(m * d, 0.1);
    std::vector<char> labels(m, 1);
    ProbeHyperparams hp;
    auto probe = train_probe(states, m, d, labels, hp);
    EXPECT_TRUE(probe.degenerate);
    EXPECT_DOUBLE_EQ(probe.dev_accuracy, 1.0);  // majority rate of an all-positive split
}

TEST(TrainProbe, DecisionBoundaryAtScoreZero) {
    Probe probe;
    probe.weights = {1.0, -2.0};
    probe.bias = 0.5;
    Vec x = {0.5, 0.5};  // score = 1*0.5 - 2*0.5 + 0.5 = 0
    EXPECT_DOUBLE_EQ(probe.score(x), 0.0);
    // sigma(0) = 0.5: threshold sits exactly here.
    EXPECT_DOUBLE_EQ(1.0 / (1.0 + std::exp(-probe.score(x))), 0.5);
    // The strict formulation drops the bias from the score.
    EXPECT_DOUBLE_EQ(probe.score(x, /*include_bias=*/false), -0.5);
}

TEST(RankHeads, OrderingAndTieBreaks) {
    std::vector<Probe> probes(3);
    probes[0].head = {0, 0};
    probes[0].dev_accuracy = 0.9;
    probes[1].head = {0, 1};
    probes[1].dev_accuracy = 0.8;
    probes[2].head = {1, 0};
    probes[2].dev_accuracy = 0.5;
    for (auto& p : probes) p.span_type = 2;

    auto top2 = rank_heads(probes, 2);
    EXPECT_EQ(top2.span_type, 2);
    ASSERT_EQ(top2.heads.size(), 2u);
    EXPECT_EQ(top2.heads[0], (HeadId{0, 0}));
    EXPECT_EQ(top2.heads[1], (HeadId{0, 1}));

    // All equal accuracies: canonical order decides.
    for (auto& p : probes) p.dev_accuracy = 0.7;
    auto tie = rank_heads(probes, 2);
    EXPECT_EQ(tie.heads[0], (HeadId{0, 0}));
    EXPECT_EQ(tie.heads[1], (HeadId{0, 1}));

    // K equal to the head count returns everything sorted by accuracy.
    probes[2].dev_accuracy = 0.9;
    auto all = rank_heads(probes, 3);
    EXPECT_EQ(all.heads.size(), 3u);

    EXPECT_THROW(rank_heads(probes, 4), ContractError);
    EXPECT_THROW(rank_heads(probes, 0), ContractError);
}

TEST(RankHeads, PureFunctionOfInputSet) {
    std::vector<Probe> probes(4);
    const double accs[4] = {0.6, 0.9, 0.7, 0.9};
    for (int i = 0; i < 4; ++i) {
        probes[static_cast<std::size_t>(i)].head = {i / 2, i % 2};
        probes[static_cast<std::size_t>(i)].dev_accuracy = accs[i];
    }
    auto a = rank_heads(probes, 3);
    std::reverse(probes.begin(), probes.end());
    auto b = rank_heads(probes, 3);
    EXPECT_EQ(a.heads, b.heads);
    EXPECT_EQ(a.accuracies, b.accuracies);
}

TEST(Probes, HeldOutLabelsNeverTrainTheFit) {
    // Flip the labels of exactly the held-out rows: the fitted weights must be
    // bitwise identical because those rows never enter the gradient, while the
    // measured accuracy must change.
    const int d = 2;
    const std::size_t m = 100;
    Vec states(m * d, 0.0);
    std::vector<char> labels(m, 0);
    auto grng = rng_stream(77, "test/heldout");
    std::normal_distribution<double> gauss(0.0, 0.3);
    for (std::size_t i = 0; i < m; ++i) {
        states[i * d] = ((i % 2 == 0) ? 1.0 : -1.0) + gauss(grng);
        states[i * d + 1] = gauss(grng);
        labels[i] = (i % 2 == 0) ? 1 : 0;
    }
    ProbeHyperparams hp;
    hp.epochs = 200;
    hp.seed = 3;
    const HeadId head{0, 0};
    const int span_type = 1;
    auto baseline = train_probe(states, m, d, labels, hp, head, span_type);

    // Recreate the module's deterministic split to locate the held-out rows.
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    auto rng = rng_stream(hp.seed, "probe/split",
                          static_cast<std::uint64_t>(span_type) * 10007 +
                              static_cast<std::uint64_t>(head.layer * 101 + head.head));
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_train = static_cast<std::size_t>(hp.train_fraction * m);

    std::vector<char> flipped = labels;
    for (std::size_t i = n_train; i < m; ++i)
        flipped[order[i]] = flipped[order[i]] ? 0 : 1;
    auto poisoned = train_probe(states, m, d, flipped, hp, head, span_type);

    EXPECT_EQ(baseline.weights, poisoned.weights);
    EXPECT_EQ(baseline.bias, poisoned.bias);
    EXPECT_NE(baseline.dev_accuracy, poisoned.dev_accuracy);
}
