#include <gtest/gtest.h>

#include <random>

#include "privres/attacks.hpp"
#include "privres/corpus.hpp"

using namespace privres;

namespace {

// Synthetic multilabel data where each label has a dedicated signal coordinate.
struct LinearData {
    std::vector<Vec> x;
    std::vector<std::vector<char>> y;
};

LinearData make_separable(int n, int dim, int n_labels, std::uint64_t seed,
                          double signal = 3.0) {
    LinearData out;
    auto rng = rng_stream(seed, "test/attack-data");
    std::normal_distribution<double> gauss(0.0, 0.5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        Vec x(static_cast<std::size_t>(dim));
        for (auto& v : x) v = gauss(rng);
        std::vector<char> y(static_cast<std::size_t>(n_labels), 0);
        for (int l = 0; l < n_labels; ++l)
            if (u(rng) < 0.35) {
                y[static_cast<std::size_t>(l)] = 1;
                x[static_cast<std::size_t>(l)] += signal;
            }
        out.x.push_back(std::move(x));
        out.y.push_back(std::move(y));
    }
    return out;
}

}  // namespace

TEST(AttributeInference, SeparableDataNearPerfect) {
    auto train = make_separable(400, 8, 4, 1);
    auto test = make_separable(200, 8, 4, 2);
    AttackHyperparams hp;
    const double f1 = attribute_inference(train.x, train.y, test.x, test.y, 4, hp);
    EXPECT_GT(f1, 0.95);
}

TEST(AttributeInference, ShuffledLabelsNearPrior) {
    auto train = make_separable(400, 8, 4, 3, /*signal=*/0.0);
    auto test = make_separable(200, 8, 4, 4, /*signal=*/0.0);
    AttackHyperparams hp;
    hp.epochs = 200;
    const double f1 = attribute_inference(train.x, train.y, test.x, test.y, 4, hp);
    // No signal: the probe cannot beat the label prior by much.
    EXPECT_LT(f1, 0.55);
}

TEST(AttributeInference, PerfectPredictionsScoreOne) {
    std::vector<std::vector<char>> gold = {{1, 0}, {0, 1}, {1, 1}};
    EXPECT_DOUBLE_EQ(micro_f1(gold, gold), 1.0);
}

TEST(EmbeddingInversion, NoiseFreeSingleSpanExactRecovery) {
    auto corpus = generate_corpus(61, 10, 6, 1.0);
    auto bank = init_bank({{0, 0}, {0, 1}}, 6, 4, 7);

    std::vector<InversionSample> samples;
    for (int type = 0; type < 6; ++type) {
        InversionSample s;
        s.meta = bank.row(type);
        const double norm = l2_norm(s.meta);
        for (auto& v : s.meta) v /= norm;  // noise-free Z = r^c / ||r^c||
        s.span_text = render_types({type}, corpus.registry);
        samples.push_back(std::move(s));
    }
    const double rouge = embedding_inversion(bank, samples, corpus.registry);
    EXPECT_DOUBLE_EQ(rouge, 1.0);
}

TEST(EmbeddingInversion, NoiseDegradesRecovery) {
    auto corpus = generate_corpus(63, 10, 8, 1.0);
    auto bank = init_bank({{0, 0}, {0, 1}}, 8, 4, 9);
    auto rng = rng_stream(11, "test/eia-noise");

    auto run_at = [&](double eps) {
        NoiseParams np{eps, bank.meta_dim()};
        std::vector<InversionSample> samples;
        for (int i = 0; i < 60; ++i) {
            const int type = i % 8;
            InversionSample s;
            s.meta = bank.row(type);
            const double norm = l2_norm(s.meta);
            for (auto& v : s.meta) v /= norm;
            Vec noise = sample_noise(np, rng);
            axpy(1.0, noise, s.meta);
            s.span_text = render_types({type}, corpus.registry);
            samples.push_back(std::move(s));
        }
        return embedding_inversion(bank, samples, corpus.registry);
    };

    const double clean = run_at(1e9);
    const double noisy = run_at(2.0);  // E||N|| = dim/2, overwhelming
    EXPECT_DOUBLE_EQ(clean, 1.0);
    EXPECT_LT(noisy, 0.5 * clean);  // at least 50% relative degradation
}

TEST(EmbeddingInversion, RandomDirectionNearChance) {
    auto corpus = generate_corpus(65, 10, 8, 1.0);
    auto bank = init_bank({{0, 0}, {0, 1}}, 8, 4, 13);
    auto rng = rng_stream(15, "test/eia-chance");
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<InversionSample> samples;
    for (int i = 0; i < 40; ++i) {
        InversionSample s;
        s.meta.assign(static_cast<std::size_t>(bank.meta_dim()), 0.0);
        for (auto& v : s.meta) v = gauss(rng);
        const double norm = l2_norm(s.meta);
        for (auto& v : s.meta) v /= norm;
        s.span_text = render_types({i % 8}, corpus.registry);
        samples.push_back(std::move(s));
    }
    const double rouge = embedding_inversion(bank, samples, corpus.registry);

    // Chance oracle: score a uniformly random single-type guess against the
    // same truths.
    double chance = 0.0;
    std::uniform_int_distribution<int> pick(0, 7);
    for (const auto& s : samples)
        chance += rouge_l(s.span_text, render_types({pick(rng)}, corpus.registry));
    chance /= static_cast<double>(samples.size());
    EXPECT_NEAR(rouge, chance, 0.25);
    EXPECT_THROW(enumerate_bank_combinations(RestorationBank{}), ContractError);
}

TEST(DchiGarble, NearestNeighbourReplacement) {
    Mat embed(6, 3);
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 3; ++c) embed.at(r, c) = (r == c % 6) ? 0.0 : 0.0;
    // Spread rows on a line so nearest-neighbour is unambiguous.
    for (int r = 0; r < 6; ++r) embed.at(r, 0) = static_cast<double>(r) * 10.0;

    auto rng = rng_stream(17, "test/garble");
    std::vector<int> tokens = {0, 3, 5};

    // Almost no noise: tokens survive.
    auto same = dchi_garble_tokens(tokens, {0, 1, 2}, embed, 1e9, rng);
    EXPECT_EQ(same, tokens);

    // Heavy noise: at least sometimes tokens move.
    int moved = 0;
    for (int i = 0; i < 30; ++i) {
        auto noisy = dchi_garble_tokens(tokens, {0, 1, 2}, embed, 0.05, rng);
        for (std::size_t j = 0; j < tokens.size(); ++j)
            if (noisy[j] != tokens[j]) ++moved;
    }
    EXPECT_GT(moved, 0);

    EXPECT_THROW(dchi_garble_tokens(tokens, {9}, embed, 1.0, rng), ContractError);
}

TEST(DchiGarble, MaxEmbeddingDistanceIsExact) {
    Mat embed(3, 2);
    embed.at(0, 0) = 0.0;
    embed.at(0, 1) = 0.0;
    embed.at(1, 0) = 3.0;
    embed.at(1, 1) = 4.0;  // distance 5 from row 0
    embed.at(2, 0) = 1.0;
    embed.at(2, 1) = 1.0;
    EXPECT_DOUBLE_EQ(max_embedding_distance(embed), 5.0);
}

TEST(PromptInjectionEcho, ScoresGarbledEcho) {
    std::vector<std::string> original = {"kuba", "tizo", "felo"};
    EXPECT_DOUBLE_EQ(prompt_injection_echo(original, original), 1.0);
    EXPECT_DOUBLE_EQ(prompt_injection_echo({"x", "y", "z"}, original), 0.0);
    EXPECT_GT(prompt_injection_echo({"kuba", "x", "felo"}, original), 0.5);
}
