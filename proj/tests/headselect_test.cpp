#include <gtest/gtest.h>

#include <random>

#include "privres/headselect.hpp"
#include "selector_oracle.hpp"

using namespace privres;

namespace {

TopKHeads make_topk(int type, std::vector<std::pair<HeadId, double>> members) {
    // Sort descending by accuracy, ties canonical ascending, like rank_heads.
    std::sort(members.begin(), members.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    TopKHeads out;
    out.span_type = type;
    for (const auto& [h, acc] : members) {
        out.heads.push_back(h);
        out.accuracies.push_back(acc);
    }
    return out;
}

}  // namespace

TEST(Score, AscendingAccuracyRank) {
    // Ranked by accuracy [A:0.9, B:0.8], K=2: score(A)=2 (highest), score(B)=1.
    auto topk = make_topk(0, {{{0, 0}, 0.9}, {{0, 1}, 0.8}});
    EXPECT_EQ(score({0, 0}, topk), 2);
    EXPECT_EQ(score({0, 1}, topk), 1);
    EXPECT_THROW(score({1, 1}, topk), ContractError);
}

TEST(Score, SingletonScoresOne) {
    auto topk = make_topk(0, {{{0, 3}, 0.77}});
    EXPECT_EQ(score({0, 3}, topk), 1);
}

TEST(Score, EqualAccuraciesStillAPermutation) {
    auto topk = make_topk(0, {{{0, 0}, 0.5}, {{0, 1}, 0.5}, {{0, 2}, 0.5}});
    std::set<int> scores;
    for (const auto& h : topk.heads) scores.insert(score(h, topk));
    EXPECT_EQ(scores, (std::set<int>{1, 2, 3}));
    // Canonical tie-break: the canonically earliest head gets the top score.
    EXPECT_EQ(score({0, 0}, topk), 3);
    EXPECT_EQ(score({0, 2}, topk), 1);
}

TEST(SelectCommonTopK, HandTracedExample) {
    // H_a = {A,B,C}; K=2. Type c1 accuracies A=.9 B=.8 C=.5; type c2 B=.95
    // C=.7 A=.2. L_A=[2], L_B=[1,2], L_C=[1]; means 2.0/1.5/1.0 -> {A,B}.
    const HeadId A{0, 0}, B{0, 1}, C{0, 2};
    std::vector<TopKHeads> per_type = {
        make_topk(0, {{A, 0.9}, {B, 0.8}}),
        make_topk(1, {{B, 0.95}, {C, 0.7}}),
    };
    auto common = select_common_topk(per_type, {A, B, C}, 2);
    ASSERT_EQ(common.heads.size(), 2u);
    EXPECT_EQ(common.heads[0], A);
    EXPECT_EQ(common.heads[1], B);
    EXPECT_FALSE(common.degenerate);

    const auto& table = common.provenance;
    EXPECT_EQ(table.scores[static_cast<std::size_t>(table.index_of(A))],
              (std::vector<int>{2}));
    EXPECT_EQ(table.scores[static_cast<std::size_t>(table.index_of(B))],
              (std::vector<int>{1, 2}));
    EXPECT_EQ(table.scores[static_cast<std::size_t>(table.index_of(C))],
              (std::vector<int>{1}));
    EXPECT_DOUBLE_EQ(table.means[static_cast<std::size_t>(table.index_of(A))], 2.0);
    EXPECT_DOUBLE_EQ(table.means[static_cast<std::size_t>(table.index_of(B))], 1.5);
    EXPECT_DOUBLE_EQ(table.means[static_cast<std::size_t>(table.index_of(C))], 1.0);
}

TEST(SelectCommonTopK, SingleTypeReturnsItsTopK) {
    const HeadId A{0, 0}, B{0, 1}, C{1, 0}, D{1, 1};
    auto topk = make_topk(0, {{C, 0.9}, {A, 0.7}, {D, 0.6}});
    auto common = select_common_topk({topk}, {A, B, C, D}, 3);
    EXPECT_EQ(common.heads, (std::vector<HeadId>{A, C, D}));  // canonical order
}

TEST(SelectCommonTopK, IdenticalTopKAcrossTypes) {
    const HeadId A{0, 0}, B{0, 1}, C{1, 0};
    std::vector<TopKHeads> per_type;
    for (int t = 0; t < 5; ++t) per_type.push_back(make_topk(t, {{B, 0.9}, {C, 0.8}}));
    auto common = select_common_topk(per_type, {A, B, C}, 2);
    EXPECT_EQ(common.heads, (std::vector<HeadId>{B, C}));
}

TEST(SelectCommonTopK, OrderOfTypesIsIrrelevant) {
    const HeadId A{0, 0}, B{0, 1}, C{1, 0}, D{1, 1};
    std::vector<TopKHeads> per_type = {
        make_topk(0, {{A, 0.9}, {B, 0.2}}),
        make_topk(1, {{C, 0.8}, {A, 0.6}}),
        make_topk(2, {{D, 0.5}, {C, 0.4}}),
    };
    auto fwd = select_common_topk(per_type, {A, B, C, D}, 2);
    std::reverse(per_type.begin(), per_type.end());
    auto rev = select_common_topk(per_type, {A, B, C, D}, 2);
    EXPECT_EQ(fwd.heads, rev.heads);
}

TEST(SelectCommonTopK, DegenerateFillFlagged) {
    const HeadId A{0, 0}, B{0, 1}, C{1, 0};
    auto common = select_common_topk({make_topk(0, {{B, 0.9}})}, {A, B, C}, 1);
    EXPECT_FALSE(common.degenerate);
    // Every per-type set carries exactly K members, so fewer than K heads can
    // only ever appear when there are no types at all: the selector then falls
    // back to a canonical-order fill and flags it.
    auto filled = select_common_topk({}, {A, B, C}, 2);
    EXPECT_TRUE(filled.degenerate);
    EXPECT_EQ(filled.heads, (std::vector<HeadId>{A, B}));
}

TEST(SelectCommonTopK, RejectsBadInputs) {
    const HeadId A{0, 0}, B{0, 1};
    auto topk = make_topk(0, {{A, 0.9}, {B, 0.8}});
    EXPECT_THROW(select_common_topk({topk}, {A, B}, 3), ContractError);
    auto short_set = make_topk(0, {{A, 0.9}});
    EXPECT_THROW(select_common_topk({short_set}, {A, B}, 2), ContractError);
}

TEST(SelectCommonTopK, MatchesBruteForceOracleOnRandomInstances) {
    auto rng = rng_stream(123, "test/selector-fuzz");
    std::uniform_int_distribution<int> pick_heads(2, 12);
    std::uniform_int_distribution<int> pick_types(1, 6);
    std::uniform_real_distribution<double> acc(0.0, 1.0);
    std::uniform_int_distribution<int> coarse(0, 4);  // forces frequent ties

    for (int trial = 0; trial < 300; ++trial) {
        const int n_heads = pick_heads(rng);
        std::vector<HeadId> all_heads;
        for (int i = 0; i < n_heads; ++i) all_heads.push_back({i / 4, i % 4});
        std::uniform_int_distribution<int> pick_k(1, std::min(4, n_heads));
        const int k = pick_k(rng);
        const int n_types = pick_types(rng);
        const bool tie_heavy = trial % 2 == 0;

        std::vector<TopKHeads> per_type;
        std::vector<std::vector<selector_oracle::Member>> oracle_input;
        for (int t = 0; t < n_types; ++t) {
            auto heads = all_heads;
            std::shuffle(heads.begin(), heads.end(), rng);
            heads.resize(static_cast<std::size_t>(k));
            std::vector<std::pair<HeadId, double>> members;
            std::vector<selector_oracle::Member> oracle_members;
            for (const auto& h : heads) {
                const double a = tie_heavy ? coarse(rng) / 4.0 : acc(rng);
                members.push_back({h, a});
                oracle_members.push_back({h, a});
            }
            per_type.push_back(make_topk(t, members));
            oracle_input.push_back(oracle_members);
        }
        auto fast = select_common_topk(per_type, all_heads, k);
        auto slow = selector_oracle::common_topk(oracle_input, all_heads, k);
        EXPECT_EQ(fast.heads, slow) << "trial " << trial;
    }
}

TEST(HeadSetIo, RoundTripAndHashValidation) {
    CommonHeadSet set;
    set.heads = {{0, 1}, {1, 0}, {1, 3}};
    const std::string path = ::testing::TempDir() + "/headset.json";
    write_headset(path, set, 8, "cafebabe");
    auto loaded = read_headset(path);
    EXPECT_EQ(loaded.heads, set.heads);
    EXPECT_EQ(loaded.d_head, 8);

    // Tampering with the head list must be caught by the hash.
    auto j = headset_to_json(set, 8, "cafebabe");
    j["heads"][0][1] = 2;
    EXPECT_THROW(headset_from_json(j), ContractError);
}
