#ifndef PRIVRES_HEADSELECT_HPP
#define PRIVRES_HEADSELECT_HPP

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "privres/common.hpp"
#include "privres/probes.hpp"

namespace privres {

// Per-head rank lists accumulated across span types: entries lie in [1, K],
// heads never ranked keep an empty list and mean 0.
struct HeadScoreTable {
    std::vector<HeadId> heads;              // canonical order, all heads
    std::vector<std::vector<int>> scores;   // L_h per head
    std::vector<double> means;              // empty list -> 0

    int index_of(const HeadId& h) const {
        auto it = std::lower_bound(heads.begin(), heads.end(), h);
        if (it == heads.end() || *it != h)
            throw ContractError("head score table: unknown head");
        return static_cast<int>(it - heads.begin());
    }
};

struct CommonHeadSet {
    std::vector<HeadId> heads;  // exactly K, canonical order (the wire contract)
    HeadScoreTable provenance;
    bool degenerate = false;    // fewer than K heads ever appeared in a top-K set
};

// Rank of `h` inside a per-type top-K set, by ascending accuracy: the lowest
// accuracy member scores 1, the highest scores K. TopKHeads stores heads in
// descending accuracy order, so the score is K minus the position.
inline int score(const HeadId& h, const TopKHeads& topk) {
    for (std::size_t i = 0; i < topk.heads.size(); ++i)
        if (topk.heads[i] == h) return static_cast<int>(topk.heads.size() - i);
    throw ContractError("score: head not in top-K set");
}

inline CommonHeadSet select_common_topk(const std::vector<TopKHeads>& per_type,
                                        const std::vector<HeadId>& all_heads, int k) {
    if (k < 1 || static_cast<std::size_t>(k) > all_heads.size())
        throw ContractError("select_common_topk: K out of range");
    for (const auto& t : per_type)
        if (t.heads.size() != static_cast<std::size_t>(k))
            throw ContractError("select_common_topk: per-type set size != K");

    CommonHeadSet out;
    HeadScoreTable& table = out.provenance;
    table.heads = all_heads;
    std::sort(table.heads.begin(), table.heads.end());
    table.scores.assign(table.heads.size(), {});
    table.means.assign(table.heads.size(), 0.0);

    for (const auto& t : per_type)
        for (const auto& h : t.heads)
            table.scores[static_cast<std::size_t>(table.index_of(h))].push_back(
                score(h, t));

    std::size_t ever_ranked = 0;
    for (std::size_t i = 0; i < table.heads.size(); ++i) {
        const auto& lh = table.scores[i];
        if (!lh.empty()) {
            double s = 0.0;
            for (int v : lh) s += v;
            table.means[i] = s / static_cast<double>(lh.size());
            ++ever_ranked;
        }
    }
    out.degenerate = ever_ranked < static_cast<std::size_t>(k);

    std::vector<std::size_t> order(table.heads.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (table.means[a] != table.means[b]) return table.means[a] > table.means[b];
        return table.heads[a] < table.heads[b];
    });
    for (int i = 0; i < k; ++i)
        out.heads.push_back(table.heads[order[static_cast<std::size_t>(i)]]);
    std::sort(out.heads.begin(), out.heads.end());
    return out;
}

// The canonical head order is the concatenation contract shared between the
// client and the server; the hash travels on the wire to catch drift.
inline std::uint64_t head_set_hash(const std::vector<HeadId>& heads, int d_head) {
    std::uint64_t h = kFnvOffset;
    h = fnv1a_u64(static_cast<std::uint64_t>(heads.size()), h);
    h = fnv1a_u64(static_cast<std::uint64_t>(d_head), h);
    for (const auto& head : heads) {
        h = fnv1a_u64(static_cast<std::uint64_t>(head.layer), h);
        h = fnv1a_u64(static_cast<std::uint64_t>(head.head), h);
    }
    return h;
}

inline nlohmann::json headset_to_json(const CommonHeadSet& set, int d_head,
                                      const std::string& config_hash) {
    nlohmann::json heads = nlohmann::json::array();
    for (const auto& h : set.heads) heads.push_back({h.layer, h.head});
    return nlohmann::json{{"k", set.heads.size()},
                          {"heads", heads},
                          {"d_head", d_head},
                          {"hash", to_hex(head_set_hash(set.heads, d_head))},
                          {"config_hash", config_hash}};
}

struct LoadedHeadSet {
    std::vector<HeadId> heads;
    int d_head = 0;
};

inline LoadedHeadSet headset_from_json(const nlohmann::json& j) {
    LoadedHeadSet out;
    for (const auto& h : j.at("heads"))
        out.heads.push_back({h.at(0).get<int>(), h.at(1).get<int>()});
    if (out.heads.size() != j.at("k").get<std::size_t>())
        throw ContractError("head-set file: k does not match head list");
    out.d_head = j.at("d_head").get<int>();
    if (j.contains("hash") &&
        j.at("hash").get<std::string>() != to_hex(head_set_hash(out.heads, out.d_head)))
        throw ContractError("head-set file: hash mismatch");
    return out;
}

inline void write_headset(const std::string& path, const CommonHeadSet& set, int d_head,
                          const std::string& config_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open head-set file for writing: " + path);
    out << headset_to_json(set, d_head, config_hash).dump(2) << "\n";
}

inline LoadedHeadSet read_headset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open head-set file: " + path);
    nlohmann::json j;
    in >> j;
    return headset_from_json(j);
}

}  // namespace privres

#endif  // PRIVRES_HEADSELECT_HPP
