#ifndef PRIVRES_RESTORATION_HPP
#define PRIVRES_RESTORATION_HPP

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "privres/common.hpp"
#include "privres/headselect.hpp"
#include "privres/model.hpp"
#include "privres/model_io.hpp"

namespace privres {

// ---------------------------------------------------------------------------
// Restoration bank: one trainable vector per (span type, edited head), stored
// per type as the concatenation over the canonical head order. The
// concatenation order is the same contract the wire uses.
// ---------------------------------------------------------------------------

struct RestorationBank {
    std::uint32_t version = 1;
    std::vector<HeadId> heads;  // canonical order, K entries
    int d_head = 0;
    std::vector<Vec> rows;      // [type id] -> K * d_head

    int k() const { return static_cast<int>(heads.size()); }
    int n_types() const { return static_cast<int>(rows.size()); }
    int meta_dim() const { return k() * d_head; }
    std::uint64_t head_hash() const { return head_set_hash(heads, d_head); }

    const Vec& row(int type) const {
        if (type < 0 || type >= n_types())
            throw ContractError("restoration bank: unknown span type");
        return rows[static_cast<std::size_t>(type)];
    }
};

inline RestorationBank init_bank(const std::vector<HeadId>& heads, int n_types,
                                 int d_head, std::uint64_t seed) {
    if (heads.empty() || n_types < 1 || d_head < 1)
        throw ConfigError("init_bank: empty inputs");
    RestorationBank bank;
    bank.heads = heads;
    std::sort(bank.heads.begin(), bank.heads.end());
    bank.d_head = d_head;
    auto rng = rng_stream(seed, "bank/init");
    std::normal_distribution<double> gauss(0.0, 0.01);  // near-identity steering
    bank.rows.assign(static_cast<std::size_t>(n_types),
                     Vec(static_cast<std::size_t>(heads.size()) * d_head, 0.0));
    for (auto& row : bank.rows)
        for (auto& v : row) v = gauss(rng);
    return bank;
}

// ---------------------------------------------------------------------------
// Aggregation: weighted type rows -> normalized meta direction Z
// ---------------------------------------------------------------------------

struct TypeWeight {
    int type = -1;
    double weight = 0.0;
};

// Collapses per-span weights into per-type weights (spans of the same type
// share one restoration row, so their weights add).
inline std::vector<TypeWeight> collapse_weights(const std::vector<TypeWeight>& per_span) {
    std::map<int, double> acc;
    for (const auto& tw : per_span) acc[tw.type] += tw.weight;
    std::vector<TypeWeight> out;
    for (const auto& [type, w] : acc) out.push_back({type, w});
    return out;
}

inline Vec weighted_sum(const RestorationBank& bank,
                        const std::vector<TypeWeight>& weights) {
    if (weights.empty()) throw ContractError("weighted_sum: no spans");
    Vec s(static_cast<std::size_t>(bank.meta_dim()), 0.0);
    for (const auto& tw : weights) axpy(tw.weight, bank.row(tw.type), s);
    return s;
}

// Z = S / ||S||; refuses to divide by a vanishing norm.
inline Vec normalized_meta(const RestorationBank& bank,
                           const std::vector<TypeWeight>& weights) {
    Vec s = weighted_sum(bank, weights);
    const double norm = l2_norm(s);
    if (norm < 1e-12)
        throw ContractError("meta vector: weighted sum has vanishing norm");
    for (auto& v : s) v /= norm;
    return s;
}

// ---------------------------------------------------------------------------
// ORPO loss over one record
// ---------------------------------------------------------------------------

struct OrpoExample {
    std::vector<int> prompt;               // redacted query tokens
    std::vector<int> gold;                 // a
    std::vector<int> degraded;             // a-hat (frozen model on the redacted query)
    std::vector<TypeWeight> type_weights;  // collapsed per-type weights
};

struct OrpoResult {
    double loss = 0.0;
    double logp_gold = 0.0;
    double logp_degraded = 0.0;
    bool clamped = false;  // a sequence probability hit the numeric clamp
    std::map<int, Vec> grads;  // type id -> d loss / d row (only present types)
};

namespace detail {

// Gradient of coeff * (mean log prob of answer) wrt the logits, i.e.
// coeff * (onehot - softmax) / |answer| at the answer positions.
inline void answer_dlogits(const Activations& acts, std::size_t prompt_len,
                           const std::vector<int>& answer, int vocab, double coeff,
                           Vec& dlogits) {
    dlogits.assign(acts.logits.size(), 0.0);
    const double scale = coeff / static_cast<double>(answer.size());
    for (std::size_t i = 0; i < answer.size(); ++i) {
        const std::size_t pos = prompt_len - 1 + i;
        Vec p = softmax({&acts.logits[pos * static_cast<std::size_t>(vocab)],
                         static_cast<std::size_t>(vocab)});
        for (int t = 0; t < vocab; ++t)
            dlogits[pos * static_cast<std::size_t>(vocab) + static_cast<std::size_t>(t)] =
                -p[static_cast<std::size_t>(t)] * scale;
        dlogits[pos * static_cast<std::size_t>(vocab) +
                static_cast<std::size_t>(answer[i])] += scale;
    }
}

inline double mean_logprob_from_acts(const Activations& acts, std::size_t prompt_len,
                                     const std::vector<int>& answer, int vocab) {
    double total = 0.0;
    for (std::size_t i = 0; i < answer.size(); ++i) {
        const std::size_t pos = prompt_len - 1 + i;
        Vec lsm = log_softmax({&acts.logits[pos * static_cast<std::size_t>(vocab)],
                               static_cast<std::size_t>(vocab)});
        total += lsm[static_cast<std::size_t>(answer[i])];
    }
    return total / static_cast<double>(answer.size());
}

}  // namespace detail

// loss = -log P(a | q; Theta) - lambda * log sigmoid(log ratio_a - log ratio_b)
// with ratio(x) = P(x) / (1 - P(x)) and P the exp of the length-normalized
// sequence log-probability under steering by the record's noise-free meta
// direction. `length_normalized = false` switches to raw sequence sums.
inline OrpoResult orpo_loss(const Params& params, const RestorationBank& bank,
                            const OrpoExample& ex, double lambda,
                            bool length_normalized = true) {
    if (lambda < 0.0) throw ConfigError("orpo_loss: lambda must be >= 0");
    if (ex.type_weights.empty()) throw ContractError("orpo_loss: record has no spans");
    if (ex.gold.empty() || ex.degraded.empty())
        throw ContractError("orpo_loss: answers must be non-empty");
    if (ex.gold == ex.degraded)
        throw ContractError("orpo_loss: degraded answer equals gold answer");
    if (params.cfg.d_head() != bank.d_head)
        throw ContractError("orpo_loss: bank d_head does not match model");

    const auto weights = collapse_weights(ex.type_weights);
    Vec s = weighted_sum(bank, weights);
    const double norm = l2_norm(s);
    if (norm < 1e-12)
        throw ContractError("orpo_loss: weighted sum has vanishing norm");
    Vec z(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) z[i] = s[i] / norm;

    SteeringPlan plan = plan_from_meta(bank.heads, z, bank.d_head,
                                       static_cast<int>(ex.prompt.size()) - 1);

    const int V = params.cfg.vocab_size;
    auto run = [&](const std::vector<int>& answer, detail::Activations& acts) {
        std::vector<int> seq = ex.prompt;
        seq.insert(seq.end(), answer.begin(), answer.end());
        forward(params, seq, &plan, &acts, nullptr, false);
        double lp = detail::mean_logprob_from_acts(acts, ex.prompt.size(), answer, V);
        if (!length_normalized) lp *= static_cast<double>(answer.size());
        return lp;
    };

    detail::Activations acts_gold, acts_deg;
    const double lp_a = run(ex.gold, acts_gold);
    const double lp_b = run(ex.degraded, acts_deg);

    OrpoResult out;
    out.logp_gold = lp_a;
    out.logp_degraded = lp_b;

    auto clamp_p = [&](double lp) {
        double p = std::exp(lp);
        if (p < 1e-12 || p > 1.0 - 1e-12) {
            out.clamped = true;
            p = std::clamp(p, 1e-12, 1.0 - 1e-12);
        }
        return p;
    };
    const double p_a = clamp_p(lp_a);
    const double p_b = clamp_p(lp_b);

    const double g = std::log(p_a / (1.0 - p_a)) - std::log(p_b / (1.0 - p_b));
    const double sig = 1.0 / (1.0 + std::exp(-g));
    out.loss = -lp_a - lambda * std::log(sig);

    // Outer derivatives wrt the two sequence log-probabilities.
    const double coeff_a = -1.0 - lambda * (1.0 - sig) / (1.0 - p_a);
    const double coeff_b = lambda * (1.0 - sig) / (1.0 - p_b);

    // Backprop both sequences into the shared steering direction Z.
    SteeringGrads sgrads;
    Vec dlogits;
    const double len_a = length_normalized ? 1.0 : static_cast<double>(ex.gold.size());
    const double len_b =
        length_normalized ? 1.0 : static_cast<double>(ex.degraded.size());
    detail::answer_dlogits(acts_gold, ex.prompt.size(), ex.gold, V, coeff_a * len_a,
                           dlogits);
    backward(params, acts_gold, &plan, dlogits, nullptr, &sgrads);
    detail::answer_dlogits(acts_deg, ex.prompt.size(), ex.degraded, V, coeff_b * len_b,
                           dlogits);
    backward(params, acts_deg, &plan, dlogits, nullptr, &sgrads);

    Vec dz(static_cast<std::size_t>(bank.meta_dim()), 0.0);
    for (std::size_t h = 0; h < sgrads.vectors.size(); ++h)
        std::copy(sgrads.vectors[h].begin(), sgrads.vectors[h].end(),
                  dz.begin() + static_cast<std::ptrdiff_t>(h) * bank.d_head);

    // Chain through Z = S / ||S||: dS = (dZ - Z (Z . dZ)) / ||S||.
    const double zdotdz = dot(z, dz);
    Vec ds(dz.size());
    for (std::size_t i = 0; i < dz.size(); ++i)
        ds[i] = (dz[i] - z[i] * zdotdz) / norm;

    for (const auto& tw : weights) {
        Vec grad(ds.size());
        for (std::size_t i = 0; i < ds.size(); ++i) grad[i] = tw.weight * ds[i];
        out.grads.emplace(tw.type, std::move(grad));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Restoration-vector training (momentum SGD over bank rows)
// ---------------------------------------------------------------------------

struct OrpoConfig {
    double lambda = 0.1;
    double learning_rate = 0.05;
    double momentum = 0.9;
    int epochs = 4;
    int batch_size = 8;
    std::uint64_t seed = 0;
    bool length_normalized = true;
};

struct OrpoHistory {
    std::vector<double> epoch_loss;
    std::vector<double> dev_loss;
    long clamped_records = 0;
};

inline OrpoHistory train_restoration(const Params& params, RestorationBank& bank,
                                     const std::vector<OrpoExample>& train_examples,
                                     const std::vector<OrpoExample>& dev_examples,
                                     const OrpoConfig& cfg) {
    if (cfg.lambda < 0.0) throw ConfigError("train_restoration: lambda must be >= 0");
    OrpoHistory hist;

    auto mean_dev_loss = [&]() {
        if (dev_examples.empty()) return 0.0;
        double total = 0.0;
        for (const auto& ex : dev_examples)
            total += orpo_loss(params, bank, ex, cfg.lambda, cfg.length_normalized).loss;
        return total / static_cast<double>(dev_examples.size());
    };

    std::vector<Vec> velocity(bank.rows.size(),
                              Vec(static_cast<std::size_t>(bank.meta_dim()), 0.0));
    std::vector<std::size_t> order(train_examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto rng = rng_stream(cfg.seed, "train/orpo");

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(
                order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::map<int, Vec> batch_grads;
            for (std::size_t b = start; b < stop; ++b) {
                auto res = orpo_loss(params, bank, train_examples[order[b]], cfg.lambda,
                                     cfg.length_normalized);
                if (!std::isfinite(res.loss))
                    throw ContractError("train_restoration: loss diverged (non-finite)");
                if (res.clamped) ++hist.clamped_records;
                epoch_loss += res.loss;
                for (auto& [type, grad] : res.grads) {
                    auto [it, fresh] = batch_grads.emplace(type, grad);
                    if (!fresh) axpy(1.0, grad, it->second);
                }
            }
            const double scale = 1.0 / static_cast<double>(stop - start);
            for (auto& [type, grad] : batch_grads) {
                Vec& vel = velocity[static_cast<std::size_t>(type)];
                Vec& row = bank.rows[static_cast<std::size_t>(type)];
                for (std::size_t i = 0; i < grad.size(); ++i) {
                    vel[i] = cfg.momentum * vel[i] + grad[i] * scale;
                    row[i] -= cfg.learning_rate * vel[i];
                }
            }
        }
        hist.epoch_loss.push_back(epoch_loss /
                                  static_cast<double>(train_examples.size()));
        hist.dev_loss.push_back(mean_dev_loss());
    }
    return hist;
}

// ---------------------------------------------------------------------------
// Bank serialization: magic, version, K, d_head, |C|, canonical head list,
// head-set hash, config hash, then per type a row of little-endian f32.
// ---------------------------------------------------------------------------

inline constexpr char kBankMagic[4] = {'P', 'R', 'B', 'K'};
inline constexpr std::uint32_t kBankVersion = 1;

inline void save_bank(const std::string& path, const RestorationBank& bank,
                      std::uint64_t config_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open bank file for writing: " + path);
    out.write(kBankMagic, 4);
    detail::write_pod(out, kBankVersion);
    detail::write_pod(out, static_cast<std::uint32_t>(bank.k()));
    detail::write_pod(out, static_cast<std::uint32_t>(bank.d_head));
    detail::write_pod(out, static_cast<std::uint32_t>(bank.n_types()));
    for (const auto& h : bank.heads) {
        detail::write_pod(out, static_cast<std::uint32_t>(h.layer));
        detail::write_pod(out, static_cast<std::uint32_t>(h.head));
    }
    detail::write_pod(out, bank.head_hash());
    detail::write_pod(out, config_hash);
    for (const auto& row : bank.rows)
        for (double v : row) {
            const float f = static_cast<float>(v);
            detail::write_pod(out, f);
        }
    if (!out) throw ConfigError("bank write failed: " + path);
}

struct LoadedBank {
    RestorationBank bank;
    std::uint64_t config_hash = 0;
};

inline LoadedBank load_bank(const std::string& path,
                            std::optional<int> expected_d_head = std::nullopt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open bank file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kBankMagic, 4) != 0)
        throw ContractError("bad bank magic: " + path);
    std::uint32_t version;
    detail::read_pod(in, version);
    if (version != kBankVersion) throw ContractError("unsupported bank version");

    LoadedBank out;
    RestorationBank& bank = out.bank;
    bank.version = version;
    std::uint32_t k, d_head, n_types;
    detail::read_pod(in, k);
    detail::read_pod(in, d_head);
    detail::read_pod(in, n_types);
    bank.d_head = static_cast<int>(d_head);
    for (std::uint32_t i = 0; i < k; ++i) {
        std::uint32_t layer, head;
        detail::read_pod(in, layer);
        detail::read_pod(in, head);
        bank.heads.push_back({static_cast<int>(layer), static_cast<int>(head)});
    }
    std::uint64_t stored_hash;
    detail::read_pod(in, stored_hash);
    if (stored_hash != bank.head_hash())
        throw ContractError("bank head-set hash mismatch (client/server drift)");
    detail::read_pod(in, out.config_hash);
    if (expected_d_head && *expected_d_head != bank.d_head)
        throw ContractError("bank d_head does not match model geometry");

    bank.rows.assign(n_types, Vec(static_cast<std::size_t>(k) * d_head, 0.0));
    for (auto& row : bank.rows)
        for (auto& v : row) {
            float f;
            detail::read_pod(in, f);
            v = static_cast<double>(f);
        }
    return out;
}

}  // namespace privres

#endif  // PRIVRES_RESTORATION_HPP
