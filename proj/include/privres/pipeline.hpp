#ifndef PRIVRES_PIPELINE_HPP
#define PRIVRES_PIPELINE_HPP

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "privres/attacks.hpp"
#include "privres/client.hpp"
#include "privres/corpus.hpp"
#include "privres/headselect.hpp"
#include "privres/metrics.hpp"
#include "privres/model.hpp"
#include "privres/privacy.hpp"
#include "privres/probes.hpp"
#include "privres/restoration.hpp"
#include "privres/train.hpp"

namespace privres {

// ---------------------------------------------------------------------------
// Pipeline configuration
// ---------------------------------------------------------------------------

struct PipelineConfig {
    // corpus
    std::uint64_t corpus_seed = 42;
    int n_records = 5000;
    int n_types = 16;
    double zipf_exponent = 1.1;
    double f_train = 0.8, f_dev = 0.1, f_test = 0.1;
    std::uint64_t split_seed = 7;

    // server model
    int n_layers = 2;
    int n_heads = 4;
    int d_model = 32;
    int max_seq_len = 64;
    std::uint64_t model_seed = 1;
    int pretrain_epochs = 12;
    int pretrain_batch = 16;
    double pretrain_lr = 3e-3;

    // client encoder (lightweight model)
    int encoder_layers = 1;
    int encoder_heads = 4;
    int encoder_d_model = 32;
    std::uint64_t encoder_seed = 2;
    int encoder_epochs = 6;

    // probes and head selection
    std::uint64_t probe_seed = 3;
    int probe_epochs = 300;
    int k_heads = 4;

    // restoration training
    double lambda = 0.1;
    double orpo_lr = 0.05;
    int orpo_epochs = 10;
    int orpo_batch = 8;
    std::uint64_t orpo_seed = 4;
    std::uint64_t bank_seed = 5;

    // inference
    double epsilon = 75.0;
    double temperature = 1.0;
    int max_answer_tokens = 4;

    // attack-sweep harness constants: the meta arm runs in the
    // noise-dominated regime, the word-level arm at a fixed per-token epsilon
    // whose total budget grows with the protected length.
    double alpha_sweep_meta_epsilon = 10.0;
    double alpha_sweep_token_epsilon = 25.0;

    std::uint64_t hash() const {
        std::ostringstream os;
        os << corpus_seed << '|' << n_records << '|' << n_types << '|' << zipf_exponent
           << '|' << f_train << '|' << f_dev << '|' << f_test << '|' << split_seed << '|'
           << n_layers << '|' << n_heads << '|' << d_model << '|' << max_seq_len << '|'
           << model_seed << '|' << pretrain_epochs << '|' << pretrain_batch << '|'
           << pretrain_lr << '|' << encoder_layers << '|' << encoder_heads << '|'
           << encoder_d_model << '|' << encoder_seed << '|' << encoder_epochs << '|'
           << probe_seed << '|' << probe_epochs << '|' << k_heads << '|' << lambda << '|'
           << orpo_lr << '|' << orpo_epochs << '|' << orpo_batch << '|' << orpo_seed
           << '|' << bank_seed << '|' << epsilon << '|' << temperature << '|'
           << max_answer_tokens << '|' << alpha_sweep_meta_epsilon << '|'
           << alpha_sweep_token_epsilon;
        return fnv1a(os.str());
    }
    std::string hash_hex() const { return to_hex(hash()); }
};

// ---------------------------------------------------------------------------
// Sequence builders
// ---------------------------------------------------------------------------

inline std::vector<int> encode_prompt(const Vocabulary& vocab,
                                      const std::vector<std::string>& tokens) {
    return vocab.encode(tokens);
}

inline std::vector<int> training_sequence(const Vocabulary& vocab, const QueryRecord& rec) {
    std::vector<int> seq = vocab.encode(rec.complete_query);
    const std::vector<int> ans = vocab.encode(rec.gold_answer);
    seq.insert(seq.end(), ans.begin(), ans.end());
    seq.push_back(Vocabulary::kEos);
    return seq;
}

// ---------------------------------------------------------------------------
// Stage: pretraining (server model and the lightweight client encoder)
// ---------------------------------------------------------------------------

inline ModelConfig server_model_config(const PipelineConfig& cfg, int vocab_size) {
    ModelConfig mc;
    mc.n_layers = cfg.n_layers;
    mc.n_heads = cfg.n_heads;
    mc.d_model = cfg.d_model;
    mc.vocab_size = vocab_size;
    mc.max_seq_len = cfg.max_seq_len;
    mc.seed = cfg.model_seed;
    return mc;
}

inline ModelConfig encoder_model_config(const PipelineConfig& cfg, int vocab_size) {
    ModelConfig mc;
    mc.n_layers = cfg.encoder_layers;
    mc.n_heads = cfg.encoder_heads;
    mc.d_model = cfg.encoder_d_model;
    mc.vocab_size = vocab_size;
    mc.max_seq_len = cfg.max_seq_len;
    mc.seed = cfg.encoder_seed;
    mc.causal = false;  // the client scorer reads attention in both directions
    return mc;
}

// The client scorer trains to predict the record's answer token from every
// query position; its attention is then a usable importance signal for AWA.
inline TrainHistory pretrain_encoder(Params& encoder, const PipelineConfig& cfg,
                                     const Vocabulary& vocab,
                                     const std::vector<QueryRecord>& train) {
    std::vector<std::vector<int>> queries;
    std::vector<int> labels;
    for (const auto& r : train) {
        queries.push_back(vocab.encode(r.complete_query));
        labels.push_back(vocab.id(r.gold_answer.front()));
    }
    TrainHyperparams hp;
    hp.epochs = cfg.encoder_epochs;
    hp.batch_size = cfg.pretrain_batch;
    hp.learning_rate = cfg.pretrain_lr;
    hp.seed = encoder.cfg.seed;
    return train_label_encoder(encoder, queries, labels, hp);
}

inline TrainHistory pretrain_model(Params& params, const PipelineConfig& cfg,
                                   const Vocabulary& vocab,
                                   const std::vector<QueryRecord>& train,
                                   const std::vector<QueryRecord>& dev, int epochs) {
    std::vector<std::vector<int>> train_seqs, dev_seqs;
    for (const auto& r : train) train_seqs.push_back(training_sequence(vocab, r));
    for (const auto& r : dev) dev_seqs.push_back(training_sequence(vocab, r));
    TrainHyperparams hp;
    hp.epochs = epochs;
    hp.batch_size = cfg.pretrain_batch;
    hp.learning_rate = cfg.pretrain_lr;
    hp.seed = params.cfg.seed;
    return train_base(params, train_seqs, dev_seqs, hp);
}

// ---------------------------------------------------------------------------
// Stage: degraded answers (frozen base model, greedy, on the redacted query)
// ---------------------------------------------------------------------------

inline void populate_degraded_answers(const Params& params, const Vocabulary& vocab,
                                      std::vector<QueryRecord>& records, int max_tokens) {
    std::mt19937_64 rng(0);  // greedy path ignores it
    for (auto& rec : records) {
        const std::vector<int> prompt = vocab.encode(rec.redacted_query);
        auto res = sample(params, prompt, nullptr, 1.0, max_tokens, rng, /*greedy=*/true);
        rec.degraded_answer = vocab.decode(res.tokens);
    }
}

// ---------------------------------------------------------------------------
// Stage: probes and head selection
// ---------------------------------------------------------------------------

struct ProbeReport {
    double train_fraction = 0.8;
    std::vector<Probe> probes;  // all (head, type) pairs
};

inline ProbeReport run_probe_stage(const Params& params, const Vocabulary& vocab,
                                   const std::vector<QueryRecord>& train,
                                   const PipelineConfig& cfg) {
    StateDataset ds = collect_states(params, train, vocab, cfg.n_types);
    ProbeHyperparams hp;
    hp.epochs = cfg.probe_epochs;
    hp.seed = cfg.probe_seed;
    ProbeReport report;
    report.train_fraction = hp.train_fraction;
    for (int type = 0; type < cfg.n_types; ++type) {
        auto probes = train_probes_for_type(ds, type, hp);
        report.probes.insert(report.probes.end(), probes.begin(), probes.end());
    }
    return report;
}

inline CommonHeadSet select_heads_from_report(const ProbeReport& report,
                                              const std::vector<HeadId>& all_heads,
                                              int n_types, int k) {
    std::vector<TopKHeads> per_type;
    for (int type = 0; type < n_types; ++type) {
        std::vector<Probe> type_probes;
        for (const auto& p : report.probes)
            if (p.span_type == type) type_probes.push_back(p);
        per_type.push_back(rank_heads(type_probes, k));
    }
    return select_common_topk(per_type, all_heads, k);
}

// ---------------------------------------------------------------------------
// Stage: restoration training
// ---------------------------------------------------------------------------

// Per-span type weights for one record. AWA reads the lightweight model's
// last-layer attention over the complete query (client side); EWA weights
// every span equally.
inline std::vector<TypeWeight> record_type_weights(const QueryRecord& rec,
                                                   const Params& encoder,
                                                   const Vocabulary& vocab,
                                                   AggregationMode mode) {
    std::vector<TypeWeight> out;
    if (rec.spans.empty()) return out;
    if (mode == AggregationMode::EWA) {
        for (const auto& s : rec.spans) out.push_back({s.type_id, 1.0});
        return out;
    }
    const std::vector<int> ids = vocab.encode(rec.complete_query);
    AttentionMatrix attn = encoder_attention(encoder, ids);
    Vec w = awa_weights(static_cast<int>(ids.size()), rec.spans, attn);
    for (std::size_t i = 0; i < rec.spans.size(); ++i)
        out.push_back({rec.spans[i].type_id, w[i]});
    return out;
}

// Builds the ORPO training set: records with spans, a populated degraded
// answer distinct from the gold answer, and the mode's span weights.
inline std::vector<OrpoExample> build_orpo_examples(const std::vector<QueryRecord>& records,
                                                    const Params& encoder,
                                                    const Vocabulary& vocab,
                                                    AggregationMode mode,
                                                    long* skipped = nullptr) {
    std::vector<OrpoExample> out;
    long skip = 0;
    for (const auto& rec : records) {
        if (rec.spans.empty() || rec.degraded_answer.empty() ||
            rec.degraded_answer == rec.gold_answer) {
            ++skip;
            continue;
        }
        OrpoExample ex;
        ex.prompt = vocab.encode(rec.redacted_query);
        ex.gold = vocab.encode(rec.gold_answer);
        ex.degraded = vocab.encode(rec.degraded_answer);
        ex.type_weights = record_type_weights(rec, encoder, vocab, mode);
        out.push_back(std::move(ex));
    }
    if (skipped) *skipped = skip;
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation harness
// ---------------------------------------------------------------------------

enum class Method { NoProtection, NoRestoration, Restored };

// Builds MC evaluation cases for a method. Restored steers with R = Z + noise
// at the configured epsilon; records without spans fall back to the plain
// redacted prompt (nothing to restore).
inline std::vector<EvalCase> build_eval_cases(const std::vector<QueryRecord>& records,
                                              const Vocabulary& vocab, Method method,
                                              const RestorationBank* bank,
                                              const Params* encoder, AggregationMode mode,
                                              double epsilon, std::uint64_t noise_seed) {
    std::vector<EvalCase> out;
    out.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const QueryRecord& rec = records[i];
        EvalCase c;
        c.correct = rec.correct_option;
        for (int o = 0; o < 4; ++o)
            c.options[static_cast<std::size_t>(o)] =
                vocab.encode(rec.options[static_cast<std::size_t>(o)]);
        if (method == Method::NoProtection) {
            c.prompt = vocab.encode(rec.complete_query);
        } else {
            c.prompt = vocab.encode(rec.redacted_query);
            if (method == Method::Restored && !rec.spans.empty()) {
                auto weights = record_type_weights(rec, *encoder, vocab, mode);
                NoiseParams np{epsilon, bank->meta_dim()};
                auto rng = rng_stream(noise_seed, "eval/noise", i);
                MetaVector meta = build_meta_vector(*bank, weights, np, rng, mode);
                c.plan = plan_from_meta(bank->heads, meta.values, bank->d_head,
                                        static_cast<int>(c.prompt.size()) - 1);
            }
        }
        out.push_back(std::move(c));
    }
    return out;
}

struct EvalReport {
    std::string method;
    double mc1 = 0.0;
    double mc2 = 0.0;
    double rouge_l = 0.0;
    double occurrence = 0.0;
};

// Surface forms of every span type that actually occurs in `records`; the
// registry is not needed because form tokens sit verbatim in the complete
// queries.
inline std::vector<std::vector<std::string>> protected_surface_forms(
    const std::vector<QueryRecord>& records) {
    std::set<std::vector<std::string>> forms;
    for (const auto& rec : records)
        for (const auto& s : rec.spans) {
            std::vector<std::string> form(
                rec.complete_query.begin() + s.start,
                rec.complete_query.begin() + s.start + s.len);
            forms.insert(std::move(form));
        }
    return {forms.begin(), forms.end()};
}

// Sampled generation comparison: reference outputs come from the unprotected
// greedy run; occurrence counts protected surface forms in the method's
// sampled outputs.
inline EvalReport run_generation_eval(const Params& params, const Vocabulary& vocab,
                                      const std::vector<QueryRecord>& records,
                                      Method method, const RestorationBank* bank,
                                      const Params* encoder, AggregationMode mode,
                                      double epsilon, double temperature,
                                      std::uint64_t seed, int max_tokens) {
    EvalReport rep;
    rep.method = method == Method::NoProtection ? "no_protection"
                 : method == Method::NoRestoration ? "no_restoration"
                                                   : "restored";
    double rouge_total = 0.0;
    std::vector<std::vector<std::string>> outputs;
    std::mt19937_64 greedy_rng(0);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const QueryRecord& rec = records[i];
        const std::vector<int> ref_prompt = vocab.encode(rec.complete_query);
        auto reference =
            sample(params, ref_prompt, nullptr, 1.0, max_tokens, greedy_rng, true);

        std::vector<int> prompt;
        std::optional<SteeringPlan> plan;
        if (method == Method::NoProtection) {
            prompt = ref_prompt;
        } else {
            prompt = vocab.encode(rec.redacted_query);
            if (method == Method::Restored && !rec.spans.empty()) {
                auto weights = record_type_weights(rec, *encoder, vocab, mode);
                NoiseParams np{epsilon, bank->meta_dim()};
                auto nrng = rng_stream(seed, "gen/noise", i);
                MetaVector meta = build_meta_vector(*bank, weights, np, nrng, mode);
                plan = plan_from_meta(bank->heads, meta.values, bank->d_head,
                                      static_cast<int>(prompt.size()) - 1);
            }
        }
        auto srng = rng_stream(seed, "gen/sample", i);
        auto hyp = sample(params, prompt, plan ? &*plan : nullptr, temperature,
                          max_tokens, srng);
        rouge_total += rouge_l(reference.tokens, hyp.tokens);
        outputs.push_back(vocab.decode(hyp.tokens));
    }
    rep.rouge_l = rouge_total / static_cast<double>(records.size());
    rep.occurrence = occurrence_rate(outputs, protected_surface_forms(records));
    return rep;
}

// ---------------------------------------------------------------------------
// Attack datasets
// ---------------------------------------------------------------------------

struct MetaAttackDataset {
    std::vector<Vec> features;                 // noised meta vectors
    std::vector<std::vector<char>> labels;     // protected types per record
    std::vector<std::vector<std::string>> span_texts;  // protected span text
};

// Selects ceil(alpha * m) spans per record (seeded), aggregates them into a
// noised meta vector and labels the sample with the protected types.
inline MetaAttackDataset build_meta_attack_dataset(
    const std::vector<QueryRecord>& records, const RestorationBank& bank,
    const Params& encoder, const Vocabulary& vocab, AggregationMode mode,
    double epsilon, double alpha, std::uint64_t seed, int n_types) {
    MetaAttackDataset ds;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const QueryRecord& rec = records[i];
        if (rec.spans.empty()) continue;
        auto rng = rng_stream(seed, "attack/select", i);
        std::vector<std::size_t> order(rec.spans.size());
        for (std::size_t s = 0; s < order.size(); ++s) order[s] = s;
        std::shuffle(order.begin(), order.end(), rng);
        const std::size_t keep = std::max<std::size_t>(
            1, static_cast<std::size_t>(
                   std::ceil(alpha * static_cast<double>(rec.spans.size()))));
        order.resize(std::min(keep, order.size()));

        std::vector<SpanRef> chosen;
        for (std::size_t s : order) chosen.push_back(rec.spans[s]);
        std::sort(chosen.begin(), chosen.end(),
                  [](const SpanRef& a, const SpanRef& b) { return a.start < b.start; });

        auto all_weights = record_type_weights(rec, encoder, vocab, mode);
        std::vector<TypeWeight> weights;
        for (std::size_t s = 0; s < rec.spans.size(); ++s)
            for (const auto& c : chosen)
                if (rec.spans[s].start == c.start) weights.push_back(all_weights[s]);

        NoiseParams np{epsilon, bank.meta_dim()};
        auto nrng = rng_stream(seed, "attack/noise", i);
        MetaVector meta = build_meta_vector(bank, weights, np, nrng, mode);

        std::vector<char> label(static_cast<std::size_t>(n_types), 0);
        std::vector<std::string> text;
        for (const auto& c : chosen) {
            label[static_cast<std::size_t>(c.type_id)] = 1;
            for (int t = c.start; t < c.start + c.len; ++t)
                text.push_back(rec.complete_query[static_cast<std::size_t>(t)]);
        }
        ds.features.push_back(std::move(meta.values));
        ds.labels.push_back(std::move(label));
        ds.span_texts.push_back(std::move(text));
    }
    return ds;
}

struct TextAttackDataset {
    std::vector<Vec> features;              // bag of garbled protected tokens
    std::vector<std::vector<char>> labels;  // span types present
};

// Word-level d_chi arm: garble ceil(alpha * |s|) tokens of every span at a
// fixed per-token epsilon and expose only the garbled tokens (the plaintext
// remainder is shared with every method and carries no mechanism signal).
inline TextAttackDataset build_dchi_attack_dataset(
    const std::vector<QueryRecord>& records, const Mat& embeddings,
    const Vocabulary& vocab, double epsilon_token, double alpha, std::uint64_t seed,
    int n_types) {
    TextAttackDataset ds;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const QueryRecord& rec = records[i];
        if (rec.spans.empty()) continue;
        const std::vector<int> ids = vocab.encode(rec.complete_query);
        auto rng = rng_stream(seed, "attack/dchi", i);

        std::vector<int> positions;
        std::vector<char> label(static_cast<std::size_t>(n_types), 0);
        for (const auto& s : rec.spans) {
            label[static_cast<std::size_t>(s.type_id)] = 1;
            std::vector<int> span_pos;
            for (int t = s.start; t < s.start + s.len; ++t) span_pos.push_back(t);
            std::shuffle(span_pos.begin(), span_pos.end(), rng);
            const std::size_t keep = std::max<std::size_t>(
                1, static_cast<std::size_t>(
                       std::ceil(alpha * static_cast<double>(span_pos.size()))));
            span_pos.resize(std::min(keep, span_pos.size()));
            positions.insert(positions.end(), span_pos.begin(), span_pos.end());
        }
        std::sort(positions.begin(), positions.end());
        auto garbled = dchi_garble_tokens(ids, positions, embeddings, epsilon_token, rng);

        Vec bow(static_cast<std::size_t>(vocab.size()), 0.0);
        for (int pos : positions)
            bow[static_cast<std::size_t>(garbled[static_cast<std::size_t>(pos)])] += 1.0;
        ds.features.push_back(std::move(bow));
        ds.labels.push_back(std::move(label));
    }
    return ds;
}

}  // namespace privres

#endif  // PRIVRES_PIPELINE_HPP
