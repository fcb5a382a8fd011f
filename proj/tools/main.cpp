// privres: span-redaction inference pipeline.
//
// Stage-file pipeline: every subcommand reads its declared inputs, writes its
// declared outputs and nothing else. Exit codes: 0 ok, 2 config error,
// 3 contract violation, 4 transport error.
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "privres/corpus_io.hpp"
#include "privres/pipeline.hpp"
#include "privres/server.hpp"

using namespace privres;
using nlohmann::json;

namespace {

Server* g_server = nullptr;

void handle_signal(int) {
    if (g_server) g_server->stop();
}

struct SplitChoice {
    std::string name = "dev";
    const std::vector<QueryRecord>& pick(const SplitResult& splits) const {
        if (name == "train") return splits.train;
        if (name == "dev") return splits.dev;
        if (name == "test") return splits.test;
        throw ConfigError("unknown split: " + name);
    }
};

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open output file: " + path);
    out << j.dump(2) << "\n";
}

json budget_report_json(const BudgetReport& rep) {
    return json{{"method", rep.method},
                {"inputs", rep.inputs},
                {"formula", rep.formula},
                {"budget", rep.budget}};
}

struct StageIo {
    PipelineConfig cfg;
    std::string corpus_path, registry_path;

    Corpus load_corpus() const {
        Corpus corpus;
        corpus.registry = read_registry(registry_path);
        corpus.records = read_corpus_jsonl(corpus_path);
        return corpus;
    }
};

std::vector<HeadId> heads_of(const ModelConfig& cfg) {
    std::vector<HeadId> out;
    for (int l = 0; l < cfg.n_layers; ++l)
        for (int h = 0; h < cfg.n_heads; ++h) out.push_back({l, h});
    return out;
}

AggregationMode mode_of(const std::string& name) {
    if (name == "awa") return AggregationMode::AWA;
    if (name == "ewa") return AggregationMode::EWA;
    throw ConfigError("unknown aggregation mode: " + name);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"privres: redacted-query inference with server-side restoration"};
    app.require_subcommand(1);
    app.fallthrough();  // shared knobs may follow the subcommand name

    PipelineConfig cfg;
    StageIo io;

    // Shared knobs; every stage revalidates what it actually uses.
    app.add_option("--corpus-seed", cfg.corpus_seed, "corpus generation seed");
    app.add_option("--records", cfg.n_records, "number of corpus records");
    app.add_option("--types", cfg.n_types, "number of span types");
    app.add_option("--zipf", cfg.zipf_exponent, "span-type Zipf exponent");
    app.add_option("--split-seed", cfg.split_seed, "train/dev/test split seed");
    app.add_option("--k", cfg.k_heads, "edited head count K");
    app.add_option("--epsilon", cfg.epsilon, "privacy hyperparameter");
    app.add_option("--lambda", cfg.lambda, "preference term weight");
    app.add_option("--temperature", cfg.temperature, "sampling temperature");
    app.add_option("--pretrain-epochs", cfg.pretrain_epochs, "base-model epochs");
    app.add_option("--encoder-epochs", cfg.encoder_epochs, "client scorer epochs");
    app.add_option("--orpo-epochs", cfg.orpo_epochs, "restoration training epochs");
    app.add_option("--model-layers", cfg.n_layers, "server model layers");
    app.add_option("--model-heads", cfg.n_heads, "server model heads per layer");
    app.add_option("--model-dim", cfg.d_model, "server model width");

    // gen-data ---------------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
    std::string out_corpus = "corpus.jsonl", out_registry = "registry.json";
    gen->add_option("--out-corpus", out_corpus, "corpus JSONL path");
    gen->add_option("--out-registry", out_registry, "registry JSON path");

    // pretrain ---------------------------------------------------------------
    auto* pre = app.add_subcommand("pretrain", "train the frozen base model and client scorer");
    std::string in_corpus = "corpus.jsonl", in_registry = "registry.json";
    std::string out_ckpt = "model.ckpt", out_client = "client.ckpt";
    pre->add_option("--corpus", in_corpus, "corpus JSONL");
    pre->add_option("--registry", in_registry, "registry JSON");
    pre->add_option("--out-checkpoint", out_ckpt, "server model checkpoint");
    pre->add_option("--out-client", out_client, "client scorer checkpoint");

    // probe ------------------------------------------------------------------
    auto* probe_cmd = app.add_subcommand("probe", "train per-(head, type) probes");
    std::string in_ckpt = "model.ckpt", out_report = "probes.json";
    probe_cmd->add_option("--corpus", in_corpus, "corpus JSONL");
    probe_cmd->add_option("--registry", in_registry, "registry JSON");
    probe_cmd->add_option("--checkpoint", in_ckpt, "server model checkpoint");
    probe_cmd->add_option("--out-report", out_report, "probe report JSON");

    // select-heads -----------------------------------------------------------
    auto* sel = app.add_subcommand("select-heads", "build the common top-K head set");
    std::string in_report = "probes.json", out_headset = "headset.json";
    sel->add_option("--report", in_report, "probe report JSON");
    sel->add_option("--out-headset", out_headset, "head-set JSON");

    // train-restore ----------------------------------------------------------
    auto* restore = app.add_subcommand("train-restore", "train restoration vectors");
    std::string in_headset = "headset.json", in_client = "client.ckpt";
    std::string out_bank = "bank.bin", out_history;
    std::string agg_mode = "awa";
    restore->add_option("--corpus", in_corpus, "corpus JSONL");
    restore->add_option("--registry", in_registry, "registry JSON");
    restore->add_option("--checkpoint", in_ckpt, "server model checkpoint");
    restore->add_option("--client", in_client, "client scorer checkpoint");
    restore->add_option("--headset", in_headset, "head-set JSON");
    restore->add_option("--out-bank", out_bank, "restoration bank path");
    restore->add_option("--out-history", out_history, "training history JSON");
    restore->add_option("--mode", agg_mode, "awa|ewa aggregation during training");

    // serve ------------------------------------------------------------------
    auto* serve_cmd = app.add_subcommand("serve", "run the inference server");
    std::string bind_addr = "127.0.0.1";
    int port = 7161;
    std::string in_bank = "bank.bin";
    std::uint64_t server_seed = 0;
    serve_cmd->add_option("--bind", bind_addr, "bind address");
    serve_cmd->add_option("--port", port, "TCP port (0 picks a free one)");
    serve_cmd->add_option("--checkpoint", in_ckpt, "server model checkpoint");
    serve_cmd->add_option("--registry", in_registry, "registry JSON");
    serve_cmd->add_option("--headset", in_headset, "head-set JSON");
    serve_cmd->add_option("--seed", server_seed, "server sampling seed");

    // query ------------------------------------------------------------------
    auto* query_cmd = app.add_subcommand("query", "client-side query submission");
    std::string endpoint = "127.0.0.1:7161", query_text;
    std::uint64_t client_seed = 0;
    int max_tokens = 16;
    query_cmd->add_option("--endpoint", endpoint, "host:port");
    query_cmd->add_option("--registry", in_registry, "registry JSON");
    query_cmd->add_option("--bank", in_bank, "restoration bank (released by the server)");
    query_cmd->add_option("--client", in_client, "client scorer checkpoint");
    query_cmd->add_option("--query", query_text,
                          "query text; spans wrapped as [[...]] or [[<type-id>:...]]")
        ->required();
    query_cmd->add_option("--seed", client_seed, "client sampling seed");
    query_cmd->add_option("--max-tokens", max_tokens, "generation cap");
    query_cmd->add_option("--mode", agg_mode, "awa|ewa aggregation");

    // eval -------------------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "task metrics per method");
    SplitChoice eval_split;
    std::string out_eval = "eval.json";
    std::uint64_t eval_seed = 11;
    eval_cmd->add_option("--corpus", in_corpus, "corpus JSONL");
    eval_cmd->add_option("--registry", in_registry, "registry JSON");
    eval_cmd->add_option("--checkpoint", in_ckpt, "server model checkpoint");
    eval_cmd->add_option("--client", in_client, "client scorer checkpoint");
    eval_cmd->add_option("--bank", in_bank, "restoration bank");
    eval_cmd->add_option("--split", eval_split.name, "train|dev|test");
    eval_cmd->add_option("--seed", eval_seed, "noise/sampling seed");
    eval_cmd->add_option("--mode", agg_mode, "awa|ewa aggregation");
    eval_cmd->add_option("--out", out_eval, "report JSON path");

    // attack -----------------------------------------------------------------
    auto* attack_cmd = app.add_subcommand("attack", "attribute-inference / inversion attacks");
    std::string attack_kind = "aia";
    double attack_alpha = 1.0;
    std::string out_attack = "attack.json";
    std::uint64_t attack_seed = 17;
    attack_cmd->add_option("--kind", attack_kind, "aia|eia");
    attack_cmd->add_option("--corpus", in_corpus, "corpus JSONL");
    attack_cmd->add_option("--registry", in_registry, "registry JSON");
    attack_cmd->add_option("--client", in_client, "client scorer checkpoint");
    attack_cmd->add_option("--bank", in_bank, "restoration bank");
    attack_cmd->add_option("--alpha", attack_alpha, "protected span ratio");
    attack_cmd->add_option("--seed", attack_seed, "attack seed");
    attack_cmd->add_option("--out", out_attack, "report JSON path");

    // sweep ------------------------------------------------------------------
    auto* sweep_cmd = app.add_subcommand("sweep", "epsilon or alpha attack sweeps (CSV)");
    std::string sweep_axis = "epsilon", out_sweep = "sweep.csv";
    std::uint64_t sweep_seed = 23;
    sweep_cmd->add_option("--axis", sweep_axis, "epsilon|alpha");
    sweep_cmd->add_option("--corpus", in_corpus, "corpus JSONL");
    sweep_cmd->add_option("--registry", in_registry, "registry JSON");
    sweep_cmd->add_option("--client", in_client, "client scorer checkpoint");
    sweep_cmd->add_option("--bank", in_bank, "restoration bank");
    sweep_cmd->add_option("--seed", sweep_seed, "sweep seed");
    sweep_cmd->add_option("--out", out_sweep, "CSV output path");

    // budget -----------------------------------------------------------------
    auto* budget_cmd = app.add_subcommand("budget", "privacy-budget accountant");
    std::string budget_method = "privacyrestore";
    bool budget_table_mode = false;
    std::string out_budget;
    double b_n = -1, b_nsp = -1, b_de = -1, b_eps = -1, b_tau = -1, b_T = -1, b_du = -1;
    budget_cmd->add_option("--method", budget_method,
                           "dchi_full|dchi_spans|paraphrase|privacyrestore|output_sampling");
    budget_cmd->add_flag("--table", budget_table_mode, "emit the full calibration table");
    budget_cmd->add_option("--n", b_n, "protected token count");
    budget_cmd->add_option("--n-sp", b_nsp, "protected span token count");
    budget_cmd->add_option("--d-e", b_de, "max pairwise embedding distance");
    budget_cmd->add_option("--eps", b_eps, "per-mechanism epsilon");
    budget_cmd->add_option("--tau", b_tau, "paraphrase temperature");
    budget_cmd->add_option("--T", b_T, "output sampling temperature");
    budget_cmd->add_option("--delta-u", b_du, "logit sensitivity");
    budget_cmd->add_option("--out", out_budget, "write JSON here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        const std::string config_hash = cfg.hash_hex();

        if (gen->parsed()) {
            auto corpus = generate_corpus(cfg.corpus_seed, cfg.n_records, cfg.n_types,
                                          cfg.zipf_exponent);
            write_corpus_jsonl(out_corpus, corpus.records);
            write_registry(out_registry, corpus.registry, config_hash);
            std::printf("wrote %zu records to %s (registry %s)\n", corpus.records.size(),
                        out_corpus.c_str(), out_registry.c_str());
            return 0;
        }

        if (pre->parsed()) {
            io.corpus_path = in_corpus;
            io.registry_path = in_registry;
            auto corpus = io.load_corpus();
            Vocabulary vocab = make_vocabulary(corpus.registry);
            auto splits = split(corpus.records, cfg.f_train, cfg.f_dev, cfg.f_test,
                                cfg.split_seed);
            auto params = init_params(server_model_config(cfg, vocab.size()));
            auto hist = pretrain_model(params, cfg, vocab, splits.train, splits.dev,
                                       cfg.pretrain_epochs);
            if (hist.final_heldout_ce > 0.7 * hist.initial_heldout_ce)
                std::fprintf(stderr,
                             "warning: held-out CE dropped less than 30%% (%.4f -> %.4f)\n",
                             hist.initial_heldout_ce, hist.final_heldout_ce);
            save_checkpoint(out_ckpt, params, cfg.hash());
            auto encoder = init_params(encoder_model_config(cfg, vocab.size()));
            pretrain_encoder(encoder, cfg, vocab, splits.train);
            save_checkpoint(out_client, encoder, cfg.hash());
            std::printf("heldout CE %.4f -> %.4f; wrote %s and %s\n",
                        hist.initial_heldout_ce, hist.final_heldout_ce, out_ckpt.c_str(),
                        out_client.c_str());
            return 0;
        }

        if (probe_cmd->parsed()) {
            io.corpus_path = in_corpus;
            io.registry_path = in_registry;
            auto corpus = io.load_corpus();
            Vocabulary vocab = make_vocabulary(corpus.registry);
            auto splits = split(corpus.records, cfg.f_train, cfg.f_dev, cfg.f_test,
                                cfg.split_seed);
            auto loaded = load_checkpoint(in_ckpt);
            cfg.n_types = static_cast<int>(corpus.registry.types.size());
            auto report = run_probe_stage(loaded.params, vocab, splits.train, cfg);
            json probes = json::array();
            for (const auto& p : report.probes)
                probes.push_back({{"layer", p.head.layer},
                                  {"head", p.head.head},
                                  {"type", p.span_type},
                                  {"accuracy", p.dev_accuracy}});
            write_json(out_report, json{{"config_hash", config_hash},
                                        {"probe_train_fraction", report.train_fraction},
                                        {"probes", probes}});
            std::printf("wrote %zu probes to %s\n", report.probes.size(),
                        out_report.c_str());
            return 0;
        }

        if (sel->parsed()) {
            std::ifstream in(in_report, std::ios::binary);
            if (!in) throw ConfigError("cannot open probe report: " + in_report);
            json j;
            in >> j;
            ProbeReport report;
            report.train_fraction = j.at("probe_train_fraction").get<double>();
            int max_type = -1;
            std::set<std::pair<int, int>> head_keys;
            for (const auto& p : j.at("probes")) {
                Probe probe;
                probe.head = {p.at("layer").get<int>(), p.at("head").get<int>()};
                probe.span_type = p.at("type").get<int>();
                probe.dev_accuracy = p.at("accuracy").get<double>();
                report.probes.push_back(probe);
                max_type = std::max(max_type, probe.span_type);
                head_keys.insert({probe.head.layer, probe.head.head});
            }
            std::vector<HeadId> all_heads;
            for (const auto& [l, h] : head_keys) all_heads.push_back({l, h});
            auto common = select_heads_from_report(report, all_heads, max_type + 1,
                                                   cfg.k_heads);
            // d_head comes from the server geometry flags.
            const int d_head = cfg.d_model / cfg.n_heads;
            write_headset(out_headset, common, d_head, config_hash);
            std::printf("selected %zu heads -> %s\n", common.heads.size(),
                        out_headset.c_str());
            return 0;
        }

        if (restore->parsed()) {
            io.corpus_path = in_corpus;
            io.registry_path = in_registry;
            auto corpus = io.load_corpus();
            Vocabulary vocab = make_vocabulary(corpus.registry);
            auto splits = split(corpus.records, cfg.f_train, cfg.f_dev, cfg.f_test,
                                cfg.split_seed);
            auto loaded = load_checkpoint(in_ckpt);
            auto client = load_checkpoint(in_client);
            auto headset = read_headset(in_headset);
            if (headset.d_head != loaded.params.cfg.d_head())
                throw ContractError("head-set d_head does not match the checkpoint");

            auto records = splits.train;
            populate_degraded_answers(loaded.params, vocab, records,
                                      cfg.max_answer_tokens);
            long skipped = 0;
            auto examples = build_orpo_examples(records, client.params, vocab,
                                                mode_of(agg_mode), &skipped);
            auto bank = init_bank(headset.heads,
                                  static_cast<int>(corpus.registry.types.size()),
                                  headset.d_head, cfg.bank_seed);
            OrpoConfig ocfg;
            ocfg.lambda = cfg.lambda;
            ocfg.learning_rate = cfg.orpo_lr;
            ocfg.epochs = cfg.orpo_epochs;
            ocfg.batch_size = cfg.orpo_batch;
            ocfg.seed = cfg.orpo_seed;
            auto hist = train_restoration(loaded.params, bank, examples, {}, ocfg);
            save_bank(out_bank, bank, cfg.hash());
            if (!out_history.empty())
                write_json(out_history,
                           json{{"config_hash", config_hash},
                                {"mode", agg_mode},
                                {"examples", examples.size()},
                                {"skipped", skipped},
                                {"epoch_loss", hist.epoch_loss},
                                {"clamped_records", hist.clamped_records}});
            std::printf("trained bank on %zu examples (%ld skipped), loss %.4f -> %.4f; wrote %s\n",
                        examples.size(), skipped,
                        hist.epoch_loss.empty() ? 0.0 : hist.epoch_loss.front(),
                        hist.epoch_loss.empty() ? 0.0 : hist.epoch_loss.back(),
                        out_bank.c_str());
            return 0;
        }

        if (serve_cmd->parsed()) {
            auto loaded = load_checkpoint(in_ckpt);
            auto registry = read_registry(in_registry);
            Vocabulary vocab = make_vocabulary(registry);
            auto headset = read_headset(in_headset);
            if (headset.d_head != loaded.params.cfg.d_head())
                throw ContractError("head-set d_head does not match the checkpoint");
            ServerState state;
            state.params = &loaded.params;
            state.vocab = &vocab;
            state.heads = headset.heads;
            state.d_head = headset.d_head;
            state.server_seed = server_seed;
            Server server(state, bind_addr, port);
            g_server = &server;
            std::signal(SIGINT, handle_signal);
            std::signal(SIGTERM, handle_signal);
            std::printf("serving on %s:%d\n", bind_addr.c_str(), server.port());
            std::fflush(stdout);
            server.run();
            std::printf("shutdown\n");
            return 0;
        }

        if (query_cmd->parsed()) {
            auto registry = read_registry(in_registry);
            Vocabulary vocab = make_vocabulary(registry);
            auto bank = load_bank(in_bank);
            auto client = load_checkpoint(in_client);

            auto marked = parse_span_markup(query_text);
            if (marked.spans.empty())
                throw ConfigError("query has no [[...]] privacy spans to protect");
            for (auto& s : marked.spans) {
                if (s.type_id >= 0) continue;
                std::vector<std::string> span_tokens(
                    marked.tokens.begin() + s.start,
                    marked.tokens.begin() + s.start + s.len);
                auto cls = classify_span(span_tokens, registry, vocab,
                                         client.params.embed);
                s.type_id = cls.type_id;
                if (cls.out_of_set)
                    std::fprintf(stderr, "note: span at %d classified out-of-set -> type %d\n",
                                 s.start, s.type_id);
            }

            auto attn = encoder_attention(client.params, vocab.encode(marked.tokens));
            Vec weights = awa_weights(static_cast<int>(marked.tokens.size()),
                                      marked.spans, attn);
            std::vector<TypeWeight> tw;
            for (std::size_t i = 0; i < marked.spans.size(); ++i)
                tw.push_back({marked.spans[i].type_id, weights[i]});

            NoiseParams np{cfg.epsilon, bank.bank.meta_dim()};
            auto rng = rng_stream(client_seed, "client/noise");
            MetaVector meta =
                build_meta_vector(bank.bank, tw, np, rng, mode_of(agg_mode));

            auto redacted = strip_spans(marked.tokens, marked.spans);
            GenerationParams gen;
            gen.temperature = cfg.temperature;
            gen.max_tokens = max_tokens;
            gen.client_seed = client_seed;

            const auto colon = endpoint.find(':');
            if (colon == std::string::npos)
                throw ConfigError("endpoint must be host:port");
            const std::string host = endpoint.substr(0, colon);
            const int eport = std::stoi(endpoint.substr(colon + 1));
            auto res = submit_query(host, eport, redacted, registry, meta, gen);
            std::printf("%s\n", res.text.c_str());
            return 0;
        }

        if (eval_cmd->parsed()) {
            io.corpus_path = in_corpus;
            io.registry_path = in_registry;
            auto corpus = io.load_corpus();
            Vocabulary vocab = make_vocabulary(corpus.registry);
            auto splits = split(corpus.records, cfg.f_train, cfg.f_dev, cfg.f_test,
                                cfg.split_seed);
            const auto& records = eval_split.pick(splits);
            auto loaded = load_checkpoint(in_ckpt);
            auto client = load_checkpoint(in_client);
            auto bank = load_bank(in_bank, loaded.params.cfg.d_head());

            json reports = json::array();
            for (Method method :
                 {Method::NoProtection, Method::NoRestoration, Method::Restored}) {
                auto cases = build_eval_cases(records, vocab, method, &bank.bank,
                                              &client.params, mode_of(agg_mode),
                                              cfg.epsilon, eval_seed);
                auto mc = mc1_mc2(loaded.params, cases);
                auto gen = run_generation_eval(loaded.params, vocab, records, method,
                                               &bank.bank, &client.params,
                                               mode_of(agg_mode), cfg.epsilon,
                                               cfg.temperature, eval_seed,
                                               cfg.max_answer_tokens);
                reports.push_back({{"method", gen.method},
                                   {"mc1", mc.mc1},
                                   {"mc2", mc.mc2},
                                   {"rouge_l", gen.rouge_l},
                                   {"occurrence", gen.occurrence}});
                std::printf("%-14s MC1 %.3f MC2 %.3f ROUGE-L %.3f occurrence %.3f\n",
                            gen.method.c_str(), mc.mc1, mc.mc2, gen.rouge_l,
                            gen.occurrence);
            }
            write_json(out_eval, json{{"config_hash", config_hash},
                                      {"split", eval_split.name},
                                      {"mode", agg_mode},
                                      {"epsilon", cfg.epsilon},
                                      {"reports", reports}});
            return 0;
        }

        if (attack_cmd->parsed()) {
            io.corpus_path = in_corpus;
            io.registry_path = in_registry;
            auto corpus = io.load_corpus();
            Vocabulary vocab = make_vocabulary(corpus.registry);
            auto splits = split(corpus.records, cfg.f_train, cfg.f_dev, cfg.f_test,
                                cfg.split_seed);
            auto client = load_checkpoint(in_client);
            auto bank = load_bank(in_bank);
            const int n_types = static_cast<int>(corpus.registry.types.size());

            json out;
            if (attack_kind == "aia") {
                auto train_ds = build_meta_attack_dataset(
                    splits.train, bank.bank, client.params, vocab, mode_of(agg_mode),
                    cfg.epsilon, attack_alpha, attack_seed, n_types);
                auto test_ds = build_meta_attack_dataset(
                    splits.test, bank.bank, client.params, vocab, mode_of(agg_mode),
                    cfg.epsilon, attack_alpha, attack_seed + 1, n_types);
                AttackHyperparams hp;
                hp.seed = attack_seed;
                const double f1 =
                    attribute_inference(train_ds.features, train_ds.labels,
                                        test_ds.features, test_ds.labels, n_types, hp);
                out = json{{"attack", "attribute_inference"},
                           {"target", "meta_vector"},
                           {"epsilon", cfg.epsilon},
                           {"alpha", attack_alpha},
                           {"micro_f1", f1},
                           {"seed", attack_seed}};
                std::printf("AIA micro-F1 %.4f (epsilon %.1f, alpha %.2f)\n", f1,
                            cfg.epsilon, attack_alpha);
            } else if (attack_kind == "eia") {
                auto test_ds = build_meta_attack_dataset(
                    splits.test, bank.bank, client.params, vocab, mode_of(agg_mode),
                    cfg.epsilon, attack_alpha, attack_seed + 1, n_types);
                std::vector<InversionSample> samples;
                for (std::size_t i = 0; i < test_ds.features.size(); ++i)
                    samples.push_back({test_ds.features[i], test_ds.span_texts[i]});
                const double rouge =
                    embedding_inversion(bank.bank, samples, corpus.registry);
                out = json{{"attack", "embedding_inversion"},
                           {"target", "meta_vector"},
                           {"epsilon", cfg.epsilon},
                           {"alpha", attack_alpha},
                           {"rouge_l", rouge},
                           {"seed", attack_seed}};
                std::printf("EIA ROUGE-L %.4f (epsilon %.1f, alpha %.2f)\n", rouge,
                            cfg.epsilon, attack_alpha);
            } else {
                throw ConfigError("unknown attack kind: " + attack_kind);
            }
            out["config_hash"] = config_hash;
            write_json(out_attack, out);
            return 0;
        }

        if (sweep_cmd->parsed()) {
            io.corpus_path = in_corpus;
            io.registry_path = in_registry;
            auto corpus = io.load_corpus();
            Vocabulary vocab = make_vocabulary(corpus.registry);
            auto splits = split(corpus.records, cfg.f_train, cfg.f_dev, cfg.f_test,
                                cfg.split_seed);
            auto client = load_checkpoint(in_client);
            auto bank = load_bank(in_bank);
            const int n_types = static_cast<int>(corpus.registry.types.size());

            std::ofstream out(out_sweep, std::ios::binary);
            if (!out) throw ConfigError("cannot open CSV output: " + out_sweep);
            AttackHyperparams hp;
            hp.seed = sweep_seed;
            if (sweep_axis == "epsilon") {
                out << "epsilon,aia_micro_f1\n";
                for (double eps : {1.0, 20.0, 75.0, 175.0}) {
                    auto train_ds = build_meta_attack_dataset(
                        splits.train, bank.bank, client.params, vocab,
                        mode_of(agg_mode), eps, 1.0, sweep_seed, n_types);
                    auto test_ds = build_meta_attack_dataset(
                        splits.test, bank.bank, client.params, vocab, mode_of(agg_mode),
                        eps, 1.0, sweep_seed + 1, n_types);
                    const double f1 = attribute_inference(
                        train_ds.features, train_ds.labels, test_ds.features,
                        test_ds.labels, n_types, hp);
                    out << eps << "," << f1 << "\n";
                    std::printf("epsilon %7.1f -> AIA F1 %.4f\n", eps, f1);
                }
            } else if (sweep_axis == "alpha") {
                out << "alpha,meta_aia_f1,dchi_token_aia_f1\n";
                for (double alpha : {0.25, 0.5, 0.75, 1.0}) {
                    auto train_meta = build_meta_attack_dataset(
                        splits.train, bank.bank, client.params, vocab,
                        mode_of(agg_mode), cfg.alpha_sweep_meta_epsilon, alpha,
                        sweep_seed, n_types);
                    auto test_meta = build_meta_attack_dataset(
                        splits.test, bank.bank, client.params, vocab, mode_of(agg_mode),
                        cfg.alpha_sweep_meta_epsilon, alpha, sweep_seed + 1, n_types);
                    const double f1_meta = attribute_inference(
                        train_meta.features, train_meta.labels, test_meta.features,
                        test_meta.labels, n_types, hp);
                    auto train_text = build_dchi_attack_dataset(
                        splits.train, client.params.embed, vocab,
                        cfg.alpha_sweep_token_epsilon, alpha, sweep_seed + 2, n_types);
                    auto test_text = build_dchi_attack_dataset(
                        splits.test, client.params.embed, vocab,
                        cfg.alpha_sweep_token_epsilon, alpha, sweep_seed + 3, n_types);
                    const double f1_text = attribute_inference(
                        train_text.features, train_text.labels, test_text.features,
                        test_text.labels, n_types, hp);
                    out << alpha << "," << f1_meta << "," << f1_text << "\n";
                    std::printf("alpha %.2f -> meta F1 %.4f | dchi F1 %.4f\n", alpha,
                                f1_meta, f1_text);
                }
            } else {
                throw ConfigError("unknown sweep axis: " + sweep_axis);
            }
            return 0;
        }

        if (budget_cmd->parsed()) {
            json out;
            if (budget_table_mode) {
                json rows = json::array();
                for (const auto& rep : budget_table()) rows.push_back(budget_report_json(rep));
                out = json{{"table", rows}};
            } else {
                BudgetInputs in;
                if (b_n >= 0) in.n = b_n;
                if (b_nsp >= 0) in.n_sp = b_nsp;
                if (b_de >= 0) in.d_e = b_de;
                if (b_eps >= 0) in.epsilon = b_eps;
                if (b_tau >= 0) in.tau = b_tau;
                if (b_T >= 0) in.T = b_T;
                if (b_du >= 0) in.delta_u = b_du;
                out = budget_report_json(budget(budget_method_from_name(budget_method), in));
            }
            if (out_budget.empty())
                std::cout << out.dump(2) << "\n";
            else
                write_json(out_budget, out);
            return 0;
        }

        throw ConfigError("no subcommand executed");
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const ContractError& e) {
        std::fprintf(stderr, "contract violation: %s\n", e.what());
        return 3;
    } catch (const TransportError& e) {
        std::fprintf(stderr, "transport error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
