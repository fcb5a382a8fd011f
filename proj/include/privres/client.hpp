#ifndef PRIVRES_CLIENT_HPP
#define PRIVRES_CLIENT_HPP

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "privres/common.hpp"
#include "privres/corpus.hpp"
#include "privres/headselect.hpp"
#include "privres/model.hpp"
#include "privres/net.hpp"
#include "privres/privacy.hpp"
#include "privres/restoration.hpp"
#include "privres/wire.hpp"

namespace privres {

// ---------------------------------------------------------------------------
// Span-type classification: exact surface-form match first, otherwise the
// nearest type by token-embedding centroid cosine (the out-of-set fallback).
// ---------------------------------------------------------------------------

struct ClassifiedSpan {
    int type_id = -1;
    bool out_of_set = false;
};

inline Vec token_centroid(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                          const Mat& embeddings) {
    Vec c(static_cast<std::size_t>(embeddings.cols), 0.0);
    for (const auto& tok : tokens) axpy(1.0, embeddings.row(vocab.id(tok)), c);
    for (auto& v : c) v /= static_cast<double>(tokens.size());
    return c;
}

inline ClassifiedSpan classify_span(const std::vector<std::string>& span_tokens,
                                    const SpanTypeRegistry& registry,
                                    const Vocabulary& vocab, const Mat& embeddings) {
    if (span_tokens.empty()) throw ContractError("classify_span: empty span");
    if (registry.types.empty()) throw ContractError("classify_span: empty registry");

    if (auto exact = registry.exact_form_match(span_tokens))
        return {*exact, false};

    const Vec probe = token_centroid(span_tokens, vocab, embeddings);
    int best = -1;
    double best_cos = -2.0;
    for (const auto& t : registry.types) {
        std::vector<std::string> all_tokens;
        for (const auto& f : t.surface_forms)
            all_tokens.insert(all_tokens.end(), f.begin(), f.end());
        const Vec centroid = token_centroid(all_tokens, vocab, embeddings);
        const double c = cosine(probe, centroid);
        if (c > best_cos) {
            best_cos = c;
            best = t.id;
        }
    }
    return {best, true};
}

// ---------------------------------------------------------------------------
// Attention-aware weights
// ---------------------------------------------------------------------------

// Attention scores from some scorer model: a[h] is an L x L row-major matrix,
// a[h][t * len + j] = mass of query position t attending to key position j.
struct AttentionMatrix {
    int n_heads = 0;
    int len = 0;
    std::vector<Vec> a;

    double at(int h, int t, int j) const {
        return a[static_cast<std::size_t>(h)][static_cast<std::size_t>(t) * len + j];
    }
};

// Last-layer attention of the lightweight client model over `tokens`.
inline AttentionMatrix encoder_attention(const Params& encoder,
                                         const std::vector<int>& tokens) {
    ForwardTrace trace;
    forward(encoder, tokens, nullptr, &trace, /*want_attention=*/true);
    AttentionMatrix out;
    out.n_heads = encoder.cfg.n_heads;
    out.len = static_cast<int>(tokens.size());
    out.a = trace.attention.back();
    return out;
}

// w_s = (1/n) (1/n_h) (1/|s|) sum_t sum_h sum_{j in s} Attn_h(j, t): the mean
// attention mass received by the span, averaged over the span's tokens.
inline Vec awa_weights(int query_len, const std::vector<SpanRef>& spans,
                       const AttentionMatrix& attn) {
    if (attn.len != query_len)
        throw ContractError("awa_weights: attention matrix length mismatch");
    Vec weights;
    weights.reserve(spans.size());
    for (const auto& s : spans) {
        if (s.start < 0 || s.start + s.len > query_len)
            throw ContractError("awa_weights: span outside query");
        double acc = 0.0;
        for (int t = 0; t < query_len; ++t)
            for (int h = 0; h < attn.n_heads; ++h)
                for (int j = s.start; j < s.start + s.len; ++j)
                    acc += attn.at(h, t, j);
        weights.push_back(acc / (static_cast<double>(query_len) *
                                 static_cast<double>(attn.n_heads) *
                                 static_cast<double>(s.len)));
    }
    return weights;
}

// ---------------------------------------------------------------------------
// Meta-vector construction
// ---------------------------------------------------------------------------

enum class AggregationMode { AWA, EWA };

struct MetaVector {
    Vec values;                       // R = Z + N, K * d_head
    std::uint64_t head_order_hash = 0;
    double epsilon = 0.0;
};

// Z = sum_s w_s r^{c(s)} normalized, R = Z + N. EWA forces every w_s to 1.
inline MetaVector build_meta_vector(const RestorationBank& bank,
                                    const std::vector<TypeWeight>& span_weights,
                                    const NoiseParams& noise, std::mt19937_64& rng,
                                    AggregationMode mode = AggregationMode::AWA) {
    if (span_weights.empty()) throw ContractError("build_meta_vector: no spans");
    if (noise.dimension != bank.meta_dim())
        throw ContractError("build_meta_vector: noise dimension mismatch");
    std::vector<TypeWeight> weights = span_weights;
    if (mode == AggregationMode::EWA)
        for (auto& tw : weights) tw.weight = 1.0;

    MetaVector out;
    out.values = normalized_meta(bank, collapse_weights(weights));
    out.head_order_hash = bank.head_hash();
    out.epsilon = noise.epsilon;
    Vec n = sample_noise(noise, rng);
    axpy(1.0, n, out.values);
    return out;
}

// ---------------------------------------------------------------------------
// Query submission
// ---------------------------------------------------------------------------

struct GenerationParams {
    double temperature = 1.0;
    int max_tokens = 64;
    std::optional<std::uint64_t> client_seed;
};

inline std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

inline std::vector<std::string> split_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

// Refuses to transmit a query that still contains any registered surface form.
inline void validate_redacted(const std::vector<std::string>& tokens,
                              const SpanTypeRegistry& registry) {
    for (const auto& t : registry.types)
        for (const auto& form : t.surface_forms) {
            if (form.empty() || form.size() > tokens.size()) continue;
            for (std::size_t i = 0; i + form.size() <= tokens.size(); ++i)
                if (std::equal(form.begin(), form.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i)))
                    throw ContractError(
                        "redacted query still contains a privacy span surface form");
        }
}

inline WireRequest make_infer_request(const std::vector<std::string>& redacted_tokens,
                                      const MetaVector& meta,
                                      const GenerationParams& gen) {
    WireRequest req;
    req.kind = "infer";
    req.query = join_tokens(redacted_tokens);
    req.meta_b64 = encode_meta_payload(meta.values);
    req.head_set_hash = to_hex(meta.head_order_hash);
    req.temperature = gen.temperature;
    req.max_tokens = gen.max_tokens;
    req.client_seed = gen.client_seed;
    return req;
}

inline WireResponse roundtrip_request(const std::string& host, int port,
                                      const WireRequest& req) {
    Socket sock = connect_to(host, port);
    write_all(sock, encode_frame(to_json(req)));
    auto frame = read_frame_bytes(sock, kMaxFrameBytes);
    return response_from_json(decode_frame(frame));
}

// Client-side submission: validates the redaction guard, sends one frame,
// decodes the reply. Raw spans, weights and span counts never leave the
// process.
inline WireResponse submit_query(const std::string& host, int port,
                                 const std::vector<std::string>& redacted_tokens,
                                 const SpanTypeRegistry& registry, const MetaVector& meta,
                                 const GenerationParams& gen) {
    validate_redacted(redacted_tokens, registry);
    WireResponse res = roundtrip_request(host, port, make_infer_request(redacted_tokens, meta, gen));
    if (res.kind == "error")
        throw ContractError("server error: " + res.error_code + ": " + res.error_message);
    return res;
}

// ---------------------------------------------------------------------------
// Inline span markup: tokens wrapped in [[...]] are privacy spans, with an
// optional "<type-id>:" prefix to pin the type; otherwise the span is
// classified. Example: "northwing visit : patient reports [[kubafe tizolo]] ."
// ---------------------------------------------------------------------------

struct MarkedQuery {
    std::vector<std::string> tokens;  // complete query without markup
    std::vector<SpanRef> spans;       // type_id = -1 when unpinned
};

inline MarkedQuery parse_span_markup(const std::string& text) {
    MarkedQuery out;
    std::istringstream in(text);
    std::string tok;
    bool in_span = false;
    int span_start = 0;
    int span_type = -1;
    while (in >> tok) {
        if (!in_span && tok.rfind("[[", 0) == 0) {
            in_span = true;
            span_start = static_cast<int>(out.tokens.size());
            span_type = -1;
            tok = tok.substr(2);
            const auto colon = tok.find(':');
            if (colon != std::string::npos) {
                const std::string id_text = tok.substr(0, colon);
                if (!id_text.empty() &&
                    id_text.find_first_not_of("0123456789") == std::string::npos)
                    span_type = std::stoi(id_text);
                tok = tok.substr(colon + 1);
            }
        }
        bool closes = false;
        if (in_span && tok.size() >= 2 && tok.rfind("]]") == tok.size() - 2) {
            closes = true;
            tok = tok.substr(0, tok.size() - 2);
        }
        if (!tok.empty()) out.tokens.push_back(tok);
        if (closes) {
            const int len = static_cast<int>(out.tokens.size()) - span_start;
            if (len <= 0) throw ContractError("span markup: empty span");
            out.spans.push_back({span_type, span_start, len});
            in_span = false;
        }
    }
    if (in_span) throw ContractError("span markup: unterminated [[ span");
    return out;
}

}  // namespace privres

#endif  // PRIVRES_CLIENT_HPP
