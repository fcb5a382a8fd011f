#ifndef PRIVRES_MODEL_HPP
#define PRIVRES_MODEL_HPP

#include <cmath>
#include <compare>
#include <cstdint>
#include <cstring>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "privres/common.hpp"

namespace privres {

// ---------------------------------------------------------------------------
// Configuration and identifiers
// ---------------------------------------------------------------------------

struct ModelConfig {
    int n_layers = 1;
    int n_heads = 1;
    int d_model = 16;
    int vocab_size = 2;
    int max_seq_len = 32;
    std::uint64_t seed = 0;
    bool causal = true;  // false: bidirectional encoder (the client scorer)

    int d_head() const { return d_model / n_heads; }

    void validate() const {
        if (n_layers < 1 || n_heads < 1 || d_model < 1 || vocab_size < 1 ||
            max_seq_len < 1)
            throw ConfigError("model config: all counts must be >= 1");
        if (d_model % n_heads != 0)
            throw ConfigError("model config: d_model must be divisible by n_heads");
    }
};

struct HeadId {
    int layer = 0;
    int head = 0;
    auto operator<=>(const HeadId&) const = default;
};

// Heads edited at inference plus their per-head steering vectors. `steer_from`
// is the first steered position; during generation it is the last prompt
// position, so every step steers the token being produced.
struct SteeringPlan {
    std::vector<HeadId> heads;
    std::vector<Vec> vectors;
    int steer_from = 0;

    void validate(const ModelConfig& cfg) const {
        if (heads.size() != vectors.size())
            throw ContractError("steering plan: heads/vectors size mismatch");
        for (std::size_t i = 0; i < heads.size(); ++i) {
            const HeadId& h = heads[i];
            if (h.layer < 0 || h.layer >= cfg.n_layers || h.head < 0 ||
                h.head >= cfg.n_heads)
                throw ContractError("steering plan: unknown head id");
            if (static_cast<int>(vectors[i].size()) != cfg.d_head())
                throw ContractError("steering plan: vector dimension mismatch");
        }
    }
};

inline SteeringPlan plan_from_meta(const std::vector<HeadId>& heads,
                                   std::span<const double> meta, int d_head,
                                   int steer_from) {
    if (meta.size() != heads.size() * static_cast<std::size_t>(d_head))
        throw ContractError("meta vector length does not match head set geometry");
    SteeringPlan plan;
    plan.heads = heads;
    plan.steer_from = steer_from;
    plan.vectors.reserve(heads.size());
    for (std::size_t i = 0; i < heads.size(); ++i)
        plan.vectors.emplace_back(meta.begin() + static_cast<std::ptrdiff_t>(i) * d_head,
                                  meta.begin() + static_cast<std::ptrdiff_t>(i + 1) * d_head);
    return plan;
}

// Last-token view of one forward pass: per-head outputs (as used, i.e. after
// steering when a head was edited), final logits, and optionally the full
// attention tensors.
struct ForwardTrace {
    int n_heads_per_layer = 0;
    std::vector<Vec> head_outputs;               // [layer * n_heads + head]
    Vec logits;                                  // last position
    std::vector<std::vector<Vec>> attention;     // [layer][head], L*L row-major

    const Vec& head_output(const HeadId& h) const {
        return head_outputs[static_cast<std::size_t>(h.layer * n_heads_per_layer + h.head)];
    }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct Mat {
    int rows = 0;
    int cols = 0;
    Vec d;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), d(static_cast<std::size_t>(r) * c, 0.0) {}
    double& at(int r, int c) { return d[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return d[static_cast<std::size_t>(r) * cols + c]; }
    std::span<double> row(int r) { return {d.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
    std::span<const double> row(int r) const { return {d.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
};

inline void matvec(const Mat& w, std::span<const double> x, std::span<double> y) {
    for (int r = 0; r < w.rows; ++r) {
        const double* wr = w.d.data() + static_cast<std::size_t>(r) * w.cols;
        double s = 0.0;
        for (int c = 0; c < w.cols; ++c) s += wr[c] * x[static_cast<std::size_t>(c)];
        y[static_cast<std::size_t>(r)] = s;
    }
}

// y += W^T x
inline void matvec_t_acc(const Mat& w, std::span<const double> x, std::span<double> y) {
    for (int r = 0; r < w.rows; ++r) {
        const double* wr = w.d.data() + static_cast<std::size_t>(r) * w.cols;
        double xr = x[static_cast<std::size_t>(r)];
        for (int c = 0; c < w.cols; ++c) y[static_cast<std::size_t>(c)] += wr[c] * xr;
    }
}

// dW += g x^T
inline void outer_acc(Mat& dw, std::span<const double> g, std::span<const double> x) {
    for (int r = 0; r < dw.rows; ++r) {
        double* wr = dw.d.data() + static_cast<std::size_t>(r) * dw.cols;
        double gr = g[static_cast<std::size_t>(r)];
        for (int c = 0; c < dw.cols; ++c) wr[c] += gr * x[static_cast<std::size_t>(c)];
    }
}

struct LayerParams {
    Vec ln1_g, ln1_b;
    Mat wq, wk, wv, wo;
    Vec ln2_g, ln2_b;
    Mat mlp_w1;
    Vec mlp_b1;
    Mat mlp_w2;
    Vec mlp_b2;
};

struct Params {
    ModelConfig cfg;
    Mat embed;  // vocab_size x d_model
    Mat pos;    // max_seq_len x d_model
    std::vector<LayerParams> layers;
    Vec lnf_g, lnf_b;
    Mat w_out;  // vocab_size x d_model

    // Fixed enumeration order; also the checkpoint block order.
    template <typename Fn>
    void for_each_block(Fn&& fn) {
        fn("embed", embed.d);
        fn("pos", pos.d);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            auto& lp = layers[l];
            std::string p = "layer" + std::to_string(l) + ".";
            fn(p + "ln1_g", lp.ln1_g);
            fn(p + "ln1_b", lp.ln1_b);
            fn(p + "wq", lp.wq.d);
            fn(p + "wk", lp.wk.d);
            fn(p + "wv", lp.wv.d);
            fn(p + "wo", lp.wo.d);
            fn(p + "ln2_g", lp.ln2_g);
            fn(p + "ln2_b", lp.ln2_b);
            fn(p + "mlp_w1", lp.mlp_w1.d);
            fn(p + "mlp_b1", lp.mlp_b1);
            fn(p + "mlp_w2", lp.mlp_w2.d);
            fn(p + "mlp_b2", lp.mlp_b2);
        }
        fn("lnf_g", lnf_g);
        fn("lnf_b", lnf_b);
        fn("w_out", w_out.d);
    }

    std::size_t param_count() {
        std::size_t n = 0;
        for_each_block([&](const std::string&, Vec& v) { n += v.size(); });
        return n;
    }

    std::uint64_t checksum() {
        std::uint64_t h = kFnvOffset;
        for_each_block([&](const std::string& name, Vec& v) {
            h = fnv1a(name, h);
            for (double x : v) {
                std::uint64_t bits;
                static_assert(sizeof(bits) == sizeof(x));
                std::memcpy(&bits, &x, sizeof(bits));
                h = fnv1a_u64(bits, h);
            }
        });
        return h;
    }
};

inline Params init_params(const ModelConfig& cfg) {
    cfg.validate();
    Params p;
    p.cfg = cfg;
    auto rng = rng_stream(cfg.seed, "model/init");
    std::normal_distribution<double> gauss(0.0, 0.02);
    auto fill = [&](Vec& v) {
        for (auto& x : v) x = gauss(rng);
    };
    p.embed = Mat(cfg.vocab_size, cfg.d_model);
    p.pos = Mat(cfg.max_seq_len, cfg.d_model);
    fill(p.embed.d);
    fill(p.pos.d);
    p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (auto& lp : p.layers) {
        lp.ln1_g.assign(static_cast<std::size_t>(cfg.d_model), 1.0);
        lp.ln1_b.assign(static_cast<std::size_t>(cfg.d_model), 0.0);
        lp.wq = Mat(cfg.d_model, cfg.d_model);
        lp.wk = Mat(cfg.d_model, cfg.d_model);
        lp.wv = Mat(cfg.d_model, cfg.d_model);
        lp.wo = Mat(cfg.d_model, cfg.d_model);
        fill(lp.wq.d);
        fill(lp.wk.d);
        fill(lp.wv.d);
        fill(lp.wo.d);
        lp.ln2_g.assign(static_cast<std::size_t>(cfg.d_model), 1.0);
        lp.ln2_b.assign(static_cast<std::size_t>(cfg.d_model), 0.0);
        lp.mlp_w1 = Mat(4 * cfg.d_model, cfg.d_model);
        lp.mlp_b1.assign(static_cast<std::size_t>(4 * cfg.d_model), 0.0);
        lp.mlp_w2 = Mat(cfg.d_model, 4 * cfg.d_model);
        lp.mlp_b2.assign(static_cast<std::size_t>(cfg.d_model), 0.0);
        fill(lp.mlp_w1.d);
        fill(lp.mlp_w2.d);
    }
    p.lnf_g.assign(static_cast<std::size_t>(cfg.d_model), 1.0);
    p.lnf_b.assign(static_cast<std::size_t>(cfg.d_model), 0.0);
    p.w_out = Mat(cfg.vocab_size, cfg.d_model);
    fill(p.w_out.d);
    return p;
}

inline Params zero_like(const Params& p) {
    Params z;
    z.cfg = p.cfg;
    z.embed = Mat(p.embed.rows, p.embed.cols);
    z.pos = Mat(p.pos.rows, p.pos.cols);
    z.layers.resize(p.layers.size());
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const auto& s = p.layers[l];
        auto& d = z.layers[l];
        d.ln1_g.assign(s.ln1_g.size(), 0.0);
        d.ln1_b.assign(s.ln1_b.size(), 0.0);
        d.wq = Mat(s.wq.rows, s.wq.cols);
        d.wk = Mat(s.wk.rows, s.wk.cols);
        d.wv = Mat(s.wv.rows, s.wv.cols);
        d.wo = Mat(s.wo.rows, s.wo.cols);
        d.ln2_g.assign(s.ln2_g.size(), 0.0);
        d.ln2_b.assign(s.ln2_b.size(), 0.0);
        d.mlp_w1 = Mat(s.mlp_w1.rows, s.mlp_w1.cols);
        d.mlp_b1.assign(s.mlp_b1.size(), 0.0);
        d.mlp_w2 = Mat(s.mlp_w2.rows, s.mlp_w2.cols);
        d.mlp_b2.assign(s.mlp_b2.size(), 0.0);
    }
    z.lnf_g.assign(p.lnf_g.size(), 0.0);
    z.lnf_b.assign(p.lnf_b.size(), 0.0);
    z.w_out = Mat(p.w_out.rows, p.w_out.cols);
    return z;
}

// ---------------------------------------------------------------------------
// Forward pass with cached activations
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr double kLnEps = 1e-5;

inline double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

inline double gelu_grad(double x) {
    const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    const double Phi = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
    return Phi + x * phi;
}

struct LnCache {
    Vec xhat;  // L x D
    Vec rstd;  // L
};

struct LayerActs {
    Vec x_in;     // L x D, layer input
    LnCache ln1;
    Vec h1;       // L x D
    Vec q, k, v;  // L x D each (head-major slices within d_model)
    std::vector<Vec> attn;  // per head, L x L row-major
    Vec u_pre;    // L x D, head outputs before steering
    Vec u_post;   // L x D, head outputs as used
    Vec steer_norm;  // L x H, ||u_h||_2 cached for steered positions
    Vec x_mid;    // L x D, after attention residual
    LnCache ln2;
    Vec h2;    // L x D
    Vec m1;    // L x 4D
    Vec a1;    // L x 4D
};

struct Activations {
    int len = 0;
    std::vector<int> tokens;
    Vec x0;  // L x D
    std::vector<LayerActs> layers;
    LnCache lnf;
    Vec hf;      // L x D
    Vec logits;  // L x V
};

inline void layernorm_fwd(std::span<const double> x, std::span<const double> g,
                          std::span<const double> b, std::span<double> y,
                          std::span<double> xhat, double& rstd_out) {
    const std::size_t n = x.size();
    double mu = 0.0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    rstd_out = rstd;
    for (std::size_t i = 0; i < n; ++i) {
        xhat[i] = (x[i] - mu) * rstd;
        y[i] = g[i] * xhat[i] + b[i];
    }
}

inline void layernorm_bwd(std::span<const double> dy, std::span<const double> g,
                          std::span<const double> xhat, double rstd,
                          std::span<double> dx_acc, std::span<double> dg_acc,
                          std::span<double> db_acc) {
    const std::size_t n = dy.size();
    double m1 = 0.0, m2 = 0.0;
    Vec dxhat(n);
    for (std::size_t i = 0; i < n; ++i) {
        dg_acc[i] += dy[i] * xhat[i];
        db_acc[i] += dy[i];
        dxhat[i] = dy[i] * g[i];
        m1 += dxhat[i];
        m2 += dxhat[i] * xhat[i];
    }
    m1 /= static_cast<double>(n);
    m2 /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        dx_acc[i] += rstd * (dxhat[i] - m1 - xhat[i] * m2);
}

}  // namespace detail

// Runs the model over `tokens`. When `plan` is set, for every plan head and
// every position >= plan->steer_from the head output u becomes
// u + ||u||_2 * R before the output projection. Returns per-position logits
// (L x V, row-major) and fills `acts` for a subsequent backward pass.
inline Vec forward(const Params& params, const std::vector<int>& tokens,
                   const SteeringPlan* plan, detail::Activations* acts,
                   ForwardTrace* trace = nullptr, bool want_attention = false) {
    const ModelConfig& cfg = params.cfg;
    const int L = static_cast<int>(tokens.size());
    const int D = cfg.d_model;
    const int H = cfg.n_heads;
    const int Dh = cfg.d_head();
    const int V = cfg.vocab_size;

    if (L == 0) throw ContractError("forward: empty token sequence");
    if (L > cfg.max_seq_len) throw ContractError("forward: sequence exceeds max length");
    for (int t : tokens)
        if (t < 0 || t >= V) throw ContractError("forward: token out of vocabulary");
    if (plan) plan->validate(cfg);

    auto idx = [D](int t, int i) { return static_cast<std::size_t>(t) * D + i; };

    detail::Activations local;
    detail::Activations& a = acts ? *acts : local;
    a.len = L;
    a.tokens = tokens;
    a.x0.assign(static_cast<std::size_t>(L) * D, 0.0);
    for (int t = 0; t < L; ++t)
        for (int i = 0; i < D; ++i)
            a.x0[idx(t, i)] = params.embed.at(tokens[static_cast<std::size_t>(t)], i) +
                              params.pos.at(t, i);

    // steer_index[l*H+h] = plan slot or -1
    std::vector<int> steer_index(static_cast<std::size_t>(cfg.n_layers) * H, -1);
    if (plan)
        for (std::size_t s = 0; s < plan->heads.size(); ++s)
            steer_index[static_cast<std::size_t>(plan->heads[s].layer * H +
                                                 plan->heads[s].head)] =
                static_cast<int>(s);

    Vec x = a.x0;
    a.layers.assign(static_cast<std::size_t>(cfg.n_layers), {});
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(Dh));

    for (int l = 0; l < cfg.n_layers; ++l) {
        const LayerParams& lp = params.layers[static_cast<std::size_t>(l)];
        detail::LayerActs& la = a.layers[static_cast<std::size_t>(l)];
        la.x_in = x;
        la.ln1.xhat.assign(static_cast<std::size_t>(L) * D, 0.0);
        la.ln1.rstd.assign(static_cast<std::size_t>(L), 0.0);
        la.h1.assign(static_cast<std::size_t>(L) * D, 0.0);
        for (int t = 0; t < L; ++t)
            detail::layernorm_fwd({&la.x_in[idx(t, 0)], static_cast<std::size_t>(D)},
                                  lp.ln1_g, lp.ln1_b,
                                  {&la.h1[idx(t, 0)], static_cast<std::size_t>(D)},
                                  {&la.ln1.xhat[idx(t, 0)], static_cast<std::size_t>(D)},
                                  la.ln1.rstd[static_cast<std::size_t>(t)]);

        la.q.assign(static_cast<std::size_t>(L) * D, 0.0);
        la.k.assign(static_cast<std::size_t>(L) * D, 0.0);
        la.v.assign(static_cast<std::size_t>(L) * D, 0.0);
        for (int t = 0; t < L; ++t) {
            matvec(lp.wq, {&la.h1[idx(t, 0)], static_cast<std::size_t>(D)},
                   {&la.q[idx(t, 0)], static_cast<std::size_t>(D)});
            matvec(lp.wk, {&la.h1[idx(t, 0)], static_cast<std::size_t>(D)},
                   {&la.k[idx(t, 0)], static_cast<std::size_t>(D)});
            matvec(lp.wv, {&la.h1[idx(t, 0)], static_cast<std::size_t>(D)},
                   {&la.v[idx(t, 0)], static_cast<std::size_t>(D)});
        }

        la.attn.assign(static_cast<std::size_t>(H), Vec(static_cast<std::size_t>(L) * L, 0.0));
        la.u_pre.assign(static_cast<std::size_t>(L) * D, 0.0);
        la.u_post.assign(static_cast<std::size_t>(L) * D, 0.0);
        la.steer_norm.assign(static_cast<std::size_t>(L) * H, 0.0);

        for (int h = 0; h < H; ++h) {
            const int off = h * Dh;
            Vec& A = la.attn[static_cast<std::size_t>(h)];
            for (int t = 0; t < L; ++t) {
                // softmax over j <= t (causal) or over every position
                const int jmax = cfg.causal ? t : L - 1;
                double maxs = -1e300;
                Vec srow(static_cast<std::size_t>(jmax) + 1, 0.0);
                for (int j = 0; j <= jmax; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < Dh; ++i)
                        s += la.q[idx(t, off + i)] * la.k[idx(j, off + i)];
                    s *= inv_sqrt_dh;
                    srow[static_cast<std::size_t>(j)] = s;
                    if (s > maxs) maxs = s;
                }
                double z = 0.0;
                for (int j = 0; j <= jmax; ++j) {
                    double e = std::exp(srow[static_cast<std::size_t>(j)] - maxs);
                    A[static_cast<std::size_t>(t) * L + j] = e;
                    z += e;
                }
                for (int j = 0; j <= jmax; ++j) A[static_cast<std::size_t>(t) * L + j] /= z;

                for (int i = 0; i < Dh; ++i) {
                    double s = 0.0;
                    for (int j = 0; j <= jmax; ++j)
                        s += A[static_cast<std::size_t>(t) * L + j] * la.v[idx(j, off + i)];
                    la.u_pre[idx(t, off + i)] = s;
                }

                const int slot = steer_index[static_cast<std::size_t>(l * H + h)];
                if (plan && slot >= 0 && t >= plan->steer_from) {
                    double nrm = 0.0;
                    for (int i = 0; i < Dh; ++i) {
                        double u = la.u_pre[idx(t, off + i)];
                        nrm += u * u;
                    }
                    nrm = std::sqrt(nrm);
                    la.steer_norm[static_cast<std::size_t>(t) * H + h] = nrm;
                    const Vec& r = plan->vectors[static_cast<std::size_t>(slot)];
                    for (int i = 0; i < Dh; ++i)
                        la.u_post[idx(t, off + i)] =
                            la.u_pre[idx(t, off + i)] + nrm * r[static_cast<std::size_t>(i)];
                } else {
                    for (int i = 0; i < Dh; ++i)
                        la.u_post[idx(t, off + i)] = la.u_pre[idx(t, off + i)];
                }
            }
        }

        la.x_mid.assign(static_cast<std::size_t>(L) * D, 0.0);
        Vec ao(static_cast<std::size_t>(D), 0.0);
        for (int t = 0; t < L; ++t) {
            matvec(lp.wo, {&la.u_post[idx(t, 0)], static_cast<std::size_t>(D)}, ao);
            for (int i = 0; i < D; ++i)
                la.x_mid[idx(t, i)] = la.x_in[idx(t, i)] + ao[static_cast<std::size_t>(i)];
        }

        la.ln2.xhat.assign(static_cast<std::size_t>(L) * D, 0.0);
        la.ln2.rstd.assign(static_cast<std::size_t>(L), 0.0);
        la.h2.assign(static_cast<std::size_t>(L) * D, 0.0);
        for (int t = 0; t < L; ++t)
            detail::layernorm_fwd({&la.x_mid[idx(t, 0)], static_cast<std::size_t>(D)},
                                  lp.ln2_g, lp.ln2_b,
                                  {&la.h2[idx(t, 0)], static_cast<std::size_t>(D)},
                                  {&la.ln2.xhat[idx(t, 0)], static_cast<std::size_t>(D)},
                                  la.ln2.rstd[static_cast<std::size_t>(t)]);

        const int Dm = 4 * D;
        la.m1.assign(static_cast<std::size_t>(L) * Dm, 0.0);
        la.a1.assign(static_cast<std::size_t>(L) * Dm, 0.0);
        x.assign(static_cast<std::size_t>(L) * D, 0.0);
        Vec m2(static_cast<std::size_t>(D), 0.0);
        for (int t = 0; t < L; ++t) {
            matvec(lp.mlp_w1, {&la.h2[idx(t, 0)], static_cast<std::size_t>(D)},
                   {&la.m1[static_cast<std::size_t>(t) * Dm], static_cast<std::size_t>(Dm)});
            for (int i = 0; i < Dm; ++i) {
                la.m1[static_cast<std::size_t>(t) * Dm + i] += lp.mlp_b1[static_cast<std::size_t>(i)];
                la.a1[static_cast<std::size_t>(t) * Dm + i] =
                    detail::gelu(la.m1[static_cast<std::size_t>(t) * Dm + i]);
            }
            matvec(lp.mlp_w2,
                   {&la.a1[static_cast<std::size_t>(t) * Dm], static_cast<std::size_t>(Dm)}, m2);
            for (int i = 0; i < D; ++i)
                x[idx(t, i)] = la.x_mid[idx(t, i)] + m2[static_cast<std::size_t>(i)] +
                               lp.mlp_b2[static_cast<std::size_t>(i)];
        }
    }

    a.lnf.xhat.assign(static_cast<std::size_t>(L) * D, 0.0);
    a.lnf.rstd.assign(static_cast<std::size_t>(L), 0.0);
    a.hf.assign(static_cast<std::size_t>(L) * D, 0.0);
    for (int t = 0; t < L; ++t)
        detail::layernorm_fwd({&x[idx(t, 0)], static_cast<std::size_t>(D)}, params.lnf_g,
                              params.lnf_b, {&a.hf[idx(t, 0)], static_cast<std::size_t>(D)},
                              {&a.lnf.xhat[idx(t, 0)], static_cast<std::size_t>(D)},
                              a.lnf.rstd[static_cast<std::size_t>(t)]);

    a.logits.assign(static_cast<std::size_t>(L) * V, 0.0);
    for (int t = 0; t < L; ++t)
        matvec(params.w_out, {&a.hf[idx(t, 0)], static_cast<std::size_t>(D)},
               {&a.logits[static_cast<std::size_t>(t) * V], static_cast<std::size_t>(V)});

    if (trace) {
        trace->n_heads_per_layer = H;
        trace->head_outputs.assign(static_cast<std::size_t>(cfg.n_layers) * H,
                                   Vec(static_cast<std::size_t>(Dh), 0.0));
        const int t = L - 1;
        for (int l = 0; l < cfg.n_layers; ++l)
            for (int h = 0; h < H; ++h)
                for (int i = 0; i < Dh; ++i)
                    trace->head_outputs[static_cast<std::size_t>(l * H + h)]
                                       [static_cast<std::size_t>(i)] =
                        a.layers[static_cast<std::size_t>(l)].u_post[idx(t, h * Dh + i)];
        trace->logits.assign(a.logits.begin() + static_cast<std::ptrdiff_t>(t) * V,
                             a.logits.begin() + static_cast<std::ptrdiff_t>(t + 1) * V);
        if (want_attention) {
            trace->attention.assign(static_cast<std::size_t>(cfg.n_layers), {});
            for (int l = 0; l < cfg.n_layers; ++l)
                trace->attention[static_cast<std::size_t>(l)] =
                    a.layers[static_cast<std::size_t>(l)].attn;
        }
    }
    return a.logits;
}

inline Vec forward(const Params& params, const std::vector<int>& tokens,
                   const SteeringPlan* plan = nullptr, ForwardTrace* trace = nullptr,
                   bool want_attention = false) {
    return forward(params, tokens, plan, nullptr, trace, want_attention);
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

// Gradients with respect to the steering vectors of a plan, aligned with
// plan.heads. Only populated when a plan was active during the forward pass.
struct SteeringGrads {
    std::vector<Vec> vectors;
};

// Backpropagates `dlogits` (L x V) through the cached forward pass. Parameter
// gradients accumulate into `pgrads` when non-null; steering-vector gradients
// accumulate into `sgrads` when non-null. Restricted training passes
// pgrads = nullptr and only pays for the steering chain bookkeeping.
inline void backward(const Params& params, const detail::Activations& a,
                     const SteeringPlan* plan, const Vec& dlogits, Params* pgrads,
                     SteeringGrads* sgrads) {
    const ModelConfig& cfg = params.cfg;
    const int L = a.len;
    const int D = cfg.d_model;
    const int H = cfg.n_heads;
    const int Dh = cfg.d_head();
    const int V = cfg.vocab_size;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(Dh));

    auto idx = [D](int t, int i) { return static_cast<std::size_t>(t) * D + i; };

    if (sgrads && plan) {
        if (sgrads->vectors.size() != plan->heads.size())
            sgrads->vectors.assign(plan->heads.size(), Vec(static_cast<std::size_t>(Dh), 0.0));
    }
    std::vector<int> steer_index(static_cast<std::size_t>(cfg.n_layers) * H, -1);
    if (plan)
        for (std::size_t s = 0; s < plan->heads.size(); ++s)
            steer_index[static_cast<std::size_t>(plan->heads[s].layer * H +
                                                 plan->heads[s].head)] =
                static_cast<int>(s);

    // Final head
    Vec dhf(static_cast<std::size_t>(L) * D, 0.0);
    for (int t = 0; t < L; ++t) {
        std::span<const double> dl{&dlogits[static_cast<std::size_t>(t) * V],
                                   static_cast<std::size_t>(V)};
        if (pgrads)
            outer_acc(pgrads->w_out, dl, {&a.hf[idx(t, 0)], static_cast<std::size_t>(D)});
        matvec_t_acc(params.w_out, dl, {&dhf[idx(t, 0)], static_cast<std::size_t>(D)});
    }

    Vec dx(static_cast<std::size_t>(L) * D, 0.0);
    {
        Vec dg_dummy, db_dummy;
        if (!pgrads) {
            dg_dummy.assign(static_cast<std::size_t>(D), 0.0);
            db_dummy.assign(static_cast<std::size_t>(D), 0.0);
        }
        for (int t = 0; t < L; ++t)
            detail::layernorm_bwd(
                {&dhf[idx(t, 0)], static_cast<std::size_t>(D)}, params.lnf_g,
                {&a.lnf.xhat[idx(t, 0)], static_cast<std::size_t>(D)},
                a.lnf.rstd[static_cast<std::size_t>(t)],
                {&dx[idx(t, 0)], static_cast<std::size_t>(D)},
                pgrads ? std::span<double>(pgrads->lnf_g) : std::span<double>(dg_dummy),
                pgrads ? std::span<double>(pgrads->lnf_b) : std::span<double>(db_dummy));
    }

    const int Dm = 4 * D;
    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const LayerParams& lp = params.layers[static_cast<std::size_t>(l)];
        const detail::LayerActs& la = a.layers[static_cast<std::size_t>(l)];
        LayerParams* gp = pgrads ? &pgrads->layers[static_cast<std::size_t>(l)] : nullptr;

        // MLP
        Vec dh2(static_cast<std::size_t>(L) * D, 0.0);
        {
            Vec dm1(static_cast<std::size_t>(Dm), 0.0);
            Vec da1(static_cast<std::size_t>(Dm), 0.0);
            for (int t = 0; t < L; ++t) {
                std::span<const double> dm2{&dx[idx(t, 0)], static_cast<std::size_t>(D)};
                if (gp) {
                    outer_acc(gp->mlp_w2, dm2,
                              {&la.a1[static_cast<std::size_t>(t) * Dm],
                               static_cast<std::size_t>(Dm)});
                    for (int i = 0; i < D; ++i)
                        gp->mlp_b2[static_cast<std::size_t>(i)] += dm2[static_cast<std::size_t>(i)];
                }
                std::fill(da1.begin(), da1.end(), 0.0);
                matvec_t_acc(lp.mlp_w2, dm2, da1);
                for (int i = 0; i < Dm; ++i)
                    dm1[static_cast<std::size_t>(i)] =
                        da1[static_cast<std::size_t>(i)] *
                        detail::gelu_grad(la.m1[static_cast<std::size_t>(t) * Dm + i]);
                if (gp) {
                    outer_acc(gp->mlp_w1, dm1, {&la.h2[idx(t, 0)], static_cast<std::size_t>(D)});
                    for (int i = 0; i < Dm; ++i)
                        gp->mlp_b1[static_cast<std::size_t>(i)] += dm1[static_cast<std::size_t>(i)];
                }
                matvec_t_acc(lp.mlp_w1, dm1, {&dh2[idx(t, 0)], static_cast<std::size_t>(D)});
            }
        }
        // LN2: dx becomes the gradient wrt x_mid (skip path plus LN path).
        {
            Vec dg_dummy, db_dummy;
            if (!gp) {
                dg_dummy.assign(static_cast<std::size_t>(D), 0.0);
                db_dummy.assign(static_cast<std::size_t>(D), 0.0);
            }
            for (int t = 0; t < L; ++t)
                detail::layernorm_bwd(
                    {&dh2[idx(t, 0)], static_cast<std::size_t>(D)}, lp.ln2_g,
                    {&la.ln2.xhat[idx(t, 0)], static_cast<std::size_t>(D)},
                    la.ln2.rstd[static_cast<std::size_t>(t)],
                    {&dx[idx(t, 0)], static_cast<std::size_t>(D)},
                    gp ? std::span<double>(gp->ln2_g) : std::span<double>(dg_dummy),
                    gp ? std::span<double>(gp->ln2_b) : std::span<double>(db_dummy));
        }

        // Attention output projection
        Vec du_post(static_cast<std::size_t>(L) * D, 0.0);
        for (int t = 0; t < L; ++t) {
            std::span<const double> dao{&dx[idx(t, 0)], static_cast<std::size_t>(D)};
            if (gp)
                outer_acc(gp->wo, dao, {&la.u_post[idx(t, 0)], static_cast<std::size_t>(D)});
            matvec_t_acc(lp.wo, dao, {&du_post[idx(t, 0)], static_cast<std::size_t>(D)});
        }

        // Steering hook
        Vec du_pre = du_post;
        for (int h = 0; h < H; ++h) {
            const int slot = steer_index[static_cast<std::size_t>(l * H + h)];
            if (!plan || slot < 0) continue;
            const int off = h * Dh;
            const Vec& r = plan->vectors[static_cast<std::size_t>(slot)];
            for (int t = plan->steer_from; t < L; ++t) {
                const double nrm = la.steer_norm[static_cast<std::size_t>(t) * H + h];
                std::span<const double> dup{&du_post[idx(t, off)], static_cast<std::size_t>(Dh)};
                if (sgrads)
                    for (int i = 0; i < Dh; ++i)
                        sgrads->vectors[static_cast<std::size_t>(slot)]
                                       [static_cast<std::size_t>(i)] +=
                            nrm * dup[static_cast<std::size_t>(i)];
                if (nrm > 0.0) {
                    double rdot = 0.0;
                    for (int i = 0; i < Dh; ++i)
                        rdot += r[static_cast<std::size_t>(i)] * dup[static_cast<std::size_t>(i)];
                    for (int i = 0; i < Dh; ++i)
                        du_pre[idx(t, off + i)] +=
                            (la.u_pre[idx(t, off + i)] / nrm) * rdot;
                }
            }
        }

        // Attention core
        Vec dq(static_cast<std::size_t>(L) * D, 0.0);
        Vec dk(static_cast<std::size_t>(L) * D, 0.0);
        Vec dv(static_cast<std::size_t>(L) * D, 0.0);
        for (int h = 0; h < H; ++h) {
            const int off = h * Dh;
            const Vec& A = la.attn[static_cast<std::size_t>(h)];
            for (int t = 0; t < L; ++t) {
                const int jmax = cfg.causal ? t : L - 1;
                // dA and dv
                Vec dArow(static_cast<std::size_t>(jmax) + 1, 0.0);
                for (int j = 0; j <= jmax; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < Dh; ++i)
                        s += du_pre[idx(t, off + i)] * la.v[idx(j, off + i)];
                    dArow[static_cast<std::size_t>(j)] = s;
                    const double aij = A[static_cast<std::size_t>(t) * L + j];
                    for (int i = 0; i < Dh; ++i)
                        dv[idx(j, off + i)] += aij * du_pre[idx(t, off + i)];
                }
                // softmax backward
                double inner = 0.0;
                for (int j = 0; j <= jmax; ++j)
                    inner += A[static_cast<std::size_t>(t) * L + j] *
                             dArow[static_cast<std::size_t>(j)];
                for (int j = 0; j <= jmax; ++j) {
                    const double ds =
                        A[static_cast<std::size_t>(t) * L + j] *
                        (dArow[static_cast<std::size_t>(j)] - inner) * inv_sqrt_dh;
                    for (int i = 0; i < Dh; ++i) {
                        dq[idx(t, off + i)] += ds * la.k[idx(j, off + i)];
                        dk[idx(j, off + i)] += ds * la.q[idx(t, off + i)];
                    }
                }
            }
        }

        // Projections and LN1
        Vec dh1(static_cast<std::size_t>(L) * D, 0.0);
        for (int t = 0; t < L; ++t) {
            std::span<const double> h1t{&la.h1[idx(t, 0)], static_cast<std::size_t>(D)};
            std::span<const double> dqt{&dq[idx(t, 0)], static_cast<std::size_t>(D)};
            std::span<const double> dkt{&dk[idx(t, 0)], static_cast<std::size_t>(D)};
            std::span<const double> dvt{&dv[idx(t, 0)], static_cast<std::size_t>(D)};
            if (gp) {
                outer_acc(gp->wq, dqt, h1t);
                outer_acc(gp->wk, dkt, h1t);
                outer_acc(gp->wv, dvt, h1t);
            }
            std::span<double> dh1t{&dh1[idx(t, 0)], static_cast<std::size_t>(D)};
            matvec_t_acc(lp.wq, dqt, dh1t);
            matvec_t_acc(lp.wk, dkt, dh1t);
            matvec_t_acc(lp.wv, dvt, dh1t);
        }
        {
            Vec dg_dummy, db_dummy;
            if (!gp) {
                dg_dummy.assign(static_cast<std::size_t>(D), 0.0);
                db_dummy.assign(static_cast<std::size_t>(D), 0.0);
            }
            for (int t = 0; t < L; ++t)
                detail::layernorm_bwd(
                    {&dh1[idx(t, 0)], static_cast<std::size_t>(D)}, lp.ln1_g,
                    {&la.ln1.xhat[idx(t, 0)], static_cast<std::size_t>(D)},
                    la.ln1.rstd[static_cast<std::size_t>(t)],
                    {&dx[idx(t, 0)], static_cast<std::size_t>(D)},
                    gp ? std::span<double>(gp->ln1_g) : std::span<double>(dg_dummy),
                    gp ? std::span<double>(gp->ln1_b) : std::span<double>(db_dummy));
        }
        // dx now holds the gradient wrt the layer input (skip + both branches).
    }

    if (pgrads) {
        for (int t = 0; t < L; ++t)
            for (int i = 0; i < D; ++i) {
                pgrads->embed.at(a.tokens[static_cast<std::size_t>(t)], i) += dx[idx(t, i)];
                pgrads->pos.at(t, i) += dx[idx(t, i)];
            }
    }
}

// ---------------------------------------------------------------------------
// Probabilities, scoring, sampling
// ---------------------------------------------------------------------------

inline Vec softmax(std::span<const double> logits, double temperature = 1.0) {
    if (!(temperature > 0.0)) throw ContractError("temperature must be positive");
    Vec p(logits.size());
    double maxv = -1e300;
    for (double v : logits) maxv = std::max(maxv, v);
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp((logits[i] - maxv) / temperature);
        z += p[i];
    }
    for (auto& v : p) v /= z;
    return p;
}

inline Vec log_softmax(std::span<const double> logits) {
    Vec out(logits.size());
    double maxv = -1e300;
    for (double v : logits) maxv = std::max(maxv, v);
    double z = 0.0;
    for (double v : logits) z += std::exp(v - maxv);
    const double lz = std::log(z) + maxv;
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
    return out;
}

// Mean per-token log-probability of `answer` given `prompt` (and steering).
inline double logprob_of_sequence(const Params& params, const std::vector<int>& prompt,
                                  const std::vector<int>& answer,
                                  const SteeringPlan* plan = nullptr) {
    if (answer.empty()) throw ContractError("logprob_of_sequence: empty answer");
    std::vector<int> seq = prompt;
    seq.insert(seq.end(), answer.begin(), answer.end());
    SteeringPlan local;
    if (plan) {
        local = *plan;
        local.steer_from = static_cast<int>(prompt.size()) - 1;
    }
    Vec logits = forward(params, seq, plan ? &local : nullptr);
    const int V = params.cfg.vocab_size;
    double total = 0.0;
    for (std::size_t i = 0; i < answer.size(); ++i) {
        const std::size_t pos = prompt.size() - 1 + i;
        Vec lsm = log_softmax({&logits[pos * static_cast<std::size_t>(V)],
                               static_cast<std::size_t>(V)});
        total += lsm[static_cast<std::size_t>(answer[i])];
    }
    return total / static_cast<double>(answer.size());
}

struct SampleResult {
    std::vector<int> tokens;   // generated tokens, end token excluded
    bool hit_end = false;
};

// One draw from softmax(logits / T), or the argmax when `greedy` is set.
inline int sample_token(std::span<const double> logits, double temperature,
                        std::mt19937_64& rng, bool greedy = false) {
    const int v = static_cast<int>(logits.size());
    if (greedy) {
        int best = 0;
        for (int i = 1; i < v; ++i)
            if (logits[static_cast<std::size_t>(i)] > logits[static_cast<std::size_t>(best)])
                best = i;
        return best;
    }
    Vec p = softmax(logits, temperature);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double x = u(rng);
    double acc = 0.0;
    for (int i = 0; i < v; ++i) {
        acc += p[static_cast<std::size_t>(i)];
        if (x < acc) return i;
    }
    return v - 1;
}

// Softmax sampling at temperature T; greedy when `greedy` is set. The prompt's
// final position and every generated position are steered when a plan is
// given.
inline SampleResult sample(const Params& params, const std::vector<int>& prompt,
                           const SteeringPlan* plan, double temperature,
                           int max_tokens, std::mt19937_64& rng, bool greedy = false,
                           int end_token = 0) {
    if (!greedy && !(temperature > 0.0))
        throw ContractError("sample: temperature must be positive");
    if (prompt.empty()) throw ContractError("sample: empty prompt");

    SteeringPlan local;
    if (plan) {
        local = *plan;
        local.steer_from = static_cast<int>(prompt.size()) - 1;
    }

    std::vector<int> seq = prompt;
    SampleResult out;
    const int V = params.cfg.vocab_size;
    for (int step = 0; step < max_tokens; ++step) {
        if (static_cast<int>(seq.size()) >= params.cfg.max_seq_len) break;
        Vec logits = forward(params, seq, plan ? &local : nullptr);
        std::span<const double> last{
            &logits[(seq.size() - 1) * static_cast<std::size_t>(V)],
            static_cast<std::size_t>(V)};
        const int next = sample_token(last, temperature, rng, greedy);
        if (next == end_token) {
            out.hit_end = true;
            break;
        }
        out.tokens.push_back(next);
        seq.push_back(next);
    }
    return out;
}

}  // namespace privres

#endif  // PRIVRES_MODEL_HPP
