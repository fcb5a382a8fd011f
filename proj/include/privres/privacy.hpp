#ifndef PRIVRES_PRIVACY_HPP
#define PRIVRES_PRIVACY_HPP

#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "privres/common.hpp"

namespace privres {

// ---------------------------------------------------------------------------
// The metric-DP noise law p(N) proportional to exp(-eps * ||N||) in n
// dimensions: direction uniform on the unit sphere, radius Gamma(shape n,
// rate eps). E||N|| = n / eps.
// ---------------------------------------------------------------------------

struct NoiseParams {
    double epsilon = 1.0;
    int dimension = 1;

    void validate() const {
        if (!(epsilon > 0.0)) throw ConfigError("noise: epsilon must be positive");
        if (dimension < 1) throw ConfigError("noise: dimension must be >= 1");
    }
};

inline Vec sample_noise(const NoiseParams& np, std::mt19937_64& rng) {
    np.validate();
    const std::size_t n = static_cast<std::size_t>(np.dimension);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec v(n);
    double norm = 0.0;
    do {
        norm = 0.0;
        for (auto& x : v) {
            x = gauss(rng);
            norm += x * x;
        }
        norm = std::sqrt(norm);
    } while (norm == 0.0);
    std::gamma_distribution<double> radius(static_cast<double>(np.dimension),
                                           1.0 / np.epsilon);
    const double l = radius(rng);
    for (auto& x : v) x *= l / norm;
    return v;
}

// log p(N) = -eps * ||N|| + log C(n, eps) where the normalizer comes from the
// radial-times-sphere factorization:
//   C = eps^n / (S_n * Gamma(n)),  S_n = 2 pi^{n/2} / Gamma(n/2).
inline double noise_log_normalizer(const NoiseParams& np) {
    const double n = static_cast<double>(np.dimension);
    return n * std::log(np.epsilon) - std::lgamma(n) - std::log(2.0) -
           (n / 2.0) * std::log(M_PI) + std::lgamma(n / 2.0);
}

inline double noise_log_density(std::span<const double> noise, const NoiseParams& np) {
    np.validate();
    if (noise.size() != static_cast<std::size_t>(np.dimension))
        throw ContractError("noise_log_density: dimension mismatch");
    return -np.epsilon * l2_norm(noise) + noise_log_normalizer(np);
}

// Density of the radius ||N||: Gamma(n, rate eps). Exposed for the quadrature
// and KS oracles.
inline double radial_log_density(double l, const NoiseParams& np) {
    if (l < 0.0) return -1e300;
    const double n = static_cast<double>(np.dimension);
    if (l == 0.0) return np.dimension == 1 ? std::log(np.epsilon) : -1e300;
    return (n - 1.0) * std::log(l) - np.epsilon * l + n * std::log(np.epsilon) -
           std::lgamma(n);
}

// ---------------------------------------------------------------------------
// Monte Carlo verifier for the d_chi ratio bound: for R = Z + N,
//   log p(R | Z) - log p(R | Z') <= eps * ||Z - Z'||
// holds per sample by the triangle inequality; the verifier computes the
// worst observed slack analytically for m sampled outputs.
// ---------------------------------------------------------------------------

struct DchiRatioReport {
    double max_slack = -1e300;  // max over samples of (log-ratio - bound); <= 0 when clean
    long violations = 0;        // samples with slack above tolerance
    double bound = 0.0;         // eps * ||Z - Z'||
};

inline DchiRatioReport verify_dchi_ratio(std::span<const double> z,
                                         std::span<const double> z_prime, long samples,
                                         const NoiseParams& np, std::mt19937_64& rng,
                                         double tolerance = 1e-9) {
    np.validate();
    if (z.size() != z_prime.size() ||
        z.size() != static_cast<std::size_t>(np.dimension))
        throw ContractError("verify_dchi_ratio: dimension mismatch");
    if (std::abs(l2_norm(z) - 1.0) > 1e-9 || std::abs(l2_norm(z_prime) - 1.0) > 1e-9)
        throw ContractError("verify_dchi_ratio: inputs must be unit vectors");

    Vec diff(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) diff[i] = z[i] - z_prime[i];
    DchiRatioReport report;
    report.bound = np.epsilon * l2_norm(diff);

    Vec r(z.size());
    for (long s = 0; s < samples; ++s) {
        Vec noise = sample_noise(np, rng);
        double d_z = 0.0, d_zp = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            r[i] = z[i] + noise[i];
            d_z += noise[i] * noise[i];
            const double e = r[i] - z_prime[i];
            d_zp += e * e;
        }
        // log p(R|Z) - log p(R|Z') with the normalizer cancelled.
        const double log_ratio = -np.epsilon * (std::sqrt(d_z) - std::sqrt(d_zp));
        const double slack = log_ratio - report.bound;
        report.max_slack = std::max(report.max_slack, slack);
        if (slack > tolerance) ++report.violations;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Privacy-budget accountant
// ---------------------------------------------------------------------------

enum class BudgetMethod { DchiFull, DchiSpans, Paraphrase, PrivacyRestore, OutputSampling };

inline std::string budget_method_name(BudgetMethod m) {
    switch (m) {
        case BudgetMethod::DchiFull: return "dchi_full";
        case BudgetMethod::DchiSpans: return "dchi_spans";
        case BudgetMethod::Paraphrase: return "paraphrase";
        case BudgetMethod::PrivacyRestore: return "privacyrestore";
        case BudgetMethod::OutputSampling: return "output_sampling";
    }
    throw ConfigError("unknown budget method");
}

inline BudgetMethod budget_method_from_name(const std::string& name) {
    if (name == "dchi_full") return BudgetMethod::DchiFull;
    if (name == "dchi_spans") return BudgetMethod::DchiSpans;
    if (name == "paraphrase") return BudgetMethod::Paraphrase;
    if (name == "privacyrestore") return BudgetMethod::PrivacyRestore;
    if (name == "output_sampling") return BudgetMethod::OutputSampling;
    throw ConfigError("unknown budget method: " + name);
}

struct BudgetInputs {
    std::optional<double> n;        // protected token count (full query)
    std::optional<double> n_sp;     // protected span token count
    std::optional<double> d_e;      // max pairwise token-embedding distance
    std::optional<double> epsilon;  // per-mechanism privacy hyperparameter
    std::optional<double> tau;      // paraphrase generation temperature
    std::optional<double> T;        // output sampling temperature
    std::optional<double> delta_u;  // logit sensitivity
};

struct BudgetReport {
    std::string method;
    std::map<std::string, double> inputs;
    std::string formula;
    double budget = 0.0;
};

inline BudgetReport budget(BudgetMethod method, const BudgetInputs& in) {
    auto need = [&](const std::optional<double>& v, const char* name) {
        if (!v)
            throw ConfigError(std::string("budget: missing input '") + name + "' for " +
                              budget_method_name(method));
        return *v;
    };
    BudgetReport rep;
    rep.method = budget_method_name(method);
    switch (method) {
        case BudgetMethod::DchiFull: {
            const double n = need(in.n, "n"), de = need(in.d_e, "d_e"),
                         eps = need(in.epsilon, "epsilon");
            rep.inputs = {{"n", n}, {"d_e", de}, {"epsilon", eps}};
            rep.formula = "n * d_e * epsilon";
            rep.budget = n * de * eps;
            break;
        }
        case BudgetMethod::DchiSpans: {
            const double nsp = need(in.n_sp, "n_sp"), de = need(in.d_e, "d_e"),
                         eps = need(in.epsilon, "epsilon");
            rep.inputs = {{"n_sp", nsp}, {"d_e", de}, {"epsilon", eps}};
            rep.formula = "n_sp * d_e * epsilon";
            rep.budget = nsp * de * eps;
            break;
        }
        case BudgetMethod::Paraphrase: {
            const double n = need(in.n, "n"), tau = need(in.tau, "tau");
            rep.inputs = {{"n", n}, {"tau", tau}};
            rep.formula = "2n / tau";
            rep.budget = 2.0 * n / tau;
            break;
        }
        case BudgetMethod::PrivacyRestore: {
            const double eps = need(in.epsilon, "epsilon");
            rep.inputs = {{"epsilon", eps}};
            rep.formula = "2 * epsilon";
            rep.budget = 2.0 * eps;
            break;
        }
        case BudgetMethod::OutputSampling: {
            const double du = need(in.delta_u, "delta_u"), t = need(in.T, "T");
            rep.inputs = {{"delta_u", du}, {"T", t}};
            rep.formula = "2 * delta_u / T";
            rep.budget = 2.0 * du / t;
            break;
        }
    }
    if (rep.budget < 0.0) throw ContractError("budget: negative budget");
    return rep;
}

// The published calibration table: per dataset, the hyperparameters that pin
// every mechanism to a common budget target. Only the first row is fully
// self-consistent; the others reproduce the stated numbers as-is.
struct BudgetTableRow {
    std::string dataset;
    double n, d_e, eps_full, n_sp, eps_spans, tau, eps_restore;
};

inline std::vector<BudgetTableRow> budget_table_fixtures() {
    return {
        {"Pri-DDXPlus", 106.0, 1.64, 0.86, 49.0, 1.86, 1.41, 75.0},
        {"Pri-NLICE", 72.0, 1.39, 1.50, 38.0, 2.84, 2.08, 75.0},
        {"Pri-SLJA", 193.0, 1.45, 0.54, 42.0, 2.46, 0.78, 75.0},
    };
}

inline std::vector<BudgetReport> budget_table() {
    std::vector<BudgetReport> out;
    for (const auto& row : budget_table_fixtures()) {
        BudgetInputs in;
        in.n = row.n;
        in.d_e = row.d_e;
        in.epsilon = row.eps_full;
        auto full = budget(BudgetMethod::DchiFull, in);
        full.method = row.dataset + "/" + full.method;
        out.push_back(full);

        BudgetInputs spans;
        spans.n_sp = row.n_sp;
        spans.d_e = row.d_e;
        spans.epsilon = row.eps_spans;
        auto sp = budget(BudgetMethod::DchiSpans, spans);
        sp.method = row.dataset + "/" + sp.method;
        out.push_back(sp);

        BudgetInputs para;
        para.n = row.n;
        para.tau = row.tau;
        auto pa = budget(BudgetMethod::Paraphrase, para);
        pa.method = row.dataset + "/" + pa.method;
        out.push_back(pa);

        BudgetInputs restore;
        restore.epsilon = row.eps_restore;
        auto re = budget(BudgetMethod::PrivacyRestore, restore);
        re.method = row.dataset + "/" + re.method;
        out.push_back(re);
    }
    return out;
}

}  // namespace privres

#endif  // PRIVRES_PRIVACY_HPP
