#ifndef PRIVRES_STATS_HPP
#define PRIVRES_STATS_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "privres/common.hpp"

namespace privres {

// Regularized lower incomplete gamma; the CDF of Gamma(shape, rate) at x.
inline double gamma_cdf(double shape, double rate, double x) {
    if (x <= 0.0) return 0.0;
    return boost::math::gamma_p(shape, rate * x);
}

// Upper tail of the chi-square distribution with k degrees of freedom.
inline double chi_square_pvalue(double statistic, int dof) {
    if (statistic <= 0.0) return 1.0;
    return boost::math::gamma_q(static_cast<double>(dof) / 2.0, statistic / 2.0);
}

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

// One-sample Kolmogorov-Smirnov test against a continuous CDF, with the
// Stephens small-sample correction on the asymptotic Kolmogorov tail.
inline KsResult ks_test(std::vector<double> samples,
                        const std::function<double(double)>& cdf) {
    if (samples.empty()) throw ContractError("ks_test: no samples");
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double f = cdf(samples[i]);
        const double lo = static_cast<double>(i) / n;
        const double hi = static_cast<double>(i + 1) / n;
        d = std::max({d, std::abs(f - lo), std::abs(hi - f)});
    }
    KsResult out;
    out.statistic = d;
    const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
    double p = 0.0;
    for (int j = 1; j <= 100; ++j) {
        const double term = 2.0 * ((j % 2 == 1) ? 1.0 : -1.0) *
                            std::exp(-2.0 * j * j * lambda * lambda);
        p += term;
        if (std::abs(term) < 1e-12) break;
    }
    out.p_value = std::clamp(p, 0.0, 1.0);
    return out;
}

// Pearson chi-square goodness of fit, pooling expected counts below
// `min_expected` into a single tail bin.
inline double chi_square_gof_pvalue(const std::vector<long>& counts,
                                    const std::vector<double>& expected,
                                    double min_expected = 5.0) {
    if (counts.size() != expected.size())
        throw ContractError("chi_square_gof: size mismatch");
    double chi2 = 0.0;
    int bins = 0;
    double pooled_obs = 0.0, pooled_exp = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (expected[i] < min_expected) {
            pooled_obs += static_cast<double>(counts[i]);
            pooled_exp += expected[i];
            continue;
        }
        const double diff = static_cast<double>(counts[i]) - expected[i];
        chi2 += diff * diff / expected[i];
        ++bins;
    }
    if (pooled_exp > 0.0) {
        const double diff = pooled_obs - pooled_exp;
        chi2 += diff * diff / pooled_exp;
        ++bins;
    }
    if (bins < 2) return 1.0;
    return chi_square_pvalue(chi2, bins - 1);
}

}  // namespace privres

#endif  // PRIVRES_STATS_HPP
