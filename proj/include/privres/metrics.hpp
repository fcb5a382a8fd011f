#ifndef PRIVRES_METRICS_HPP
#define PRIVRES_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "privres/common.hpp"
#include "privres/model.hpp"

namespace privres {

// ---------------------------------------------------------------------------
// ROUGE-L: LCS-based F-measure.
// ---------------------------------------------------------------------------

template <typename T>
std::size_t lcs_length(const std::vector<T>& a, const std::vector<T>& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            if (a[i - 1] == b[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

template <typename T>
double rouge_l(const std::vector<T>& reference, const std::vector<T>& hypothesis) {
    if (reference.empty() && hypothesis.empty()) return 0.0;
    if (reference.empty() || hypothesis.empty()) return 0.0;
    const double lcs = static_cast<double>(lcs_length(reference, hypothesis));
    if (lcs == 0.0) return 0.0;
    const double p = lcs / static_cast<double>(hypothesis.size());
    const double r = lcs / static_cast<double>(reference.size());
    return 2.0 * p * r / (p + r);
}

// ---------------------------------------------------------------------------
// MC1 / MC2 over 4-option records
// ---------------------------------------------------------------------------

struct EvalCase {
    std::vector<int> prompt;
    std::array<std::vector<int>, 4> options;
    int correct = 0;
    std::optional<SteeringPlan> plan;
};

struct McScores {
    double mc1 = 0.0;
    double mc2 = 0.0;
};

// MC1: fraction of records whose correct option has the highest
// length-normalized sequence log-probability (ties resolved to the earliest
// option). MC2: mean of P(correct) / sum over options of P.
inline McScores mc1_mc2(const Params& params, const std::vector<EvalCase>& cases) {
    if (cases.empty()) throw ContractError("mc1_mc2: no cases");
    McScores out;
    for (const auto& c : cases) {
        for (const auto& opt : c.options)
            if (opt.empty()) throw ContractError("mc1_mc2: missing option");
        std::array<double, 4> probs{};
        int best = 0;
        for (int i = 0; i < 4; ++i) {
            const double lp = logprob_of_sequence(
                params, c.prompt, c.options[static_cast<std::size_t>(i)],
                c.plan ? &*c.plan : nullptr);
            probs[static_cast<std::size_t>(i)] = std::exp(lp);
            if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(best)])
                best = i;
        }
        if (best == c.correct) out.mc1 += 1.0;
        double total = 0.0;
        for (double p : probs) total += p;
        out.mc2 += probs[static_cast<std::size_t>(c.correct)] / total;
    }
    out.mc1 /= static_cast<double>(cases.size());
    out.mc2 /= static_cast<double>(cases.size());
    return out;
}

// ---------------------------------------------------------------------------
// Output leakage: fraction of outputs containing any protected surface form
// as a contiguous token run.
// ---------------------------------------------------------------------------

inline bool contains_form(const std::vector<std::string>& output,
                          const std::vector<std::string>& form) {
    if (form.empty() || output.size() < form.size()) return false;
    for (std::size_t i = 0; i + form.size() <= output.size(); ++i)
        if (std::equal(form.begin(), form.end(), output.begin() + static_cast<std::ptrdiff_t>(i)))
            return true;
    return false;
}

inline double occurrence_rate(const std::vector<std::vector<std::string>>& outputs,
                              const std::vector<std::vector<std::string>>& forms) {
    if (outputs.empty()) return 0.0;
    long hits = 0;
    for (const auto& out : outputs)
        for (const auto& form : forms)
            if (contains_form(out, form)) {
                ++hits;
                break;
            }
    return static_cast<double>(hits) / static_cast<double>(outputs.size());
}

// ---------------------------------------------------------------------------
// Micro-averaged F1 over multilabel predictions
// ---------------------------------------------------------------------------

inline double micro_f1(const std::vector<std::vector<char>>& predictions,
                       const std::vector<std::vector<char>>& gold) {
    if (predictions.size() != gold.size())
        throw ContractError("micro_f1: prediction/gold size mismatch");
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i].size() != gold[i].size())
            throw ContractError("micro_f1: label width mismatch");
        for (std::size_t t = 0; t < predictions[i].size(); ++t) {
            const bool p = predictions[i][t] != 0;
            const bool g = gold[i][t] != 0;
            if (p && g) ++tp;
            else if (p) ++fp;
            else if (g) ++fn;
        }
    }
    if (tp == 0) return 0.0;
    const double prec = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double rec = static_cast<double>(tp) / static_cast<double>(tp + fn);
    return 2.0 * prec * rec / (prec + rec);
}

}  // namespace privres

#endif  // PRIVRES_METRICS_HPP
