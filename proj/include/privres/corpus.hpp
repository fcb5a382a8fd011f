#ifndef PRIVRES_CORPUS_HPP
#define PRIVRES_CORPUS_HPP

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "privres/common.hpp"

namespace privres {

// A contiguous privacy span inside a query: token range [start, start+len).
struct SpanRef {
    int type_id = -1;
    int start = 0;
    int len = 0;
};

struct SpanType {
    int id = -1;
    int frequency_rank = 0;  // 1 = most frequent
    std::vector<std::vector<std::string>> surface_forms;
};

struct QueryRecord {
    std::vector<std::string> complete_query;   // I
    std::vector<std::string> redacted_query;   // I with span ranges deleted
    std::vector<SpanRef> spans;                // ranges into complete_query
    std::vector<std::string> gold_answer;      // a
    std::vector<std::string> degraded_answer;  // filled later by the frozen base model
    std::array<std::vector<std::string>, 4> options;
    int correct_option = 0;
    int topic = 0;
};

// The predefined core set of span types plus everything the synthetic task
// needs to be self-contained: the closed vocabulary, answer labels and the
// lookup tables that make the gold answer a deterministic function of the
// span types present.
struct SpanTypeRegistry {
    std::vector<SpanType> types;
    std::vector<std::string> vocab;
    std::vector<std::string> labels;
    std::vector<std::string> topics;
    std::vector<int> topic_label;   // topic index -> label index
    std::vector<int> single_label;  // type id -> label index
    std::map<std::pair<int, int>, int> pair_label;
    double zipf_exponent = 1.0;

    int type_for_rank(int rank) const {
        for (const auto& t : types)
            if (t.frequency_rank == rank) return t.id;
        throw ContractError("no type with rank " + std::to_string(rank));
    }

    // Gold label for a record: the two highest-ranked (most frequent) distinct
    // types present decide; fewer than two fall back to the single/topic
    // tables.
    int label_for(const std::vector<int>& type_ids, int topic) const {
        std::set<int> distinct(type_ids.begin(), type_ids.end());
        std::vector<int> by_rank(distinct.begin(), distinct.end());
        std::sort(by_rank.begin(), by_rank.end(), [&](int a, int b) {
            return types[static_cast<std::size_t>(a)].frequency_rank <
                   types[static_cast<std::size_t>(b)].frequency_rank;
        });
        if (by_rank.empty()) return topic_label[static_cast<std::size_t>(topic)];
        if (by_rank.size() == 1) return single_label[static_cast<std::size_t>(by_rank[0])];
        return pair_label.at({by_rank[0], by_rank[1]});
    }

    std::optional<int> exact_form_match(const std::vector<std::string>& span_tokens) const {
        for (const auto& t : types)
            for (const auto& f : t.surface_forms)
                if (f == span_tokens) return t.id;
        return std::nullopt;
    }

    // Every token that can appear inside a surface form of the given type.
    std::set<std::string> form_tokens(int type_id) const {
        std::set<std::string> out;
        for (const auto& f : types[static_cast<std::size_t>(type_id)].surface_forms)
            out.insert(f.begin(), f.end());
        return out;
    }
};

struct Corpus {
    SpanTypeRegistry registry;
    std::vector<QueryRecord> records;
};

// Closed token vocabulary with a fixed id assignment.
class Vocabulary {
  public:
    Vocabulary() = default;
    explicit Vocabulary(const std::vector<std::string>& tokens) : tokens_(tokens) {
        for (std::size_t i = 0; i < tokens_.size(); ++i)
            index_[tokens_[i]] = static_cast<int>(i);
    }

    int id(const std::string& tok) const {
        auto it = index_.find(tok);
        if (it == index_.end()) throw ContractError("token out of vocabulary: " + tok);
        return it->second;
    }
    bool contains(const std::string& tok) const { return index_.count(tok) != 0; }
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    int size() const { return static_cast<int>(tokens_.size()); }

    std::vector<int> encode(const std::vector<std::string>& toks) const {
        std::vector<int> out;
        out.reserve(toks.size());
        for (const auto& t : toks) out.push_back(id(t));
        return out;
    }
    std::vector<std::string> decode(const std::vector<int>& ids) const {
        std::vector<std::string> out;
        out.reserve(ids.size());
        for (int i : ids) out.push_back(token(i));
        return out;
    }

    static constexpr int kEos = 0;
    static constexpr int kMask = 1;

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

inline Vocabulary make_vocabulary(const SpanTypeRegistry& reg) {
    return Vocabulary(reg.vocab);
}

// ---------------------------------------------------------------------------
// strip_spans
// ---------------------------------------------------------------------------

inline void validate_spans(std::size_t n_tokens, const std::vector<SpanRef>& spans) {
    std::vector<SpanRef> sorted = spans;
    std::sort(sorted.begin(), sorted.end(),
              [](const SpanRef& a, const SpanRef& b) { return a.start < b.start; });
    int prev_end = 0;
    for (const auto& s : sorted) {
        if (s.start < 0 || s.len <= 0 ||
            static_cast<std::size_t>(s.start + s.len) > n_tokens)
            throw ContractError("span range out of bounds");
        if (s.start < prev_end) throw ContractError("span ranges overlap");
        prev_end = s.start + s.len;
    }
}

inline std::vector<std::string> strip_spans(const std::vector<std::string>& tokens,
                                            const std::vector<SpanRef>& spans) {
    validate_spans(tokens.size(), spans);
    std::vector<bool> drop(tokens.size(), false);
    for (const auto& s : spans)
        for (int i = s.start; i < s.start + s.len; ++i)
            drop[static_cast<std::size_t>(i)] = true;
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i)
        if (!drop[i]) out.push_back(tokens[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Zipf sampling over frequency ranks
// ---------------------------------------------------------------------------

class ZipfSampler {
  public:
    ZipfSampler(int n, double exponent) {
        if (n < 1) throw ConfigError("zipf: need at least one outcome");
        if (!(exponent > 0.0)) throw ConfigError("zipf: exponent must be positive");
        cdf_.resize(static_cast<std::size_t>(n));
        double acc = 0.0;
        for (int k = 1; k <= n; ++k) {
            acc += std::pow(static_cast<double>(k), -exponent);
            cdf_[static_cast<std::size_t>(k - 1)] = acc;
        }
        for (auto& v : cdf_) v /= acc;
    }

    // Returns a 1-based frequency rank.
    int operator()(std::mt19937_64& rng) const {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        double x = u(rng);
        auto it = std::lower_bound(cdf_.begin(), cdf_.end(), x);
        return static_cast<int>(it - cdf_.begin()) + 1;
    }

  private:
    std::vector<double> cdf_;
};

// ---------------------------------------------------------------------------
// Corpus generation
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr int kMaxTypes = 64;
inline constexpr int kNumLabels = 32;
inline constexpr int kWordsPerType = 5;

inline std::vector<std::string> pseudo_words(int count, std::mt19937_64& rng) {
    static const std::vector<std::string> syllables = {
        "ba", "do", "fe", "gi", "ku", "lo", "mi", "na", "pe", "ra",
        "su", "ti", "vo", "za", "che", "dru", "gal", "hem", "jor", "kel"};
    std::set<std::string> seen;
    std::vector<std::string> out;
    std::uniform_int_distribution<std::size_t> pick(0, syllables.size() - 1);
    while (static_cast<int>(out.size()) < count) {
        std::string w = syllables[pick(rng)] + syllables[pick(rng)] + syllables[pick(rng)];
        if (seen.insert(w).second) out.push_back(w);
    }
    return out;
}

}  // namespace detail

inline Corpus generate_corpus(std::uint64_t seed, int n_records, int n_types,
                              double zipf_exponent) {
    if (n_records <= 0) throw ConfigError("generate_corpus: n_records must be positive");
    if (n_types < 2) throw ConfigError("generate_corpus: need at least 2 span types");
    if (n_types > detail::kMaxTypes)
        throw ConfigError("generate_corpus: n_types exceeds the template vocabulary");
    if (!(zipf_exponent > 0.0))
        throw ConfigError("generate_corpus: zipf exponent must be positive");

    Corpus corpus;
    SpanTypeRegistry& reg = corpus.registry;
    reg.zipf_exponent = zipf_exponent;

    auto vocab_rng = rng_stream(seed, "corpus/vocab");

    const std::vector<std::string> fillers = {
        "visit", ":", "patient", "reports", "and", ",", ".", "answer",
        "routine", "check", "no", "other", "findings", "acute", "severe",
        "history", "of", "recent"};
    reg.topics = {"northwing", "southwing", "eastwing", "westwing", "daycare", "nightcare"};
    for (int i = 0; i < detail::kNumLabels; ++i) {
        char buf[8];
        std::snprintf(buf, sizeof(buf), "dx%02d", i);
        reg.labels.emplace_back(buf);
    }

    // Per-type disjoint word pools keep surface forms unambiguous.
    std::vector<std::string> span_words =
        detail::pseudo_words(n_types * detail::kWordsPerType, vocab_rng);

    reg.vocab.push_back("<eos>");
    reg.vocab.push_back("<mask>");  // masked-token pretraining of the client encoder
    reg.vocab.insert(reg.vocab.end(), fillers.begin(), fillers.end());
    reg.vocab.insert(reg.vocab.end(), reg.topics.begin(), reg.topics.end());
    reg.vocab.insert(reg.vocab.end(), reg.labels.begin(), reg.labels.end());
    reg.vocab.insert(reg.vocab.end(), span_words.begin(), span_words.end());
    if (reg.vocab.size() > 512)
        throw ConfigError("generate_corpus: vocabulary budget exceeded");

    // Frequency ranks are a seeded permutation of 1..n_types.
    std::vector<int> ranks(static_cast<std::size_t>(n_types));
    for (int i = 0; i < n_types; ++i) ranks[static_cast<std::size_t>(i)] = i + 1;
    std::shuffle(ranks.begin(), ranks.end(), vocab_rng);

    std::uniform_int_distribution<int> form_count(2, 3);
    std::uniform_int_distribution<int> form_len(3, 5);
    for (int t = 0; t < n_types; ++t) {
        SpanType st;
        st.id = t;
        st.frequency_rank = ranks[static_cast<std::size_t>(t)];
        std::vector<std::string> pool(
            span_words.begin() + t * detail::kWordsPerType,
            span_words.begin() + (t + 1) * detail::kWordsPerType);
        std::set<std::vector<std::string>> unique_forms;
        int want = form_count(vocab_rng);
        while (static_cast<int>(unique_forms.size()) < want) {
            int len = form_len(vocab_rng);
            std::vector<std::string> form;
            int prev = -1;
            for (int i = 0; i < len; ++i) {
                std::uniform_int_distribution<int> pick(0, detail::kWordsPerType - 1);
                int w = pick(vocab_rng);
                if (w == prev) w = (w + 1) % detail::kWordsPerType;
                prev = w;
                form.push_back(pool[static_cast<std::size_t>(w)]);
            }
            unique_forms.insert(std::move(form));
        }
        st.surface_forms.assign(unique_forms.begin(), unique_forms.end());
        reg.types.push_back(std::move(st));
    }

    // Answer lookup tables, all seeded.
    std::uniform_int_distribution<int> pick_label(0, detail::kNumLabels - 1);
    for (std::size_t i = 0; i < reg.topics.size(); ++i)
        reg.topic_label.push_back(pick_label(vocab_rng));
    for (int t = 0; t < n_types; ++t) reg.single_label.push_back(pick_label(vocab_rng));
    for (int a = 0; a < n_types; ++a)
        for (int b = 0; b < n_types; ++b) {
            if (a == b) continue;
            if (reg.types[static_cast<std::size_t>(a)].frequency_rank <
                reg.types[static_cast<std::size_t>(b)].frequency_rank)
                reg.pair_label[{a, b}] = pick_label(vocab_rng);
        }

    // Content stream is independent of the vocabulary stream.
    auto rng = rng_stream(seed, "corpus/content");
    ZipfSampler zipf(n_types, zipf_exponent);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_int_distribution<int> pick_topic(0, static_cast<int>(reg.topics.size()) - 1);

    const double count_cdf[5] = {0.06, 0.30, 0.60, 0.85, 1.0};  // spans per record: 0..4

    corpus.records.reserve(static_cast<std::size_t>(n_records));
    for (int r = 0; r < n_records; ++r) {
        QueryRecord rec;
        rec.topic = pick_topic(rng);

        int n_spans = 0;
        double x = u01(rng);
        while (n_spans < 4 && x > count_cdf[n_spans]) ++n_spans;

        std::vector<int> type_ids;
        for (int i = 0; i < n_spans; ++i)
            type_ids.push_back(reg.type_for_rank(zipf(rng)));

        // The two highest-ranked distinct types decide the answer; their spans
        // go into the primary complaint slot, everything else into a
        // parenthetical history slot. Salience is in the text, not only in the
        // lookup table.
        std::set<int> distinct(type_ids.begin(), type_ids.end());
        std::vector<int> by_rank(distinct.begin(), distinct.end());
        std::sort(by_rank.begin(), by_rank.end(), [&](int a, int b) {
            return reg.types[static_cast<std::size_t>(a)].frequency_rank <
                   reg.types[static_cast<std::size_t>(b)].frequency_rank;
        });
        std::set<int> deciding(by_rank.begin(),
                               by_rank.begin() + std::min<std::size_t>(2, by_rank.size()));
        std::vector<int> primary, secondary;
        for (int t : type_ids)
            (deciding.count(t) ? primary : secondary).push_back(t);

        auto append_span = [&](int type_id) {
            const SpanType& st = reg.types[static_cast<std::size_t>(type_id)];
            std::uniform_int_distribution<std::size_t> pick_form(0, st.surface_forms.size() - 1);
            const auto& form = st.surface_forms[pick_form(rng)];
            SpanRef ref;
            ref.type_id = st.id;
            ref.start = static_cast<int>(rec.complete_query.size());
            ref.len = static_cast<int>(form.size());
            rec.complete_query.insert(rec.complete_query.end(), form.begin(), form.end());
            rec.spans.push_back(ref);
        };

        rec.complete_query = {reg.topics[static_cast<std::size_t>(rec.topic)],
                              "visit", ":", "patient", "reports"};
        if (n_spans == 0) {
            rec.complete_query.push_back("routine");
            rec.complete_query.push_back("check");
        } else {
            for (std::size_t i = 0; i < primary.size(); ++i) {
                if (i > 0)
                    rec.complete_query.push_back(u01(rng) < 0.5 ? "and" : ",");
                rec.complete_query.push_back(u01(rng) < 0.5 ? "severe" : "acute");
                append_span(primary[i]);
            }
            if (!secondary.empty()) {
                rec.complete_query.push_back(".");
                rec.complete_query.push_back("history");
                rec.complete_query.push_back("of");
                for (std::size_t i = 0; i < secondary.size(); ++i) {
                    if (i > 0)
                        rec.complete_query.push_back(u01(rng) < 0.5 ? "and" : ",");
                    append_span(secondary[i]);
                }
            }
        }
        rec.complete_query.push_back(".");
        rec.complete_query.push_back("answer");
        rec.complete_query.push_back(":");

        rec.redacted_query = strip_spans(rec.complete_query, rec.spans);

        int label = reg.label_for(type_ids, rec.topic);
        rec.gold_answer = {reg.labels[static_cast<std::size_t>(label)]};

        std::set<int> wrong;
        while (wrong.size() < 3) {
            int w = pick_label(rng);
            if (w != label) wrong.insert(w);
        }
        std::uniform_int_distribution<int> pick_slot(0, 3);
        rec.correct_option = pick_slot(rng);
        auto it = wrong.begin();
        for (int slot = 0; slot < 4; ++slot) {
            if (slot == rec.correct_option) {
                rec.options[static_cast<std::size_t>(slot)] = rec.gold_answer;
            } else {
                rec.options[static_cast<std::size_t>(slot)] = {
                    reg.labels[static_cast<std::size_t>(*it)]};
                ++it;
            }
        }
        corpus.records.push_back(std::move(rec));
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// Split
// ---------------------------------------------------------------------------

struct SplitResult {
    std::vector<QueryRecord> train, dev, test;
    bool degenerate = false;  // some split received zero records
};

inline SplitResult split(const std::vector<QueryRecord>& records, double f_train,
                         double f_dev, double f_test, std::uint64_t seed) {
    if (records.empty()) throw ConfigError("split: empty corpus");
    if (!(f_train > 0.0 && f_dev > 0.0 && f_test > 0.0))
        throw ConfigError("split: fractions must be positive");
    if (std::abs(f_train + f_dev + f_test - 1.0) > 1e-9)
        throw ConfigError("split: fractions must sum to 1");

    const std::size_t n = records.size();
    const double fracs[3] = {f_train, f_dev, f_test};
    std::size_t counts[3];
    double rema[3];
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        double exact = fracs[i] * static_cast<double>(n);
        counts[i] = static_cast<std::size_t>(exact);
        rema[i] = exact - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    // Largest-remainder rounding; ties resolved toward the earlier split.
    while (assigned < n) {
        int best = 0;
        for (int i = 1; i < 3; ++i)
            if (rema[i] > rema[best]) best = i;
        ++counts[best];
        rema[best] = -1.0;
        ++assigned;
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    auto rng = rng_stream(seed, "corpus/split");
    std::shuffle(order.begin(), order.end(), rng);

    SplitResult out;
    std::size_t pos = 0;
    for (int part = 0; part < 3; ++part) {
        auto* dst = part == 0 ? &out.train : part == 1 ? &out.dev : &out.test;
        for (std::size_t i = 0; i < counts[part]; ++i, ++pos)
            dst->push_back(records[order[pos]]);
    }
    out.degenerate = out.train.empty() || out.dev.empty() || out.test.empty();
    return out;
}

}  // namespace privres

#endif  // PRIVRES_CORPUS_HPP
