#ifndef PRIVRES_CORPUS_IO_HPP
#define PRIVRES_CORPUS_IO_HPP

#include <fstream>
#include <string>

#include <json.hpp>

#include "privres/common.hpp"
#include "privres/corpus.hpp"

namespace privres {

using nlohmann::json;

inline json record_to_json(const QueryRecord& rec) {
    json spans = json::array();
    for (const auto& s : rec.spans)
        spans.push_back({{"type", s.type_id}, {"start", s.start}, {"len", s.len}});
    json options = json::array();
    for (const auto& opt : rec.options) options.push_back(opt);
    return json{{"complete_query", rec.complete_query},
                {"redacted_query", rec.redacted_query},
                {"spans", spans},
                {"gold_answer", rec.gold_answer},
                {"degraded_answer", rec.degraded_answer},
                {"options", options},
                {"correct_option", rec.correct_option},
                {"topic", rec.topic}};
}

inline QueryRecord record_from_json(const json& j) {
    QueryRecord rec;
    rec.complete_query = j.at("complete_query").get<std::vector<std::string>>();
    rec.redacted_query = j.at("redacted_query").get<std::vector<std::string>>();
    for (const auto& s : j.at("spans")) {
        SpanRef ref;
        ref.type_id = s.at("type").get<int>();
        ref.start = s.at("start").get<int>();
        ref.len = s.at("len").get<int>();
        rec.spans.push_back(ref);
    }
    rec.gold_answer = j.at("gold_answer").get<std::vector<std::string>>();
    rec.degraded_answer = j.at("degraded_answer").get<std::vector<std::string>>();
    const auto& opts = j.at("options");
    for (std::size_t i = 0; i < 4; ++i)
        rec.options[i] = opts.at(i).get<std::vector<std::string>>();
    rec.correct_option = j.at("correct_option").get<int>();
    rec.topic = j.at("topic").get<int>();
    return rec;
}

inline void write_corpus_jsonl(const std::string& path,
                               const std::vector<QueryRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open corpus file for writing: " + path);
    for (const auto& rec : records) out << record_to_json(rec).dump() << "\n";
}

inline std::vector<QueryRecord> read_corpus_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open corpus file: " + path);
    std::vector<QueryRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        records.push_back(record_from_json(json::parse(line)));
    }
    return records;
}

inline json registry_to_json(const SpanTypeRegistry& reg, const std::string& config_hash) {
    json types = json::array();
    for (const auto& t : reg.types)
        types.push_back({{"id", t.id},
                         {"frequency_rank", t.frequency_rank},
                         {"surface_forms", t.surface_forms}});
    json pairs = json::array();
    for (const auto& [key, label] : reg.pair_label)
        pairs.push_back({{"a", key.first}, {"b", key.second}, {"label", label}});
    return json{{"version", 1},
                {"config_hash", config_hash},
                {"zipf_exponent", reg.zipf_exponent},
                {"types", types},
                {"vocab", reg.vocab},
                {"labels", reg.labels},
                {"topics", reg.topics},
                {"topic_label", reg.topic_label},
                {"single_label", reg.single_label},
                {"pair_label", pairs}};
}

inline SpanTypeRegistry registry_from_json(const json& j) {
    SpanTypeRegistry reg;
    reg.zipf_exponent = j.at("zipf_exponent").get<double>();
    for (const auto& t : j.at("types")) {
        SpanType st;
        st.id = t.at("id").get<int>();
        st.frequency_rank = t.at("frequency_rank").get<int>();
        st.surface_forms =
            t.at("surface_forms").get<std::vector<std::vector<std::string>>>();
        reg.types.push_back(std::move(st));
    }
    reg.vocab = j.at("vocab").get<std::vector<std::string>>();
    reg.labels = j.at("labels").get<std::vector<std::string>>();
    reg.topics = j.at("topics").get<std::vector<std::string>>();
    reg.topic_label = j.at("topic_label").get<std::vector<int>>();
    reg.single_label = j.at("single_label").get<std::vector<int>>();
    for (const auto& p : j.at("pair_label"))
        reg.pair_label[{p.at("a").get<int>(), p.at("b").get<int>()}] =
            p.at("label").get<int>();
    return reg;
}

inline void write_registry(const std::string& path, const SpanTypeRegistry& reg,
                           const std::string& config_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open registry file for writing: " + path);
    out << registry_to_json(reg, config_hash).dump(2) << "\n";
}

inline SpanTypeRegistry read_registry(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open registry file: " + path);
    json j;
    in >> j;
    return registry_from_json(j);
}

}  // namespace privres

#endif  // PRIVRES_CORPUS_IO_HPP
