#ifndef PRIVRES_WIRE_HPP
#define PRIVRES_WIRE_HPP

#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "privres/common.hpp"

namespace privres {

// Frame layout: 4-byte big-endian unsigned length, then a UTF-8 JSON body.
// One request per connection; 16 MiB cap.
inline constexpr std::size_t kMaxFrameBytes = 16ull * 1024 * 1024;
inline constexpr int kWireVersion = 1;

// ---------------------------------------------------------------------------
// base64 (strict: rejects bad characters and bad padding)
// ---------------------------------------------------------------------------

namespace detail {

inline const char* b64_alphabet() {
    return "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

}  // namespace detail

inline std::string base64_encode(std::span<const std::uint8_t> data) {
    const char* tbl = detail::b64_alphabet();
    std::string out;
    out.reserve((data.size() + 2) / 3 * 4);
    std::size_t i = 0;
    while (i + 3 <= data.size()) {
        const std::uint32_t v = (static_cast<std::uint32_t>(data[i]) << 16) |
                                (static_cast<std::uint32_t>(data[i + 1]) << 8) |
                                data[i + 2];
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back(tbl[(v >> 6) & 63]);
        out.push_back(tbl[v & 63]);
        i += 3;
    }
    const std::size_t rem = data.size() - i;
    if (rem == 1) {
        const std::uint32_t v = static_cast<std::uint32_t>(data[i]) << 16;
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back('=');
        out.push_back('=');
    } else if (rem == 2) {
        const std::uint32_t v = (static_cast<std::uint32_t>(data[i]) << 16) |
                                (static_cast<std::uint32_t>(data[i + 1]) << 8);
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back(tbl[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) throw ContractError("base64: length not a multiple of 4");
    static const auto lut = [] {
        std::array<std::int8_t, 256> t{};
        t.fill(-1);
        const char* a = detail::b64_alphabet();
        for (int i = 0; i < 64; ++i) t[static_cast<std::uint8_t>(a[i])] = static_cast<std::int8_t>(i);
        return t;
    }();
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        int pad = 0;
        std::uint32_t v = 0;
        for (std::size_t j = 0; j < 4; ++j) {
            const char c = text[i + j];
            if (c == '=') {
                if (i + 4 != text.size() || j < 2)
                    throw ContractError("base64: misplaced padding");
                ++pad;
                v <<= 6;
                continue;
            }
            if (pad > 0) throw ContractError("base64: data after padding");
            const std::int8_t d = lut[static_cast<std::uint8_t>(c)];
            if (d < 0) throw ContractError("base64: invalid character");
            v = (v << 6) | static_cast<std::uint32_t>(d);
        }
        out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(v & 0xff));
    }
    return out;
}

// Meta-vector payloads travel as little-endian f32.
inline std::string encode_meta_payload(std::span<const double> values) {
    std::vector<std::uint8_t> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const float f = static_cast<float>(values[i]);
        std::memcpy(bytes.data() + i * 4, &f, 4);
    }
    return base64_encode(bytes);
}

inline Vec decode_meta_payload(const std::string& b64) {
    auto bytes = base64_decode(b64);
    if (bytes.size() % 4 != 0) throw ContractError("meta payload: not a float array");
    Vec out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        float f;
        std::memcpy(&f, bytes.data() + i * 4, 4);
        out[i] = static_cast<double>(f);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Messages
// ---------------------------------------------------------------------------

struct WireRequest {
    int version = kWireVersion;
    std::string kind = "infer";  // "infer" or "ping"
    std::string query;           // redacted query text (space-joined tokens)
    std::string meta_b64;        // K * d_head little-endian f32, base64
    std::string head_set_hash;   // hex
    double temperature = 1.0;
    int max_tokens = 64;
    std::optional<std::uint64_t> client_seed;
};

struct WireResponse {
    int version = kWireVersion;
    std::string kind = "result";  // "result", "pong" or "error"
    std::string text;
    int token_count = 0;
    std::string error_code;
    std::string error_message;
};

inline nlohmann::json to_json(const WireRequest& req) {
    nlohmann::json j{{"version", req.version}, {"kind", req.kind}};
    if (req.kind == "infer") {
        j["query"] = req.query;
        j["meta"] = req.meta_b64;
        j["head_set_hash"] = req.head_set_hash;
        j["temperature"] = req.temperature;
        j["max_tokens"] = req.max_tokens;
        if (req.client_seed) j["client_seed"] = *req.client_seed;
    }
    return j;
}

inline WireRequest request_from_json(const nlohmann::json& j) {
    WireRequest req;
    req.version = j.at("version").get<int>();
    req.kind = j.at("kind").get<std::string>();
    if (req.kind == "infer") {
        req.query = j.at("query").get<std::string>();
        req.meta_b64 = j.at("meta").get<std::string>();
        req.head_set_hash = j.at("head_set_hash").get<std::string>();
        req.temperature = j.at("temperature").get<double>();
        req.max_tokens = j.at("max_tokens").get<int>();
        if (j.contains("client_seed"))
            req.client_seed = j.at("client_seed").get<std::uint64_t>();
    }
    return req;
}

inline nlohmann::json to_json(const WireResponse& res) {
    nlohmann::json j{{"version", res.version}, {"kind", res.kind}};
    if (res.kind == "result") {
        j["text"] = res.text;
        j["token_count"] = res.token_count;
    } else if (res.kind == "error") {
        j["error_code"] = res.error_code;
        j["error_message"] = res.error_message;
    }
    return j;
}

inline WireResponse response_from_json(const nlohmann::json& j) {
    WireResponse res;
    res.version = j.at("version").get<int>();
    res.kind = j.at("kind").get<std::string>();
    if (res.kind == "result") {
        res.text = j.at("text").get<std::string>();
        res.token_count = j.at("token_count").get<int>();
    } else if (res.kind == "error") {
        res.error_code = j.at("error_code").get<std::string>();
        res.error_message = j.at("error_message").get<std::string>();
    }
    return res;
}

// ---------------------------------------------------------------------------
// Frame codec
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> encode_frame(const nlohmann::json& body) {
    const std::string text = body.dump();
    if (text.size() > kMaxFrameBytes) throw ContractError("frame: body exceeds 16 MiB");
    std::vector<std::uint8_t> out(4 + text.size());
    const std::uint32_t len = static_cast<std::uint32_t>(text.size());
    out[0] = static_cast<std::uint8_t>((len >> 24) & 0xff);
    out[1] = static_cast<std::uint8_t>((len >> 16) & 0xff);
    out[2] = static_cast<std::uint8_t>((len >> 8) & 0xff);
    out[3] = static_cast<std::uint8_t>(len & 0xff);
    std::memcpy(out.data() + 4, text.data(), text.size());
    return out;
}

inline nlohmann::json decode_frame(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) throw ContractError("frame: truncated length prefix");
    const std::uint32_t len = (static_cast<std::uint32_t>(bytes[0]) << 24) |
                              (static_cast<std::uint32_t>(bytes[1]) << 16) |
                              (static_cast<std::uint32_t>(bytes[2]) << 8) |
                              static_cast<std::uint32_t>(bytes[3]);
    if (len > kMaxFrameBytes) throw ContractError("frame: oversize");
    if (bytes.size() != 4 + static_cast<std::size_t>(len))
        throw ContractError("frame: truncated body");
    try {
        return nlohmann::json::parse(bytes.begin() + 4, bytes.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw ContractError(std::string("frame: malformed JSON: ") + e.what());
    }
}

}  // namespace privres

#endif  // PRIVRES_WIRE_HPP
