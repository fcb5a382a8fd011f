#include <gtest/gtest.h>

#include <random>

#include "privres/wire.hpp"

using namespace privres;

TEST(Base64, KnownVectorsAndStrictness) {
    auto enc = [](const std::string& s) {
        return base64_encode({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
    };
    EXPECT_EQ(enc(""), "");
    EXPECT_EQ(enc("f"), "Zg==");
    EXPECT_EQ(enc("fo"), "Zm8=");
    EXPECT_EQ(enc("foo"), "Zm9v");
    EXPECT_EQ(enc("foobar"), "Zm9vYmFy");

    auto rt = base64_decode("Zm9vYmFy");
    EXPECT_EQ(std::string(rt.begin(), rt.end()), "foobar");

    EXPECT_THROW(base64_decode("Zg="), ContractError);    // bad length
    EXPECT_THROW(base64_decode("Z===" ), ContractError);  // bad padding
    EXPECT_THROW(base64_decode("Zm9$"), ContractError);   // bad character
    EXPECT_THROW(base64_decode("Zg==Zg=="), ContractError);  // data after padding
}

TEST(MetaPayload, SizeContractAndRoundTrip) {
    // K=4 heads of d_head=8: 32 floats -> 128 bytes before base64.
    Vec values(32, 0.0);
    for (std::size_t i = 0; i < values.size(); ++i)
        values[i] = static_cast<double>(static_cast<float>(0.137 * static_cast<double>(i) - 1.0));
    const std::string b64 = encode_meta_payload(values);
    EXPECT_EQ(base64_decode(b64).size(), 128u);

    Vec back = decode_meta_payload(b64);
    ASSERT_EQ(back.size(), values.size());
    for (std::size_t i = 0; i < values.size(); ++i) EXPECT_EQ(back[i], values[i]);
}

TEST(Frames, RoundTripAndErrors) {
    WireRequest req;
    req.query = "patient reports . answer :";
    req.meta_b64 = encode_meta_payload(Vec(8, 0.25));
    req.head_set_hash = "00ff00ff00ff00ff";
    req.temperature = 1.25;
    req.max_tokens = 32;
    req.client_seed = 42;

    auto bytes = encode_frame(to_json(req));
    auto decoded = request_from_json(decode_frame(bytes));
    EXPECT_EQ(decoded.kind, "infer");
    EXPECT_EQ(decoded.query, req.query);
    EXPECT_EQ(decoded.meta_b64, req.meta_b64);
    EXPECT_EQ(decoded.head_set_hash, req.head_set_hash);
    EXPECT_EQ(decoded.temperature, req.temperature);
    EXPECT_EQ(decoded.max_tokens, req.max_tokens);
    ASSERT_TRUE(decoded.client_seed.has_value());
    EXPECT_EQ(*decoded.client_seed, 42u);

    // Truncated body and corrupted length prefix.
    auto truncated = bytes;
    truncated.pop_back();
    EXPECT_THROW(decode_frame(truncated), ContractError);
    auto corrupted = bytes;
    corrupted[0] = 0xff;
    EXPECT_THROW(decode_frame(corrupted), ContractError);
    EXPECT_THROW(decode_frame(std::vector<std::uint8_t>{0, 0}), ContractError);

    // Malformed JSON body.
    std::vector<std::uint8_t> bad = {0, 0, 0, 3, '{', 'x', '}'};
    EXPECT_THROW(decode_frame(bad), ContractError);
}

TEST(Frames, EmptyTextResponseRoundTrips) {
    WireResponse res;
    res.kind = "result";
    res.text = "";
    res.token_count = 0;
    auto decoded = response_from_json(decode_frame(encode_frame(to_json(res))));
    EXPECT_EQ(decoded.kind, "result");
    EXPECT_EQ(decoded.text, "");
    EXPECT_EQ(decoded.token_count, 0);

    WireResponse err;
    err.kind = "error";
    err.error_code = "bad_meta";
    err.error_message = "length mismatch";
    auto decoded_err = response_from_json(decode_frame(encode_frame(to_json(err))));
    EXPECT_EQ(decoded_err.error_code, "bad_meta");
}

TEST(Frames, RandomMessagesRoundTripBitExact) {
    auto rng = rng_stream(9, "test/wire-fuzz");
    std::uniform_int_distribution<int> len(0, 40);
    std::uniform_int_distribution<int> byte(0, 255);
    std::uniform_real_distribution<double> real(-2.0, 2.0);
    for (int trial = 0; trial < 500; ++trial) {
        WireRequest req;
        req.kind = "infer";
        std::string q;
        for (int i = len(rng); i > 0; --i) q.push_back(static_cast<char>('a' + byte(rng) % 26));
        req.query = q;
        Vec meta(static_cast<std::size_t>(len(rng)));
        for (auto& v : meta) v = real(rng);
        req.meta_b64 = encode_meta_payload(meta);
        req.head_set_hash = to_hex(static_cast<std::uint64_t>(byte(rng)) << 32);
        req.temperature = 0.5 + real(rng) * real(rng);
        if (req.temperature <= 0.0) req.temperature = 1.0;
        req.max_tokens = 1 + byte(rng);
        if (trial % 2) req.client_seed = static_cast<std::uint64_t>(byte(rng)) * 7919;

        auto j1 = to_json(req);
        auto j2 = to_json(request_from_json(decode_frame(encode_frame(j1))));
        EXPECT_EQ(j1, j2);
    }

    // Ping frames carry no payload and round-trip to themselves.
    WireRequest ping;
    ping.kind = "ping";
    auto j1 = to_json(ping);
    auto j2 = to_json(request_from_json(decode_frame(encode_frame(j1))));
    EXPECT_EQ(j1, j2);
}
