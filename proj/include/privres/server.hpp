#ifndef PRIVRES_SERVER_HPP
#define PRIVRES_SERVER_HPP

#include <atomic>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "privres/client.hpp"
#include "privres/common.hpp"
#include "privres/corpus.hpp"
#include "privres/model.hpp"
#include "privres/net.hpp"
#include "privres/restoration.hpp"
#include "privres/wire.hpp"

namespace privres {

inline constexpr int kServerMaxTokens = 1024;

// Immutable state shared by every connection.
struct ServerState {
    const Params* params = nullptr;
    const Vocabulary* vocab = nullptr;
    std::vector<HeadId> heads;  // canonical order
    int d_head = 0;
    std::uint64_t server_seed = 0;

    std::uint64_t head_hash() const { return head_set_hash(heads, d_head); }
};

inline std::uint64_t derive_request_seed(std::uint64_t server_seed,
                                         std::uint64_t client_seed,
                                         std::uint64_t counter) {
    return splitmix64(splitmix64(server_seed ^ splitmix64(client_seed)) + counter);
}

// Splits the meta vector into per-head parts by the canonical order, steers
// the frozen model and samples the reply. Neither the query nor the meta
// vector outlive the call.
inline WireResponse handle_request(const ServerState& state, const WireRequest& req,
                                   std::uint64_t counter) {
    WireResponse res;
    if (req.kind == "ping") {
        res.kind = "pong";
        return res;
    }
    if (req.kind != "infer") {
        res.kind = "error";
        res.error_code = "bad_request";
        res.error_message = "unknown request kind";
        return res;
    }
    if (req.head_set_hash != to_hex(state.head_hash())) {
        res.kind = "error";
        res.error_code = "head_set_drift";
        res.error_message = "client head set does not match server head set";
        return res;
    }
    Vec meta;
    try {
        meta = decode_meta_payload(req.meta_b64);
    } catch (const ContractError& e) {
        res.kind = "error";
        res.error_code = "bad_meta";
        res.error_message = e.what();
        return res;
    }
    if (meta.size() != state.heads.size() * static_cast<std::size_t>(state.d_head)) {
        res.kind = "error";
        res.error_code = "bad_meta";
        res.error_message = "meta vector length does not match head set geometry";
        return res;
    }
    if (!(req.temperature > 0.0)) {
        res.kind = "error";
        res.error_code = "bad_request";
        res.error_message = "temperature must be positive";
        return res;
    }

    std::vector<int> prompt;
    try {
        prompt = state.vocab->encode(split_tokens(req.query));
    } catch (const ContractError&) {
        res.kind = "error";
        res.error_code = "bad_request";
        res.error_message = "query contains tokens outside the vocabulary";
        return res;
    }
    if (prompt.empty() || static_cast<int>(prompt.size()) >= state.params->cfg.max_seq_len) {
        res.kind = "error";
        res.error_code = "bad_request";
        res.error_message = "query length out of range";
        return res;
    }

    SteeringPlan plan = plan_from_meta(state.heads, meta, state.d_head,
                                       static_cast<int>(prompt.size()) - 1);
    const int max_tokens = std::min(req.max_tokens, kServerMaxTokens);
    auto rng = std::mt19937_64(
        derive_request_seed(state.server_seed, req.client_seed.value_or(0), counter));
    SampleResult sampled =
        sample(*state.params, prompt, &plan, req.temperature, max_tokens, rng);

    res.kind = "result";
    std::vector<std::string> words;
    for (int tok : sampled.tokens) words.push_back(state.vocab->token(tok));
    res.text = join_tokens(words);
    res.token_count = static_cast<int>(sampled.tokens.size());
    return res;
}

// One request per connection; malformed input produces an error frame where
// possible and never takes the server down.
class Server {
  public:
    Server(ServerState state, const std::string& host, int port)
        : state_(std::move(state)) {
        auto bound = listen_on(host, port);
        listener_ = std::move(bound.sock);
        port_ = bound.port;
    }

    int port() const { return port_; }

    void run() {
        while (!stop_.load(std::memory_order_relaxed)) {
            pollfd pfd{listener_.fd(), POLLIN, 0};
            const int rv = ::poll(&pfd, 1, 100);
            if (rv <= 0) continue;
            int fd = ::accept(listener_.fd(), nullptr, nullptr);
            if (fd < 0) continue;
            {
                std::lock_guard<std::mutex> lock(mu_);
                workers_.emplace_back([this, fd] { handle_connection(Socket(fd)); });
            }
        }
        std::lock_guard<std::mutex> lock(mu_);
        for (auto& t : workers_)
            if (t.joinable()) t.join();
        workers_.clear();
    }

    void stop() { stop_.store(true, std::memory_order_relaxed); }

  private:
    void handle_connection(Socket sock) {
        const std::uint64_t counter = counter_.fetch_add(1, std::memory_order_relaxed);
        WireResponse res;
        try {
            auto frame = read_frame_bytes(sock, kMaxFrameBytes);
            WireRequest req = request_from_json(decode_frame(frame));
            res = handle_request(state_, req, counter);
        } catch (const TransportError&) {
            return;  // connection dropped; nothing to answer
        } catch (const std::exception& e) {
            res.kind = "error";
            res.error_code = "bad_request";
            res.error_message = e.what();
        }
        try {
            write_all(sock, encode_frame(to_json(res)));
        } catch (const TransportError&) {
            // peer went away; drop
        }
    }

    ServerState state_;
    Socket listener_;
    int port_ = 0;
    std::atomic<bool> stop_{false};
    std::atomic<std::uint64_t> counter_{0};
    std::mutex mu_;
    std::vector<std::thread> workers_;
};

}  // namespace privres

#endif  // PRIVRES_SERVER_HPP
