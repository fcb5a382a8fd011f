#ifndef PRIVRES_MODEL_IO_HPP
#define PRIVRES_MODEL_IO_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "privres/common.hpp"
#include "privres/model.hpp"

namespace privres {

// Checkpoint layout (little endian):
//   magic "PRLM", u32 version, i32 n_layers, i32 n_heads, i32 d_model,
//   i32 vocab_size, i32 max_seq_len, u8 causal, u64 seed, u64 config_hash,
//   then every parameter block as f64 in Params::for_each_block order.
inline constexpr char kCheckpointMagic[4] = {'P', 'R', 'L', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw ContractError("truncated binary file");
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, Params& params,
                            std::uint64_t config_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open checkpoint for writing: " + path);
    out.write(kCheckpointMagic, 4);
    detail::write_pod(out, kCheckpointVersion);
    detail::write_pod(out, static_cast<std::int32_t>(params.cfg.n_layers));
    detail::write_pod(out, static_cast<std::int32_t>(params.cfg.n_heads));
    detail::write_pod(out, static_cast<std::int32_t>(params.cfg.d_model));
    detail::write_pod(out, static_cast<std::int32_t>(params.cfg.vocab_size));
    detail::write_pod(out, static_cast<std::int32_t>(params.cfg.max_seq_len));
    detail::write_pod(out, static_cast<std::uint8_t>(params.cfg.causal ? 1 : 0));
    detail::write_pod(out, static_cast<std::uint64_t>(params.cfg.seed));
    detail::write_pod(out, config_hash);
    params.for_each_block([&](const std::string&, Vec& v) {
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(double)));
    });
    if (!out) throw ConfigError("checkpoint write failed: " + path);
}

struct LoadedCheckpoint {
    Params params;
    std::uint64_t config_hash = 0;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw ContractError("bad checkpoint magic: " + path);
    std::uint32_t version;
    detail::read_pod(in, version);
    if (version != kCheckpointVersion)
        throw ContractError("unsupported checkpoint version");
    ModelConfig cfg;
    std::int32_t v32;
    detail::read_pod(in, v32); cfg.n_layers = v32;
    detail::read_pod(in, v32); cfg.n_heads = v32;
    detail::read_pod(in, v32); cfg.d_model = v32;
    detail::read_pod(in, v32); cfg.vocab_size = v32;
    detail::read_pod(in, v32); cfg.max_seq_len = v32;
    std::uint8_t causal;
    detail::read_pod(in, causal);
    cfg.causal = causal != 0;
    std::uint64_t seed;
    detail::read_pod(in, seed);
    cfg.seed = seed;
    cfg.validate();

    LoadedCheckpoint out;
    detail::read_pod(in, out.config_hash);
    out.params = init_params(cfg);
    out.params.for_each_block([&](const std::string&, Vec& v) {
        in.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
        if (!in) throw ContractError("truncated checkpoint: " + path);
    });
    return out;
}

}  // namespace privres

#endif  // PRIVRES_MODEL_IO_HPP
