// Self-describing binary checkpoint:
//   magic "MMCK", u32 format version,
//   length-prefixed JSON record (model config, train config, epoch),
//   named parameter arrays (u32 rows, u32 cols, row-major little-endian f32),
//   optimizer step count and per-parameter first/second moments,
//   serialized RNG state of the training loop.
// save -> load -> save reproduces the file byte for byte.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "memmc/adamw.hpp"
#include "memmc/config.hpp"
#include "memmc/errors.hpp"
#include "memmc/model.hpp"
#include "memmc/train.hpp"

namespace memmc {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'M', 'M', 'C', 'K'};

struct Checkpoint {
    Model<float> model;
    AdamW<float> opt;
    TrainConfig train_cfg;
    int epoch = 0;
    std::string rng_state;
};

namespace detail {

struct ByteWriter {
    std::string buf;

    void bytes(const void* p, std::size_t n) {
        buf.append(static_cast<const char*>(p), n);
    }
    void u32(std::uint32_t v) { bytes(&v, sizeof v); }
    void u64(std::uint64_t v) { bytes(&v, sizeof v); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void mat(const Mat<float>& m) {
        u32(static_cast<std::uint32_t>(m.rows()));
        u32(static_cast<std::uint32_t>(m.cols()));
        bytes(m.data(), static_cast<std::size_t>(m.size()) * sizeof(float));
    }
};

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    explicit ByteReader(const std::string& b) : buf(b) {}

    void bytes(void* p, std::size_t n) {
        if (pos + n > buf.size()) throw CheckpointCorruptError("checkpoint: unexpected end of file");
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        bytes(&v, sizeof v);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        bytes(&v, sizeof v);
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        if (pos + n > buf.size()) throw CheckpointCorruptError("checkpoint: unexpected end of file");
        std::string s(buf.data() + pos, n);
        pos += n;
        return s;
    }
    Mat<float> mat() {
        const std::uint32_t r = u32();
        const std::uint32_t c = u32();
        if (static_cast<std::uint64_t>(r) * c > (buf.size() - pos) / sizeof(float) + 1) {
            throw CheckpointCorruptError("checkpoint: parameter array larger than file");
        }
        Mat<float> m(static_cast<Index>(r), static_cast<Index>(c));
        bytes(m.data(), static_cast<std::size_t>(m.size()) * sizeof(float));
        return m;
    }
    void expect_end() const {
        if (pos != buf.size()) throw CheckpointCorruptError("checkpoint: trailing bytes after payload");
    }
};

}  // namespace detail

inline std::string serialize_checkpoint(Checkpoint& ckpt) {
    detail::ByteWriter w;
    w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
    w.u32(kCheckpointVersion);

    json meta{{"model", ckpt.model.cfg}, {"train", ckpt.train_cfg}, {"epoch", ckpt.epoch}};
    w.str(meta.dump());

    std::uint32_t n_params = 0;
    ckpt.model.for_each_param([&n_params](const std::string&, Param<float>&, bool) { ++n_params; });
    w.u32(n_params);
    ckpt.model.for_each_param([&w](const std::string& name, Param<float>& p, bool) {
        w.str(name);
        w.mat(p.v);
    });

    w.u64(static_cast<std::uint64_t>(ckpt.opt.step_count));
    w.u32(static_cast<std::uint32_t>(ckpt.opt.moments.size()));
    for (const auto& [name, mv] : ckpt.opt.moments) {
        w.str(name);
        w.mat(mv.first);
        w.mat(mv.second);
    }

    w.str(ckpt.rng_state);
    return w.buf;
}

inline Checkpoint deserialize_checkpoint(const std::string& payload) {
    detail::ByteReader r(payload);
    char magic[4];
    r.bytes(magic, sizeof magic);
    if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
        throw CheckpointCorruptError("checkpoint: bad magic bytes");
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw CheckpointVersionError("checkpoint: format version " + std::to_string(version) +
                                     ", expected " + std::to_string(kCheckpointVersion));
    }

    json meta;
    try {
        meta = json::parse(r.str());
    } catch (const json::exception& e) {
        throw CheckpointCorruptError(std::string("checkpoint: bad metadata record: ") + e.what());
    }

    Checkpoint ckpt;
    ModelConfig mcfg = meta.at("model").get<ModelConfig>();
    ckpt.train_cfg = meta.at("train").get<TrainConfig>();
    ckpt.epoch = meta.at("epoch").get<int>();
    ckpt.model.init(mcfg, /*seed=*/0);

    const std::uint32_t n_params = r.u32();
    std::uint32_t seen = 0;
    std::vector<std::pair<std::string, Mat<float>>> arrays;
    arrays.reserve(n_params);
    for (std::uint32_t i = 0; i < n_params; ++i) {
        std::string name = r.str();
        arrays.emplace_back(std::move(name), r.mat());
    }
    std::size_t next = 0;
    ckpt.model.for_each_param([&](const std::string& name, Param<float>& p, bool) {
        if (next >= arrays.size() || arrays[next].first != name) {
            throw CheckpointCorruptError("checkpoint: parameter list does not match config (at '" +
                                         name + "')");
        }
        if (arrays[next].second.rows() != p.rows() || arrays[next].second.cols() != p.cols()) {
            throw CheckpointCorruptError("checkpoint: shape mismatch for '" + name + "'");
        }
        p.v = arrays[next].second;
        ++next;
        ++seen;
    });
    if (seen != n_params) {
        throw CheckpointCorruptError("checkpoint: parameter count does not match config");
    }

    ckpt.opt.weight_decay = ckpt.train_cfg.weight_decay;
    ckpt.opt.step_count = static_cast<std::int64_t>(r.u64());
    const std::uint32_t n_moments = r.u32();
    for (std::uint32_t i = 0; i < n_moments; ++i) {
        std::string name = r.str();
        Mat<float> m = r.mat();
        Mat<float> v = r.mat();
        ckpt.opt.moments[name] = {std::move(m), std::move(v)};
    }

    ckpt.rng_state = r.str();
    r.expect_end();
    return ckpt;
}

inline void save_checkpoint(Checkpoint& ckpt, const std::string& path) {
    const std::string payload = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointCorruptError("checkpoint: cannot open '" + path + "' for writing");
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw CheckpointCorruptError("checkpoint: short write to '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointCorruptError("checkpoint: cannot open '" + path + "'");
    std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(payload);
}

}  // namespace memmc
