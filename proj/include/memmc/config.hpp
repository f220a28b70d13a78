// JSON (de)serialization for the config structs plus a stable fingerprint.
// Missing keys fall back to struct defaults, so partial config files stay
// valid as fields are added.
#pragma once

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <string>

#include "memmc/errors.hpp"
#include "memmc/model.hpp"
#include "memmc/msssim.hpp"
#include "memmc/synthetic.hpp"
#include "memmc/train.hpp"

namespace memmc {

using json = nlohmann::json;

inline std::string granularity_name(GateGranularity g) {
    return g == GateGranularity::Scalar ? "scalar" : "channel";
}

inline GateGranularity granularity_from_name(const std::string& name) {
    if (name == "scalar") return GateGranularity::Scalar;
    if (name == "channel") return GateGranularity::Channel;
    throw ValueError("config: unknown gate granularity '" + name + "'");
}

inline void to_json(json& j, const StackConfig& c) {
    j = json{{"depth", c.depth}, {"width", c.width}, {"heads", c.heads}};
}

inline void from_json(const json& j, StackConfig& c) {
    StackConfig d;
    c.depth = j.value("depth", d.depth);
    c.width = j.value("width", d.width);
    c.heads = j.value("heads", d.heads);
}

inline void to_json(json& j, const ModelConfig& c) {
    j = json{{"image_size", c.image_size},
             {"patch_side", c.patch_side},
             {"channels", c.channels},
             {"encoder", c.encoder},
             {"decoder", c.decoder},
             {"memory_slots", c.memory_slots},
             {"mask_ratio", c.mask_ratio},
             {"mem_enc", c.mem_enc},
             {"mc_dec", c.mc_dec},
             {"gate_granularity", granularity_name(c.gate_granularity)},
             {"long_skips", c.long_skips},
             {"cross_residual", c.cross_residual},
             {"mlp_ratio", c.mlp_ratio}};
}

inline void from_json(const json& j, ModelConfig& c) {
    ModelConfig d;
    c.image_size = j.value("image_size", d.image_size);
    c.patch_side = j.value("patch_side", d.patch_side);
    c.channels = j.value("channels", d.channels);
    c.encoder = j.value("encoder", d.encoder);
    c.decoder = j.value("decoder", d.decoder);
    c.memory_slots = j.value("memory_slots", d.memory_slots);
    c.mask_ratio = j.value("mask_ratio", d.mask_ratio);
    c.mem_enc = j.value("mem_enc", d.mem_enc);
    c.mc_dec = j.value("mc_dec", d.mc_dec);
    c.gate_granularity =
        granularity_from_name(j.value("gate_granularity", granularity_name(d.gate_granularity)));
    c.long_skips = j.value("long_skips", d.long_skips);
    c.cross_residual = j.value("cross_residual", d.cross_residual);
    c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
}

inline void to_json(json& j, const TrainConfig& c) {
    j = json{{"epochs", c.epochs},
             {"batch_size", c.batch_size},
             {"base_lr", c.base_lr},
             {"weight_decay", c.weight_decay},
             {"warmup_epochs", c.warmup_epochs},
             {"seed", c.seed},
             {"augment", c.augment},
             {"crop_scale_min", c.crop_scale_min},
             {"crop_scale_max", c.crop_scale_max},
             {"checkpoint_every", c.checkpoint_every},
             {"checkpoint_path", c.checkpoint_path}};
}

inline void from_json(const json& j, TrainConfig& c) {
    TrainConfig d;
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.base_lr = j.value("base_lr", d.base_lr);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.warmup_epochs = j.value("warmup_epochs", d.warmup_epochs);
    c.seed = j.value("seed", d.seed);
    c.augment = j.value("augment", d.augment);
    c.crop_scale_min = j.value("crop_scale_min", d.crop_scale_min);
    c.crop_scale_max = j.value("crop_scale_max", d.crop_scale_max);
    c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
    c.checkpoint_path = j.value("checkpoint_path", d.checkpoint_path);
}

inline void to_json(json& j, const MsSsimParams& p) {
    j = json{{"scales", p.scales},
             {"weights", p.weights},
             {"window_side", p.window_side},
             {"sigma", p.sigma},
             {"c1", p.c1},
             {"c2", p.c2}};
}

inline void from_json(const json& j, MsSsimParams& p) {
    MsSsimParams d;
    p.scales = j.value("scales", d.scales);
    // A scale count without explicit weights implies the default weighting.
    p.weights = j.contains("weights") ? j.at("weights").get<std::vector<double>>()
                                      : default_msssim_weights(p.scales);
    p.window_side = j.value("window_side", d.window_side);
    p.sigma = j.value("sigma", d.sigma);
    p.c1 = j.value("c1", d.c1);
    p.c2 = j.value("c2", d.c2);
}

inline void to_json(json& j, const SyntheticSpec& s) {
    j = json{{"image_size", s.image_size},
             {"channels", s.channels},
             {"n_train", s.n_train},
             {"n_test_normal", s.n_test_normal},
             {"n_test_anomalous", s.n_test_anomalous},
             {"anomaly", s.anomaly},
             {"anomaly_min", s.anomaly_min},
             {"anomaly_max", s.anomaly_max},
             {"anomaly_contrast", s.anomaly_contrast},
             {"texture_cells", s.texture_cells},
             {"seed", s.seed}};
}

inline void from_json(const json& j, SyntheticSpec& s) {
    SyntheticSpec d;
    s.image_size = j.value("image_size", d.image_size);
    s.channels = j.value("channels", d.channels);
    s.n_train = j.value("n_train", d.n_train);
    s.n_test_normal = j.value("n_test_normal", d.n_test_normal);
    s.n_test_anomalous = j.value("n_test_anomalous", d.n_test_anomalous);
    s.anomaly = j.value("anomaly", d.anomaly);
    s.anomaly_min = j.value("anomaly_min", d.anomaly_min);
    s.anomaly_max = j.value("anomaly_max", d.anomaly_max);
    s.anomaly_contrast = j.value("anomaly_contrast", d.anomaly_contrast);
    s.texture_cells = j.value("texture_cells", d.texture_cells);
    s.seed = j.value("seed", d.seed);
}

/// FNV-1a over the canonical JSON dump; stable across runs and platforms.
inline std::string config_fingerprint(const json& j) {
    const std::string s = j.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace memmc
