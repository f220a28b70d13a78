#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memmc/errors.hpp"

namespace memmc {

struct TrainConfig {
    int epochs = 2000;
    int batch_size = 256;
    double base_lr = 1.5e-3;
    double weight_decay = 0.05;
    int warmup_epochs = 5;
    std::uint64_t seed = 0;
    bool augment = true;
    double crop_scale_min = 0.5;
    double crop_scale_max = 1.0;
    int checkpoint_every = 0;     // epochs between periodic checkpoints; 0 = final only
    std::string checkpoint_path;  // empty = keep the result in memory only

    void validate() const {
        if (epochs < 1) throw ValueError("train config: epochs must be >= 1");
        if (batch_size < 1) throw ValueError("train config: batch_size must be >= 1");
        if (base_lr <= 0.0) throw ValueError("train config: base_lr must be positive");
        if (weight_decay < 0.0) throw ValueError("train config: weight_decay must be >= 0");
        if (warmup_epochs < 0 || warmup_epochs >= epochs) {
            throw ValueError("train config: warmup_epochs must be in [0, epochs)");
        }
        if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0)) {
            throw ValueError("train config: crop scale range must satisfy 0 < min <= max <= 1");
        }
        if (checkpoint_every < 0) throw ValueError("train config: checkpoint_every must be >= 0");
    }
};

/// One optimizer step in the training record.
struct LossRecord {
    int epoch = 0;         // 1-based, epoch the step belongs to
    std::int64_t step = 0; // global step index, 1-based
    double loss = 0.0;
    double lr = 0.0;
};

}  // namespace memmc
