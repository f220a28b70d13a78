#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "memmc/adamw.hpp"
#include "memmc/checkpoint.hpp"
#include "memmc/imageops.hpp"
#include "memmc/model.hpp"
#include "memmc/rng.hpp"
#include "memmc/train.hpp"

namespace memmc {

struct TrainResult {
    Checkpoint ckpt;
    std::vector<LossRecord> curve;
};

/// Trains a fresh model on normal images: per-image fresh masks, optional
/// RandomResizedCrop, batched gradient averaging, AdamW with linear warmup
/// and cosine decay. Deterministic for a fixed config and seed. Aborts with
/// a diagnostic checkpoint if the loss leaves the finite range.
inline TrainResult train(const std::vector<Image<float>>& images, const ModelConfig& mcfg,
                         const TrainConfig& tcfg,
                         const std::function<void(int, double)>& on_epoch = {}) {
    mcfg.validate();
    tcfg.validate();
    if (images.empty()) throw DatasetError("train: empty training set");
    for (const auto& im : images) {
        if (im.height() != mcfg.image_size || im.width() != mcfg.image_size ||
            im.channels() != mcfg.channels) {
            throw DatasetError("train: image does not match the configured size");
        }
    }

    TrainResult res;
    res.ckpt.train_cfg = tcfg;
    res.ckpt.model.init(mcfg, tcfg.seed);
    res.ckpt.opt.weight_decay = tcfg.weight_decay;

    Model<float>& model = res.ckpt.model;
    AdamW<float>& opt = res.ckpt.opt;
    Rng rng(tcfg.seed ^ 0x9E3779B97F4A7C15ULL);  // loop stream, separate from init stream

    const int n = static_cast<int>(images.size());
    const int batch = std::min(tcfg.batch_size, n);
    const int steps_per_epoch = (n + batch - 1) / batch;
    std::int64_t global_step = 0;

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (int start = 0; start < n; start += batch) {
            const int m = std::min(batch, n - start);
            ++global_step;
            model.zero_grads();
            double batch_loss = 0.0;
            try {
                for (int k = 0; k < m; ++k) {
                    const Image<float>& base =
                        images[static_cast<std::size_t>(order[static_cast<std::size_t>(start + k)])];
                    Image<float> im = tcfg.augment
                                          ? random_resized_crop(base, tcfg.crop_scale_min,
                                                                tcfg.crop_scale_max, rng)
                                          : base;
                    MaskPartition part = sample_mask(mcfg.num_patches(), mcfg.mask_ratio, rng.raw());
                    ModelForwardCache<float> cache;
                    model.forward(im, part, cache);
                    const float loss =
                        masked_mse_loss_grid(cache.pred.patches, cache.target.patches, part);
                    batch_loss += static_cast<double>(loss) / m;
                    Mat<float> g =
                        masked_mse_loss_grad(cache.pred.patches, cache.target.patches, part);
                    g *= static_cast<float>(1.0 / m);
                    model.backward(cache, g);
                }
                if (!std::isfinite(batch_loss)) throw NonFiniteError("non-finite batch loss");
            } catch (const NonFiniteError& e) {
                // Dump the last healthy parameter state for postmortems.
                res.ckpt.epoch = epoch;
                res.ckpt.rng_state = rng.serialize();
                if (!tcfg.checkpoint_path.empty()) {
                    save_checkpoint(res.ckpt, tcfg.checkpoint_path + ".diagnostic");
                }
                throw NonFiniteError("train aborted at epoch " + std::to_string(epoch) + " step " +
                                     std::to_string(global_step) + ": " + e.what());
            }
            const double lr = lr_at(tcfg.base_lr,
                                    static_cast<double>(global_step) / steps_per_epoch,
                                    tcfg.warmup_epochs, tcfg.epochs);
            opt.step(model, lr);
            res.curve.push_back({epoch, global_step, batch_loss, lr});
            epoch_loss += batch_loss / steps_per_epoch;
        }
        res.ckpt.epoch = epoch;
        if (on_epoch) on_epoch(epoch, epoch_loss);
        if (tcfg.checkpoint_every > 0 && !tcfg.checkpoint_path.empty() &&
            epoch % tcfg.checkpoint_every == 0 && epoch < tcfg.epochs) {
            res.ckpt.rng_state = rng.serialize();
            save_checkpoint(res.ckpt, tcfg.checkpoint_path);
        }
    }

    res.ckpt.rng_state = rng.serialize();
    if (!tcfg.checkpoint_path.empty()) save_checkpoint(res.ckpt, tcfg.checkpoint_path);
    return res;
}

/// Writes the loss curve as CSV: epoch,step,loss,lr.
inline void write_loss_curve(const std::vector<LossRecord>& curve, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DatasetError("loss curve: cannot open '" + path + "' for writing");
    out << "epoch,step,loss,lr\n";
    for (const auto& rec : curve) {
        char line[128];
        std::snprintf(line, sizeof line, "%d,%lld,%.9g,%.9g\n", rec.epoch,
                      static_cast<long long>(rec.step), rec.loss, rec.lr);
        out << line;
    }
}

}  // namespace memmc
