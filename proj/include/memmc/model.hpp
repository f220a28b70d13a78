#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memmc/decoder.hpp"
#include "memmc/encoder.hpp"
#include "memmc/errors.hpp"
#include "memmc/patchgrid.hpp"
#include "memmc/types.hpp"

namespace memmc {

struct StackConfig {
    int depth = 6;
    int width = 256;
    int heads = 8;
};

/// Architecture and ablation switches. mem_enc=false drops the encoder
/// memory (slots treated as 0); mc_dec=false restricts cross-attention to
/// the last encoder layer with the gate machinery bypassed, i.e. a standard
/// cross-attention masked autoencoder.
struct ModelConfig {
    int image_size = 224;
    int patch_side = 16;
    int channels = 1;
    StackConfig encoder{6, 256, 8};
    StackConfig decoder{2, 128, 4};
    int memory_slots = 50;
    double mask_ratio = 0.75;
    bool mem_enc = true;
    bool mc_dec = true;
    GateGranularity gate_granularity = GateGranularity::Scalar;
    bool long_skips = true;
    bool cross_residual = true;
    int mlp_ratio = 4;

    int effective_slots() const { return mem_enc ? memory_slots : 0; }
    int grid_rows() const { return image_size / patch_side; }
    int grid_cols() const { return image_size / patch_side; }
    int num_patches() const { return grid_rows() * grid_cols(); }
    int patch_dim() const { return patch_side * patch_side * channels; }

    void validate() const {
        if (image_size <= 0 || patch_side <= 0 || image_size % patch_side != 0) {
            throw ValueError("config: image_size must be a positive multiple of patch_side");
        }
        if (channels != 1 && channels != 3) throw ValueError("config: channels must be 1 or 3");
        if (encoder.width % encoder.heads != 0 || decoder.width % decoder.heads != 0) {
            throw ValueError("config: width must be divisible by head count");
        }
        if (encoder.width % 2 != 0 || decoder.width % 2 != 0) {
            throw ValueError("config: widths must be even for sine-cosine embeddings");
        }
        if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ValueError("config: mask_ratio must be in (0,1)");
        if (encoder.depth < 1 || decoder.depth < 1) throw ValueError("config: depths must be >= 1");
        if (memory_slots < 0) throw ValueError("config: memory_slots must be >= 0");
        if (mlp_ratio < 1) throw ValueError("config: mlp_ratio must be >= 1");
    }
};

template <typename S>
struct ModelForwardCache {
    PatchGrid<S> target;
    MaskPartition part;
    EncoderStackCache<S> enc_cache;
    EncoderOutputs<S> enc_out;
    Mat<S> enc_final;
    DecoderStackCache<S> dec_cache;
    PatchGrid<S> pred;
};

template <typename S>
struct Model {
    ModelConfig cfg;
    EncoderStackParams<S> encoder;
    DecoderStackParams<S> decoder;
    Mat<S> pos_enc;  // num_patches x enc width, fixed
    Mat<S> pos_dec;  // num_patches x dec width, fixed

    void init(const ModelConfig& config, std::uint64_t seed) {
        config.validate();
        cfg = config;
        Rng rng(seed);
        encoder.init(cfg.patch_dim(), cfg.encoder.width, cfg.encoder.heads, cfg.effective_slots(),
                     cfg.encoder.depth, cfg.encoder.width * cfg.mlp_ratio, cfg.long_skips, rng);
        decoder.init(cfg.encoder.width, cfg.decoder.width, cfg.decoder.heads, cfg.decoder.depth,
                     cfg.encoder.depth, cfg.decoder.width * cfg.mlp_ratio, cfg.patch_dim(),
                     cfg.mc_dec, cfg.gate_granularity, cfg.cross_residual, cfg.long_skips, rng);
        pos_enc = positional_table<S>(cfg.grid_rows(), cfg.grid_cols(), cfg.encoder.width);
        pos_dec = positional_table<S>(cfg.grid_rows(), cfg.grid_cols(), cfg.decoder.width);
    }

    void visit_params(ParamVisitor<S>& fn) {
        encoder.visit("enc", fn);
        decoder.visit("dec", fn);
    }

    template <typename Fn>
    void for_each_param(Fn f) {
        ParamVisitorFn<S, Fn> v(std::move(f));
        visit_params(v);
    }

    void zero_grads() {
        for_each_param([](const std::string&, Param<S>& p, bool) { p.zero_grad(); });
    }

    Index num_params() {
        Index n = 0;
        for_each_param([&n](const std::string&, Param<S>& p, bool) { n += p.size(); });
        return n;
    }

    void check_image(const Image<S>& image) const {
        if (image.height() != cfg.image_size || image.width() != cfg.image_size ||
            image.channels() != cfg.channels) {
            throw ShapeError("model: image shape does not match config");
        }
    }

    /// Full masked-autoencoder pass: encode visible patches, decode all
    /// positions. The predicted patch grid lands in `cache.pred`.
    Image<S> forward(const Image<S>& image, const MaskPartition& part, ModelForwardCache<S>& cache) const {
        check_image(image);
        if (static_cast<int>(part.visible.size() + part.masked.size()) != cfg.num_patches()) {
            throw ShapeError("model: partition does not cover the patch grid");
        }
        cache.part = part;
        cache.target = patchify(image, cfg.patch_side);
        if (!all_finite(cache.target.patches)) {
            throw NonFiniteError("model: non-finite input pixels");
        }
        Mat<S> visible_rows = gather_rows(cache.target.patches, part.visible);
        Mat<S> pos_rows = gather_rows(pos_enc, part.visible);
        cache.enc_out = encode(encoder, visible_rows, pos_rows, cache.enc_cache, cache.enc_final);
        Mat<S> pred = decoder_stack_forward(decoder, cache.enc_final, part, pos_dec, cache.enc_out,
                                            cache.dec_cache);
        cache.pred = cache.target;
        cache.pred.patches = std::move(pred);
        return unpatchify(cache.pred);
    }

    /// Backpropagates a gradient w.r.t. the predicted patch matrix into every
    /// parameter's `.g` accumulator.
    void backward(ModelForwardCache<S>& cache, const Mat<S>& g_pred) {
        Mat<S> g_enc_final;
        std::vector<Mat<S>> g_levels = decoder_stack_backward(decoder, cache.dec_cache, cache.part,
                                                              cache.enc_out, g_pred, g_enc_final);
        encode_backward(encoder, cache.enc_cache, std::move(g_levels), g_enc_final);
    }
};

// ---------------------------------------------------------------------------
// Masked-pixel MSE: mean of squared differences over the pixels of masked
// patches only; visible-patch pixels never contribute.
// ---------------------------------------------------------------------------

template <typename S>
S masked_mse_loss_grid(const Mat<S>& pred, const Mat<S>& target, const MaskPartition& part) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw ShapeError("masked_mse_loss: prediction/target shape mismatch");
    }
    if (part.masked.empty()) throw ValueError("masked_mse_loss: empty masked set");
    S acc = S(0);
    for (int idx : part.masked) {
        acc += (pred.row(idx) - target.row(idx)).squaredNorm();
    }
    return acc / static_cast<S>(static_cast<Index>(part.masked.size()) * pred.cols());
}

template <typename S>
Mat<S> masked_mse_loss_grad(const Mat<S>& pred, const Mat<S>& target, const MaskPartition& part) {
    if (part.masked.empty()) throw ValueError("masked_mse_loss: empty masked set");
    Mat<S> g = Mat<S>::Zero(pred.rows(), pred.cols());
    const S scale = S(2) / static_cast<S>(static_cast<Index>(part.masked.size()) * pred.cols());
    for (int idx : part.masked) {
        g.row(idx) = scale * (pred.row(idx) - target.row(idx));
    }
    return g;
}

template <typename S>
S masked_mse_loss(const Image<S>& reconstruction, const Image<S>& target, const MaskPartition& part,
                  Index patch_side) {
    if (!reconstruction.same_shape(target)) throw ShapeError("masked_mse_loss: image shape mismatch");
    PatchGrid<S> p = patchify(reconstruction, patch_side);
    PatchGrid<S> t = patchify(target, patch_side);
    if (static_cast<Index>(part.visible.size() + part.masked.size()) != p.num_patches()) {
        throw ShapeError("masked_mse_loss: partition does not cover the patch grid");
    }
    return masked_mse_loss_grid(p.patches, t.patches, part);
}

}  // namespace memmc
