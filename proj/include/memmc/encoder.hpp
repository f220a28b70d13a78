#pragma once

#include <string>
#include <vector>

#include "memmc/attention.hpp"
#include "memmc/errors.hpp"
#include "memmc/nn.hpp"
#include "memmc/types.hpp"

namespace memmc {

// Pre-norm transformer block with memory-augmented self-attention:
//   x1 = x + attn(LN1(x));  out = x1 + mlp(LN2(x1))

template <typename S>
struct EncoderLayerParams {
    LayerNormParams<S> ln1, ln2;
    SelfAttentionParams<S> attn;
    MlpParams<S> mlp;

    void init(Index width, Index heads, Index slots, Index mlp_hidden, Rng& rng) {
        ln1.init(width);
        ln2.init(width);
        attn.init(width, heads, slots, rng);
        mlp.init(width, mlp_hidden, rng);
    }

    void visit(const std::string& prefix, ParamVisitor<S>& fn) {
        ln1.visit(prefix + ".ln1", fn);
        attn.visit(prefix + ".attn", fn);
        ln2.visit(prefix + ".ln2", fn);
        mlp.visit(prefix + ".mlp", fn);
    }
};

template <typename S>
struct EncoderLayerCache {
    LayerNormCache<S> ln1c, ln2c;
    SelfAttentionCache<S> attnc;
    MlpCache<S> mlpc;
};

template <typename S>
Mat<S> encoder_layer_forward(const EncoderLayerParams<S>& p, const Mat<S>& x,
                             EncoderLayerCache<S>& cache) {
    Mat<S> u = layernorm_forward(p.ln1, x, cache.ln1c);
    Mat<S> x1 = x + self_attention_forward(p.attn, u, cache.attnc);
    Mat<S> m = layernorm_forward(p.ln2, x1, cache.ln2c);
    return x1 + mlp_forward(p.mlp, m, cache.mlpc);
}

template <typename S>
Mat<S> encoder_layer_backward(EncoderLayerParams<S>& p, const EncoderLayerCache<S>& cache,
                              const Mat<S>& gout) {
    Mat<S> gm = mlp_backward(p.mlp, cache.mlpc, gout);
    Mat<S> gx1 = gout + layernorm_backward(p.ln2, cache.ln2c, gm);
    Mat<S> gu = self_attention_backward(p.attn, cache.attnc, gx1);
    return gx1 + layernorm_backward(p.ln1, cache.ln1c, gu);
}

/// Source block index feeding a long additive skip into block `j` of a
/// depth-`depth` stack, or -1. Block i feeds block depth-1-i; adjacent and
/// self pairs are skipped (they duplicate the chain connection).
inline int long_skip_source(int j, int depth) {
    const int src = depth - 1 - j;
    return (src >= 0 && src <= j - 2) ? src : -1;
}

/// All retained per-layer outputs of the encoder, ordered by layer.
template <typename S>
struct EncoderOutputs {
    std::vector<Mat<S>> per_layer;
};

template <typename S>
struct EncoderStackParams {
    LinearParams<S> embed;  // patch_dim -> width
    std::vector<EncoderLayerParams<S>> layers;
    LayerNormParams<S> ln_final;
    bool long_skips = true;

    Index depth() const { return static_cast<Index>(layers.size()); }

    void init(Index patch_dim, Index width, Index heads, Index slots, Index depth, Index mlp_hidden,
              bool skips, Rng& rng) {
        long_skips = skips;
        embed.init(patch_dim, width, rng);
        layers.assign(static_cast<std::size_t>(depth), EncoderLayerParams<S>{});
        for (auto& l : layers) l.init(width, heads, slots, mlp_hidden, rng);
        ln_final.init(width);
    }

    void visit(const std::string& prefix, ParamVisitor<S>& fn) {
        embed.visit(prefix + ".embed", fn);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            layers[i].visit(prefix + ".layer" + std::to_string(i), fn);
        }
        ln_final.visit(prefix + ".ln_final", fn);
    }
};

template <typename S>
struct EncoderStackCache {
    Mat<S> patch_rows;
    std::vector<EncoderLayerCache<S>> layer_caches;
    LayerNormCache<S> final_ln;
};

/// Runs the embedding and all blocks over visible tokens. Returns the raw
/// per-layer outputs; `final_normed` receives LN(last layer output), the
/// representation handed to the decoder input assembly.
template <typename S>
EncoderOutputs<S> encode(const EncoderStackParams<S>& p, const Mat<S>& visible_patch_rows,
                         const Mat<S>& pos_rows, EncoderStackCache<S>& cache, Mat<S>& final_normed) {
    if (visible_patch_rows.rows() < 1) throw ShapeError("encode: no visible tokens");
    if (pos_rows.rows() != visible_patch_rows.rows()) {
        throw ShapeError("encode: positional rows do not match token count");
    }
    cache.patch_rows = visible_patch_rows;
    Mat<S> x = linear_forward(p.embed, visible_patch_rows) + pos_rows;

    const int depth = static_cast<int>(p.layers.size());
    cache.layer_caches.assign(static_cast<std::size_t>(depth), EncoderLayerCache<S>{});
    EncoderOutputs<S> out;
    out.per_layer.reserve(static_cast<std::size_t>(depth));
    for (int j = 0; j < depth; ++j) {
        Mat<S> in = (j == 0) ? x : out.per_layer[static_cast<std::size_t>(j - 1)];
        if (p.long_skips) {
            const int src = long_skip_source(j, depth);
            if (src >= 0) in += out.per_layer[static_cast<std::size_t>(src)];
        }
        Mat<S> h =
            encoder_layer_forward(p.layers[static_cast<std::size_t>(j)], in,
                                  cache.layer_caches[static_cast<std::size_t>(j)]);
        if (!all_finite(h)) {
            throw NonFiniteError("encoder: non-finite activations at layer " + std::to_string(j));
        }
        out.per_layer.push_back(std::move(h));
    }
    final_normed = layernorm_forward(p.ln_final, out.per_layer.back(), cache.final_ln);
    return out;
}

/// `g_per_layer` carries the gradient flowing into each retained layer output
/// from external consumers (decoder cross-attention); `g_final_normed` the
/// gradient of LN(last output). Returns the gradient w.r.t. the patch rows.
template <typename S>
Mat<S> encode_backward(EncoderStackParams<S>& p, const EncoderStackCache<S>& cache,
                       std::vector<Mat<S>> g_per_layer, const Mat<S>& g_final_normed) {
    const int depth = static_cast<int>(p.layers.size());
    g_per_layer[static_cast<std::size_t>(depth - 1)] +=
        layernorm_backward(p.ln_final, cache.final_ln, g_final_normed);

    Mat<S> gx0;
    for (int j = depth - 1; j >= 0; --j) {
        Mat<S> gin = encoder_layer_backward(p.layers[static_cast<std::size_t>(j)],
                                            cache.layer_caches[static_cast<std::size_t>(j)],
                                            g_per_layer[static_cast<std::size_t>(j)]);
        if (p.long_skips) {
            const int src = long_skip_source(j, depth);
            if (src >= 0) g_per_layer[static_cast<std::size_t>(src)] += gin;
        }
        if (j > 0) {
            g_per_layer[static_cast<std::size_t>(j - 1)] += gin;
        } else {
            gx0 = std::move(gin);
        }
    }
    return linear_backward(p.embed, cache.patch_rows, gx0);
}

}  // namespace memmc
