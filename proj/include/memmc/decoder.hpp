#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "memmc/attention.hpp"
#include "memmc/encoder.hpp"
#include "memmc/errors.hpp"
#include "memmc/nn.hpp"
#include "memmc/patchgrid.hpp"
#include "memmc/types.hpp"

namespace memmc {

enum class GateGranularity { Scalar, Channel };

template <typename S>
Mat<S> sigmoid(const Mat<S>& z) {
    return z.unaryExpr([](S v) {
        if (v >= S(0)) {
            return S(1) / (S(1) + std::exp(-v));
        }
        const S e = std::exp(v);
        return e / (S(1) + e);
    });
}

// ---------------------------------------------------------------------------
// Decoder layer: self-attention, cross-attention to every retained encoder
// level, per-level sigmoid gates on the concatenated [self, cross] features,
// gated sum, MLP. Pre-norm with residuals around each sub-block.
//
// With multi_level == false the layer reduces to a standard cross-attention
// block: last encoder level only, gate machinery bypassed (weight 1).
// ---------------------------------------------------------------------------

template <typename S>
struct DecoderLayerParams {
    LayerNormParams<S> ln1;
    SelfAttentionParams<S> self_attn;  // slots == 0
    LayerNormParams<S> ln2;
    LinearParams<S> cross_q;             // dec_width -> dec_width, no bias
    LinearParams<S> cross_k;             // enc_width -> dec_width, no bias, shared over levels
    LinearParams<S> cross_v;             // enc_width -> dec_width, no bias, shared over levels
    LinearParams<S> cross_out;           // dec_width -> dec_width, with bias
    std::vector<LinearParams<S>> gates;  // per level: 2*dec_width -> 1 or dec_width
    LayerNormParams<S> ln3;
    MlpParams<S> mlp;

    Index heads = 1;
    Index n_levels = 1;
    bool multi_level = true;
    GateGranularity granularity = GateGranularity::Scalar;
    bool cross_residual = true;

    void init(Index dec_width, Index enc_width, Index n_heads, Index levels, Index mlp_hidden,
              bool multi, GateGranularity gran, bool residual, Rng& rng) {
        heads = n_heads;
        n_levels = levels;
        multi_level = multi;
        granularity = gran;
        cross_residual = residual;
        ln1.init(dec_width);
        self_attn.init(dec_width, n_heads, /*slots=*/0, rng);
        ln2.init(dec_width);
        cross_q.init(dec_width, dec_width, rng, /*bias=*/false);
        cross_k.init(enc_width, dec_width, rng, /*bias=*/false);
        cross_v.init(enc_width, dec_width, rng, /*bias=*/false);
        cross_out.init(dec_width, dec_width, rng, /*bias=*/true);
        gates.clear();
        if (multi_level) {
            const Index gate_out = (gran == GateGranularity::Scalar) ? 1 : dec_width;
            gates.assign(static_cast<std::size_t>(levels), LinearParams<S>{});
            for (auto& g : gates) g.init(2 * dec_width, gate_out, rng, /*bias=*/true);
        }
        ln3.init(dec_width);
        mlp.init(dec_width, mlp_hidden, rng);
    }

    void visit(const std::string& prefix, ParamVisitor<S>& fn) {
        ln1.visit(prefix + ".ln1", fn);
        self_attn.visit(prefix + ".self", fn);
        ln2.visit(prefix + ".ln2", fn);
        cross_q.visit(prefix + ".cross_q", fn);
        cross_k.visit(prefix + ".cross_k", fn);
        cross_v.visit(prefix + ".cross_v", fn);
        cross_out.visit(prefix + ".cross_out", fn);
        for (std::size_t l = 0; l < gates.size(); ++l) {
            gates[l].visit(prefix + ".gate" + std::to_string(l), fn);
        }
        ln3.visit(prefix + ".ln3", fn);
        mlp.visit(prefix + ".mlp", fn);
    }
};

template <typename S>
struct DecoderLayerCache {
    LayerNormCache<S> ln1c;
    SelfAttentionCache<S> selfc;
    Mat<S> s;  // self-attention sub-block output (post-residual)
    LayerNormCache<S> ln2c;
    Mat<S> q_in, qc;
    std::vector<int> levels_used;           // encoder level index per cross slot
    std::vector<MhaCoreCache<S>> cross_core;
    std::vector<Mat<S>> cross_raw;          // C_l, pre output projection
    std::vector<Mat<S>> gate_z;             // gate pre-activations
    std::vector<Mat<S>> gate;               // sigmoid(gate_z)
    Mat<S> fused;
    Mat<S> y2;
    LayerNormCache<S> ln3c;
    MlpCache<S> mlpc;
};

template <typename S>
Mat<S> decoder_layer_forward(const DecoderLayerParams<S>& p, const Mat<S>& y,
                             const EncoderOutputs<S>& enc, DecoderLayerCache<S>& cache) {
    const Index levels = static_cast<Index>(enc.per_layer.size());
    if (p.multi_level && levels != p.n_levels) {
        throw ShapeError("decoder layer built for " + std::to_string(p.n_levels) +
                         " encoder levels, got " + std::to_string(levels));
    }
    if (levels < 1) throw ShapeError("decoder layer: no encoder outputs");
    for (const auto& x : enc.per_layer) {
        if (!all_finite(x)) throw NonFiniteError("decoder layer: non-finite encoder outputs");
    }

    Mat<S> u = layernorm_forward(p.ln1, y, cache.ln1c);
    cache.s = y + self_attention_forward(p.self_attn, u, cache.selfc);

    cache.q_in = layernorm_forward(p.ln2, cache.s, cache.ln2c);
    cache.qc = linear_forward(p.cross_q, cache.q_in);

    cache.levels_used.clear();
    if (p.multi_level) {
        for (int l = 0; l < static_cast<int>(levels); ++l) cache.levels_used.push_back(l);
    } else {
        cache.levels_used.push_back(static_cast<int>(levels) - 1);
    }
    const std::size_t n_used = cache.levels_used.size();
    cache.cross_core.assign(n_used, MhaCoreCache<S>{});
    cache.cross_raw.assign(n_used, Mat<S>());
    cache.gate_z.assign(n_used, Mat<S>());
    cache.gate.assign(n_used, Mat<S>());

    cache.fused = Mat<S>::Zero(y.rows(), y.cols());
    for (std::size_t i = 0; i < n_used; ++i) {
        const Mat<S>& xl = enc.per_layer[static_cast<std::size_t>(cache.levels_used[i])];
        Mat<S> k = linear_forward(p.cross_k, xl);
        Mat<S> v = linear_forward(p.cross_v, xl);
        cache.cross_raw[i] = mha_core_forward(cache.qc, k, v, p.heads, cache.cross_core[i]);
        if (p.multi_level) {
            Mat<S> concat(y.rows(), 2 * y.cols());
            concat << cache.s, cache.cross_raw[i];
            cache.gate_z[i] = linear_forward(p.gates[i], concat);
            cache.gate[i] = sigmoid(cache.gate_z[i]);
            if (p.granularity == GateGranularity::Scalar) {
                cache.fused.array() += cache.cross_raw[i].array().colwise() * cache.gate[i].col(0).array();
            } else {
                cache.fused.array() += cache.cross_raw[i].array() * cache.gate[i].array();
            }
        } else {
            cache.fused += cache.cross_raw[i];
        }
    }

    Mat<S> o = linear_forward(p.cross_out, cache.fused);
    cache.y2 = p.cross_residual ? Mat<S>(cache.s + o) : o;
    Mat<S> m = layernorm_forward(p.ln3, cache.y2, cache.ln3c);
    Mat<S> out = cache.y2 + mlp_forward(p.mlp, m, cache.mlpc);
    if (!all_finite(out)) throw NonFiniteError("decoder layer: non-finite activations");
    return out;
}

/// Backward through one decoder layer. Adds this layer's contribution to
/// `g_enc` (gradient per retained encoder output) and returns the gradient
/// w.r.t. the layer input.
template <typename S>
Mat<S> decoder_layer_backward(DecoderLayerParams<S>& p, const DecoderLayerCache<S>& cache,
                              const EncoderOutputs<S>& enc, const Mat<S>& gout,
                              std::vector<Mat<S>>& g_enc) {
    Mat<S> gm = mlp_backward(p.mlp, cache.mlpc, gout);
    Mat<S> gy2 = gout + layernorm_backward(p.ln3, cache.ln3c, gm);

    Mat<S> gs = Mat<S>::Zero(cache.s.rows(), cache.s.cols());
    if (p.cross_residual) gs += gy2;
    Mat<S> gfused = linear_backward(p.cross_out, cache.fused, gy2);

    Mat<S> gqc = Mat<S>::Zero(cache.qc.rows(), cache.qc.cols());
    for (std::size_t i = 0; i < cache.levels_used.size(); ++i) {
        const int level = cache.levels_used[i];
        const Mat<S>& xl = enc.per_layer[static_cast<std::size_t>(level)];
        const Mat<S>& cl = cache.cross_raw[i];

        Mat<S> gcl;
        if (p.multi_level) {
            Mat<S> ggate;
            if (p.granularity == GateGranularity::Scalar) {
                ggate = (gfused.array() * cl.array()).rowwise().sum().matrix();
                gcl = (gfused.array().colwise() * cache.gate[i].col(0).array()).matrix();
            } else {
                ggate = gfused.cwiseProduct(cl);
                gcl = gfused.cwiseProduct(cache.gate[i]);
            }
            // sigmoid'(z) = g(1-g)
            Mat<S> gz = ggate.cwiseProduct(
                cache.gate[i].cwiseProduct((Mat<S>::Ones(cache.gate[i].rows(), cache.gate[i].cols()) -
                                            cache.gate[i])));
            Mat<S> concat(cache.s.rows(), 2 * cache.s.cols());
            concat << cache.s, cl;
            Mat<S> gconcat = linear_backward(p.gates[i], concat, gz);
            gs += gconcat.leftCols(cache.s.cols());
            gcl += gconcat.rightCols(cache.s.cols());
        } else {
            gcl = gfused;
        }

        MhaCoreGrads<S> g = mha_core_backward(cache.cross_core[i], p.heads, gcl);
        gqc += g.gq;
        p.cross_k.w.g.noalias() += xl.transpose() * g.gk;
        p.cross_v.w.g.noalias() += xl.transpose() * g.gv;
        g_enc[static_cast<std::size_t>(level)].noalias() += g.gk * p.cross_k.w.v.transpose();
        g_enc[static_cast<std::size_t>(level)].noalias() += g.gv * p.cross_v.w.v.transpose();
    }

    Mat<S> gq_in = linear_backward(p.cross_q, cache.q_in, gqc);
    gs += layernorm_backward(p.ln2, cache.ln2c, gq_in);

    Mat<S> gu = self_attention_backward(p.self_attn, cache.selfc, gs);
    return gs + layernorm_backward(p.ln1, cache.ln1c, gu);
}

/// Spec-surface wrapper: one decoder layer applied to a token state.
template <typename S>
Mat<S> multi_level_cross_attention(const DecoderLayerParams<S>& p, const Mat<S>& state,
                                   const EncoderOutputs<S>& enc) {
    DecoderLayerCache<S> cache;
    return decoder_layer_forward(p, state, enc, cache);
}

// ---------------------------------------------------------------------------
// Decoder stack: width projection, mask-token scatter, blocks, final norm,
// pixel head.
// ---------------------------------------------------------------------------

template <typename S>
struct DecoderStackParams {
    LinearParams<S> proj;   // enc_width -> dec_width
    Param<S> mask_token;    // 1 x dec_width, shared by all masked positions
    std::vector<DecoderLayerParams<S>> layers;
    LayerNormParams<S> ln_final;
    LinearParams<S> head;   // dec_width -> patch_dim
    bool long_skips = true;

    void init(Index enc_width, Index dec_width, Index heads, Index depth, Index n_levels,
              Index mlp_hidden, Index patch_dim, bool multi, GateGranularity gran, bool residual,
              bool skips, Rng& rng) {
        long_skips = skips;
        proj.init(enc_width, dec_width, rng);
        mask_token.resize(1, dec_width);
        init_normal(mask_token.v, rng);
        layers.assign(static_cast<std::size_t>(depth), DecoderLayerParams<S>{});
        for (auto& l : layers) {
            l.init(dec_width, enc_width, heads, n_levels, mlp_hidden, multi, gran, residual, rng);
        }
        ln_final.init(dec_width);
        head.init(dec_width, patch_dim, rng);
    }

    void visit(const std::string& prefix, ParamVisitor<S>& fn) {
        proj.visit(prefix + ".proj", fn);
        fn(prefix + ".mask_token", mask_token, false);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            layers[i].visit(prefix + ".layer" + std::to_string(i), fn);
        }
        ln_final.visit(prefix + ".ln_final", fn);
        head.visit(prefix + ".head", fn);
    }
};

template <typename S>
struct DecoderAssemblyCache {
    Mat<S> enc_final;   // input to the width projection
    Mat<S> projected;   // visible tokens at decoder width
};

/// Token i is the projected encoder output of its visible rank, or the shared
/// mask token; the positional row for i is added to every token.
template <typename S>
Mat<S> assemble_decoder_input(const LinearParams<S>& proj, const Param<S>& mask_token,
                              const Mat<S>& enc_final, const MaskPartition& part,
                              const Mat<S>& pos_table, DecoderAssemblyCache<S>& cache) {
    const Index n_total = static_cast<Index>(part.visible.size() + part.masked.size());
    if (enc_final.rows() != static_cast<Index>(part.visible.size())) {
        throw ShapeError("assemble_decoder_input: encoder rows != visible count");
    }
    if (pos_table.rows() != n_total) {
        throw ShapeError("assemble_decoder_input: positional table rows != patch count");
    }
    cache.enc_final = enc_final;
    cache.projected = linear_forward(proj, enc_final);
    Mat<S> tokens(n_total, cache.projected.cols());
    for (std::size_t r = 0; r < part.visible.size(); ++r) {
        tokens.row(part.visible[r]) = cache.projected.row(static_cast<Index>(r));
    }
    for (int idx : part.masked) {
        tokens.row(idx) = mask_token.v.row(0);
    }
    tokens += pos_table;
    return tokens;
}

template <typename S>
Mat<S> assemble_decoder_input_backward(LinearParams<S>& proj, Param<S>& mask_token,
                                       const DecoderAssemblyCache<S>& cache,
                                       const MaskPartition& part, const Mat<S>& g_tokens) {
    Mat<S> g_proj_out(static_cast<Index>(part.visible.size()), g_tokens.cols());
    for (std::size_t r = 0; r < part.visible.size(); ++r) {
        g_proj_out.row(static_cast<Index>(r)) = g_tokens.row(part.visible[r]);
    }
    for (int idx : part.masked) {
        mask_token.g.row(0) += g_tokens.row(idx);
    }
    return linear_backward(proj, cache.enc_final, g_proj_out);
}

template <typename S>
struct DecoderStackCache {
    DecoderAssemblyCache<S> assembly;
    std::vector<DecoderLayerCache<S>> layer_caches;
    std::vector<Mat<S>> layer_outputs;
    LayerNormCache<S> final_ln;
    Mat<S> final_normed;
};

template <typename S>
Mat<S> decoder_stack_forward(const DecoderStackParams<S>& p, const Mat<S>& enc_final,
                             const MaskPartition& part, const Mat<S>& pos_table,
                             const EncoderOutputs<S>& enc, DecoderStackCache<S>& cache) {
    Mat<S> y = assemble_decoder_input(p.proj, p.mask_token, enc_final, part, pos_table, cache.assembly);
    const int depth = static_cast<int>(p.layers.size());
    cache.layer_caches.assign(static_cast<std::size_t>(depth), DecoderLayerCache<S>{});
    cache.layer_outputs.assign(static_cast<std::size_t>(depth), Mat<S>());
    for (int j = 0; j < depth; ++j) {
        Mat<S> in = (j == 0) ? y : cache.layer_outputs[static_cast<std::size_t>(j - 1)];
        if (p.long_skips) {
            const int src = long_skip_source(j, depth);
            if (src >= 0) in += cache.layer_outputs[static_cast<std::size_t>(src)];
        }
        cache.layer_outputs[static_cast<std::size_t>(j)] = decoder_layer_forward(
            p.layers[static_cast<std::size_t>(j)], in, enc, cache.layer_caches[static_cast<std::size_t>(j)]);
    }
    cache.final_normed =
        layernorm_forward(p.ln_final, cache.layer_outputs[static_cast<std::size_t>(depth - 1)], cache.final_ln);
    return linear_forward(p.head, cache.final_normed);
}

/// Returns gradients w.r.t. the retained encoder outputs (per level) and, via
/// out-param, the gradient w.r.t. the pre-projection encoder representation.
template <typename S>
std::vector<Mat<S>> decoder_stack_backward(DecoderStackParams<S>& p, const DecoderStackCache<S>& cache,
                                           const MaskPartition& part, const EncoderOutputs<S>& enc,
                                           const Mat<S>& g_pred, Mat<S>& g_enc_final) {
    std::vector<Mat<S>> g_enc(enc.per_layer.size());
    for (std::size_t l = 0; l < g_enc.size(); ++l) {
        g_enc[l] = Mat<S>::Zero(enc.per_layer[l].rows(), enc.per_layer[l].cols());
    }

    Mat<S> g_final_normed = linear_backward(p.head, cache.final_normed, g_pred);
    const int depth = static_cast<int>(p.layers.size());
    std::vector<Mat<S>> g_out(static_cast<std::size_t>(depth));
    for (int j = 0; j < depth; ++j) {
        g_out[static_cast<std::size_t>(j)] = Mat<S>::Zero(cache.layer_outputs[static_cast<std::size_t>(j)].rows(),
                                                          cache.layer_outputs[static_cast<std::size_t>(j)].cols());
    }
    g_out[static_cast<std::size_t>(depth - 1)] += layernorm_backward(p.ln_final, cache.final_ln, g_final_normed);

    Mat<S> g_y0;
    for (int j = depth - 1; j >= 0; --j) {
        Mat<S> gin = decoder_layer_backward(p.layers[static_cast<std::size_t>(j)],
                                            cache.layer_caches[static_cast<std::size_t>(j)], enc,
                                            g_out[static_cast<std::size_t>(j)], g_enc);
        if (p.long_skips) {
            const int src = long_skip_source(j, depth);
            if (src >= 0) g_out[static_cast<std::size_t>(src)] += gin;
        }
        if (j > 0) {
            g_out[static_cast<std::size_t>(j - 1)] += gin;
        } else {
            g_y0 = std::move(gin);
        }
    }
    g_enc_final = assemble_decoder_input_backward(p.proj, p.mask_token, cache.assembly, part, g_y0);
    return g_enc;
}

}  // namespace memmc
