#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "memmc/errors.hpp"
#include "memmc/nn.hpp"
#include "memmc/types.hpp"

namespace memmc {

// ---------------------------------------------------------------------------
// Multi-head scaled-dot-product core on already-projected Q/K/V.
// Q is n x w, K and V are m x w (m may exceed n when memory rows are
// appended, or differ entirely for cross attention).
// ---------------------------------------------------------------------------

template <typename S>
struct MhaCoreCache {
    std::vector<Mat<S>> attn;  // per head, n x m, rows sum to 1
    Mat<S> q, k, v;
};

template <typename S>
Mat<S> mha_core_forward(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, Index heads,
                        MhaCoreCache<S>& cache) {
    const Index w = q.cols();
    if (k.cols() != w || v.cols() != w) throw ShapeError("attention: Q/K/V width mismatch");
    if (k.rows() != v.rows()) throw ShapeError("attention: K/V row count mismatch");
    if (w % heads != 0) throw ShapeError("attention: width not divisible by head count");
    const Index dh = w / heads;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

    cache.q = q;
    cache.k = k;
    cache.v = v;
    cache.attn.assign(static_cast<std::size_t>(heads), Mat<S>());
    Mat<S> out(q.rows(), w);
    for (Index h = 0; h < heads; ++h) {
        auto qh = q.middleCols(h * dh, dh);
        auto kh = k.middleCols(h * dh, dh);
        auto vh = v.middleCols(h * dh, dh);
        Mat<S> z = (qh * kh.transpose()) * scale;
        Mat<S>& a = cache.attn[static_cast<std::size_t>(h)];
        a = softmax_rows(z);
        out.middleCols(h * dh, dh).noalias() = a * vh;
    }
    return out;
}

template <typename S>
struct MhaCoreGrads {
    Mat<S> gq, gk, gv;
};

template <typename S>
MhaCoreGrads<S> mha_core_backward(const MhaCoreCache<S>& cache, Index heads, const Mat<S>& gout) {
    const Index w = cache.q.cols();
    const Index dh = w / heads;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

    MhaCoreGrads<S> g;
    g.gq = Mat<S>::Zero(cache.q.rows(), w);
    g.gk = Mat<S>::Zero(cache.k.rows(), w);
    g.gv = Mat<S>::Zero(cache.v.rows(), w);
    for (Index h = 0; h < heads; ++h) {
        const Mat<S>& a = cache.attn[static_cast<std::size_t>(h)];
        auto kh = cache.k.middleCols(h * dh, dh);
        auto vh = cache.v.middleCols(h * dh, dh);
        auto goh = gout.middleCols(h * dh, dh);
        Mat<S> ga = goh * vh.transpose();
        g.gv.middleCols(h * dh, dh).noalias() = a.transpose() * goh;
        Mat<S> gz = softmax_rows_backward(a, ga) * scale;
        g.gq.middleCols(h * dh, dh).noalias() = gz * kh;
        g.gk.middleCols(h * dh, dh).noalias() = gz.transpose() * cache.q.middleCols(h * dh, dh);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Self-attention with optional learnable key/value memory rows appended to
// the token keys/values. slots == 0 reduces to standard self-attention.
// ---------------------------------------------------------------------------

template <typename S>
struct SelfAttentionParams {
    LinearParams<S> wq, wk, wv;  // width x width, no bias
    LinearParams<S> out;         // width x width, with bias
    Param<S> mem_k, mem_v;       // slots x width
    Index heads = 1;
    Index slots = 0;

    void init(Index width, Index n_heads, Index n_slots, Rng& rng) {
        if (width % n_heads != 0) throw ValueError("attention width not divisible by heads");
        heads = n_heads;
        slots = n_slots;
        wq.init(width, width, rng, /*bias=*/false);
        wk.init(width, width, rng, /*bias=*/false);
        wv.init(width, width, rng, /*bias=*/false);
        out.init(width, width, rng, /*bias=*/true);
        if (slots > 0) {
            mem_k.resize(slots, width);
            init_normal(mem_k.v, rng);
            mem_v.resize(slots, width);
            init_normal(mem_v.v, rng);
        }
    }

    void visit(const std::string& prefix, ParamVisitor<S>& fn) {
        wq.visit(prefix + ".wq", fn);
        wk.visit(prefix + ".wk", fn);
        wv.visit(prefix + ".wv", fn);
        out.visit(prefix + ".out", fn);
        if (slots > 0) {
            fn(prefix + ".mem_k", mem_k, true);
            fn(prefix + ".mem_v", mem_v, true);
        }
    }
};

template <typename S>
struct SelfAttentionCache {
    Mat<S> tokens;
    MhaCoreCache<S> core;
    Mat<S> merged;  // pre-output-projection
};

template <typename S>
Mat<S> self_attention_forward(const SelfAttentionParams<S>& p, const Mat<S>& tokens,
                              SelfAttentionCache<S>& cache) {
    if (tokens.rows() < 1) throw ShapeError("self_attention: need at least one token");
    if (!all_finite(tokens)) throw NonFiniteError("self_attention: non-finite input tokens");
    cache.tokens = tokens;
    Mat<S> q = linear_forward(p.wq, tokens);
    Mat<S> k = linear_forward(p.wk, tokens);
    Mat<S> v = linear_forward(p.wv, tokens);
    if (p.slots > 0) {
        const Index n = tokens.rows();
        Mat<S> kk(n + p.slots, k.cols());
        kk.topRows(n) = k;
        kk.bottomRows(p.slots) = p.mem_k.v;
        Mat<S> vv(n + p.slots, v.cols());
        vv.topRows(n) = v;
        vv.bottomRows(p.slots) = p.mem_v.v;
        cache.merged = mha_core_forward(q, kk, vv, p.heads, cache.core);
    } else {
        cache.merged = mha_core_forward(q, k, v, p.heads, cache.core);
    }
    return linear_forward(p.out, cache.merged);
}

template <typename S>
Mat<S> self_attention_backward(SelfAttentionParams<S>& p, const SelfAttentionCache<S>& cache,
                               const Mat<S>& gy) {
    Mat<S> gmerged = linear_backward(p.out, cache.merged, gy);
    MhaCoreGrads<S> g = mha_core_backward(cache.core, p.heads, gmerged);
    const Index n = cache.tokens.rows();
    Mat<S> gx = g.gq * p.wq.w.v.transpose();
    p.wq.w.g.noalias() += cache.tokens.transpose() * g.gq;
    if (p.slots > 0) {
        p.mem_k.g += g.gk.bottomRows(p.slots);
        p.mem_v.g += g.gv.bottomRows(p.slots);
    }
    Mat<S> gk_tok = g.gk.topRows(n);
    Mat<S> gv_tok = g.gv.topRows(n);
    gx.noalias() += gk_tok * p.wk.w.v.transpose();
    p.wk.w.g.noalias() += cache.tokens.transpose() * gk_tok;
    gx.noalias() += gv_tok * p.wv.w.v.transpose();
    p.wv.w.g.noalias() += cache.tokens.transpose() * gv_tok;
    return gx;
}

/// Memory-augmented self-attention as a standalone operation: keys are
/// [W_K X, M_K], values [W_V X, M_V], queries W_Q X only.
template <typename S>
Mat<S> mem_self_attention(const SelfAttentionParams<S>& p, const Mat<S>& tokens) {
    SelfAttentionCache<S> cache;
    return self_attention_forward(p, tokens, cache);
}

}  // namespace memmc
