#pragma once

#include <cmath>
#include <string>

#include "memmc/errors.hpp"
#include "memmc/rng.hpp"
#include "memmc/types.hpp"

namespace memmc {

inline constexpr double kParamInitStddev = 0.02;
inline constexpr double kLayerNormEps = 1e-6;

template <typename S>
void init_normal(Mat<S>& m, Rng& rng, double stddev = kParamInitStddev) {
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            m(i, j) = static_cast<S>(rng.normal(0.0, stddev));
        }
    }
}

// ---------------------------------------------------------------------------
// Linear: y = x * W (+ b), W is (in x out), b broadcast over rows.
// ---------------------------------------------------------------------------

template <typename S>
struct LinearParams {
    Param<S> w;
    Param<S> b;  // 1 x out; empty when bias-free
    bool has_bias = true;

    void init(Index in, Index out, Rng& rng, bool bias = true) {
        has_bias = bias;
        w.resize(in, out);
        init_normal(w.v, rng);
        if (has_bias) {
            b.resize(1, out);
            b.v.setZero();
        }
    }

    void visit(const std::string& prefix, ParamVisitor<S>& fn) {
        fn(prefix + ".w", w, true);
        if (has_bias) fn(prefix + ".b", b, false);
    }
};

template <typename S>
Mat<S> linear_forward(const LinearParams<S>& p, const Mat<S>& x) {
    if (x.cols() != p.w.v.rows()) throw ShapeError("linear: input width mismatch");
    Mat<S> y = x * p.w.v;
    if (p.has_bias) y.rowwise() += p.b.v.row(0);
    return y;
}

/// Accumulates parameter gradients, returns gradient w.r.t. x.
template <typename S>
Mat<S> linear_backward(LinearParams<S>& p, const Mat<S>& x, const Mat<S>& gy) {
    p.w.g.noalias() += x.transpose() * gy;
    if (p.has_bias) p.b.g.row(0) += gy.colwise().sum();
    return gy * p.w.v.transpose();
}

// ---------------------------------------------------------------------------
// LayerNorm over channels, per token row.
// ---------------------------------------------------------------------------

template <typename S>
struct LayerNormParams {
    Param<S> gamma;  // 1 x d
    Param<S> beta;   // 1 x d

    void init(Index d) {
        gamma.resize(1, d);
        gamma.v.setOnes();
        beta.resize(1, d);
        beta.v.setZero();
    }

    void visit(const std::string& prefix, ParamVisitor<S>& fn) {
        fn(prefix + ".gamma", gamma, false);
        fn(prefix + ".beta", beta, false);
    }
};

template <typename S>
struct LayerNormCache {
    Mat<S> xhat;     // normalized input
    Vec<S> inv_std;  // per row
};

template <typename S>
Mat<S> layernorm_forward(const LayerNormParams<S>& p, const Mat<S>& x, LayerNormCache<S>& cache) {
    const Index n = x.rows(), d = x.cols();
    cache.xhat.resize(n, d);
    cache.inv_std.resize(n);
    for (Index i = 0; i < n; ++i) {
        const S mu = x.row(i).mean();
        const S var = (x.row(i).array() - mu).square().mean();
        const S inv = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
        cache.inv_std(i) = inv;
        cache.xhat.row(i) = (x.row(i).array() - mu) * inv;
    }
    Mat<S> y = cache.xhat;
    y.array().rowwise() *= p.gamma.v.row(0).array();
    y.rowwise() += p.beta.v.row(0);
    return y;
}

template <typename S>
Mat<S> layernorm_backward(LayerNormParams<S>& p, const LayerNormCache<S>& cache, const Mat<S>& gy) {
    const Index n = gy.rows(), d = gy.cols();
    p.gamma.g.row(0) += (gy.array() * cache.xhat.array()).colwise().sum().matrix();
    p.beta.g.row(0) += gy.colwise().sum();
    Mat<S> gx(n, d);
    for (Index i = 0; i < n; ++i) {
        auto gxhat = (gy.row(i).array() * p.gamma.v.row(0).array()).eval();
        const S m1 = gxhat.mean();
        const S m2 = (gxhat * cache.xhat.row(i).array()).mean();
        gx.row(i) = ((gxhat - m1 - cache.xhat.row(i).array() * m2) * cache.inv_std(i)).matrix();
    }
    return gx;
}

// ---------------------------------------------------------------------------
// GELU (exact, erf form).
// ---------------------------------------------------------------------------

template <typename S>
Mat<S> gelu(const Mat<S>& x) {
    return x.unaryExpr([](S v) {
        const double z = static_cast<double>(v);
        return static_cast<S>(0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0))));
    });
}

template <typename S>
Mat<S> gelu_grad(const Mat<S>& x) {
    return x.unaryExpr([](S v) {
        const double z = static_cast<double>(v);
        const double cdf = 0.5 * (1.0 + std::erf(z / std::sqrt(2.0)));
        const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846);
        return static_cast<S>(cdf + z * pdf);
    });
}

// ---------------------------------------------------------------------------
// Two-layer GELU MLP.
// ---------------------------------------------------------------------------

template <typename S>
struct MlpParams {
    LinearParams<S> fc1;
    LinearParams<S> fc2;

    void init(Index d, Index hidden, Rng& rng) {
        fc1.init(d, hidden, rng);
        fc2.init(hidden, d, rng);
    }

    void visit(const std::string& prefix, ParamVisitor<S>& fn) {
        fc1.visit(prefix + ".fc1", fn);
        fc2.visit(prefix + ".fc2", fn);
    }
};

template <typename S>
struct MlpCache {
    Mat<S> x;
    Mat<S> h1;   // pre-activation
    Mat<S> act;  // post-activation
};

template <typename S>
Mat<S> mlp_forward(const MlpParams<S>& p, const Mat<S>& x, MlpCache<S>& cache) {
    cache.x = x;
    cache.h1 = linear_forward(p.fc1, x);
    cache.act = gelu(cache.h1);
    return linear_forward(p.fc2, cache.act);
}

template <typename S>
Mat<S> mlp_backward(MlpParams<S>& p, const MlpCache<S>& cache, const Mat<S>& gy) {
    Mat<S> ga = linear_backward(p.fc2, cache.act, gy);
    Mat<S> gh1 = ga.cwiseProduct(gelu_grad(cache.h1));
    return linear_backward(p.fc1, cache.x, gh1);
}

// ---------------------------------------------------------------------------
// Row-wise softmax and its backward.
// ---------------------------------------------------------------------------

template <typename S>
Mat<S> softmax_rows(const Mat<S>& z) {
    Mat<S> a(z.rows(), z.cols());
    for (Index i = 0; i < z.rows(); ++i) {
        const S zmax = z.row(i).maxCoeff();
        a.row(i) = (z.row(i).array() - zmax).exp();
        a.row(i) /= a.row(i).sum();
    }
    return a;
}

/// gZ given gA and A = softmax_rows(Z).
template <typename S>
Mat<S> softmax_rows_backward(const Mat<S>& a, const Mat<S>& ga) {
    Mat<S> gz(a.rows(), a.cols());
    for (Index i = 0; i < a.rows(); ++i) {
        const S dot = a.row(i).dot(ga.row(i));
        gz.row(i) = a.row(i).array() * (ga.row(i).array() - dot);
    }
    return gz;
}

}  // namespace memmc
