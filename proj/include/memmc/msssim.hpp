#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "memmc/errors.hpp"
#include "memmc/patchgrid.hpp"
#include "memmc/types.hpp"

namespace memmc {

/// Canonical per-scale weights (Wang et al.), truncated and renormalized.
inline std::vector<double> default_msssim_weights(int scales) {
    static const double canon[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    if (scales < 1 || scales > 5) {
        throw ValueError("ms-ssim: default weights cover 1 to 5 scales");
    }
    double sum = 0.0;
    for (int i = 0; i < scales; ++i) sum += canon[i];
    std::vector<double> w(static_cast<std::size_t>(scales));
    for (int i = 0; i < scales; ++i) w[static_cast<std::size_t>(i)] = canon[i] / sum;
    return w;
}

struct MsSsimParams {
    int scales = 3;
    std::vector<double> weights = default_msssim_weights(3);
    int window_side = 11;
    double sigma = 1.5;
    double c1 = 1e-4;  // (0.01)^2 for unit dynamic range
    double c2 = 9e-4;  // (0.03)^2

    void validate() const {
        if (scales < 1) throw ValueError("ms-ssim: scales must be >= 1");
        if (weights.size() != static_cast<std::size_t>(scales)) {
            throw ValueError("ms-ssim: need one weight per scale");
        }
        double sum = 0.0;
        for (double w : weights) {
            if (w <= 0.0) throw ValueError("ms-ssim: weights must be positive");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-6) throw ValueError("ms-ssim: weights must sum to 1");
        if (window_side < 2) throw ValueError("ms-ssim: window must span at least 2 pixels");
        if (sigma <= 0.0) throw ValueError("ms-ssim: sigma must be positive");
        if (c1 <= 0.0 || c2 <= 0.0) throw ValueError("ms-ssim: stability constants must be positive");
    }
};

/// Shrinks the window and drops coarse scales so the analysis fits an h x w
/// region; sigma scales with the window. Needed when scoring small context
/// windows around individual patches.
inline MsSsimParams adapt_msssim(MsSsimParams p, Index h, Index w) {
    p.validate();
    Index side = std::min(h, w);
    if (side < 2) throw ShapeError("ms-ssim: region must span at least 2 pixels");
    if (side < p.window_side) {
        p.sigma *= static_cast<double>(side) / p.window_side;
        p.window_side = static_cast<int>(side);
    }
    int fit = 1;
    Index d = side / 2;
    while (fit < p.scales && d >= p.window_side) {
        ++fit;
        d /= 2;
    }
    if (fit < p.scales) {
        p.scales = fit;
        p.weights.resize(static_cast<std::size_t>(fit));
        double sum = 0.0;
        for (double v : p.weights) sum += v;
        for (double& v : p.weights) v /= sum;
    }
    return p;
}

namespace detail {

inline std::vector<double> gaussian_taps(int side, double sigma) {
    std::vector<double> k(static_cast<std::size_t>(side));
    const double center = 0.5 * (side - 1);
    double sum = 0.0;
    for (int i = 0; i < side; ++i) {
        const double d = i - center;
        k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += k[static_cast<std::size_t>(i)];
    }
    for (double& v : k) v /= sum;
    return k;
}

/// Separable valid-range Gaussian blur; output is (h-win+1) x (w-win+1).
inline Eigen::MatrixXd gaussian_blur_valid(const Eigen::MatrixXd& x, const std::vector<double>& k) {
    const Index win = static_cast<Index>(k.size());
    Eigen::MatrixXd horiz(x.rows(), x.cols() - win + 1);
    for (Index r = 0; r < x.rows(); ++r) {
        for (Index c = 0; c < horiz.cols(); ++c) {
            double acc = 0.0;
            for (Index t = 0; t < win; ++t) acc += k[static_cast<std::size_t>(t)] * x(r, c + t);
            horiz(r, c) = acc;
        }
    }
    Eigen::MatrixXd out(x.rows() - win + 1, horiz.cols());
    for (Index r = 0; r < out.rows(); ++r) {
        for (Index c = 0; c < out.cols(); ++c) {
            double acc = 0.0;
            for (Index t = 0; t < win; ++t) acc += k[static_cast<std::size_t>(t)] * horiz(r + t, c);
            out(r, c) = acc;
        }
    }
    return out;
}

/// 2x2 mean pooling with stride 2; trailing odd rows/columns are dropped.
inline Eigen::MatrixXd downsample2(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd out(x.rows() / 2, x.cols() / 2);
    for (Index r = 0; r < out.rows(); ++r) {
        for (Index c = 0; c < out.cols(); ++c) {
            out(r, c) = 0.25 * (x(2 * r, 2 * c) + x(2 * r, 2 * c + 1) + x(2 * r + 1, 2 * c) +
                                x(2 * r + 1, 2 * c + 1));
        }
    }
    return out;
}

}  // namespace detail

/// Multi-scale structural similarity between two single-channel images in
/// [0,1]-ish range. Contrast/structure terms are averaged per scale and
/// combined as a weighted product; the luminance term enters once at the
/// coarsest scale. Returns a value in [0,1] for non-negative inputs; exactly
/// 1 for identical inputs.
template <typename S>
double ms_ssim(const Mat<S>& a, const Mat<S>& b, const MsSsimParams& params) {
    params.validate();
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("ms-ssim: images must share a shape");
    }
    if (a.size() == 0) throw ShapeError("ms-ssim: empty image");
    {
        Index h = a.rows(), w = a.cols();
        for (int s = 1; s < params.scales; ++s) {
            h /= 2;
            w /= 2;
        }
        if (h < params.window_side || w < params.window_side) {
            throw ShapeError("ms-ssim: image smaller than the window at the coarsest scale");
        }
    }

    const std::vector<double> taps = detail::gaussian_taps(params.window_side, params.sigma);
    Eigen::MatrixXd xa = a.template cast<double>();
    Eigen::MatrixXd xb = b.template cast<double>();

    double value = 1.0;
    for (int s = 0; s < params.scales; ++s) {
        if (s > 0) {
            xa = detail::downsample2(xa);
            xb = detail::downsample2(xb);
        }
        const Eigen::MatrixXd mu_a = detail::gaussian_blur_valid(xa, taps);
        const Eigen::MatrixXd mu_b = detail::gaussian_blur_valid(xb, taps);
        const Eigen::MatrixXd raw_aa = detail::gaussian_blur_valid(xa.cwiseProduct(xa), taps);
        const Eigen::MatrixXd raw_bb = detail::gaussian_blur_valid(xb.cwiseProduct(xb), taps);
        const Eigen::MatrixXd raw_ab = detail::gaussian_blur_valid(xa.cwiseProduct(xb), taps);

        double cs_sum = 0.0;
        double lum_sum = 0.0;
        for (Index r = 0; r < mu_a.rows(); ++r) {
            for (Index c = 0; c < mu_a.cols(); ++c) {
                const double var_a = std::max(0.0, raw_aa(r, c) - mu_a(r, c) * mu_a(r, c));
                const double var_b = std::max(0.0, raw_bb(r, c) - mu_b(r, c) * mu_b(r, c));
                const double cov = raw_ab(r, c) - mu_a(r, c) * mu_b(r, c);
                const double cs = (2.0 * cov + params.c2) / (var_a + var_b + params.c2);
                cs_sum += std::clamp(cs, 0.0, 1.0);
                if (s == params.scales - 1) {
                    const double lum = (2.0 * mu_a(r, c) * mu_b(r, c) + params.c1) /
                                       (mu_a(r, c) * mu_a(r, c) + mu_b(r, c) * mu_b(r, c) + params.c1);
                    lum_sum += std::clamp(lum, 0.0, 1.0);
                }
            }
        }
        const double n = static_cast<double>(mu_a.size());
        value *= std::pow(cs_sum / n, params.weights[static_cast<std::size_t>(s)]);
        if (s == params.scales - 1) value *= lum_sum / n;
    }
    return value;
}

/// Channel-mean MS-SSIM for multi-channel images.
template <typename S>
double ms_ssim(const Image<S>& a, const Image<S>& b, const MsSsimParams& params) {
    if (!a.same_shape(b)) throw ShapeError("ms-ssim: images must share a shape");
    if (a.channels() == 0) throw ShapeError("ms-ssim: empty image");
    double sum = 0.0;
    for (Index c = 0; c < a.channels(); ++c) {
        sum += ms_ssim(a.planes[static_cast<std::size_t>(c)], b.planes[static_cast<std::size_t>(c)],
                       params);
    }
    return sum / static_cast<double>(a.channels());
}

}  // namespace memmc
