#pragma once

#include <algorithm>
#include <cmath>

#include "memmc/errors.hpp"
#include "memmc/patchgrid.hpp"
#include "memmc/types.hpp"

namespace memmc {

/// Bilinear resampling with half-pixel centers; edges clamp.
template <typename S>
Mat<S> resize_bilinear(const Mat<S>& src, Index out_h, Index out_w) {
    if (src.rows() < 1 || src.cols() < 1) throw ShapeError("resize_bilinear: empty input");
    if (out_h < 1 || out_w < 1) throw ValueError("resize_bilinear: output must be non-empty");
    if (src.rows() == out_h && src.cols() == out_w) return src;

    Mat<S> dst(out_h, out_w);
    const double sy = static_cast<double>(src.rows()) / static_cast<double>(out_h);
    const double sx = static_cast<double>(src.cols()) / static_cast<double>(out_w);
    for (Index y = 0; y < out_h; ++y) {
        double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(src.rows() - 1));
        const Index y0 = static_cast<Index>(std::floor(fy));
        const Index y1 = std::min(y0 + 1, src.rows() - 1);
        const double wy = fy - static_cast<double>(y0);
        for (Index x = 0; x < out_w; ++x) {
            double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(src.cols() - 1));
            const Index x0 = static_cast<Index>(std::floor(fx));
            const Index x1 = std::min(x0 + 1, src.cols() - 1);
            const double wx = fx - static_cast<double>(x0);
            const double top = static_cast<double>(src(y0, x0)) * (1.0 - wx) +
                               static_cast<double>(src(y0, x1)) * wx;
            const double bot = static_cast<double>(src(y1, x0)) * (1.0 - wx) +
                               static_cast<double>(src(y1, x1)) * wx;
            dst(y, x) = static_cast<S>(top * (1.0 - wy) + bot * wy);
        }
    }
    return dst;
}

template <typename S>
Image<S> resize_bilinear(const Image<S>& src, Index out_h, Index out_w) {
    Image<S> dst;
    dst.planes.reserve(src.planes.size());
    for (const auto& plane : src.planes) dst.planes.push_back(resize_bilinear(plane, out_h, out_w));
    return dst;
}

template <typename S>
Image<S> crop(const Image<S>& src, Index top, Index left, Index h, Index w) {
    if (top < 0 || left < 0 || h < 1 || w < 1 || top + h > src.height() || left + w > src.width()) {
        throw ShapeError("crop: window outside the image");
    }
    Image<S> dst;
    dst.planes.reserve(src.planes.size());
    for (const auto& plane : src.planes) dst.planes.push_back(plane.block(top, left, h, w));
    return dst;
}

/// RandomResizedCrop: samples a crop window with area in
/// [scale_min, scale_max] of the image and aspect ratio in [3/4, 4/3]
/// (log-uniform), then resizes back to the input size. Falls back to a
/// centered square after 10 rejected proposals.
template <typename S>
Image<S> random_resized_crop(const Image<S>& src, double scale_min, double scale_max, Rng& rng) {
    if (!(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 1.0)) {
        throw ValueError("random_resized_crop: need 0 < scale_min <= scale_max <= 1");
    }
    const Index h = src.height(), w = src.width();
    const double area = static_cast<double>(h) * static_cast<double>(w);
    const double log_lo = std::log(3.0 / 4.0), log_hi = std::log(4.0 / 3.0);
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double target = area * (scale_min + (scale_max - scale_min) * rng.uniform());
        const double aspect = std::exp(log_lo + (log_hi - log_lo) * rng.uniform());
        const Index cw = static_cast<Index>(std::lround(std::sqrt(target * aspect)));
        const Index ch = static_cast<Index>(std::lround(std::sqrt(target / aspect)));
        if (cw < 1 || ch < 1 || cw > w || ch > h) continue;
        const Index top = static_cast<Index>(rng.below(static_cast<std::uint64_t>(h - ch + 1)));
        const Index left = static_cast<Index>(rng.below(static_cast<std::uint64_t>(w - cw + 1)));
        return resize_bilinear(crop(src, top, left, ch, cw), h, w);
    }
    const Index side = std::min(h, w);
    return resize_bilinear(crop(src, (h - side) / 2, (w - side) / 2, side, side), h, w);
}

}  // namespace memmc
