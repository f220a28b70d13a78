#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "memmc/data.hpp"
#include "memmc/errors.hpp"
#include "memmc/imageops.hpp"
#include "memmc/rng.hpp"

namespace memmc {

/// Seeded generator for desk-scale anomaly benchmarks: smooth noise textures
/// as the normal class, with one sharp injected defect per anomalous image
/// and its exact segmentation mask.
struct SyntheticSpec {
    int image_size = 64;
    int channels = 1;
    int n_train = 200;
    int n_test_normal = 50;
    int n_test_anomalous = 50;
    std::string anomaly = "blob";  // blob | square | intensity
    int anomaly_min = 8;           // defect extent range, pixels
    int anomaly_max = 16;
    double anomaly_contrast = 0.45;
    int texture_cells = 4;  // coarsest noise grid; smaller = smoother
    std::uint64_t seed = 0;

    void validate() const {
        if (image_size < 8) throw ValueError("synthetic: image_size must be >= 8");
        if (channels < 1) throw ValueError("synthetic: channels must be >= 1");
        if (n_train < 0 || n_test_normal < 0 || n_test_anomalous < 0) {
            throw ValueError("synthetic: counts must be >= 0");
        }
        if (anomaly != "blob" && anomaly != "square" && anomaly != "intensity") {
            throw ValueError("synthetic: anomaly family must be blob, square, or intensity");
        }
        if (anomaly_min < 2 || anomaly_min > anomaly_max) {
            throw ValueError("synthetic: anomaly size range must satisfy 2 <= min <= max");
        }
        if (anomaly_max > image_size) {
            throw ValueError("synthetic: anomaly larger than the image");
        }
        if (anomaly_contrast <= 0.0 || anomaly_contrast > 1.0) {
            throw ValueError("synthetic: contrast must be in (0, 1]");
        }
        if (texture_cells < 2 || texture_cells > image_size) {
            throw ValueError("synthetic: texture_cells must be in [2, image_size]");
        }
    }
};

namespace detail {

inline Mat<float> noise_grid(Index cells, Rng& rng) {
    Mat<float> m(cells, cells);
    for (Index r = 0; r < cells; ++r) {
        for (Index c = 0; c < cells; ++c) m(r, c) = static_cast<float>(rng.uniform());
    }
    return m;
}

/// Three octaves of upsampled noise, mapped into [0.15, 0.85].
inline Mat<float> texture_plane(const SyntheticSpec& spec, Rng& rng) {
    const Index size = spec.image_size;
    const Index c0 = spec.texture_cells;
    Mat<float> plane = 0.6f * resize_bilinear(noise_grid(c0, rng), size, size) +
                       0.3f * resize_bilinear(noise_grid(std::min<Index>(2 * c0, size), rng), size,
                                              size) +
                       0.1f * resize_bilinear(noise_grid(std::min<Index>(4 * c0, size), rng), size,
                                              size);
    return (0.15f + 0.7f * plane.array()).matrix();
}

inline Image<float> texture_image(const SyntheticSpec& spec, Rng& rng) {
    Image<float> img(spec.image_size, spec.image_size, spec.channels);
    for (auto& plane : img.planes) plane = texture_plane(spec, rng);
    return img;
}

/// Injects one defect in place and returns its exact mask. All random draws
/// happen unconditionally so the stream stays aligned across families.
inline Mat<float> inject_anomaly(Image<float>& img, const SyntheticSpec& spec, Rng& rng) {
    const Index size = spec.image_size;
    const Index extent =
        spec.anomaly_min + static_cast<Index>(rng.below(
                               static_cast<std::size_t>(spec.anomaly_max - spec.anomaly_min + 1)));
    const Index max_top = size - extent;
    const Index top = static_cast<Index>(rng.below(static_cast<std::size_t>(max_top + 1)));
    const Index left = static_cast<Index>(rng.below(static_cast<std::size_t>(max_top + 1)));
    const float sign = rng.below(2) == 0 ? 1.0f : -1.0f;

    Mat<float> mask = Mat<float>::Zero(size, size);
    if (spec.anomaly == "blob") {
        const double radius = 0.5 * static_cast<double>(extent);
        const double cy = top + radius - 0.5;
        const double cx = left + radius - 0.5;
        for (Index r = top; r < top + extent; ++r) {
            for (Index c = left; c < left + extent; ++c) {
                const double dy = r - cy, dx = c - cx;
                if (dy * dy + dx * dx <= radius * radius) mask(r, c) = 1.0f;
            }
        }
    } else {
        mask.block(top, left, extent, extent).setOnes();
    }

    for (Index ch = 0; ch < img.channels(); ++ch) {
        Mat<float>& plane = img.planes[static_cast<std::size_t>(ch)];
        const float fill =
            std::clamp(plane.mean() + sign * static_cast<float>(spec.anomaly_contrast), 0.0f, 1.0f);
        for (Index r = 0; r < size; ++r) {
            for (Index c = 0; c < size; ++c) {
                if (mask(r, c) == 0.0f) continue;
                if (spec.anomaly == "intensity") {
                    plane(r, c) = std::clamp(
                        plane(r, c) + sign * static_cast<float>(spec.anomaly_contrast), 0.0f, 1.0f);
                } else {
                    plane(r, c) = fill;  // flat defect breaking the texture
                }
            }
        }
    }
    return mask;
}

inline std::string synth_id(const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%03d", prefix, i);
    return buf;
}

}  // namespace detail

inline std::pair<NormalImageSet, LabeledTestSet> generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);

    NormalImageSet train;
    for (int i = 0; i < spec.n_train; ++i) {
        train.images.push_back(detail::texture_image(spec, rng));
        train.ids.push_back(detail::synth_id("train", i));
    }

    LabeledTestSet test;
    for (int i = 0; i < spec.n_test_normal; ++i) {
        TestEntry e;
        e.image = detail::texture_image(spec, rng);
        e.label = 0;
        e.id = detail::synth_id("normal", i);
        test.entries.push_back(std::move(e));
    }
    for (int i = 0; i < spec.n_test_anomalous; ++i) {
        TestEntry e;
        e.image = detail::texture_image(spec, rng);
        e.mask = detail::inject_anomaly(e.image, spec, rng);
        e.label = 1;
        e.id = detail::synth_id("anomalous", i);
        test.entries.push_back(std::move(e));
    }
    return {std::move(train), std::move(test)};
}

}  // namespace memmc
