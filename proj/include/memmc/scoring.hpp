#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "memmc/checkpoint.hpp"
#include "memmc/errors.hpp"
#include "memmc/imageops.hpp"
#include "memmc/msssim.hpp"

namespace memmc {

struct ScoreConfig {
    int n_seeds = 10;
    double mask_ratio = 0.75;
    int context = 3;        // window side around each patch, in patches; odd
    bool composite = true;  // keep original pixels at visible patches before scoring
    // Pool across seeds by averaging the reconstructions instead of the
    // per-patch scores; every patch is then scored once from the mean image.
    bool average_reconstructions = false;
    MsSsimParams msssim;

    void validate() const {
        if (n_seeds < 1) throw ValueError("scoring: n_seeds must be >= 1");
        if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
            throw ValueError("scoring: mask_ratio must be in (0, 1)");
        }
        if (context < 1 || context % 2 == 0) {
            throw ValueError("scoring: context must be a positive odd patch count");
        }
        msssim.validate();
    }
};

/// Per-image anomaly evidence. Patch scores are dissimilarities (1 - local
/// similarity) pooled over the seeds in which the patch was masked; the pixel
/// map is their bilinear upsampling and the image score their mean.
struct AnomalyResult {
    Mat<float> patch_scores;  // grid_rows x grid_cols
    Mat<float> pixel_map;     // H x W
    double image_score = 0.0;
    std::vector<std::uint64_t> seeds_used;
    std::vector<int> fallback_patches;  // never masked; filled from neighbors
    std::string warning;
};

namespace detail {

inline Image<float> window_view(const Image<float>& img, Index r0, Index c0, Index h, Index w) {
    Image<float> out;
    out.planes.reserve(img.planes.size());
    for (const auto& plane : img.planes) out.planes.push_back(plane.block(r0, c0, h, w));
    return out;
}

}  // namespace detail

inline AnomalyResult score_image(const Image<float>& image, Checkpoint& ckpt,
                                 const ScoreConfig& cfg, std::uint64_t base_seed) {
    cfg.validate();
    const ModelConfig& mcfg = ckpt.model.cfg;
    if (image.height() != mcfg.image_size || image.width() != mcfg.image_size ||
        image.channels() != mcfg.channels) {
        throw ShapeError("scoring: image does not match the model configuration");
    }

    const Index grid = mcfg.image_size / mcfg.patch_side;
    const Index n = grid * grid;
    const Index ps = mcfg.patch_side;

    // Context windows shift (rather than shrink) at the grid border so every
    // patch is scored over the same region size with one parameter set.
    const Index wpatches = std::min<Index>(cfg.context, grid);
    const Index wpx = wpatches * ps;
    const MsSsimParams local = adapt_msssim(cfg.msssim, wpx, wpx);

    AnomalyResult res;
    if (ckpt.epoch == 0) {
        res.warning = "model has no recorded training; scores are untrained noise";
    }

    std::vector<double> sums(static_cast<std::size_t>(n), 0.0);
    std::vector<int> counts(static_cast<std::size_t>(n), 0);
    Image<float> mean_recon(image.height(), image.width(), image.channels());
    for (int s = 0; s < cfg.n_seeds; ++s) {
        const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(s);
        res.seeds_used.push_back(seed);
        MaskPartition part = sample_mask(static_cast<int>(n), cfg.mask_ratio, seed);

        ModelForwardCache<float> cache;
        Image<float> recon = ckpt.model.forward(image, part, cache);
        if (cfg.composite) {
            for (int idx : part.visible) {
                const Index pr = (idx / grid) * ps;
                const Index pc = (idx % grid) * ps;
                for (Index ch = 0; ch < image.channels(); ++ch) {
                    recon.planes[static_cast<std::size_t>(ch)].block(pr, pc, ps, ps) =
                        image.planes[static_cast<std::size_t>(ch)].block(pr, pc, ps, ps);
                }
            }
        }
        for (auto& plane : recon.planes) {
            plane = plane.array().max(0.0f).min(1.0f).matrix();
        }
        if (cfg.average_reconstructions) {
            for (Index ch = 0; ch < image.channels(); ++ch) {
                mean_recon.planes[static_cast<std::size_t>(ch)] +=
                    recon.planes[static_cast<std::size_t>(ch)] / static_cast<float>(cfg.n_seeds);
            }
            continue;
        }

        for (int idx : part.masked) {
            const Index pr = idx / grid;
            const Index pc = idx % grid;
            const Index r0 = std::clamp<Index>(pr - cfg.context / 2, 0, grid - wpatches) * ps;
            const Index c0 = std::clamp<Index>(pc - cfg.context / 2, 0, grid - wpatches) * ps;
            const Image<float> got = detail::window_view(recon, r0, c0, wpx, wpx);
            const Image<float> want = detail::window_view(image, r0, c0, wpx, wpx);
            sums[static_cast<std::size_t>(idx)] += 1.0 - ms_ssim(want, got, local);
            counts[static_cast<std::size_t>(idx)] += 1;
        }
    }

    if (cfg.average_reconstructions) {
        res.patch_scores = Mat<float>::Zero(grid, grid);
        for (Index idx = 0; idx < n; ++idx) {
            const Index pr = idx / grid;
            const Index pc = idx % grid;
            const Index r0 = std::clamp<Index>(pr - cfg.context / 2, 0, grid - wpatches) * ps;
            const Index c0 = std::clamp<Index>(pc - cfg.context / 2, 0, grid - wpatches) * ps;
            const Image<float> got = detail::window_view(mean_recon, r0, c0, wpx, wpx);
            const Image<float> want = detail::window_view(image, r0, c0, wpx, wpx);
            res.patch_scores(pr, pc) = static_cast<float>(1.0 - ms_ssim(want, got, local));
        }
        double total = 0.0;
        for (Index r = 0; r < grid; ++r) {
            for (Index c = 0; c < grid; ++c) total += res.patch_scores(r, c);
        }
        res.image_score = total / static_cast<double>(n);
        res.pixel_map = resize_bilinear(res.patch_scores, image.height(), image.width());
        return res;
    }

    if (std::none_of(counts.begin(), counts.end(), [](int c) { return c > 0; })) {
        throw ValueError("scoring: no patch was ever masked; raise the ratio or seed count");
    }

    res.patch_scores = Mat<float>::Zero(grid, grid);
    for (Index idx = 0; idx < n; ++idx) {
        if (counts[static_cast<std::size_t>(idx)] > 0) {
            res.patch_scores(idx / grid, idx % grid) = static_cast<float>(
                sums[static_cast<std::size_t>(idx)] / counts[static_cast<std::size_t>(idx)]);
        }
    }
    for (Index idx = 0; idx < n; ++idx) {
        if (counts[static_cast<std::size_t>(idx)] > 0) continue;
        // Never masked across all seeds (~0.25^10 per patch): borrow the mean
        // of the scored 4-neighborhood rather than report a hole.
        const Index pr = idx / grid, pc = idx % grid;
        double acc = 0.0;
        int m = 0;
        const Index nbr[4][2] = {{pr - 1, pc}, {pr + 1, pc}, {pr, pc - 1}, {pr, pc + 1}};
        for (const auto& rc : nbr) {
            if (rc[0] < 0 || rc[0] >= grid || rc[1] < 0 || rc[1] >= grid) continue;
            if (counts[static_cast<std::size_t>(rc[0] * grid + rc[1])] == 0) continue;
            acc += res.patch_scores(rc[0], rc[1]);
            ++m;
        }
        if (m == 0) {
            for (Index j = 0; j < n; ++j) {
                if (counts[static_cast<std::size_t>(j)] == 0) continue;
                acc += res.patch_scores(j / grid, j % grid);
                ++m;
            }
        }
        res.patch_scores(pr, pc) = static_cast<float>(acc / m);
        res.fallback_patches.push_back(static_cast<int>(idx));
    }

    double total = 0.0;
    for (Index r = 0; r < grid; ++r) {
        for (Index c = 0; c < grid; ++c) total += res.patch_scores(r, c);
    }
    res.image_score = total / static_cast<double>(n);
    res.pixel_map = resize_bilinear(res.patch_scores, image.height(), image.width());
    return res;
}

/// Binarizes the pixel map: 1 where evidence reaches the threshold.
inline Mat<float> localization_mask(const AnomalyResult& result, double threshold) {
    return (result.pixel_map.array() >= static_cast<float>(threshold))
        .cast<float>()
        .matrix();
}

inline void to_json(json& j, const ScoreConfig& c) {
    j = json{{"n_seeds", c.n_seeds},
             {"mask_ratio", c.mask_ratio},
             {"context", c.context},
             {"composite", c.composite},
             {"average_reconstructions", c.average_reconstructions},
             {"msssim", c.msssim}};
}

inline void from_json(const json& j, ScoreConfig& c) {
    ScoreConfig d;
    c.n_seeds = j.value("n_seeds", d.n_seeds);
    c.mask_ratio = j.value("mask_ratio", d.mask_ratio);
    c.context = j.value("context", d.context);
    c.composite = j.value("composite", d.composite);
    c.average_reconstructions = j.value("average_reconstructions", d.average_reconstructions);
    c.msssim = j.value("msssim", d.msssim);
}

}  // namespace memmc
