#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "memmc/errors.hpp"
#include "memmc/rng.hpp"
#include "memmc/types.hpp"

namespace memmc {

/// Probability that a random anomalous score exceeds a random normal score,
/// ties counted half (Mann-Whitney formulation). Labels are 0 = normal,
/// 1 = anomalous; higher scores mean more anomalous.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("auc: scores and labels differ in length");
    std::size_t n_pos = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw ValueError("auc: labels must be 0 or 1");
        n_pos += static_cast<std::size_t>(y);
    }
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw ValueError("auc: both classes must be present");
    }

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Rank-sum over anomalous entries with average ranks inside tie groups.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
        }
        i = j;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Intersection over union of two binary masks (nonzero = inside). Two empty
/// masks count as a perfect match.
template <typename S>
double mask_iou(const Mat<S>& pred, const Mat<S>& truth) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
        throw ShapeError("iou: masks must share a shape");
    }
    std::int64_t inter = 0, uni = 0;
    for (Index r = 0; r < pred.rows(); ++r) {
        for (Index c = 0; c < pred.cols(); ++c) {
            const bool p = pred(r, c) != S(0);
            const bool t = truth(r, c) != S(0);
            inter += (p && t);
            uni += (p || t);
        }
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

/// Mean IoU of thresholded anomaly maps against ground-truth masks.
template <typename S>
double mean_iou_at(const std::vector<Mat<S>>& pixel_maps, const std::vector<Mat<S>>& truth,
                   double threshold) {
    if (pixel_maps.size() != truth.size()) {
        throw ShapeError("iou: map and mask counts differ");
    }
    if (pixel_maps.empty()) throw ValueError("iou: empty population");
    double sum = 0.0;
    for (std::size_t i = 0; i < pixel_maps.size(); ++i) {
        Mat<S> pred = (pixel_maps[i].array() >= static_cast<S>(threshold))
                          .template cast<S>()
                          .matrix();
        sum += mask_iou(pred, truth[i]);
    }
    return sum / static_cast<double>(pixel_maps.size());
}

/// Threshold from a uniform grid over [0,1] that maximizes population mean
/// IoU. Ties resolve to the lowest threshold.
template <typename S>
double best_iou_threshold(const std::vector<Mat<S>>& pixel_maps, const std::vector<Mat<S>>& truth,
                          int n_thresholds = 51) {
    if (n_thresholds < 2) throw ValueError("iou: need at least two candidate thresholds");
    double best_thr = 0.0;
    double best = -1.0;
    for (int t = 0; t < n_thresholds; ++t) {
        const double thr = static_cast<double>(t) / (n_thresholds - 1);
        const double v = mean_iou_at(pixel_maps, truth, thr);
        if (v > best) {
            best = v;
            best_thr = thr;
        }
    }
    return best_thr;
}

struct GroupedIou {
    double threshold = 0.5;
    double mean_iou = 0.0;
    std::vector<double> per_group;
};

/// Samples n_groups groups of group_size maps (disjoint when the population
/// allows, independently drawn otherwise) and reports mean IoU per group at a
/// fixed threshold. Deterministic for a fixed seed.
template <typename S>
GroupedIou grouped_iou(const std::vector<Mat<S>>& pixel_maps, const std::vector<Mat<S>>& truth,
                       double threshold, int group_size, int n_groups, std::uint64_t seed) {
    if (pixel_maps.size() != truth.size()) {
        throw ShapeError("grouped iou: map and mask counts differ");
    }
    if (group_size < 1 || n_groups < 1) {
        throw ValueError("grouped iou: group size and count must be >= 1");
    }
    const std::size_t population = pixel_maps.size();
    if (population < static_cast<std::size_t>(group_size)) {
        throw ValueError("grouped iou: population smaller than the group size");
    }

    Rng rng(seed);
    std::vector<std::size_t> order(population);
    std::iota(order.begin(), order.end(), std::size_t{0});

    GroupedIou out;
    out.threshold = threshold;
    const bool disjoint =
        static_cast<std::size_t>(group_size) * static_cast<std::size_t>(n_groups) <= population;
    if (disjoint) rng.shuffle(order);
    for (int g = 0; g < n_groups; ++g) {
        if (!disjoint) rng.shuffle(order);
        const std::size_t base = disjoint ? static_cast<std::size_t>(g * group_size) : 0;
        double sum = 0.0;
        for (int k = 0; k < group_size; ++k) {
            const std::size_t idx = order[base + static_cast<std::size_t>(k)];
            Mat<S> pred = (pixel_maps[idx].array() >= static_cast<S>(threshold))
                              .template cast<S>()
                              .matrix();
            sum += mask_iou(pred, truth[idx]);
        }
        out.per_group.push_back(sum / group_size);
    }
    out.mean_iou = std::accumulate(out.per_group.begin(), out.per_group.end(), 0.0) /
                   static_cast<double>(out.per_group.size());
    return out;
}

}  // namespace memmc
