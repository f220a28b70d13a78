#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "memmc/data.hpp"
#include "memmc/metrics.hpp"
#include "memmc/scoring.hpp"

namespace memmc {

/// One test image with its anomaly evidence, aligned with the test set order.
struct ScoredEntry {
    std::string id;
    int label = 0;
    AnomalyResult result;
};

/// Scores every test entry. Image i uses base seed `seed + i * n_seeds`, so
/// the per-seed streams of different images never collide.
inline std::vector<ScoredEntry> score_test_set(const LabeledTestSet& set, Checkpoint& ckpt,
                                               const ScoreConfig& cfg, std::uint64_t seed) {
    std::vector<ScoredEntry> out;
    out.reserve(set.entries.size());
    for (std::size_t i = 0; i < set.entries.size(); ++i) {
        const TestEntry& e = set.entries[i];
        ScoredEntry s;
        s.id = e.id;
        s.label = e.label;
        s.result = score_image(e.image, ckpt, cfg,
                               seed + i * static_cast<std::uint64_t>(cfg.n_seeds));
        out.push_back(std::move(s));
    }
    return out;
}

struct EvalOptions {
    int group_size = 100;
    int n_groups = 5;
    int n_thresholds = 51;
    double fixed_threshold = 0.5;
    std::uint64_t seed = 0;
};

/// Detection and localization summary. The localization block binarizes the
/// pixel maps both at the best threshold over a fixed grid and at a fixed
/// default, so the protocol ambiguity is bounded rather than hidden.
struct EvalReport {
    double detection_auc = 0.0;
    int n_normal = 0;
    int n_anomalous = 0;

    bool has_iou = false;       // requires >= group_size anomalous entries with masks
    int masked_population = 0;
    GroupedIou iou_best;        // threshold field carries the grid winner
    GroupedIou iou_fixed;

    std::vector<std::string> ids;
    std::vector<int> labels;
    std::vector<double> scores;
    std::string config_fingerprint;
};

inline EvalReport evaluate(const LabeledTestSet& set, const std::vector<ScoredEntry>& scored,
                           const EvalOptions& opt) {
    if (set.entries.size() != scored.size()) {
        throw ShapeError("eval: test set and scored entries differ in length");
    }
    if (opt.group_size < 1 || opt.n_groups < 1) {
        throw ValueError("eval: group size and count must be >= 1");
    }

    EvalReport rep;
    std::vector<Mat<float>> maps, truth;
    for (std::size_t i = 0; i < scored.size(); ++i) {
        const TestEntry& e = set.entries[i];
        rep.ids.push_back(scored[i].id);
        rep.labels.push_back(scored[i].label);
        rep.scores.push_back(scored[i].result.image_score);
        (scored[i].label ? rep.n_anomalous : rep.n_normal) += 1;
        if (e.label == 1 && e.has_mask()) {
            maps.push_back(scored[i].result.pixel_map);
            truth.push_back(e.mask);
        }
    }
    rep.detection_auc = roc_auc(rep.scores, rep.labels);

    rep.masked_population = static_cast<int>(maps.size());
    if (rep.masked_population >= opt.group_size) {
        const double thr = best_iou_threshold(maps, truth, opt.n_thresholds);
        rep.iou_best = grouped_iou(maps, truth, thr, opt.group_size, opt.n_groups, opt.seed);
        rep.iou_fixed =
            grouped_iou(maps, truth, opt.fixed_threshold, opt.group_size, opt.n_groups, opt.seed);
        rep.has_iou = true;
    }
    return rep;
}

inline void to_json(json& j, const GroupedIou& g) {
    j = json{{"threshold", g.threshold}, {"mean_iou", g.mean_iou}, {"per_group", g.per_group}};
}

inline void to_json(json& j, const EvalReport& r) {
    j = json{{"detection_auc", r.detection_auc},
             {"n_normal", r.n_normal},
             {"n_anomalous", r.n_anomalous},
             {"config_fingerprint", r.config_fingerprint}};
    if (r.has_iou) {
        j["iou"] = json{{"masked_population", r.masked_population},
                        {"best", r.iou_best},
                        {"fixed", r.iou_fixed}};
    }
    json table = json::array();
    for (std::size_t i = 0; i < r.ids.size(); ++i) {
        table.push_back(json{{"id", r.ids[i]}, {"label", r.labels[i]}, {"score", r.scores[i]}});
    }
    j["per_image"] = table;
}

/// Plain-text summary for terminal output.
inline std::string format_report(const EvalReport& r) {
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof buf, "detection AUC  %.3f   (%d normal / %d anomalous)\n",
                  r.detection_auc, r.n_normal, r.n_anomalous);
    out += buf;
    if (r.has_iou) {
        std::snprintf(buf, sizeof buf, "grouped IoU    %.4f   at best threshold %.2f\n",
                      r.iou_best.mean_iou, r.iou_best.threshold);
        out += buf;
        std::snprintf(buf, sizeof buf, "               %.4f   at fixed threshold %.2f\n",
                      r.iou_fixed.mean_iou, r.iou_fixed.threshold);
        out += buf;
        out += "per-group IoU ";
        for (double v : r.iou_best.per_group) {
            std::snprintf(buf, sizeof buf, " %.4f", v);
            out += buf;
        }
        out += "\n";
    } else {
        std::snprintf(buf, sizeof buf,
                      "grouped IoU    skipped (%d masked anomalous images, need >= group size)\n",
                      r.masked_population);
        out += buf;
    }
    if (!r.config_fingerprint.empty()) {
        out += "config         " + r.config_fingerprint + "\n";
    }
    return out;
}

}  // namespace memmc
