#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "memmc/scoring.hpp"
#include "memmc/synthetic.hpp"
#include "memmc/trainer.hpp"
#include "test_util.hpp"

using namespace memmc;
using namespace testutil;

namespace {

ModelConfig score_model_config() {
    ModelConfig cfg;
    cfg.image_size = 16;
    cfg.patch_side = 4;
    cfg.channels = 1;
    cfg.encoder = {3, 16, 2};
    cfg.decoder = {2, 16, 2};
    cfg.memory_slots = 3;
    cfg.mask_ratio = 0.75;
    cfg.mlp_ratio = 2;
    return cfg;
}

SyntheticSpec score_data_spec() {
    SyntheticSpec spec;
    spec.image_size = 16;
    spec.n_train = 24;
    spec.n_test_normal = 10;
    spec.n_test_anomalous = 10;
    spec.anomaly = "blob";
    spec.anomaly_min = 4;
    spec.anomaly_max = 7;
    spec.anomaly_contrast = 0.45;
    spec.texture_cells = 4;
    spec.seed = 77;
    return spec;
}

struct Fixture {
    Checkpoint ckpt;
    NormalImageSet train_set;
    LabeledTestSet test_set;
};

Fixture& fixture() {
    static Fixture f = [] {
        Fixture out;
        auto [train_set, test_set] = generate_synthetic(score_data_spec());
        out.train_set = std::move(train_set);
        out.test_set = std::move(test_set);

        TrainConfig tcfg;
        tcfg.epochs = 400;
        tcfg.batch_size = 8;
        tcfg.base_lr = 3e-3;
        tcfg.warmup_epochs = 5;
        tcfg.seed = 3;
        tcfg.augment = false;
        out.ckpt = train(out.train_set.images, score_model_config(), tcfg).ckpt;
        return out;
    }();
    return f;
}

double mean_patch_score(const AnomalyResult& r) {
    double total = 0.0;
    for (Index row = 0; row < r.patch_scores.rows(); ++row) {
        for (Index col = 0; col < r.patch_scores.cols(); ++col) total += r.patch_scores(row, col);
    }
    return total / static_cast<double>(r.patch_scores.size());
}

}  // namespace

TEST_CASE("scoring the same image with the same seeds is bit-identical") {
    Fixture& f = fixture();
    const Image<float>& img = f.test_set.entries[0].image;
    ScoreConfig cfg;
    AnomalyResult a = score_image(img, f.ckpt, cfg, 100);
    AnomalyResult b = score_image(img, f.ckpt, cfg, 100);
    CHECK(a.image_score == b.image_score);
    CHECK(max_abs_diff(a.patch_scores, b.patch_scores) == 0.0);
    CHECK(max_abs_diff(a.pixel_map, b.pixel_map) == 0.0);
    CHECK(a.seeds_used == b.seeds_used);

    AnomalyResult c = score_image(img, f.ckpt, cfg, 200);
    CHECK(max_abs_diff(a.patch_scores, c.patch_scores) > 0.0);
}

TEST_CASE("the image score is exactly the mean patch score") {
    Fixture& f = fixture();
    ScoreConfig cfg;
    for (int i : {0, 3, 12}) {
        AnomalyResult r = score_image(f.test_set.entries[static_cast<std::size_t>(i)].image,
                                      f.ckpt, cfg, 50);
        CHECK(r.image_score == mean_patch_score(r));
    }
}

TEST_CASE("scores and maps live in the unit interval with the right shapes") {
    Fixture& f = fixture();
    ScoreConfig cfg;
    AnomalyResult r = score_image(f.test_set.entries[11].image, f.ckpt, cfg, 9);
    CHECK(r.patch_scores.rows() == 4);
    CHECK(r.patch_scores.cols() == 4);
    CHECK(r.pixel_map.rows() == 16);
    CHECK(r.pixel_map.cols() == 16);
    CHECK(r.patch_scores.minCoeff() >= 0.0f);
    CHECK(r.patch_scores.maxCoeff() <= 1.0f);
    CHECK(r.pixel_map.minCoeff() >= 0.0f);
    CHECK(r.pixel_map.maxCoeff() <= 1.0f);
    CHECK(r.image_score >= 0.0);
    CHECK(r.image_score <= 1.0);
    CHECK(r.warning.empty());

    REQUIRE(r.seeds_used.size() == 10);
    for (std::size_t s = 0; s < r.seeds_used.size(); ++s) {
        CHECK(r.seeds_used[s] == 9 + s);
    }
}

TEST_CASE("ten seeds cover every patch") {
    Fixture& f = fixture();
    ScoreConfig cfg;
    for (int i = 0; i < 5; ++i) {
        AnomalyResult r = score_image(f.test_set.entries[static_cast<std::size_t>(i)].image,
                                      f.ckpt, cfg, 700 + i);
        CHECK(r.fallback_patches.empty());
    }
}

TEST_CASE("patches missed by every partition borrow their neighbors' score") {
    Fixture& f = fixture();
    ScoreConfig cfg;
    cfg.n_seeds = 1;  // one partition leaves the visible quarter unscored
    AnomalyResult r = score_image(f.test_set.entries[2].image, f.ckpt, cfg, 4);
    CHECK(r.fallback_patches.size() == 4);  // 16 patches, 12 masked at 75%
    CHECK(all_finite(r.patch_scores));

    MaskPartition part = sample_mask(16, cfg.mask_ratio, 4);
    for (int idx : r.fallback_patches) {
        const Index pr = idx / 4, pc = idx % 4;
        double acc = 0.0;
        int m = 0;
        for (auto [dr, dc] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
            const Index rr = pr + dr, cc = pc + dc;
            if (rr < 0 || rr >= 4 || cc < 0 || cc >= 4) continue;
            const int nidx = static_cast<int>(rr * 4 + cc);
            const bool masked =
                std::find(part.masked.begin(), part.masked.end(), nidx) != part.masked.end();
            if (!masked) continue;
            acc += r.patch_scores(rr, cc);
            ++m;
        }
        REQUIRE(m > 0);
        CHECK(r.patch_scores(pr, pc) == doctest::Approx(acc / m).epsilon(1e-6));
    }
}

TEST_CASE("anomalous test images outscore normal ones on average") {
    Fixture& f = fixture();
    ScoreConfig cfg;
    double normal_mean = 0.0, anom_mean = 0.0;
    int n_normal = 0, n_anom = 0;
    std::size_t i = 0;
    for (const auto& e : f.test_set.entries) {
        AnomalyResult r = score_image(e.image, f.ckpt, cfg, 1000 + 10 * i++);
        if (e.label == 0) {
            normal_mean += r.image_score;
            ++n_normal;
        } else {
            anom_mean += r.image_score;
            ++n_anom;
        }
    }
    normal_mean /= n_normal;
    anom_mean /= n_anom;
    INFO("normal mean " << normal_mean << " anomalous mean " << anom_mean);
    CHECK(anom_mean > normal_mean);
}

TEST_CASE("corrupting a clean image rarely lowers its score") {
    Fixture& f = fixture();
    ScoreConfig cfg;
    Rng rng(5005);
    int non_decreases = 0;
    for (int t = 0; t < 100; ++t) {
        const auto& entry = f.test_set.entries[static_cast<std::size_t>(t % 10)];
        REQUIRE(entry.label == 0);
        Image<float> corrupted = entry.image;
        const Index top = static_cast<Index>(rng.below(11));
        const Index left = static_cast<Index>(rng.below(11));
        for (Index r = top; r < top + 5; ++r) {
            for (Index c = left; c < left + 5; ++c) {
                corrupted.planes[0](r, c) = static_cast<float>(rng.uniform());
            }
        }
        const std::uint64_t base = 4000 + static_cast<std::uint64_t>(t) * 16;
        const double clean = score_image(entry.image, f.ckpt, cfg, base).image_score;
        const double noisy = score_image(corrupted, f.ckpt, cfg, base).image_score;
        non_decreases += (noisy >= clean);
    }
    INFO("non-decreasing trials: " << non_decreases << " / 100");
    CHECK(non_decreases >= 90);
}

TEST_CASE("pixel evidence concentrates inside the true defect") {
    Fixture& f = fixture();
    ScoreConfig cfg;
    double inside = 0.0, outside = 0.0;
    std::size_t n = 0;
    for (const auto& e : f.test_set.entries) {
        if (e.label != 1) continue;
        AnomalyResult r = score_image(e.image, f.ckpt, cfg, 9000 + 10 * n++);
        double in_sum = 0.0, out_sum = 0.0;
        Index in_n = 0, out_n = 0;
        for (Index row = 0; row < 16; ++row) {
            for (Index col = 0; col < 16; ++col) {
                if (e.mask(row, col) != 0.0f) {
                    in_sum += r.pixel_map(row, col);
                    ++in_n;
                } else {
                    out_sum += r.pixel_map(row, col);
                    ++out_n;
                }
            }
        }
        inside += in_sum / in_n;
        outside += out_sum / out_n;
    }
    inside /= static_cast<double>(n);
    outside /= static_cast<double>(n);
    INFO("mean evidence inside " << inside << " outside " << outside);
    CHECK(inside > outside);
}

TEST_CASE("localization masks follow the threshold") {
    Fixture& f = fixture();
    ScoreConfig cfg;
    AnomalyResult r = score_image(f.test_set.entries[15].image, f.ckpt, cfg, 77);
    Mat<float> all = localization_mask(r, 0.0);
    CHECK(all.minCoeff() == 1.0f);
    Mat<float> none = localization_mask(r, r.pixel_map.maxCoeff() + 0.01);
    CHECK(none.maxCoeff() == 0.0f);
    Mat<float> some = localization_mask(r, 0.5);
    for (Index row = 0; row < some.rows(); ++row) {
        for (Index col = 0; col < some.cols(); ++col) {
            CHECK(some(row, col) == ((r.pixel_map(row, col) >= 0.5f) ? 1.0f : 0.0f));
        }
    }
}

TEST_CASE("reconstruction-only scoring works without the composite paste") {
    Fixture& f = fixture();
    ScoreConfig cfg;
    cfg.composite = false;
    AnomalyResult r = score_image(f.test_set.entries[0].image, f.ckpt, cfg, 31);
    CHECK(r.patch_scores.minCoeff() >= 0.0f);
    CHECK(r.patch_scores.maxCoeff() <= 1.0f);
    CHECK(all_finite(r.pixel_map));
}

TEST_CASE("an untrained checkpoint is flagged in the result") {
    Checkpoint fresh;
    fresh.model.init(score_model_config(), 1);
    ScoreConfig cfg;
    Image<float> img(16, 16, 1);
    AnomalyResult r = score_image(img, fresh, cfg, 1);
    CHECK(!r.warning.empty());
}

TEST_CASE("bad scoring inputs are rejected") {
    Checkpoint fresh;
    fresh.model.init(score_model_config(), 1);
    Image<float> img(16, 16, 1);
    Image<float> wrong(12, 16, 1);
    ScoreConfig cfg;
    CHECK_THROWS_AS(score_image(wrong, fresh, cfg, 1), ShapeError);

    ScoreConfig zero = cfg;
    zero.n_seeds = 0;
    CHECK_THROWS_AS(score_image(img, fresh, zero, 1), ValueError);

    ScoreConfig even = cfg;
    even.context = 2;
    CHECK_THROWS_AS(score_image(img, fresh, even, 1), ValueError);

    ScoreConfig full = cfg;
    full.mask_ratio = 1.0;
    CHECK_THROWS_AS(score_image(img, fresh, full, 1), ValueError);

    ScoreConfig bad_ssim = cfg;
    bad_ssim.msssim.sigma = -1.0;
    CHECK_THROWS_AS(score_image(img, fresh, bad_ssim, 1), ValueError);
}

TEST_CASE("averaging reconstructions is a supported pooling mode") {
    Fixture& f = fixture();
    ScoreConfig cfg;
    cfg.average_reconstructions = true;

    AnomalyResult a = score_image(f.test_set.entries[0].image, f.ckpt, cfg, 100);
    AnomalyResult b = score_image(f.test_set.entries[0].image, f.ckpt, cfg, 100);
    CHECK(a.image_score == b.image_score);
    CHECK(max_abs_diff(a.patch_scores, b.patch_scores) == 0.0);
    CHECK(a.fallback_patches.empty());  // every patch scored from the mean image
    CHECK(a.patch_scores.rows() == 4);
    CHECK(a.patch_scores.minCoeff() >= 0.0f);
    CHECK(a.patch_scores.maxCoeff() <= 1.0f);
    CHECK(a.image_score == mean_patch_score(a));

    ScoreConfig pooled;
    AnomalyResult c = score_image(f.test_set.entries[0].image, f.ckpt, pooled, 100);
    CHECK(max_abs_diff(a.patch_scores, c.patch_scores) > 0.0);

    // The alternative pooling must still separate the classes.
    double normal_mean = 0.0, anomalous_mean = 0.0;
    int n_normal = 0, n_anomalous = 0;
    for (std::size_t i = 0; i < f.test_set.entries.size(); ++i) {
        const TestEntry& e = f.test_set.entries[i];
        AnomalyResult r = score_image(e.image, f.ckpt, cfg, 3000 + 10 * i);
        (e.label ? anomalous_mean : normal_mean) += r.image_score;
        (e.label ? n_anomalous : n_normal) += 1;
    }
    CHECK(anomalous_mean / n_anomalous > normal_mean / n_normal);
}

TEST_CASE("score configs round-trip through json") {
    ScoreConfig cfg;
    cfg.n_seeds = 4;
    cfg.mask_ratio = 0.5;
    cfg.context = 5;
    cfg.composite = false;
    cfg.average_reconstructions = true;
    cfg.msssim.scales = 2;
    cfg.msssim.weights = {0.25, 0.75};
    cfg.msssim.sigma = 2.0;

    const json j = cfg;
    const ScoreConfig back = j.get<ScoreConfig>();
    CHECK(back.n_seeds == cfg.n_seeds);
    CHECK(back.mask_ratio == cfg.mask_ratio);
    CHECK(back.context == cfg.context);
    CHECK(back.composite == cfg.composite);
    CHECK(back.average_reconstructions == cfg.average_reconstructions);
    CHECK(back.msssim.scales == cfg.msssim.scales);
    CHECK(back.msssim.weights == cfg.msssim.weights);
    CHECK(back.msssim.sigma == cfg.msssim.sigma);
    CHECK(json(back) == j);

    // Partial configs keep struct defaults for missing keys.
    const ScoreConfig sparse = json{{"n_seeds", 7}}.get<ScoreConfig>();
    CHECK(sparse.n_seeds == 7);
    CHECK(sparse.mask_ratio == ScoreConfig{}.mask_ratio);
    CHECK(sparse.composite == ScoreConfig{}.composite);
    CHECK(sparse.msssim.window_side == MsSsimParams{}.window_side);

    // Scales without weights pick the matching default weighting.
    const ScoreConfig rescaled = json{{"msssim", {{"scales", 2}}}}.get<ScoreConfig>();
    CHECK(rescaled.msssim.scales == 2);
    CHECK(rescaled.msssim.weights == default_msssim_weights(2));
}
