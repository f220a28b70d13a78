// Command-line front end: train / score / eval / visualize / synth.
// Every run is deterministic given the config file and --seed.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "memmc/dataset.hpp"
#include "memmc/eval.hpp"
#include "memmc/image_io.hpp"
#include "memmc/scoring.hpp"
#include "memmc/synthetic.hpp"
#include "memmc/trainer.hpp"

namespace fs = std::filesystem;
using namespace memmc;

namespace {

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw DatasetError("config: cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValueError(std::string("config: ") + e.what());
    }
}

template <typename T>
T section(const json& cfg, const char* key) {
    return cfg.contains(key) ? cfg.at(key).get<T>() : T{};
}

/// Dataset comes from --data (folder layout or manifest) or, failing that,
/// from the config's "synthetic" section.
std::pair<NormalImageSet, LabeledTestSet> resolve_data(const std::string& root,
                                                       const std::string& manifest,
                                                       const json& cfg, int image_size,
                                                       int channels) {
    if (!root.empty()) return load_folder_dataset(root, manifest, image_size, channels);
    if (cfg.contains("synthetic")) {
        return generate_synthetic(cfg.at("synthetic").get<SyntheticSpec>());
    }
    throw DatasetError("no dataset: pass --data or add a 'synthetic' config section");
}

void write_scores_csv(const fs::path& path, const std::vector<ScoredEntry>& scored) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DatasetError("cannot write " + path.string());
    out << "image_id,label,score\n";
    char line[256];
    for (const ScoredEntry& s : scored) {
        std::snprintf(line, sizeof line, "%s,%d,%.9g\n", s.id.c_str(), s.label,
                      s.result.image_score);
        out << line;
    }
}

/// Min-max normalized gray rendering of a pixel map.
void write_heatmap(const fs::path& path, const Mat<float>& pixel_map) {
    const float lo = pixel_map.minCoeff();
    const float hi = pixel_map.maxCoeff();
    Image<float> img(pixel_map.rows(), pixel_map.cols(), 1);
    if (hi > lo) img.planes[0] = ((pixel_map.array() - lo) / (hi - lo)).matrix();
    write_png(path.string(), img);
}

/// Side-by-side panel: masked input | reconstruction | original.
void write_triptych(const fs::path& path, const Image<float>& original, Checkpoint& ckpt,
                    std::uint64_t seed) {
    const ModelConfig& mcfg = ckpt.model.cfg;
    const Index grid = mcfg.image_size / mcfg.patch_side;
    const Index ps = mcfg.patch_side;
    MaskPartition part = sample_mask(static_cast<int>(grid * grid), mcfg.mask_ratio, seed);

    Image<float> masked = original;
    for (int idx : part.masked) {
        const Index pr = (idx / grid) * ps;
        const Index pc = (idx % grid) * ps;
        for (auto& plane : masked.planes) plane.block(pr, pc, ps, ps).setConstant(0.5f);
    }
    ModelForwardCache<float> cache;
    Image<float> recon = ckpt.model.forward(original, part, cache);
    for (auto& plane : recon.planes) plane = plane.array().max(0.0f).min(1.0f).matrix();

    const Index h = original.height(), w = original.width(), sep = 2;
    Image<float> panel(h, 3 * w + 2 * sep, original.channels());
    for (Index c = 0; c < original.channels(); ++c) {
        auto& out = panel.planes[static_cast<std::size_t>(c)];
        out.setConstant(1.0f);
        out.block(0, 0, h, w) = masked.planes[static_cast<std::size_t>(c)];
        out.block(0, w + sep, h, w) = recon.planes[static_cast<std::size_t>(c)];
        out.block(0, 2 * (w + sep), h, w) = original.planes[static_cast<std::size_t>(c)];
    }
    write_png(path.string(), panel);
}

void warn_untrained(const std::vector<ScoredEntry>& scored) {
    for (const ScoredEntry& s : scored) {
        if (!s.result.warning.empty()) {
            std::fprintf(stderr, "memmc: warning: %s\n", s.result.warning.c_str());
            return;
        }
    }
}

struct CommonArgs {
    std::string config_path;
    std::string data_root;
    std::string manifest;
    std::string checkpoint;
    std::string out_dir = ".";
    std::uint64_t seed = 0;
};

int run_train(const CommonArgs& a, int epochs_override, bool seed_given) {
    const json cfg = load_config(a.config_path);
    ModelConfig mcfg = section<ModelConfig>(cfg, "model");
    TrainConfig tcfg = section<TrainConfig>(cfg, "train");
    if (seed_given) tcfg.seed = a.seed;
    if (epochs_override > 0) tcfg.epochs = epochs_override;

    fs::create_directories(a.out_dir);
    std::string ckpt_path = a.checkpoint;
    if (ckpt_path.empty()) ckpt_path = tcfg.checkpoint_path;
    if (ckpt_path.empty()) ckpt_path = (fs::path(a.out_dir) / "model.ckpt").string();
    tcfg.checkpoint_path = ckpt_path;

    auto [train_set, test_set] = resolve_data(a.data_root, a.manifest, cfg, mcfg.image_size,
                                              mcfg.channels);
    if (train_set.images.empty()) throw DatasetError("train: the training split is empty");
    std::fprintf(stderr, "memmc: training on %zu images for %d epochs\n",
                 train_set.images.size(), tcfg.epochs);

    const int stride = std::max(1, tcfg.epochs / 10);
    TrainResult result = train(train_set.images, mcfg, tcfg, [&](int epoch, double loss) {
        if (epoch % stride == 0 || epoch == tcfg.epochs) {
            std::fprintf(stderr, "memmc: epoch %d  loss %.6g\n", epoch, loss);
        }
    });
    save_checkpoint(result.ckpt, ckpt_path);
    write_loss_curve(result.curve, (fs::path(a.out_dir) / "loss_curve.csv").string());

    const json effective{{"model", mcfg}, {"train", tcfg}};
    std::printf("checkpoint %s\n", ckpt_path.c_str());
    std::printf("final loss %.9g\n", result.curve.empty() ? 0.0 : result.curve.back().loss);
    std::printf("config     %s\n", config_fingerprint(effective).c_str());
    return 0;
}

int run_score(const CommonArgs& a, int max_heatmaps) {
    const json cfg = load_config(a.config_path);
    Checkpoint ckpt = load_checkpoint(a.checkpoint);
    const ScoreConfig scfg = section<ScoreConfig>(cfg, "score");

    auto [train_set, test_set] = resolve_data(a.data_root, a.manifest, cfg,
                                              ckpt.model.cfg.image_size, ckpt.model.cfg.channels);
    if (test_set.entries.empty()) throw DatasetError("score: the test split is empty");

    const std::vector<ScoredEntry> scored = score_test_set(test_set, ckpt, scfg, a.seed);
    warn_untrained(scored);

    fs::create_directories(a.out_dir);
    write_scores_csv(fs::path(a.out_dir) / "scores.csv", scored);
    int written = 0;
    if (max_heatmaps != 0) {
        fs::create_directories(fs::path(a.out_dir) / "heatmaps");
        for (const ScoredEntry& s : scored) {
            if (max_heatmaps > 0 && written >= max_heatmaps) break;
            write_heatmap(fs::path(a.out_dir) / "heatmaps" / (s.id + ".png"), s.result.pixel_map);
            ++written;
        }
    }
    std::printf("scored %zu images -> %s (%d heatmaps)\n", scored.size(),
                (fs::path(a.out_dir) / "scores.csv").string().c_str(), written);
    return 0;
}

int run_eval(const CommonArgs& a, const EvalOptions& opt) {
    const json cfg = load_config(a.config_path);
    Checkpoint ckpt = load_checkpoint(a.checkpoint);
    const ScoreConfig scfg = section<ScoreConfig>(cfg, "score");

    auto [train_set, test_set] = resolve_data(a.data_root, a.manifest, cfg,
                                              ckpt.model.cfg.image_size, ckpt.model.cfg.channels);
    if (test_set.entries.empty()) throw DatasetError("eval: the test split is empty");

    const std::vector<ScoredEntry> scored = score_test_set(test_set, ckpt, scfg, a.seed);
    warn_untrained(scored);
    EvalReport rep = evaluate(test_set, scored, opt);
    rep.config_fingerprint = config_fingerprint(json{{"model", ckpt.model.cfg}, {"score", scfg}});

    fs::create_directories(a.out_dir);
    write_scores_csv(fs::path(a.out_dir) / "scores.csv", scored);
    std::ofstream report(fs::path(a.out_dir) / "report.json", std::ios::trunc);
    if (!report) throw DatasetError("cannot write report.json under " + a.out_dir);
    report << json(rep).dump(2) << "\n";

    std::fputs(format_report(rep).c_str(), stdout);
    return 0;
}

int run_visualize(const CommonArgs& a, int count) {
    const json cfg = load_config(a.config_path);
    Checkpoint ckpt = load_checkpoint(a.checkpoint);
    auto [train_set, test_set] = resolve_data(a.data_root, a.manifest, cfg,
                                              ckpt.model.cfg.image_size, ckpt.model.cfg.channels);
    if (test_set.entries.empty()) throw DatasetError("visualize: the test split is empty");

    fs::create_directories(a.out_dir);
    const int n = std::min<int>(count, static_cast<int>(test_set.entries.size()));
    for (int i = 0; i < n; ++i) {
        const TestEntry& e = test_set.entries[static_cast<std::size_t>(i)];
        write_triptych(fs::path(a.out_dir) / ("triptych_" + e.id + ".png"), e.image, ckpt,
                       a.seed + static_cast<std::uint64_t>(i));
    }
    std::printf("wrote %d triptychs to %s\n", n, a.out_dir.c_str());
    return 0;
}

int run_synth(const CommonArgs& a, bool seed_given) {
    const json cfg = load_config(a.config_path);
    SyntheticSpec spec = section<SyntheticSpec>(cfg, "synthetic");
    if (seed_given) spec.seed = a.seed;
    auto [train_set, test_set] = generate_synthetic(spec);
    write_image_dataset(train_set, test_set, a.out_dir);
    std::printf("wrote %zu train / %zu test images to %s\n", train_set.images.size(),
                test_set.entries.size(), a.out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"masked-autoencoder anomaly detection for image datasets"};
    app.require_subcommand(1);

    CommonArgs args;
    int epochs_override = 0;
    int max_heatmaps = -1;  // -1 = all, 0 = none
    int viz_count = 3;
    EvalOptions eopt;
    int rc = 0;

    auto add_common = [&](CLI::App* sub, bool needs_ckpt) {
        sub->add_option("--config", args.config_path, "JSON config file")
            ->check(CLI::ExistingFile);
        sub->add_option("--data", args.data_root, "dataset root directory");
        sub->add_option("--manifest", args.manifest,
                        "manifest CSV relative to the dataset root");
        sub->add_option("--out-dir", args.out_dir, "output directory");
        sub->add_option("--seed", args.seed, "run seed");
        auto* c = sub->add_option("--checkpoint", args.checkpoint, "checkpoint path");
        if (needs_ckpt) c->required();
    };

    CLI::App* t = app.add_subcommand("train", "train a model on normal images");
    add_common(t, false);
    t->add_option("--epochs", epochs_override, "override the configured epoch count");
    t->callback([&] { rc = run_train(args, epochs_override, t->count("--seed") > 0); });

    CLI::App* s = app.add_subcommand("score", "score test images and emit heatmaps");
    add_common(s, true);
    s->add_option("--max-heatmaps", max_heatmaps, "heatmap PNG limit (-1 = all, 0 = none)");
    s->callback([&] { rc = run_score(args, max_heatmaps); });

    CLI::App* e = app.add_subcommand("eval", "score a labeled test set and report AUC/IoU");
    add_common(e, true);
    e->add_option("--group-size", eopt.group_size, "images per IoU group");
    e->add_option("--n-groups", eopt.n_groups, "number of IoU groups");
    e->add_option("--iou-threshold", eopt.fixed_threshold, "fixed binarization threshold");
    e->callback([&] { rc = run_eval(args, eopt); });

    CLI::App* v = app.add_subcommand("visualize", "render masked/reconstructed/original panels");
    add_common(v, true);
    v->add_option("--count", viz_count, "number of test images to render");
    v->callback([&] { rc = run_visualize(args, viz_count); });

    CLI::App* g = app.add_subcommand("synth", "materialize a synthetic dataset to disk");
    add_common(g, false);
    g->callback([&] { rc = run_synth(args, g->count("--seed") > 0); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err);
    } catch (const std::exception& err) {
        std::fprintf(stderr, "memmc: %s\n", err.what());
        return 1;
    }
    return rc;
}
