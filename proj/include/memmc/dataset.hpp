#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "memmc/data.hpp"
#include "memmc/errors.hpp"
#include "memmc/image_io.hpp"
#include "memmc/imageops.hpp"

namespace memmc {

namespace detail {

inline std::string trim_field(std::string s) {
    const auto issp = [](unsigned char c) { return c == ' ' || c == '\t' || c == '\r'; };
    while (!s.empty() && issp(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
    while (!s.empty() && issp(static_cast<unsigned char>(s.back()))) s.pop_back();
    return s;
}

inline int parse_label(const std::string& raw, const std::string& context) {
    if (raw == "normal" || raw == "0") return 0;
    if (raw == "anomalous" || raw == "1") return 1;
    throw DatasetError("manifest: unknown label '" + raw + "' for " + context);
}

/// Collapses or replicates planes to the requested channel count.
inline Image<float> to_channels(Image<float> img, int channels) {
    if (img.channels() == channels) return img;
    if (channels == 1) {
        Image<float> out(img.height(), img.width(), 1);
        for (const auto& plane : img.planes) out.planes[0] += plane;
        out.planes[0] /= static_cast<float>(img.channels());
        return out;
    }
    if (channels == 3 && img.channels() == 1) {
        Image<float> out;
        out.planes.assign(3, img.planes[0]);
        return out;
    }
    throw DatasetError("dataset: cannot adapt image to " + std::to_string(channels) + " channels");
}

inline Image<float> load_conformed(const std::string& path, int image_size, int channels) {
    Image<float> img = to_channels(read_image(path), channels);
    if (img.height() != image_size || img.width() != image_size) {
        img = resize_bilinear(img, image_size, image_size);
    }
    return img;
}

/// Loads a mask, checks it matches the source image's native size, then
/// resizes to the working resolution and binarizes at 0.5.
inline Mat<float> load_mask(const std::string& mask_path, const std::string& image_path,
                            int image_size) {
    const Image<float> raw_img = read_image(image_path);
    Image<float> mask = to_channels(read_image(mask_path), 1);
    if (mask.height() != raw_img.height() || mask.width() != raw_img.width()) {
        throw DatasetError("dataset: mask and image sizes differ for " + image_path);
    }
    Mat<float> resized = resize_bilinear(mask.planes[0], image_size, image_size);
    return (resized.array() >= 0.5f).cast<float>().matrix();
}

inline std::string id_from_path(const std::string& rel) {
    return std::filesystem::path(rel).stem().string();
}

inline bool image_extension(const std::filesystem::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return e == ".png" || e == ".jpg" || e == ".jpeg";
}

inline std::vector<std::string> sorted_images_in(const std::filesystem::path& dir) {
    std::vector<std::string> out;
    if (!std::filesystem::is_directory(dir)) return out;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && image_extension(entry.path())) {
            out.push_back(entry.path().string());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace detail

/// One manifest row: image path relative to the dataset root, its label, an
/// optional mask path, and an optional split override.
struct ManifestEntry {
    std::string path;
    int label = 0;
    std::string mask_path;
    std::string split;  // "train", "test", or empty = by label
};

inline std::vector<ManifestEntry> parse_manifest(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw DatasetError("manifest: cannot open " + manifest_path);
    std::vector<ManifestEntry> entries;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        line = detail::trim_field(line);
        if (line.empty() || line[0] == '#') continue;
        if (first && line.rfind("path,", 0) == 0) {
            first = false;
            continue;  // header row
        }
        first = false;
        std::stringstream row(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(row, field, ',')) fields.push_back(detail::trim_field(field));
        if (fields.size() < 2 || fields.size() > 4) {
            throw DatasetError("manifest: expected 2-4 columns, got '" + line + "'");
        }
        ManifestEntry e;
        e.path = fields[0];
        e.label = detail::parse_label(fields[1], e.path);
        if (fields.size() > 2) e.mask_path = fields[2];
        if (fields.size() > 3) e.split = fields[3];
        if (!e.split.empty() && e.split != "train" && e.split != "test") {
            throw DatasetError("manifest: unknown split '" + e.split + "' for " + e.path);
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

/// Loads a labeled dataset. With a manifest, rows are routed by their split
/// column (default: normals train, anomalous test). Without one, the layout
/// is directories-as-labels: train/, test/normal/, test/anomalous/, with
/// optional test/masks/<name> ground truth. Images are resized to
/// image_size and adapted to the channel count; masks binarize at 0.5.
inline std::pair<NormalImageSet, LabeledTestSet> load_folder_dataset(const std::string& root,
                                                                     const std::string& manifest,
                                                                     int image_size, int channels) {
    namespace fs = std::filesystem;
    if (image_size < 1) throw ValueError("dataset: image_size must be positive");
    if (channels != 1 && channels != 3) throw ValueError("dataset: channels must be 1 or 3");

    NormalImageSet train;
    LabeledTestSet test;

    auto add_train = [&](const std::string& abs, const std::string& id) {
        train.images.push_back(detail::load_conformed(abs, image_size, channels));
        train.ids.push_back(id);
    };
    auto add_test = [&](const std::string& abs, int label, const std::string& mask_abs,
                        const std::string& id) {
        TestEntry e;
        e.image = detail::load_conformed(abs, image_size, channels);
        e.label = label;
        e.id = id;
        if (!mask_abs.empty()) e.mask = detail::load_mask(mask_abs, abs, image_size);
        test.entries.push_back(std::move(e));
    };

    if (!manifest.empty()) {
        const fs::path base(root);
        for (const ManifestEntry& e : parse_manifest((base / manifest).string())) {
            const std::string abs = (base / e.path).string();
            if (e.label == 0 && !e.mask_path.empty()) {
                throw DatasetError("manifest: normal entry " + e.path + " must not carry a mask");
            }
            const std::string split = e.split.empty() ? (e.label == 0 ? "train" : "test") : e.split;
            if (split == "train") {
                if (e.label != 0) {
                    throw DatasetError("manifest: training entries must be normal: " + e.path);
                }
                add_train(abs, detail::id_from_path(e.path));
            } else {
                const std::string mask_abs =
                    e.mask_path.empty() ? std::string() : (base / e.mask_path).string();
                add_test(abs, e.label, mask_abs, detail::id_from_path(e.path));
            }
        }
        return {std::move(train), std::move(test)};
    }

    for (const std::string& p : detail::sorted_images_in(fs::path(root) / "train")) {
        add_train(p, detail::id_from_path(p));
    }
    for (const std::string& p : detail::sorted_images_in(fs::path(root) / "test" / "normal")) {
        add_test(p, 0, "", detail::id_from_path(p));
    }
    const fs::path mask_dir = fs::path(root) / "test" / "masks";
    for (const std::string& p : detail::sorted_images_in(fs::path(root) / "test" / "anomalous")) {
        const fs::path mask_path = mask_dir / fs::path(p).filename();
        add_test(p, 1, fs::exists(mask_path) ? mask_path.string() : "", detail::id_from_path(p));
    }
    if (train.images.empty() && test.entries.empty()) {
        throw DatasetError("dataset: nothing to load under " + root);
    }
    return {std::move(train), std::move(test)};
}

/// Materializes a dataset in the directory layout load_folder_dataset reads,
/// plus a manifest.csv carrying the same information.
inline void write_image_dataset(const NormalImageSet& train, const LabeledTestSet& test,
                                const std::string& out_dir) {
    namespace fs = std::filesystem;
    const fs::path base(out_dir);
    fs::create_directories(base / "train");
    fs::create_directories(base / "test" / "normal");
    fs::create_directories(base / "test" / "anomalous");
    fs::create_directories(base / "test" / "masks");

    std::ofstream manifest(base / "manifest.csv", std::ios::trunc);
    if (!manifest) throw DatasetError("dataset: cannot write manifest under " + out_dir);
    manifest << "path,label,mask_path,split\n";

    for (std::size_t i = 0; i < train.images.size(); ++i) {
        const std::string rel = "train/" + train.ids[i] + ".png";
        write_png((base / rel).string(), train.images[i]);
        manifest << rel << ",normal,,train\n";
    }
    for (const TestEntry& e : test.entries) {
        const std::string label = e.label == 0 ? "normal" : "anomalous";
        const std::string rel = "test/" + label + "/" + e.id + ".png";
        write_png((base / rel).string(), e.image);
        std::string mask_rel;
        if (e.has_mask()) {
            mask_rel = "test/masks/" + e.id + ".png";
            Image<float> mask_img;
            mask_img.planes.push_back(e.mask);
            write_png((base / mask_rel).string(), mask_img);
        }
        manifest << rel << "," << label << "," << mask_rel << ",test\n";
    }
}

}  // namespace memmc
