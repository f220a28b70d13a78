#pragma once

#include <string>
#include <vector>

#include "memmc/patchgrid.hpp"
#include "memmc/types.hpp"

namespace memmc {

/// Training pool: normal images only.
struct NormalImageSet {
    std::vector<Image<float>> images;
    std::vector<std::string> ids;
};

/// Labeled evaluation entry. Anomalous entries may carry a ground-truth
/// segmentation mask; normal entries never do.
struct TestEntry {
    Image<float> image;
    int label = 0;  // 0 = normal, 1 = anomalous
    Mat<float> mask;  // binary H x W; empty when absent
    std::string id;

    bool has_mask() const { return mask.size() > 0; }
};

struct LabeledTestSet {
    std::vector<TestEntry> entries;
};

}  // namespace memmc
