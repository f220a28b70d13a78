#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "memmc/errors.hpp"
#include "memmc/rng.hpp"
#include "memmc/types.hpp"

namespace memmc {

/// Image as one H x W plane per channel, pixel values in [0,1].
template <typename S>
struct Image {
    std::vector<Mat<S>> planes;

    Image() = default;
    Image(Index height, Index width, Index channels) {
        planes.assign(static_cast<std::size_t>(channels), Mat<S>::Zero(height, width));
    }

    Index height() const { return planes.empty() ? 0 : planes[0].rows(); }
    Index width() const { return planes.empty() ? 0 : planes[0].cols(); }
    Index channels() const { return static_cast<Index>(planes.size()); }

    bool same_shape(const Image& o) const {
        return height() == o.height() && width() == o.width() && channels() == o.channels();
    }
};

/// Non-overlapping square patches of an image. Row i holds patch i flattened
/// in raster order within the patch: (py, px, channel), channels fastest.
/// Patches are ordered row-major over the grid.
template <typename S>
struct PatchGrid {
    Mat<S> patches;      // n_patches x (side*side*channels)
    Index patch_side = 0;
    Index grid_rows = 0;
    Index grid_cols = 0;
    Index channels = 0;

    Index num_patches() const { return grid_rows * grid_cols; }
    Index patch_dim() const { return patch_side * patch_side * channels; }
};

/// Visible/masked split of patch indices. Both lists sorted ascending.
struct MaskPartition {
    std::vector<int> visible;
    std::vector<int> masked;
    std::uint64_t seed = 0;
    double ratio = 0.0;
};

template <typename S>
PatchGrid<S> patchify(const Image<S>& image, Index patch_side) {
    if (patch_side <= 0) throw ValueError("patchify: patch_side must be positive");
    const Index h = image.height(), w = image.width(), ch = image.channels();
    if (ch < 1) throw ShapeError("patchify: image has no channels");
    if (h % patch_side != 0 || w % patch_side != 0) {
        throw ShapeError("patchify: image " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by patch side " + std::to_string(patch_side));
    }
    PatchGrid<S> grid;
    grid.patch_side = patch_side;
    grid.grid_rows = h / patch_side;
    grid.grid_cols = w / patch_side;
    grid.channels = ch;
    grid.patches.resize(grid.num_patches(), grid.patch_dim());
    for (Index gr = 0; gr < grid.grid_rows; ++gr) {
        for (Index gc = 0; gc < grid.grid_cols; ++gc) {
            const Index row = gr * grid.grid_cols + gc;
            Index k = 0;
            for (Index py = 0; py < patch_side; ++py) {
                for (Index px = 0; px < patch_side; ++px) {
                    for (Index c = 0; c < ch; ++c) {
                        grid.patches(row, k++) = image.planes[static_cast<std::size_t>(c)](
                            gr * patch_side + py, gc * patch_side + px);
                    }
                }
            }
        }
    }
    return grid;
}

template <typename S>
Image<S> unpatchify(const PatchGrid<S>& grid) {
    if (grid.patch_side <= 0 || grid.grid_rows <= 0 || grid.grid_cols <= 0 || grid.channels <= 0) {
        throw ShapeError("unpatchify: invalid grid dimensions");
    }
    if (grid.patches.rows() != grid.num_patches() || grid.patches.cols() != grid.patch_dim()) {
        throw ShapeError("unpatchify: patch matrix shape inconsistent with grid dimensions");
    }
    Image<S> image(grid.grid_rows * grid.patch_side, grid.grid_cols * grid.patch_side, grid.channels);
    for (Index gr = 0; gr < grid.grid_rows; ++gr) {
        for (Index gc = 0; gc < grid.grid_cols; ++gc) {
            const Index row = gr * grid.grid_cols + gc;
            Index k = 0;
            for (Index py = 0; py < grid.patch_side; ++py) {
                for (Index px = 0; px < grid.patch_side; ++px) {
                    for (Index c = 0; c < grid.channels; ++c) {
                        image.planes[static_cast<std::size_t>(c)](gr * grid.patch_side + py,
                                                                  gc * grid.patch_side + px) =
                            grid.patches(row, k++);
                    }
                }
            }
        }
    }
    return image;
}

/// Visible count for a mask ratio: round((1-ratio)*n) with .5 ties broken
/// toward fewer visible patches.
inline int visible_count(int num_patches, double ratio) {
    const double exact = (1.0 - ratio) * static_cast<double>(num_patches);
    int v = static_cast<int>(std::ceil(exact - 0.5));
    return std::clamp(v, 0, num_patches);
}

/// Uniform random visible/masked split, deterministic given seed.
inline MaskPartition sample_mask(int num_patches, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw ValueError("sample_mask: ratio must be in (0,1)");
    if (num_patches < 2) throw ValueError("sample_mask: need at least 2 patches");
    const int n_visible = visible_count(num_patches, ratio);
    Rng rng(seed);
    std::vector<int> vis = rng.sample_without_replacement(num_patches, n_visible);
    std::sort(vis.begin(), vis.end());
    std::vector<char> is_visible(static_cast<std::size_t>(num_patches), 0);
    for (int i : vis) is_visible[static_cast<std::size_t>(i)] = 1;
    MaskPartition part;
    part.visible = std::move(vis);
    part.masked.reserve(static_cast<std::size_t>(num_patches - n_visible));
    for (int i = 0; i < num_patches; ++i) {
        if (!is_visible[static_cast<std::size_t>(i)]) part.masked.push_back(i);
    }
    part.seed = seed;
    part.ratio = ratio;
    return part;
}

namespace detail {

/// 1-D sine-cosine embedding of integer positions, dim must be even:
/// out = [sin(p*w_0..w_{m-1}), cos(p*w_0..w_{m-1})], w_k = 10000^(-k/m).
template <typename S>
Mat<S> sincos_1d(const std::vector<Index>& positions, Index dim) {
    const Index m = dim / 2;
    Mat<S> out(static_cast<Index>(positions.size()), dim);
    for (Index i = 0; i < out.rows(); ++i) {
        const double p = static_cast<double>(positions[static_cast<std::size_t>(i)]);
        for (Index k = 0; k < m; ++k) {
            const double omega = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(m));
            out(i, k) = static_cast<S>(std::sin(p * omega));
            out(i, m + k) = static_cast<S>(std::cos(p * omega));
        }
    }
    return out;
}

}  // namespace detail

/// Fixed 2-D sine-cosine positional table over a (rows, cols) patch grid,
/// flattened row-major. Half of the width embeds the grid row, half the
/// grid column; odd halves shift one dimension to keep each half even.
template <typename S>
Mat<S> positional_table(Index grid_rows, Index grid_cols, Index width) {
    if (width <= 0 || width % 2 != 0) throw ValueError("positional_table: width must be positive and even");
    if (grid_rows <= 0 || grid_cols <= 0) throw ValueError("positional_table: grid dims must be positive");
    Index dim_r = width / 2;
    if (dim_r % 2 != 0) dim_r += 1;  // keep both axis halves even
    const Index dim_c = width - dim_r;

    const Index n = grid_rows * grid_cols;
    std::vector<Index> row_pos(static_cast<std::size_t>(n)), col_pos(static_cast<std::size_t>(n));
    for (Index r = 0; r < grid_rows; ++r) {
        for (Index c = 0; c < grid_cols; ++c) {
            row_pos[static_cast<std::size_t>(r * grid_cols + c)] = r;
            col_pos[static_cast<std::size_t>(r * grid_cols + c)] = c;
        }
    }
    Mat<S> table(n, width);
    table.leftCols(dim_r) = detail::sincos_1d<S>(row_pos, dim_r);
    table.rightCols(dim_c) = detail::sincos_1d<S>(col_pos, dim_c);
    return table;
}

/// Rows of `table` selected by `idx`, in order.
template <typename S>
Mat<S> gather_rows(const Mat<S>& table, const std::vector<int>& idx) {
    Mat<S> out(static_cast<Index>(idx.size()), table.cols());
    for (Index i = 0; i < out.rows(); ++i) {
        out.row(i) = table.row(idx[static_cast<std::size_t>(i)]);
    }
    return out;
}

}  // namespace memmc
