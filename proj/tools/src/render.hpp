#pragma once

#include <cartolab/image.hpp>

#include <vector>

namespace cartolab::cli {

// Renders a row-major value grid as a PNG-ready image. Values are scaled to
// the [min, max] of the finite entries and mapped through a fixed five-stop
// sequential palette (dark violet to yellow); NaN cells render mid-gray.
// Each grid cell becomes a cell_px x cell_px block.
Image render_heatmap(const std::vector<double>& values, int rows, int cols, int cell_px);

// Bilinear resize used by the mosaic composer; preserves channel count.
Image resize_image(const Image& src, int width, int height);

// Places crops[i] at grid cell cells[i] (row-major) of a rows x cols board;
// unused cells stay white. Crops are resized to cell_px squares.
Image compose_mosaic(const std::vector<Image>& crops, const std::vector<int>& cells, int rows,
                     int cols, int cell_px);

}  // namespace cartolab::cli
