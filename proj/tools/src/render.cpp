#include "render.hpp"

#include <cartolab/util.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

namespace cartolab::cli {

namespace {

// Five anchor colors of the sequential palette, low to high.
constexpr std::uint8_t kStops[5][3] = {
    {0x44, 0x01, 0x54}, {0x3b, 0x52, 0x8b}, {0x21, 0x91, 0x8c},
    {0x5e, 0xc9, 0x62}, {0xfd, 0xe7, 0x25},
};

void palette(double t, std::uint8_t* rgb) {
    t = std::clamp(t, 0.0, 1.0);
    const double pos = t * 4.0;
    const int lo = std::min(3, static_cast<int>(pos));
    const double frac = pos - lo;
    for (int c = 0; c < 3; ++c) {
        const double v = kStops[lo][c] + frac * (kStops[lo + 1][c] - kStops[lo][c]);
        rgb[c] = static_cast<std::uint8_t>(std::lround(v));
    }
}

}  // namespace

Image render_heatmap(const std::vector<double>& values, int rows, int cols, int cell_px) {
    if (rows <= 0 || cols <= 0 || cell_px <= 0 ||
        values.size() != static_cast<std::size_t>(rows) * cols)
        throw Error("BadValue", "heatmap grid does not match the value count");

    double vmin = std::numeric_limits<double>::infinity();
    double vmax = -std::numeric_limits<double>::infinity();
    for (double v : values) {
        if (!std::isfinite(v)) continue;
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
    }
    const bool flat = !(vmax > vmin);

    Image img;
    img.width = cols * cell_px;
    img.height = rows * cell_px;
    img.channels = 3;
    img.pixels.assign(static_cast<std::size_t>(img.width) * img.height * 3, 0);

    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const double v = values[static_cast<std::size_t>(r) * cols + c];
            std::uint8_t rgb[3] = {128, 128, 128};
            if (std::isfinite(v)) palette(flat ? 0.5 : (v - vmin) / (vmax - vmin), rgb);
            for (int py = 0; py < cell_px; ++py) {
                std::uint8_t* row = img.pixels.data() +
                                    (static_cast<std::size_t>(r * cell_px + py) * img.width +
                                     static_cast<std::size_t>(c) * cell_px) *
                                        3;
                for (int px = 0; px < cell_px; ++px) {
                    row[px * 3 + 0] = rgb[0];
                    row[px * 3 + 1] = rgb[1];
                    row[px * 3 + 2] = rgb[2];
                }
            }
        }
    }
    return img;
}

Image resize_image(const Image& src, int width, int height) {
    if (src.empty()) throw Error("BadImage", "cannot resize an empty image");
    Image dst;
    dst.width = width;
    dst.height = height;
    dst.channels = src.channels;
    dst.pixels.assign(static_cast<std::size_t>(width) * height * src.channels, 0);
    const double sx = static_cast<double>(src.width) / width;
    const double sy = static_cast<double>(src.height) / height;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            // Sample at the source-space center of the destination pixel.
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
            const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
            const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
            const int x1 = std::min(x0 + 1, src.width - 1), y1 = std::min(y0 + 1, src.height - 1);
            const double ax = fx - x0, ay = fy - y0;
            for (int c = 0; c < src.channels; ++c) {
                const double v00 = src.px(x0, y0)[c], v10 = src.px(x1, y0)[c];
                const double v01 = src.px(x0, y1)[c], v11 = src.px(x1, y1)[c];
                const double v = (1 - ay) * ((1 - ax) * v00 + ax * v10) +
                                 ay * ((1 - ax) * v01 + ax * v11);
                dst.pixels[(static_cast<std::size_t>(y) * width + x) * src.channels + c] =
                    static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
            }
        }
    }
    return dst;
}

Image compose_mosaic(const std::vector<Image>& crops, const std::vector<int>& cells, int rows,
                     int cols, int cell_px) {
    if (crops.size() != cells.size())
        throw Error("BadValue", "mosaic crops and cell assignments differ in length");
    Image board;
    board.width = cols * cell_px;
    board.height = rows * cell_px;
    board.channels = 3;
    board.pixels.assign(static_cast<std::size_t>(board.width) * board.height * 3, 255);

    for (std::size_t i = 0; i < crops.size(); ++i) {
        const int cell = cells[i];
        if (cell < 0 || cell >= rows * cols)
            throw Error("BadValue", "mosaic cell index out of range");
        Image tile = resize_image(crops[i].channels == 3 ? crops[i] : ensure_rgb(crops[i]),
                                  cell_px, cell_px);
        const int y0 = (cell / cols) * cell_px;
        const int x0 = (cell % cols) * cell_px;
        for (int y = 0; y < cell_px; ++y) {
            std::uint8_t* dst = board.pixels.data() +
                                (static_cast<std::size_t>(y0 + y) * board.width + x0) * 3;
            const std::uint8_t* src = tile.pixels.data() + static_cast<std::size_t>(y) * cell_px * 3;
            std::copy(src, src + static_cast<std::size_t>(cell_px) * 3, dst);
        }
    }
    return board;
}

}  // namespace cartolab::cli
