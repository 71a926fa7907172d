#pragma once

#include "cartolab/model.hpp"
#include "cartolab/util.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cartolab {

// Interleaved 8-bit raster, 1 (gray) or 3 (RGB) channels.
struct Image {
    int width = 0, height = 0, channels = 1;
    std::vector<std::uint8_t> pixels;

    std::uint8_t* px(int x, int y) {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * channels;
    }
    const std::uint8_t* px(int x, int y) const {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * channels;
    }
    bool empty() const { return pixels.empty(); }
};

// Binary PGM (P5) and PPM (P6), 8-bit.
Image load_image(const std::string& path);
void save_image(const std::string& path, const Image& image);

// Rec.601 luma for RGB input; pass-through for gray.
Image to_gray(const Image& image);

// Gray input replicated into three channels; pass-through for RGB.
Image ensure_rgb(const Image& image);

// Edge-preserving smoothing; for RGB the range kernel is evaluated on the
// luma guide so all channels shift together. range_sigma is in 8-bit units.
Image bilateral_smooth(const Image& image, double spatial_sigma = 3.0, double range_sigma = 25.0,
                       int threads = 1);

// Canny edge map (255 = edge) with fixed Sobel gradients, L2 magnitude,
// non-maximum suppression and hysteresis.
Image canny_edges(const Image& gray, double low = 50.0, double high = 150.0, int threads = 1);

// --- graphic load ------------------------------------------------------------

struct LoadGrid {
    int cell_px = 32;
    int rows = 0, cols = 0;
    std::vector<double> values;  // edge-pixel fraction per cell, in [0,1]

    double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
    double& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
};

// Edge density per cell: edge pixels / cell pixels. Partial border cells use
// their true pixel count. Throws Error("CellLargerThanImage").
LoadGrid graphic_load(const Image& gray, int cell_px = 32, int threads = 1);

// Mean edge density of one patch (single-cell load).
double patch_graphic_load(const Image& gray_patch);

// --- mapel sampling ----------------------------------------------------------

// Strict 8-neighborhood maxima of the load grid, excluding background cells,
// randomly drawn under a minimum pairwise center distance and a buffer from
// background cells. background_cells is per grid cell (1 = background).
// Throws Error("NoForeground") when every cell is background.
std::vector<std::pair<int, int>> sample_mapel_positions(const LoadGrid& grid,
                                                        const std::vector<std::uint8_t>& background_cells,
                                                        int n_max, double min_dist_px,
                                                        double buffer_px, std::uint64_t seed);

// --- orientation -------------------------------------------------------------

// Dominant stroke direction in degrees [0, 180), measured from the vertical
// axis: vertical strokes give 0. Aggregated 9-bin gradient histogram with
// parabolic peak interpolation; zero-gradient patches return 0 and set
// *zero_energy when provided.
double principal_orientation(const Image& gray_patch, bool* zero_energy = nullptr);

// --- features ----------------------------------------------------------------

struct FeatureVector {
    std::array<double, 64> color_hist{};    // 4x4x4 joint RGB bins
    std::array<double, 9> hls_moments{};    // mean, sd, skew per H, L, S
    std::array<double, 12> cmyk_moments{};  // mean, sd, skew per C, M, Y, K
    std::array<double, 10> lbp_hist{};      // rotation-invariant uniform LBP(8,1)
    double n_components = 0.0;              // ink components, 8-connected
    double line_width = 0.0;                // 2 * ink area / ink perimeter
    double graphic_load = 0.0;
    double harris_max = 0.0;
    std::array<double, 3> bg_color{};       // mean RGB under w = 1 - sqrt(y)
    std::array<double, 3> fg_color{};       // mean RGB under w = y

    static constexpr int kDim = 64 + 9 + 12 + 10 + 4 + 3 + 3;
    std::vector<float> flatten() const;
};

// All fields from one RGB patch. Binarization (components, line width) uses
// an Otsu threshold on luminance; the foreground weight for the color split
// is the resulting ink indicator.
FeatureVector cv_features(const Image& rgb_patch);

// Weighted mean colors: fg weights = y, bg weights = 1 - sqrt(y).
// Throws Error("AllZeroWeights") when either weight field sums to zero.
std::pair<std::array<double, 3>, std::array<double, 3>> foreground_weighted_color(
    const Image& rgb_patch, const std::vector<double>& weight_map);

// --- mapels ------------------------------------------------------------------

struct Mapel {
    std::string map_id;
    int idx = 0;
    int x = 0, y = 0;  // center, pixels
    int size = 49;     // one of 49, 70, 98
    double orientation_deg = 0.0;
    FeatureVector features;
    std::array<double, kNumClasses> semantic_ratio{};
    int semantic_mode = 0;      // lowest matching mode, 0 = none/no mask
    unsigned mode_set = 0;      // bitmask, bit m-1 = mode m matched
    Image patch;                // orientation-neutralized crop
};

struct MapelParams {
    int size = 49;
    int n_max = 256;
    double min_dist_px = 100.0;
    double buffer_px = 50.0;
    int cell_px = 32;
    double blank_threshold = 0.005;  // load below this marks a blank cell
    double spatial_sigma = 3.0;
    double range_sigma = 25.0;
    double canny_low = 50.0, canny_high = 150.0;
    std::uint64_t seed = 0;
    int threads = 1;
    bool keep_patches = true;
};

// Semantic composition modes over the class-share simplex. Several can match
// at once; the stored mode is the lowest index. Mode list: 1 built > 90%,
// 2 non-built > 90%, 3 water > 90%, 4 road > 90%, 5 built and non-built both
// > 30%, 6 water and non-built both > 30%, 7 road and non-built both > 30%,
// 8 contours > 4%.
unsigned semantic_mode_set(const std::array<double, kNumClasses>& ratio);
int lowest_mode(unsigned mode_set);

// Full pipeline: smooth, mask blank/background cells, graphic load, sample
// positions, then per position detect orientation, cut the neutralized patch
// and compute features. A fully blank page yields an empty list.
std::vector<Mapel> extract_mapels(const std::string& map_id, const Image& rgb,
                                  const SemanticMask* mask, const MapelParams& params);

}  // namespace cartolab
