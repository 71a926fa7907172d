#include "cartolab/image.hpp"

#include "cartolab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <limits>
#include <numeric>

namespace cartolab {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct PnmHeader {
    std::string magic;
    int width = 0, height = 0, maxval = 0;
    std::size_t data_offset = 0;
};

PnmHeader parse_pnm_header(const std::vector<char>& bytes, const std::string& path) {
    PnmHeader h;
    std::size_t pos = 0;
    auto skip_ws = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto token = [&]() -> std::string {
        skip_ws();
        std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        return std::string(bytes.begin() + static_cast<long>(start), bytes.begin() + static_cast<long>(pos));
    };
    h.magic = token();
    auto num = [&](const char* what) {
        std::string t = token();
        try {
            std::size_t used = 0;
            int v = std::stoi(t, &used);
            if (used != t.size() || v <= 0) throw std::invalid_argument(what);
            return v;
        } catch (const std::exception&) {
            throw Error("BadImage", path + ": bad " + what + " field");
        }
    };
    h.width = num("width");
    h.height = num("height");
    h.maxval = num("maxval");
    if (h.maxval > 255) throw Error("BadImage", path + ": only 8-bit images supported");
    if (pos >= bytes.size()) throw Error("BadImage", path + ": truncated header");
    ++pos;  // single whitespace after maxval
    h.data_offset = pos;
    return h;
}

}  // namespace

Image load_image(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("IoError", "cannot open " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    PnmHeader h = parse_pnm_header(bytes, path);

    Image img;
    img.width = h.width;
    img.height = h.height;
    if (h.magic == "P5")
        img.channels = 1;
    else if (h.magic == "P6")
        img.channels = 3;
    else
        throw Error("BadImage", path + ": expected binary PGM/PPM, got '" + h.magic + "'");

    std::size_t need = static_cast<std::size_t>(h.width) * h.height * img.channels;
    if (bytes.size() - h.data_offset < need)
        throw Error("BadImage", path + ": pixel data truncated");
    img.pixels.resize(need);
    std::memcpy(img.pixels.data(), bytes.data() + h.data_offset, need);
    return img;
}

void save_image(const std::string& path, const Image& image) {
    if (image.channels != 1 && image.channels != 3)
        throw Error("BadImage", "only 1- or 3-channel images can be saved");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("IoError", "cannot open " + path + " for writing");
    f << (image.channels == 1 ? "P5" : "P6") << "\n"
      << image.width << " " << image.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
    if (!f) throw Error("IoError", "short write to " + path);
}

Image to_gray(const Image& image) {
    if (image.channels == 1) return image;
    Image g;
    g.width = image.width;
    g.height = image.height;
    g.channels = 1;
    g.pixels.resize(static_cast<std::size_t>(g.width) * g.height);
    for (std::size_t i = 0; i < g.pixels.size(); ++i) {
        const std::uint8_t* p = image.pixels.data() + i * 3;
        double y = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
        g.pixels[i] = static_cast<std::uint8_t>(std::lround(std::min(255.0, y)));
    }
    return g;
}

Image bilateral_smooth(const Image& image, double spatial_sigma, double range_sigma, int threads) {
    if (spatial_sigma <= 0.0 || range_sigma <= 0.0)
        throw Error("BadValue", "bilateral sigmas must be > 0");
    if (image.empty()) return image;
    const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * spatial_sigma)));
    std::vector<double> spatial(static_cast<std::size_t>(2 * radius + 1) *
                                (2 * radius + 1));
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            spatial[static_cast<std::size_t>(dy + radius) * (2 * radius + 1) + (dx + radius)] =
                std::exp(-0.5 * (dx * dx + dy * dy) / (spatial_sigma * spatial_sigma));
    std::array<double, 256> range_lut;
    for (int d = 0; d < 256; ++d)
        range_lut[static_cast<std::size_t>(d)] =
            std::exp(-0.5 * d * d / (range_sigma * range_sigma));

    Image guide = to_gray(image);
    Image out = image;
    const int w = image.width, h = image.height, ch = image.channels;
    parallel_for(static_cast<std::size_t>(h), threads, [&](std::size_t row) {
        const int y = static_cast<int>(row);
        for (int x = 0; x < w; ++x) {
            const int gc = guide.px(x, y)[0];
            double wsum = 0.0;
            double acc[3] = {0.0, 0.0, 0.0};
            for (int dy = -radius; dy <= radius; ++dy) {
                int yy = std::clamp(y + dy, 0, h - 1);
                for (int dx = -radius; dx <= radius; ++dx) {
                    int xx = std::clamp(x + dx, 0, w - 1);
                    int gd = std::abs(guide.px(xx, yy)[0] - gc);
                    double wgt = spatial[static_cast<std::size_t>(dy + radius) * (2 * radius + 1) +
                                         (dx + radius)] *
                                 range_lut[static_cast<std::size_t>(gd)];
                    wsum += wgt;
                    const std::uint8_t* p = image.px(xx, yy);
                    for (int c = 0; c < ch; ++c) acc[c] += wgt * p[c];
                }
            }
            std::uint8_t* q = out.px(x, y);
            for (int c = 0; c < ch; ++c)
                q[c] = static_cast<std::uint8_t>(std::lround(std::clamp(acc[c] / wsum, 0.0, 255.0)));
        }
    });
    return out;
}

namespace {

// Sobel pair at (x, y) with clamped borders.
inline void sobel_at(const Image& g, int x, int y, double& gx, double& gy) {
    auto v = [&](int xx, int yy) {
        return static_cast<double>(g.px(std::clamp(xx, 0, g.width - 1),
                                        std::clamp(yy, 0, g.height - 1))[0]);
    };
    gx = (v(x + 1, y - 1) + 2.0 * v(x + 1, y) + v(x + 1, y + 1)) -
         (v(x - 1, y - 1) + 2.0 * v(x - 1, y) + v(x - 1, y + 1));
    gy = (v(x - 1, y + 1) + 2.0 * v(x, y + 1) + v(x + 1, y + 1)) -
         (v(x - 1, y - 1) + 2.0 * v(x, y - 1) + v(x + 1, y - 1));
}

}  // namespace

Image canny_edges(const Image& gray, double low, double high, int threads) {
    if (gray.channels != 1) throw Error("BadImage", "canny expects a grayscale image");
    if (low < 0 || high < low) throw Error("BadValue", "thresholds must satisfy 0 <= low <= high");
    const int w = gray.width, h = gray.height;
    Image out;
    out.width = w;
    out.height = h;
    out.channels = 1;
    out.pixels.assign(static_cast<std::size_t>(w) * h, 0);
    if (w < 3 || h < 3) return out;

    std::vector<float> mag(static_cast<std::size_t>(w) * h, 0.0f);
    std::vector<std::uint8_t> sector(static_cast<std::size_t>(w) * h, 0);
    parallel_for(static_cast<std::size_t>(h), threads, [&](std::size_t row) {
        const int y = static_cast<int>(row);
        for (int x = 0; x < w; ++x) {
            double gx, gy;
            sobel_at(gray, x, y, gx, gy);
            double m = std::sqrt(gx * gx + gy * gy);
            mag[row * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)] =
                static_cast<float>(m);
            double ang = std::atan2(gy, gx) * 180.0 / kPi;
            if (ang < 0) ang += 180.0;
            std::uint8_t s;
            if (ang < 22.5 || ang >= 157.5)
                s = 0;  // horizontal gradient
            else if (ang < 67.5)
                s = 1;  // diagonal /
            else if (ang < 112.5)
                s = 2;  // vertical gradient
            else
                s = 3;  // diagonal backslash
            sector[row * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)] = s;
        }
    });

    // Non-maximum suppression, then double threshold.
    std::vector<std::uint8_t> grade(static_cast<std::size_t>(w) * h, 0);  // 0 none, 1 weak, 2 strong
    parallel_for(static_cast<std::size_t>(h), threads, [&](std::size_t row) {
        const int y = static_cast<int>(row);
        if (y == 0 || y == h - 1) return;
        for (int x = 1; x + 1 < w; ++x) {
            std::size_t i = row * static_cast<std::size_t>(w) + static_cast<std::size_t>(x);
            float m = mag[i];
            if (m < low) continue;
            float a, b;
            switch (sector[i]) {
                case 0:
                    a = mag[i - 1];
                    b = mag[i + 1];
                    break;
                case 1:
                    a = mag[i - static_cast<std::size_t>(w) + 1];
                    b = mag[i + static_cast<std::size_t>(w) - 1];
                    break;
                case 2:
                    a = mag[i - static_cast<std::size_t>(w)];
                    b = mag[i + static_cast<std::size_t>(w)];
                    break;
                default:
                    a = mag[i - static_cast<std::size_t>(w) - 1];
                    b = mag[i + static_cast<std::size_t>(w) + 1];
                    break;
            }
            if (m >= a && m >= b) grade[i] = m >= high ? 2 : 1;
        }
    });

    // Hysteresis: weak pixels survive when 8-connected to a strong one.
    std::deque<std::size_t> frontier;
    for (std::size_t i = 0; i < grade.size(); ++i)
        if (grade[i] == 2) {
            out.pixels[i] = 255;
            frontier.push_back(i);
        }
    while (!frontier.empty()) {
        std::size_t i = frontier.front();
        frontier.pop_front();
        int x = static_cast<int>(i % static_cast<std::size_t>(w));
        int y = static_cast<int>(i / static_cast<std::size_t>(w));
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                if (dx == 0 && dy == 0) continue;
                int xx = x + dx, yy = y + dy;
                if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
                std::size_t j = static_cast<std::size_t>(yy) * static_cast<std::size_t>(w) +
                                static_cast<std::size_t>(xx);
                if (grade[j] == 1 && out.pixels[j] == 0) {
                    out.pixels[j] = 255;
                    frontier.push_back(j);
                }
            }
        }
    }
    return out;
}

LoadGrid graphic_load(const Image& gray, int cell_px, int threads) {
    if (gray.channels != 1) throw Error("BadImage", "graphic load expects a grayscale image");
    if (cell_px < 8) throw Error("BadValue", "cell_px must be >= 8");
    if (cell_px > gray.width || cell_px > gray.height)
        throw Error("CellLargerThanImage", "cell does not fit inside the image");
    Image edges = canny_edges(gray, 50.0, 150.0, threads);

    LoadGrid grid;
    grid.cell_px = cell_px;
    grid.rows = (gray.height + cell_px - 1) / cell_px;
    grid.cols = (gray.width + cell_px - 1) / cell_px;
    grid.values.assign(static_cast<std::size_t>(grid.rows) * grid.cols, 0.0);
    for (int r = 0; r < grid.rows; ++r) {
        int y0 = r * cell_px, y1 = std::min(gray.height, y0 + cell_px);
        for (int c = 0; c < grid.cols; ++c) {
            int x0 = c * cell_px, x1 = std::min(gray.width, x0 + cell_px);
            long count = 0;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x)
                    if (edges.px(x, y)[0]) ++count;
            grid.at(r, c) = static_cast<double>(count) /
                            static_cast<double>((y1 - y0) * (x1 - x0));
        }
    }
    return grid;
}

double patch_graphic_load(const Image& gray_patch) {
    Image g = to_gray(gray_patch);
    Image edges = canny_edges(g, 50.0, 150.0, 1);
    long count = 0;
    for (std::uint8_t v : edges.pixels)
        if (v) ++count;
    return edges.pixels.empty() ? 0.0
                                : static_cast<double>(count) /
                                      static_cast<double>(edges.pixels.size());
}

std::vector<std::pair<int, int>> sample_mapel_positions(
    const LoadGrid& grid, const std::vector<std::uint8_t>& background_cells, int n_max,
    double min_dist_px, double buffer_px, std::uint64_t seed) {
    if (n_max < 1) throw Error("BadValue", "n_max must be >= 1");
    if (background_cells.size() != grid.values.size())
        throw Error("DimensionMismatch", "background mask must match the grid");
    bool all_masked = true;
    for (std::uint8_t b : background_cells)
        if (!b) {
            all_masked = false;
            break;
        }
    if (all_masked) throw Error("NoForeground", "every cell is masked as background");

    // Strict 8-neighborhood maxima over unmasked cells.
    const int buffer_cells = static_cast<int>(std::ceil(buffer_px / grid.cell_px));
    std::vector<std::size_t> maxima;
    for (int r = 0; r < grid.rows; ++r) {
        for (int c = 0; c < grid.cols; ++c) {
            std::size_t i = static_cast<std::size_t>(r) * grid.cols + static_cast<std::size_t>(c);
            if (background_cells[i]) continue;
            double v = grid.at(r, c);
            if (v <= 0.0) continue;
            bool is_max = true;
            for (int dr = -1; dr <= 1 && is_max; ++dr)
                for (int dc = -1; dc <= 1 && is_max; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    int rr = r + dr, cc = c + dc;
                    if (rr < 0 || cc < 0 || rr >= grid.rows || cc >= grid.cols) continue;
                    if (grid.at(rr, cc) >= v) is_max = false;
                }
            if (!is_max) continue;
            // Buffer: no background cell whose center lies within buffer_px.
            bool clear = true;
            for (int dr = -buffer_cells; dr <= buffer_cells && clear; ++dr)
                for (int dc = -buffer_cells; dc <= buffer_cells && clear; ++dc) {
                    int rr = r + dr, cc = c + dc;
                    if (rr < 0 || cc < 0 || rr >= grid.rows || cc >= grid.cols) continue;
                    if (!background_cells[static_cast<std::size_t>(rr) * grid.cols +
                                          static_cast<std::size_t>(cc)])
                        continue;
                    double d = std::hypot(static_cast<double>(dr), static_cast<double>(dc)) *
                               grid.cell_px;
                    if (d <= buffer_px) clear = false;
                }
            if (clear) maxima.push_back(i);
        }
    }

    Rng rng(seed);
    rng.shuffle(maxima);
    std::vector<std::pair<int, int>> accepted;
    for (std::size_t i : maxima) {
        if (static_cast<int>(accepted.size()) >= n_max) break;
        int r = static_cast<int>(i / static_cast<std::size_t>(grid.cols));
        int c = static_cast<int>(i % static_cast<std::size_t>(grid.cols));
        int x = c * grid.cell_px + grid.cell_px / 2;
        int y = r * grid.cell_px + grid.cell_px / 2;
        bool ok = true;
        for (const auto& [ax, ay] : accepted) {
            double d = std::hypot(static_cast<double>(x - ax), static_cast<double>(y - ay));
            if (d < min_dist_px) {
                ok = false;
                break;
            }
        }
        if (ok) accepted.push_back({x, y});
    }
    return accepted;
}

double principal_orientation(const Image& gray_patch, bool* zero_energy) {
    if (gray_patch.channels != 1)
        throw Error("BadImage", "orientation expects a grayscale patch");
    constexpr int kBins = 9;
    constexpr double kBinWidth = 180.0 / kBins;
    std::array<double, kBins> hist{};
    const int w = gray_patch.width, h = gray_patch.height;
    double total = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double gx, gy;
            sobel_at(gray_patch, x, y, gx, gy);
            double m = std::sqrt(gx * gx + gy * gy);
            if (m <= 0.0) continue;
            total += m;
            double ang = std::atan2(gy, gx) * 180.0 / kPi;
            if (ang < 0) ang += 180.0;
            if (ang >= 180.0) ang -= 180.0;
            // Split the vote between the two nearest bin centers.
            double pos = ang / kBinWidth - 0.5;
            int b0 = static_cast<int>(std::floor(pos));
            double frac = pos - b0;
            int lo = (b0 % kBins + kBins) % kBins;
            int hi = (lo + 1) % kBins;
            hist[static_cast<std::size_t>(lo)] += m * (1.0 - frac);
            hist[static_cast<std::size_t>(hi)] += m * frac;
        }
    }
    if (zero_energy) *zero_energy = total <= 1e-9;
    if (total <= 1e-9) return 0.0;

    int peak = 0;
    for (int b = 1; b < kBins; ++b)
        if (hist[static_cast<std::size_t>(b)] > hist[static_cast<std::size_t>(peak)]) peak = b;
    double hl = hist[static_cast<std::size_t>((peak + kBins - 1) % kBins)];
    double hc = hist[static_cast<std::size_t>(peak)];
    double hr = hist[static_cast<std::size_t>((peak + 1) % kBins)];
    double denom = hl - 2.0 * hc + hr;
    double offset = denom != 0.0 ? 0.5 * (hl - hr) / denom : 0.0;
    offset = std::clamp(offset, -0.5, 0.5);
    double ang = (peak + 0.5 + offset) * kBinWidth;
    if (ang >= 180.0) ang -= 180.0;
    if (ang < 0.0) ang += 180.0;
    return ang;
}

// --- features ----------------------------------------------------------------

Image ensure_rgb(const Image& in) {
    if (in.channels == 3) return in;
    Image out;
    out.width = in.width;
    out.height = in.height;
    out.channels = 3;
    out.pixels.resize(static_cast<std::size_t>(in.width) * in.height * 3);
    for (std::size_t i = 0; i < in.pixels.size(); ++i) {
        out.pixels[3 * i] = in.pixels[i];
        out.pixels[3 * i + 1] = in.pixels[i];
        out.pixels[3 * i + 2] = in.pixels[i];
    }
    return out;
}

namespace {

// Otsu threshold; returns -1 when the histogram has a single class.
int otsu_threshold(const Image& gray) {
    std::array<long, 256> hist{};
    for (std::uint8_t v : gray.pixels) ++hist[v];
    const double total = static_cast<double>(gray.pixels.size());
    double sum_all = 0.0;
    for (int v = 0; v < 256; ++v) sum_all += v * static_cast<double>(hist[static_cast<std::size_t>(v)]);
    double w_bg = 0.0, sum_bg = 0.0, best_var = 0.0;
    int best_t = -1;
    for (int t = 0; t < 256; ++t) {
        w_bg += static_cast<double>(hist[static_cast<std::size_t>(t)]);
        if (w_bg == 0.0) continue;
        double w_fg = total - w_bg;
        if (w_fg == 0.0) break;
        sum_bg += t * static_cast<double>(hist[static_cast<std::size_t>(t)]);
        double mu_bg = sum_bg / w_bg;
        double mu_fg = (sum_all - sum_bg) / w_fg;
        double var = w_bg * w_fg * (mu_bg - mu_fg) * (mu_bg - mu_fg);
        if (var > best_var) {
            best_var = var;
            best_t = t;
        }
    }
    return best_var > 0.0 ? best_t : -1;
}

void moments3(const std::vector<double>& values, double* out) {
    double mu = 0.0;
    for (double v : values) mu += v;
    mu /= static_cast<double>(values.size());
    double m2 = 0.0, m3 = 0.0;
    for (double v : values) {
        double d = v - mu;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= static_cast<double>(values.size());
    m3 /= static_cast<double>(values.size());
    double sd = std::sqrt(m2);
    out[0] = mu;
    out[1] = sd;
    out[2] = sd > 1e-12 ? m3 / (sd * sd * sd) : 0.0;
}

void rgb_to_hls(double r, double g, double b, double& hh, double& ll, double& ss) {
    double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    ll = (mx + mn) / 2.0;
    double d = mx - mn;
    if (d <= 0.0) {
        hh = 0.0;
        ss = 0.0;
        return;
    }
    ss = ll > 0.5 ? d / (2.0 - mx - mn) : d / (mx + mn);
    double h;
    if (mx == r)
        h = (g - b) / d + (g < b ? 6.0 : 0.0);
    else if (mx == g)
        h = (b - r) / d + 2.0;
    else
        h = (r - g) / d + 4.0;
    hh = h / 6.0;
}

}  // namespace

std::vector<float> FeatureVector::flatten() const {
    std::vector<float> out;
    out.reserve(kDim);
    for (double v : color_hist) out.push_back(static_cast<float>(v));
    for (double v : hls_moments) out.push_back(static_cast<float>(v));
    for (double v : cmyk_moments) out.push_back(static_cast<float>(v));
    for (double v : lbp_hist) out.push_back(static_cast<float>(v));
    out.push_back(static_cast<float>(n_components));
    out.push_back(static_cast<float>(line_width));
    out.push_back(static_cast<float>(graphic_load));
    out.push_back(static_cast<float>(harris_max));
    for (double v : bg_color) out.push_back(static_cast<float>(v));
    for (double v : fg_color) out.push_back(static_cast<float>(v));
    return out;
}

std::pair<std::array<double, 3>, std::array<double, 3>> foreground_weighted_color(
    const Image& rgb_patch, const std::vector<double>& weight_map) {
    Image rgb = ensure_rgb(rgb_patch);
    const std::size_t n = static_cast<std::size_t>(rgb.width) * rgb.height;
    if (weight_map.size() != n)
        throw Error("DimensionMismatch", "weight map must match the patch");
    std::array<double, 3> fg{}, bg{};
    double fg_sum = 0.0, bg_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double y = weight_map[i];
        if (y < 0.0 || y > 1.0) throw Error("BadValue", "weights must lie in [0,1]");
        double wb = 1.0 - std::sqrt(y);
        fg_sum += y;
        bg_sum += wb;
        for (int c = 0; c < 3; ++c) {
            fg[static_cast<std::size_t>(c)] += y * rgb.pixels[3 * i + static_cast<std::size_t>(c)];
            bg[static_cast<std::size_t>(c)] += wb * rgb.pixels[3 * i + static_cast<std::size_t>(c)];
        }
    }
    if (fg_sum <= 0.0 || bg_sum <= 0.0)
        throw Error("AllZeroWeights", "a weight field sums to zero");
    for (int c = 0; c < 3; ++c) {
        fg[static_cast<std::size_t>(c)] /= fg_sum;
        bg[static_cast<std::size_t>(c)] /= bg_sum;
    }
    return {bg, fg};
}

FeatureVector cv_features(const Image& patch) {
    Image rgb = ensure_rgb(patch);
    Image gray = to_gray(rgb);
    const int w = rgb.width, h = rgb.height;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    if (n == 0) throw Error("BadImage", "empty patch");
    FeatureVector f;

    // Joint 4x4x4 RGB histogram.
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* p = rgb.pixels.data() + 3 * i;
        f.color_hist[static_cast<std::size_t>((p[0] >> 6) * 16 + (p[1] >> 6) * 4 + (p[2] >> 6))] +=
            1.0;
    }
    for (double& v : f.color_hist) v /= static_cast<double>(n);

    // HLS / CMYK channel moments.
    std::vector<double> ch[7];  // H, L, S, C, M, Y, K
    for (auto& v : ch) v.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* p = rgb.pixels.data() + 3 * i;
        double r = p[0] / 255.0, g = p[1] / 255.0, b = p[2] / 255.0;
        rgb_to_hls(r, g, b, ch[0][i], ch[1][i], ch[2][i]);
        double k = 1.0 - std::max({r, g, b});
        ch[6][i] = k;
        double denom = 1.0 - k;
        ch[3][i] = denom > 0.0 ? (1.0 - r - k) / denom : 0.0;
        ch[4][i] = denom > 0.0 ? (1.0 - g - k) / denom : 0.0;
        ch[5][i] = denom > 0.0 ? (1.0 - b - k) / denom : 0.0;
    }
    for (int c = 0; c < 3; ++c) moments3(ch[c], f.hls_moments.data() + 3 * c);
    for (int c = 0; c < 4; ++c) moments3(ch[c + 3], f.cmyk_moments.data() + 3 * c);

    // Rotation-invariant uniform LBP(8,1) over interior pixels.
    static const int kNx[8] = {1, 1, 0, -1, -1, -1, 0, 1};
    static const int kNy[8] = {0, -1, -1, -1, 0, 1, 1, 1};
    long lbp_total = 0;
    for (int y = 1; y + 1 < h; ++y) {
        for (int x = 1; x + 1 < w; ++x) {
            unsigned code = 0;
            std::uint8_t center = gray.px(x, y)[0];
            for (int b = 0; b < 8; ++b)
                if (gray.px(x + kNx[b], y + kNy[b])[0] >= center) code |= 1u << b;
            int transitions = 0;
            for (int b = 0; b < 8; ++b)
                if (((code >> b) & 1u) != ((code >> ((b + 1) % 8)) & 1u)) ++transitions;
            int bin;
            if (transitions <= 2) {
                bin = static_cast<int>(__builtin_popcount(code));
            } else {
                bin = 9;
            }
            f.lbp_hist[static_cast<std::size_t>(bin)] += 1.0;
            ++lbp_total;
        }
    }
    if (lbp_total > 0)
        for (double& v : f.lbp_hist) v /= static_cast<double>(lbp_total);

    // Binarized-ink measures.
    int thr = otsu_threshold(gray);
    std::vector<std::uint8_t> ink(n, 0);
    long area = 0;
    if (thr >= 0) {
        for (std::size_t i = 0; i < n; ++i)
            if (gray.pixels[i] <= thr) {
                ink[i] = 1;
                ++area;
            }
    }
    long perimeter = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::size_t i = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
            if (!ink[i]) continue;
            bool edge = x == 0 || x == w - 1 || y == 0 || y == h - 1;
            if (!edge) {
                edge = !ink[i - 1] || !ink[i + 1] || !ink[i - static_cast<std::size_t>(w)] ||
                       !ink[i + static_cast<std::size_t>(w)];
            }
            if (edge) ++perimeter;
        }
    }
    f.line_width = perimeter > 0 ? 2.0 * static_cast<double>(area) / perimeter : 0.0;

    // Connected components of ink, 8-connected.
    std::vector<std::uint8_t> seen(n, 0);
    int components = 0;
    std::deque<std::size_t> queue;
    for (std::size_t start = 0; start < n; ++start) {
        if (!ink[start] || seen[start]) continue;
        ++components;
        seen[start] = 1;
        queue.push_back(start);
        while (!queue.empty()) {
            std::size_t i = queue.front();
            queue.pop_front();
            int x = static_cast<int>(i % static_cast<std::size_t>(w));
            int y = static_cast<int>(i / static_cast<std::size_t>(w));
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    int xx = x + dx, yy = y + dy;
                    if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
                    std::size_t j = static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx);
                    if (ink[j] && !seen[j]) {
                        seen[j] = 1;
                        queue.push_back(j);
                    }
                }
        }
    }
    f.n_components = components;

    f.graphic_load = patch_graphic_load(gray);

    // Harris response on the normalized gray patch, 3x3 binomial window.
    {
        std::vector<double> ix(n), iy(n);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double gx, gy;
                sobel_at(gray, x, y, gx, gy);
                ix[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = gx / 255.0;
                iy[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = gy / 255.0;
            }
        auto windowed = [&](const std::vector<double>& a, const std::vector<double>& b, int x,
                            int y) {
            static const double kW[3] = {0.25, 0.5, 0.25};
            double s = 0.0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    int xx = std::clamp(x + dx, 0, w - 1);
                    int yy = std::clamp(y + dy, 0, h - 1);
                    std::size_t i = static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx);
                    s += kW[dx + 1] * kW[dy + 1] * a[i] * b[i];
                }
            return s;
        };
        double best = 0.0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double sxx = windowed(ix, ix, x, y);
                double syy = windowed(iy, iy, x, y);
                double sxy = windowed(ix, iy, x, y);
                double r = sxx * syy - sxy * sxy - 0.04 * (sxx + syy) * (sxx + syy);
                best = std::max(best, r);
            }
        f.harris_max = best;
    }

    // Foreground split from the ink indicator; degenerate patches share the mean.
    if (area == 0 || area == static_cast<long>(n)) {
        std::array<double, 3> mean_rgb{};
        for (std::size_t i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c)
                mean_rgb[static_cast<std::size_t>(c)] +=
                    rgb.pixels[3 * i + static_cast<std::size_t>(c)];
        for (int c = 0; c < 3; ++c) mean_rgb[static_cast<std::size_t>(c)] /= static_cast<double>(n);
        f.bg_color = mean_rgb;
        f.fg_color = mean_rgb;
    } else {
        std::vector<double> weights(n);
        for (std::size_t i = 0; i < n; ++i) weights[i] = ink[i] ? 1.0 : 0.0;
        auto [bg, fg] = foreground_weighted_color(rgb, weights);
        f.bg_color = bg;
        f.fg_color = fg;
    }
    return f;
}

// --- mapels ------------------------------------------------------------------

unsigned semantic_mode_set(const std::array<double, kNumClasses>& ratio) {
    unsigned set = 0;
    if (ratio[kBuilt] > 0.9) set |= 1u << 0;
    if (ratio[kNonBuilt] > 0.9) set |= 1u << 1;
    if (ratio[kWater] > 0.9) set |= 1u << 2;
    if (ratio[kRoad] > 0.9) set |= 1u << 3;
    if (ratio[kBuilt] > 0.3 && ratio[kNonBuilt] > 0.3) set |= 1u << 4;
    if (ratio[kWater] > 0.3 && ratio[kNonBuilt] > 0.3) set |= 1u << 5;
    if (ratio[kRoad] > 0.3 && ratio[kNonBuilt] > 0.3) set |= 1u << 6;
    if (ratio[kContours] > 0.04) set |= 1u << 7;
    return set;
}

int lowest_mode(unsigned mode_set) {
    for (int m = 0; m < 8; ++m)
        if (mode_set & (1u << m)) return m + 1;
    return 0;
}

namespace {

// Bilinear sample with clamp-to-edge.
void sample_bilinear(const Image& img, double sx, double sy, std::uint8_t* out) {
    double fx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
    double fy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
    int x0 = static_cast<int>(std::floor(fx));
    int y0 = static_cast<int>(std::floor(fy));
    int x1 = std::min(x0 + 1, img.width - 1);
    int y1 = std::min(y0 + 1, img.height - 1);
    double ax = fx - x0, ay = fy - y0;
    for (int c = 0; c < img.channels; ++c) {
        double v00 = img.px(x0, y0)[c], v10 = img.px(x1, y0)[c];
        double v01 = img.px(x0, y1)[c], v11 = img.px(x1, y1)[c];
        double v = (1 - ay) * ((1 - ax) * v00 + ax * v10) + ay * ((1 - ax) * v01 + ax * v11);
        out[c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
}

Image rotated_crop(const Image& src, int cx, int cy, int size, double angle_deg) {
    Image out;
    out.width = size;
    out.height = size;
    out.channels = src.channels;
    out.pixels.resize(static_cast<std::size_t>(size) * size * src.channels);
    double a = angle_deg * kPi / 180.0;
    double ca = std::cos(a), sa = std::sin(a);
    double half = (size - 1) / 2.0;
    for (int v = 0; v < size; ++v) {
        for (int u = 0; u < size; ++u) {
            double du = u - half, dv = v - half;
            // Output vertical axis follows the detected stroke direction.
            double sx = cx + ca * du + sa * dv;
            double sy = cy - sa * du + ca * dv;
            sample_bilinear(src, sx, sy, out.px(u, v));
        }
    }
    return out;
}

Image plain_crop(const Image& src, int cx, int cy, int size) {
    return rotated_crop(src, cx, cy, size, 0.0);
}

}  // namespace

std::vector<Mapel> extract_mapels(const std::string& map_id, const Image& rgb_in,
                                  const SemanticMask* mask, const MapelParams& params) {
    if (params.size != 49 && params.size != 70 && params.size != 98)
        throw Error("BadValue", "mapel size must be one of 49, 70, 98");
    Image rgb = ensure_rgb(rgb_in);
    if (mask && (mask->width != rgb.width || mask->height != rgb.height))
        throw Error("DimensionMismatch", "mask and image sizes differ");

    Image smoothed = bilateral_smooth(rgb, params.spatial_sigma, params.range_sigma, params.threads);
    Image gray = to_gray(smoothed);
    LoadGrid grid = graphic_load(gray, params.cell_px, params.threads);

    // Background cells: majority-background under the mask, or blank by load.
    std::vector<std::uint8_t> background(grid.values.size(), 0);
    for (int r = 0; r < grid.rows; ++r) {
        for (int c = 0; c < grid.cols; ++c) {
            std::size_t i = static_cast<std::size_t>(r) * grid.cols + static_cast<std::size_t>(c);
            if (grid.at(r, c) < params.blank_threshold) {
                background[i] = 1;
                continue;
            }
            if (!mask) continue;
            int y0 = r * params.cell_px, y1 = std::min(rgb.height, y0 + params.cell_px);
            int x0 = c * params.cell_px, x1 = std::min(rgb.width, x0 + params.cell_px);
            long bg = 0, tot = 0;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) {
                    ++tot;
                    if (mask->at(x, y) == kBackground) ++bg;
                }
            if (tot > 0 && 2 * bg > tot) background[i] = 1;
        }
    }

    std::vector<std::pair<int, int>> positions;
    try {
        positions = sample_mapel_positions(grid, background, params.n_max, params.min_dist_px,
                                           params.buffer_px, params.seed);
    } catch (const Error& e) {
        if (e.code() == "NoForeground") return {};
        throw;
    }
    std::sort(positions.begin(), positions.end(),
              [](const auto& a, const auto& b) {
                  return a.second != b.second ? a.second < b.second : a.first < b.first;
              });

    std::vector<Mapel> out(positions.size());
    parallel_for(positions.size(), params.threads, [&](std::size_t i) {
        auto [x, y] = positions[i];
        Mapel& m = out[i];
        m.map_id = map_id;
        m.idx = static_cast<int>(i);
        m.x = x;
        m.y = y;
        m.size = params.size;

        Image upright_gray = plain_crop(gray, x, y, params.size);
        m.orientation_deg = principal_orientation(upright_gray);
        m.patch = rotated_crop(smoothed, x, y, params.size, m.orientation_deg);
        m.features = cv_features(m.patch);

        if (mask) {
            long counts[kNumClasses] = {0, 0, 0, 0, 0, 0};
            long total = 0;
            int half = params.size / 2;
            for (int yy = y - half; yy <= y + half; ++yy) {
                if (yy < 0 || yy >= mask->height) continue;
                for (int xx = x - half; xx <= x + half; ++xx) {
                    if (xx < 0 || xx >= mask->width) continue;
                    ++counts[mask->at(xx, yy)];
                    ++total;
                }
            }
            if (total > 0) {
                for (int c = 0; c < kNumClasses; ++c)
                    m.semantic_ratio[static_cast<std::size_t>(c)] =
                        static_cast<double>(counts[c]) / static_cast<double>(total);
                m.mode_set = semantic_mode_set(m.semantic_ratio);
                m.semantic_mode = lowest_mode(m.mode_set);
            }
        }
        if (!params.keep_patches) m.patch = Image{};
    });
    return out;
}

}  // namespace cartolab
