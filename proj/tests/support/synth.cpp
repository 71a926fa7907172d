#include "synth.hpp"

#include <cartolab/image.hpp>
#include <cartolab/model.hpp>
#include <cartolab/rng.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace synth {

namespace {

using cartolab::Image;
using cartolab::Rng;
using cartolab::SemanticMask;

void fill_rect(Image& img, int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g,
               std::uint8_t b) {
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    x1 = std::min(x1, img.width);
    y1 = std::min(y1, img.height);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            std::uint8_t* p = img.px(x, y);
            p[0] = r;
            p[1] = g;
            p[2] = b;
        }
}

void fill_disk(Image& img, int cx, int cy, int radius, std::uint8_t r, std::uint8_t g,
               std::uint8_t b) {
    for (int y = std::max(0, cy - radius); y <= std::min(img.height - 1, cy + radius); ++y)
        for (int x = std::max(0, cx - radius); x <= std::min(img.width - 1, cx + radius); ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius) {
                std::uint8_t* p = img.px(x, y);
                p[0] = r;
                p[1] = g;
                p[2] = b;
            }
}

void mask_rect(SemanticMask& m, int x0, int y0, int x1, int y1, std::uint8_t label) {
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    x1 = std::min(x1, m.width);
    y1 = std::min(y1, m.height);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
            m.labels[static_cast<std::size_t>(y) * m.width + x] = label;
}

void mask_disk(SemanticMask& m, int cx, int cy, int radius, std::uint8_t label) {
    for (int y = std::max(0, cy - radius); y <= std::min(m.height - 1, cy + radius); ++y)
        for (int x = std::max(0, cx - radius); x <= std::min(m.width - 1, cx + radius); ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius)
                m.labels[static_cast<std::size_t>(y) * m.width + x] = label;
}

struct CityDef {
    const char* name;
    const char* country;
    double lat, lon;
};
constexpr CityDef kCities[] = {
    {"Amsterdam", "NLD", 52.37, 4.89},  {"Antwerp", "BEL", 51.22, 4.40},
    {"Paris", "FRA", 48.85, 2.35},      {"Geneva", "CHE", 46.20, 6.14},
    {"London", "GBR", 51.51, -0.13},    {"Dublin", "IRL", 53.35, -6.26},
    {"Venice", "ITA", 45.44, 12.34},    {"Rome", "ITA", 41.90, 12.50},
    {"Rotterdam", "NLD", 51.92, 4.48},  {"Lyon", "FRA", 45.76, 4.84},
};
constexpr int kNumCities = 10;

constexpr const char* kCreators[] = {"visscher", "blaeu",  "jansson", "delisle",
                                     "sanson",   "speed",  "homann",  "coronelli"};
constexpr int kNumCreators = 8;

std::string map_id_of(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "m%03d", i);
    return buf;
}

}  // namespace

void write_corpus(const std::string& dir, int n_maps) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");

    const int side = 512;
    std::ofstream meta(fs::path(dir) / "metadata.csv", std::ios::binary);
    meta << "map_id,image_path,mask_path,year,year_lo,year_hi,scale_denominator,lat,lon,city,"
            "country,creators,domestic\n";
    std::ofstream cov(fs::path(dir) / "coverage.csv", std::ios::binary);
    cov << "map_id,lat,lon,area_deg2\n";

    const double scales[] = {10000, 25000, 50000, 100000};
    for (int i = 0; i < n_maps; ++i) {
        const std::string id = map_id_of(i);
        Rng rng(1000 + static_cast<std::uint64_t>(i));

        // Paper with ink: engraved border, dark glyph disks clustered on the
        // semantic regions so windows land inside them, and a road band.
        Image img;
        img.width = side;
        img.height = side;
        img.channels = 3;
        img.pixels.assign(static_cast<std::size_t>(side) * side * 3, 0);
        fill_rect(img, 0, 0, side, side, 238, 232, 218);
        for (int b = 8; b < 12; ++b) {
            fill_rect(img, b, b, side - b, b + 1, 60, 50, 40);
            fill_rect(img, b, side - b - 1, side - b, side - b, 60, 50, 40);
            fill_rect(img, b, b, b + 1, side - b, 60, 50, 40);
            fill_rect(img, side - b - 1, b, side - b, side - b, 60, 50, 40);
        }

        auto jitter = [&](int lo, int hi) {
            return lo + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(hi - lo));
        };

        // Region geometry moves per map so page-composition profiles differ
        // from sheet to sheet. The road band stays put; its ink thickness
        // tracks the catalog scale instead.
        const int built_x0 = 290 + jitter(0, 20), built_y0 = 40 + jitter(0, 20);
        const int built_x1 = 460 + jitter(0, 20), built_y1 = 190 + jitter(0, 20);
        const int water_cx = 100 + jitter(0, 20), water_cy = 345 + jitter(0, 30);
        const int water_r = 78 + jitter(0, 8);
        const int strip_y1 = 170 + jitter(0, 50);
        const int strip_step = 9 + (i % 3);
        const int road_thick = 3 + (i % 4);

        SemanticMask mask;
        mask.width = side;
        mask.height = side;
        mask.labels.assign(static_cast<std::size_t>(side) * side, 3);  // nonbuilt ground
        mask_rect(mask, built_x0, built_y0, built_x1, built_y1, 2);  // built quarter
        mask_disk(mask, water_cx, water_cy, water_r, 4);             // water body
        mask_rect(mask, 200, 240, 290, 480, 5);                      // road band, 90 px
        for (int y = 40; y < strip_y1; y += strip_step)  // contour strip, thin lines
            mask_rect(mask, 40, y, 190, y + 1, 1);
        // Ponds, hamlets and cartouches land anywhere on the sheet, so each
        // ninth of the page sees every class come and go across the corpus.
        std::vector<std::array<int, 3>> ponds, hamlets, cartouches;
        // Decorations stay clear of the road corridor so its windows keep a
        // pure road class; the top ninths stay fair game.
        auto place = [&](int lo, int hi, int extent) {
            while (true) {
                const int x = jitter(lo, hi), y = jitter(lo, hi);
                if (x + extent > 160 && x < 330 && y + extent > 200) continue;
                return std::pair<int, int>{x, y};
            }
        };
        for (int k = 0; k < 3; ++k) {
            const int r = 12 + jitter(0, 8);
            const auto [x, y] = place(60, 440, r);
            ponds.push_back({x, y, r});
            mask_disk(mask, x, y, r, 4);
        }
        for (int k = 0; k < 2; ++k) {
            const int w = 22 + jitter(0, 10);
            const auto [x, y] = place(44, 420, w);
            hamlets.push_back({x, y, w});
            mask_rect(mask, x, y, x + w, y + w, 2);
        }
        // Cartouches visit the page ninths round-robin across the corpus, so
        // interior blank space varies in every ninth; inside the middle
        // column they dodge the road corridor.
        for (int k = 0; k < 2; ++k) {
            const int ninth = (i + 4 * k) % 9;
            const int col = ninth % 3, row = ninth / 3;
            const int gx0[] = {36, 185, 334}, gx1[] = {177, 326, 476};
            int w = 34, x, y;
            if (col == 1 && row == 2) {
                x = 292 + jitter(0, 4);
                y = jitter(334, 440);
            } else if (col == 1 && row == 1) {
                x = jitter(gx0[col], gx1[col] - w);
                y = 185 + jitter(0, 18);
            } else {
                w += jitter(0, 20);
                x = jitter(gx0[col], gx1[col] - w);
                y = jitter(gx0[row], gx1[row] - 36);
            }
            cartouches.push_back({x, y, w});
            mask_rect(mask, x, y, x + w, y + 36, 0);
        }
        mask_rect(mask, 0, 0, side, 32, 0);  // sheet margin, one full grid cell
        mask_rect(mask, 0, side - 32, side, side, 0);
        mask_rect(mask, 0, 0, 32, side, 0);
        mask_rect(mask, side - 32, 0, side, side, 0);

        // A coordinate graticule keeps every interior cell inked, so the
        // glyph clusters below stand out as the local density peaks.
        for (int x = 24; x < side - 14; x += 24)
            fill_rect(img, x, 14, x + 1, side - 14, 150, 135, 110);
        for (int y = 24; y < side - 14; y += 24)
            fill_rect(img, 14, y, side - 14, y + 1, 150, 135, 110);

        for (int k = 0; k < 5; ++k) {  // built-up glyphs
            const int x = jitter(built_x0 + 44, built_x1 - 58);
            const int y = jitter(built_y0 + 44, built_y1 - 58);
            fill_rect(img, x, y, x + 14, y + 14, 70, 45, 35);
        }
        for (int k = 0; k < 2; ++k) {  // glyphs straddling the built boundary
            const int y = jitter(built_y0 + 44, built_y1 - 58);
            fill_rect(img, built_x0 - 7, y, built_x0 + 7, y + 14, 70, 45, 35);
        }
        for (int k = 0; k < 5; ++k) {  // open-country glyphs
            fill_disk(img, jitter(330, 430), jitter(270, 430), 7, 50, 70, 45);
        }
        for (int k = 0; k < 3; ++k) {  // soundings on the water
            fill_disk(img, water_cx + jitter(0, 20) - 10, water_cy + jitter(0, 20) - 10, 6, 40,
                      55, 80);
        }
        for (int k = 0; k < 3; ++k) {  // shoreline marks
            fill_disk(img, water_cx + water_r, water_cy + jitter(0, 60) - 30, 6, 40, 55, 80);
        }
        for (int k = 0; k < 2; ++k) {  // roadside marks
            const int y = 270 + 36 * k + jitter(0, 12);
            fill_rect(img, 193, y, 205, y + 5, 90, 60, 40);
        }
        for (int k = 0; k < 3; ++k) {  // hill hachures in the contour strip
            fill_disk(img, jitter(80, 160), jitter(80, 160), 6, 100, 80, 60);
        }
        for (int y = 370; y < 460; y += 30) {  // dashed center line, width by scale
            const int x = 243 + jitter(0, 5);
            fill_rect(img, x, y, x + road_thick, y + 14, 90, 60, 40);
        }
        for (int y = 40; y < strip_y1; y += strip_step)  // engraved contour lines
            fill_rect(img, 40, y, 190, y + 1, 120, 100, 80);
        for (const auto& q : ponds) {
            fill_disk(img, q[0], q[1], q[2], 185, 200, 210);
            fill_disk(img, q[0], q[1], 2, 60, 80, 110);
        }
        for (const auto& q : hamlets)
            fill_rect(img, q[0] + 4, q[1] + 4, q[0] + q[2] - 4, q[1] + q[2] - 4, 80, 55, 40);
        for (const auto& q : cartouches) {
            fill_rect(img, q[0], q[1], q[0] + q[2], q[1] + 36, 242, 238, 226);
            fill_rect(img, q[0], q[1], q[0] + q[2], q[1] + 2, 70, 55, 40);
            fill_rect(img, q[0], q[1] + 34, q[0] + q[2], q[1] + 36, 70, 55, 40);
            fill_rect(img, q[0], q[1], q[0] + 2, q[1] + 36, 70, 55, 40);
            fill_rect(img, q[0] + q[2] - 2, q[1], q[0] + q[2], q[1] + 36, 70, 55, 40);
        }

        const std::string img_rel = "images/" + id + ".ppm";
        const std::string mask_rel = "masks/" + id + ".pgm";
        cartolab::save_image((fs::path(dir) / img_rel).string(), img);
        cartolab::save_mask((fs::path(dir) / mask_rel).string(), mask);

        // Blocks of four consecutive maps share a publication city, so the
        // city sets of distant creators stay disjoint and pairwise place
        // distances spread instead of collapsing to zero.
        const CityDef& city = kCities[(i / 4) % kNumCities];
        // Jittered spacing keeps publication-year gaps irregular across the
        // corpus so pairwise time predictors stay non-degenerate.
        const int year = 1520 + i * 6 + (i * 37) % 5;
        const bool ranged = (i % 5 == 4);
        const bool no_scale = (i % 7 == 6);
        const bool no_mask = (i == 13);
        const bool no_city = (i == 11);

        meta << id << "," << img_rel << "," << (no_mask ? "" : mask_rel) << ",";
        if (ranged)
            meta << "," << (year - 4) << "," << (year + 4) << ",";
        else
            meta << year << ",,,";
        if (!no_scale) meta << scales[i % 4];
        meta << "," << city.lat << "," << city.lon << ",";
        if (!no_city) meta << city.name;
        meta << "," << city.country << ",";
        // Each creator works an era of five consecutive maps and assists the
        // ring neighbors' eras, giving a connected collaboration graph of
        // diameter four and era-spaced minimum year gaps between non-partners.
        const int era = std::min(i / 5, kNumCreators - 1);
        meta << kCreators[era];
        if (i % 3 == 1) meta << ";" << kCreators[(era + 1) % kNumCreators];
        if (i % 3 == 2) meta << ";" << kCreators[(era + 7) % kNumCreators];
        meta << "," << (i % 4 == 3 ? 0 : 1) << "\n";

        cov << id << "," << city.lat + 0.2 * (i % 5) << "," << city.lon + 0.3 * (i % 4) << ","
            << (i % 3 == 0 ? 0.0 : 1.5 + 0.5 * (i % 4)) << "\n";
        if (i % 4 == 0)
            cov << id << "," << city.lat - 1.0 << "," << city.lon + 1.0 << ",4.0\n";
    }
    meta.close();
    cov.close();

    std::ofstream attr(fs::path(dir) / "city_attributes.csv", std::ios::binary);
    attr << "city,population,continent,language\n"
         << "Amsterdam,224311,Europe,nl\n"
         << "Antwerp,88642,Europe,nl\n"
         << "Paris,1053429,Europe,fr\n"
         << "Geneva,31258,Europe,fr\n"
         << "London,2362751,Europe,en\n"
         << "Dublin,254089,Europe,en\n"
         << "Venice,141377,Europe,it\n"
         << "Rome,175913,Europe,it\n"
         << "Rotterdam,97804,Europe,nl\n"
         << "Lyon,138216,Europe,fr\n";
    attr.close();

    std::ofstream cfg(fs::path(dir) / "config.toml", std::ios::binary);
    cfg << "# pipeline settings sized for the bundled sample corpus\n"
           "seed = 7\n"
           "threads = 2\n"
           "\n"
           "[dataset]\n"
           "metadata = \""
        << (fs::path(dir) / "metadata.csv").generic_string()
        << "\"\n"
           "coverage = \""
        << (fs::path(dir) / "coverage.csv").generic_string()
        << "\"\n"
           "city_attributes = \""
        << (fs::path(dir) / "city_attributes.csv").generic_string()
        << "\"\n"
           "\n"
           "[mapels]\n"
           "n_max = 64\n"
           "min_dist_px = 60.0\n"
           "\n"
           "[cluster]\n"
           "k = 24\n"
           "batch = 4096\n"
           "silhouette_cap = 2000\n"
           "\n"
           "[rupture]\n"
           "min_records = 4\n"
           "bootstrap = 200\n"
           "window_steps = 50\n"
           "stratum_frac = 0.2\n"
           "scale_stratum_frac = 0.25\n"
           "\n"
           "[complexes]\n"
           "presence_min = 2\n"
           "\n"
           "[univocity]\n"
           "min_city_maps = 4\n"
           "bootstrap = 60\n"
           "sample_size = 80\n"
           "\n"
           "[composition]\n"
           "min_roadwidth_maps = 5\n"
           "types_k = 4\n"
           "train_cap = 500\n"
           "\n"
           "[diffusion]\n"
           "min_creator_maps = 2\n"
           "min_city_maps = 4\n"
           "max_pairs = 500\n"
           "\n"
           "[network]\n"
           "bin_widths = [10, 25, 50]\n"
           "\n"
           "[chrono]\n"
           "flow_strata = 3\n";
    cfg.close();
}

}  // namespace synth
