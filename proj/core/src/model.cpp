#include "cartolab/model.hpp"
#include "cartolab/rng.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

namespace cartolab {

const std::array<const char*, kNumClasses> kClassNames = {
    "background", "contours", "built", "non_built", "water", "road",
};

std::array<double, kNumClasses> SemanticMask::class_shares() const {
    std::array<double, kNumClasses> shares{};
    for (std::uint8_t v : labels) shares[v] += 1.0;
    const double n = static_cast<double>(labels.size());
    if (n > 0) for (auto& s : shares) s /= n;
    return shares;
}

void EmbeddingTable::rebuild_index() {
    index.clear();
    for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = i;
}

void Dataset::rebuild_index() {
    by_id.clear();
    for (std::size_t i = 0; i < records.size(); ++i) by_id[records[i].map_id] = i;
}

namespace {

// Column lookup that throws a MissingColumn error naming the column.
struct Header {
    std::unordered_map<std::string, std::size_t> cols;
    std::size_t need(const std::string& name) const {
        auto it = cols.find(name);
        if (it == cols.end()) throw Error("MissingColumn", name);
        return it->second;
    }
    std::optional<std::size_t> maybe(const std::string& name) const {
        auto it = cols.find(name);
        if (it == cols.end()) return std::nullopt;
        return it->second;
    }
};

Header parse_header(const std::string& line) {
    Header h;
    auto names = split_csv_line(line);
    for (std::size_t i = 0; i < names.size(); ++i) h.cols[trim(names[i])] = i;
    return h;
}

std::optional<std::string> cell(const std::vector<std::string>& row, std::optional<std::size_t> col) {
    if (!col || *col >= row.size()) return std::nullopt;
    std::string v = trim(row[*col]);
    if (v.empty()) return std::nullopt;
    return v;
}

bool parse_int_strict(const std::string& s, long& out) {
    if (s.empty()) return false;
    std::size_t pos = 0;
    try {
        out = std::stol(s, &pos);
    } catch (...) {
        return false;
    }
    return pos == s.size();
}

bool parse_double_strict(const std::string& s, double& out) {
    if (s.empty()) return false;
    std::size_t pos = 0;
    try {
        out = std::stod(s, &pos);
    } catch (...) {
        return false;
    }
    return pos == s.size() && std::isfinite(out);
}

// Lines split on '\n'; empty trailing line ignored. Leading '#' comment lines
// are dropped so provenance-stamped exports reload cleanly.
std::vector<std::string> read_lines(const std::string& path) {
    std::string text = read_text_file(path);
    std::vector<std::string> lines = split_on(text, '\n');
    while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
    std::size_t keep = 0;
    while (keep < lines.size() && !lines[keep].empty() && lines[keep][0] == '#') ++keep;
    lines.erase(lines.begin(), lines.begin() + static_cast<std::ptrdiff_t>(keep));
    return lines;
}

}  // namespace

Dataset load_metadata(const std::string& path, LoadReport& report) {
    auto lines = read_lines(path);
    if (lines.empty()) throw Error("MissingColumn", "empty metadata file: " + path);
    const Header h = parse_header(lines[0]);
    const std::size_t c_id = h.need("map_id");
    const std::size_t c_img = h.need("image_path");
    const auto c_mask = h.maybe("mask_path");
    const std::size_t c_year = h.need("year");
    const auto c_ylo = h.maybe("year_lo");
    const auto c_yhi = h.maybe("year_hi");
    const auto c_scale = h.maybe("scale_denominator");
    const auto c_lat = h.maybe("lat");
    const auto c_lon = h.maybe("lon");
    const auto c_city = h.maybe("city");
    const auto c_country = h.maybe("country");
    const auto c_creators = h.maybe("creators");
    const auto c_domestic = h.maybe("domestic");

    Dataset ds;
    std::set<std::string> seen;
    for (std::size_t li = 1; li < lines.size(); ++li) {
        if (trim(lines[li]).empty()) continue;
        const std::size_t rownum = li;  // 1-based data row
        auto row = split_csv_line(lines[li]);
        MapRecord rec;
        auto id = cell(row, c_id);
        if (!id) { report.add(rownum, "MissingColumn", "empty map_id"); continue; }
        rec.map_id = *id;
        if (seen.count(rec.map_id)) {
            report.add(rownum, "DuplicateId", rec.map_id);
            continue;
        }
        auto img = cell(row, c_img);
        rec.image_path = img.value_or("");
        rec.mask_path = cell(row, c_mask);

        // year and optional range; range midpoint fills a missing year.
        auto ytxt = cell(row, c_year);
        auto ylo_txt = cell(row, c_ylo);
        auto yhi_txt = cell(row, c_yhi);
        long y = 0, ylo = 0, yhi = 0;
        const bool has_lo = ylo_txt && parse_int_strict(*ylo_txt, ylo);
        const bool has_hi = yhi_txt && parse_int_strict(*yhi_txt, yhi);
        if ((ylo_txt && !has_lo) || (yhi_txt && !has_hi)) {
            report.add(rownum, "BadYear", "unparseable year_lo/year_hi in row for " + rec.map_id);
            continue;
        }
        if (has_lo != has_hi) {
            report.add(rownum, "BadYear", "year_lo/year_hi must come together for " + rec.map_id);
            continue;
        }
        if (has_lo && ylo > yhi) {
            report.add(rownum, "BadYear", "year_lo > year_hi for " + rec.map_id);
            continue;
        }
        if (ytxt) {
            if (!parse_int_strict(*ytxt, y)) {
                report.add(rownum, "BadYear", "unparseable year \"" + *ytxt + "\" for " + rec.map_id);
                continue;
            }
            rec.year = static_cast<int>(y);
            if (has_lo) {
                if (!(ylo <= y && y <= yhi)) {
                    report.add(rownum, "BadYear", "year outside year_lo..year_hi for " + rec.map_id);
                    continue;
                }
                rec.year_range = {static_cast<int>(ylo), static_cast<int>(yhi)};
            }
        } else if (has_lo) {
            rec.year = static_cast<int>((ylo + yhi) / 2);  // midpoint rule
            rec.year_range = {static_cast<int>(ylo), static_cast<int>(yhi)};
        } else {
            report.add(rownum, "BadYear", "no year for " + rec.map_id);
            continue;
        }

        if (auto s = cell(row, c_scale)) {
            double sd = 0;
            if (!parse_double_strict(*s, sd) || sd <= 0) {
                report.add(rownum, "BadValue", "scale_denominator must be > 0 for " + rec.map_id);
                continue;
            }
            rec.scale_denominator = sd;
        }

        auto lat_txt = cell(row, c_lat);
        auto lon_txt = cell(row, c_lon);
        if (lat_txt || lon_txt) {
            double lat = 0, lon = 0;
            if (!lat_txt || !lon_txt || !parse_double_strict(*lat_txt, lat) ||
                !parse_double_strict(*lon_txt, lon) || lat < -90 || lat > 90 ||
                lon < -180 || lon > 180) {
                report.add(rownum, "BadLatLon", "bad lat/lon for " + rec.map_id);
                continue;
            }
            rec.pub_place = {lat, lon};
        }
        rec.pub_city = cell(row, c_city);
        rec.pub_country = cell(row, c_country);
        if (auto cr = cell(row, c_creators)) {
            for (auto& name : split_on(*cr, ';')) {
                std::string t = trim(name);
                if (!t.empty()) rec.creators.push_back(t);
            }
        }
        if (auto d = cell(row, c_domestic)) {
            if (*d == "1" || *d == "true") rec.domestic = true;
            else if (*d == "0" || *d == "false") rec.domestic = false;
            else { report.add(rownum, "BadValue", "domestic must be 0/1/true/false for " + rec.map_id); continue; }
        }
        seen.insert(rec.map_id);
        ds.records.push_back(std::move(rec));
    }
    // Order independence: records sorted by id, not input order.
    std::sort(ds.records.begin(), ds.records.end(),
              [](const MapRecord& a, const MapRecord& b) { return a.map_id < b.map_id; });
    ds.rebuild_index();
    return ds;
}

void load_coverage(const std::string& path, Dataset& dataset, LoadReport& report) {
    auto lines = read_lines(path);
    if (lines.empty()) return;
    const Header h = parse_header(lines[0]);
    const std::size_t c_id = h.need("map_id");
    const std::size_t c_lat = h.need("lat");
    const std::size_t c_lon = h.need("lon");
    const std::size_t c_area = h.need("area_deg2");
    for (std::size_t li = 1; li < lines.size(); ++li) {
        if (trim(lines[li]).empty()) continue;
        auto row = split_csv_line(lines[li]);
        auto id = cell(row, c_id);
        if (!id) { report.add(li, "MissingColumn", "empty map_id"); continue; }
        auto it = dataset.by_id.find(*id);
        if (it == dataset.by_id.end()) {
            report.add(li, "DanglingReference", "coverage row for unknown map " + *id);
            continue;
        }
        CoverageGeom g;
        auto lat = cell(row, c_lat), lon = cell(row, c_lon), area = cell(row, c_area);
        if (!lat || !lon || !area || !parse_double_strict(*lat, g.lat) ||
            !parse_double_strict(*lon, g.lon) || !parse_double_strict(*area, g.area_deg2) ||
            g.lat < -90 || g.lat > 90 || g.lon < -180 || g.lon > 180 || g.area_deg2 < 0) {
            report.add(li, "BadLatLon", "bad coverage row for " + *id);
            continue;
        }
        dataset.records[it->second].coverage.push_back(g);
    }
}

namespace {

// Binary PGM/PPM header: magic, whitespace/comments, width height maxval.
struct PnmHeader {
    std::string magic;
    int width = 0, height = 0, maxval = 0;
    std::size_t data_offset = 0;
};

PnmHeader parse_pnm_header(const std::string& bytes, const std::string& path) {
    PnmHeader h;
    std::size_t i = 0;
    auto skip_ws = [&]() {
        while (i < bytes.size()) {
            if (bytes[i] == '#') {
                while (i < bytes.size() && bytes[i] != '\n') ++i;
            } else if (std::isspace(static_cast<unsigned char>(bytes[i]))) {
                ++i;
            } else {
                break;
            }
        }
    };
    auto token = [&]() {
        skip_ws();
        std::string t;
        while (i < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[i]))) t += bytes[i++];
        return t;
    };
    h.magic = token();
    long w = 0, ht = 0, mv = 0;
    if (!parse_int_strict(token(), w) || !parse_int_strict(token(), ht) || !parse_int_strict(token(), mv))
        throw Error("BadImage", "unparseable PNM header: " + path);
    if (i < bytes.size()) ++i;  // single whitespace after maxval
    h.width = static_cast<int>(w);
    h.height = static_cast<int>(ht);
    h.maxval = static_cast<int>(mv);
    h.data_offset = i;
    if (h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 255)
        throw Error("BadImage", "unsupported PNM geometry/maxval: " + path);
    return h;
}

}  // namespace

SemanticMask load_mask(const std::string& path) {
    const std::string bytes = read_text_file(path);
    const PnmHeader h = parse_pnm_header(bytes, path);
    if (h.magic == "P6") throw Error("NotGrayscale", path);
    if (h.magic != "P5") throw Error("BadImage", "expected binary PGM (P5): " + path);
    const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
    if (bytes.size() - h.data_offset < n) throw Error("BadImage", "truncated PGM payload: " + path);
    SemanticMask m;
    m.width = h.width;
    m.height = h.height;
    m.labels.resize(n);
    std::memcpy(m.labels.data(), bytes.data() + h.data_offset, n);
    for (std::size_t k = 0; k < n; ++k) {
        if (m.labels[k] >= kNumClasses) {
            const int x = static_cast<int>(k % h.width);
            const int y = static_cast<int>(k / h.width);
            throw Error("BadLabelValue", "value " + std::to_string(m.labels[k]) + " at (" +
                                             std::to_string(x) + "," + std::to_string(y) + ") in " + path);
        }
    }
    return m;
}

void save_mask(const std::string& path, const SemanticMask& mask) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("CannotWrite", path);
    out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(mask.labels.data()),
              static_cast<std::streamsize>(mask.labels.size()));
}

EmbeddingTable load_embeddings(const std::string& path) {
    const std::string bytes = read_text_file(path);
    if (bytes.size() < 12 || bytes.compare(0, 4, "EMB1") != 0)
        throw Error("BadMagic", path);
    auto u32 = [&](std::size_t off) {
        std::uint32_t v;
        std::memcpy(&v, bytes.data() + off, 4);  // little-endian host assumed
        return v;
    };
    const std::uint32_t dim = u32(4);
    const std::uint32_t count = u32(8);
    const std::size_t payload = static_cast<std::size_t>(dim) * count * 4;
    if (dim == 0 || bytes.size() < 12 + payload)
        throw Error("CountMismatch", "payload shorter than count*dim in " + path);
    EmbeddingTable t;
    t.dim = static_cast<int>(dim);
    t.vectors.resize(static_cast<std::size_t>(dim) * count);
    std::memcpy(t.vectors.data(), bytes.data() + 12, payload);
    for (float v : t.vectors)
        if (!std::isfinite(v)) throw Error("NonFiniteValue", path);
    std::string idblock = bytes.substr(12 + payload);
    std::vector<std::string> ids = split_on(idblock, '\n');
    while (!ids.empty() && ids.back().empty()) ids.pop_back();
    if (ids.size() != count)
        throw Error("CountMismatch", "id list has " + std::to_string(ids.size()) +
                                         " entries, payload count is " + std::to_string(count));
    t.ids = std::move(ids);
    t.rebuild_index();
    return t;
}

void write_embeddings(const std::string& path, const EmbeddingTable& table) {
    if (table.ids.size() * static_cast<std::size_t>(table.dim) != table.vectors.size())
        throw Error("CountMismatch", "table ids/vectors size mismatch");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("CannotWrite", path);
    out.write("EMB1", 4);
    const std::uint32_t dim = static_cast<std::uint32_t>(table.dim);
    const std::uint32_t count = static_cast<std::uint32_t>(table.ids.size());
    out.write(reinterpret_cast<const char*>(&dim), 4);
    out.write(reinterpret_cast<const char*>(&count), 4);
    out.write(reinterpret_cast<const char*>(table.vectors.data()),
              static_cast<std::streamsize>(table.vectors.size() * 4));
    for (std::size_t i = 0; i < table.ids.size(); ++i) {
        out.write(table.ids[i].data(), static_cast<std::streamsize>(table.ids[i].size()));
        if (i + 1 < table.ids.size()) out.write("\n", 1);
    }
}

std::vector<DetectionSet> load_detections(const std::string& path, LoadReport& report) {
    auto lines = read_lines(path);
    if (lines.empty()) return {};
    const Header h = parse_header(lines[0]);
    const std::size_t c_id = h.need("map_id");
    const std::size_t c_x = h.need("x");
    const std::size_t c_y = h.need("y");
    const std::size_t c_w = h.need("w");
    const std::size_t c_h = h.need("h");
    const std::size_t c_score = h.need("score");
    const auto c_cluster = h.maybe("cluster_id");
    const auto c_class = h.maybe("class");

    std::vector<DetectionSet> sets;
    std::unordered_map<std::string, std::size_t> where;
    for (std::size_t li = 1; li < lines.size(); ++li) {
        if (trim(lines[li]).empty()) continue;
        auto row = split_csv_line(lines[li]);
        auto id = cell(row, c_id);
        if (!id) { report.add(li, "MissingColumn", "empty map_id"); continue; }
        Detection d;
        auto gx = cell(row, c_x), gy = cell(row, c_y), gw = cell(row, c_w), gh = cell(row, c_h),
             gs = cell(row, c_score);
        if (!gx || !gy || !gw || !gh || !gs || !parse_double_strict(*gx, d.x) ||
            !parse_double_strict(*gy, d.y) || !parse_double_strict(*gw, d.w) ||
            !parse_double_strict(*gh, d.h) || !parse_double_strict(*gs, d.score)) {
            report.add(li, "BadValue", "unparseable detection row for " + *id);
            continue;
        }
        if (d.w < 0 || d.h < 0) { report.add(li, "NegativeExtent", "w/h < 0 for " + *id); continue; }
        if (d.score < 0 || d.score > 1) { report.add(li, "ScoreOutOfRange", "score " + *gs + " for " + *id); continue; }
        if (auto cl = cell(row, c_cluster)) {
            long v = 0;
            if (!parse_int_strict(*cl, v)) { report.add(li, "BadValue", "bad cluster_id for " + *id); continue; }
            d.cluster_id = static_cast<int>(v);
        }
        d.class_label = cell(row, c_class);
        auto it = where.find(*id);
        if (it == where.end()) {
            where[*id] = sets.size();
            sets.push_back({*id, {}});
            it = where.find(*id);
        }
        sets[it->second].boxes.push_back(std::move(d));
    }
    return sets;
}

StratVar parse_strat_var(const std::string& name) {
    if (name == "year") return StratVar::Year;
    if (name == "scale") return StratVar::Scale;
    if (name == "country") return StratVar::Country;
    if (name == "city") return StratVar::City;
    if (name == "creator") return StratVar::Creator;
    throw Error("BadValue", "unknown stratification variable: " + name);
}

std::optional<double> strat_value(const MapRecord& rec, StratVar var) {
    switch (var) {
        case StratVar::Year:
            return static_cast<double>(rec.year);
        case StratVar::Scale:
            if (!rec.scale_denominator) return std::nullopt;
            return std::log10(*rec.scale_denominator);
        default:
            return std::nullopt;  // categorical variables have no numeric axis
    }
}

std::vector<std::size_t> subsample_groups(const Dataset& dataset, std::size_t cap, std::uint64_t seed) {
    std::vector<std::size_t> keep;
    if (cap == 0) {
        keep.resize(dataset.records.size());
        for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i;
        return keep;
    }
    // Group key: sorted creators + city. Series published by the same hands in
    // the same place are capped together.
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < dataset.records.size(); ++i) {
        const auto& r = dataset.records[i];
        std::vector<std::string> cr = r.creators;
        std::sort(cr.begin(), cr.end());
        std::string key = join(cr, ";") + "|" + r.pub_city.value_or("");
        groups[key].push_back(i);
    }
    Rng rng(seed);
    for (auto& [key, members] : groups) {
        if (members.size() <= cap) {
            keep.insert(keep.end(), members.begin(), members.end());
        } else {
            Rng sub = rng.derive(key, 0);
            auto pick = sub.sample_without_replacement(members.size(), cap);
            std::sort(pick.begin(), pick.end());
            for (auto p : pick) keep.push_back(members[p]);
        }
    }
    std::sort(keep.begin(), keep.end());
    return keep;
}

}  // namespace cartolab
