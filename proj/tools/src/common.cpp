#include "common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <sstream>

namespace cartolab::cli {

// --- logging -----------------------------------------------------------------

LogLevel log_threshold() {
    static LogLevel level = [] {
        const char* env = std::getenv("CARTOLAB_LOG");
        if (!env) return LogLevel::Warn;
        std::string v(env);
        std::transform(v.begin(), v.end(), v.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (v == "debug") return LogLevel::Debug;
        if (v == "info") return LogLevel::Info;
        if (v == "warn" || v == "warning") return LogLevel::Warn;
        if (v == "error" || v == "quiet") return LogLevel::Err;
        return LogLevel::Warn;
    }();
    return level;
}

void log_line(LogLevel level, const std::string& message) {
    if (level < log_threshold()) return;
    static const char* names[] = {"debug", "info", "warn", "error"};
    std::fprintf(stderr, "[%s] %s\n", names[static_cast<int>(level)], message.c_str());
}

// --- provenance --------------------------------------------------------------

std::string file_digest(const std::string& path) {
    const std::string bytes = read_text_file(path);  // binary-safe: reads whole file
    return hex64(fnv1a(bytes));
}

Provenance make_provenance(const std::string& command, Json parameters,
                           const std::vector<std::pair<std::string, std::string>>& input_files) {
    Provenance p;
    p.command = command;
    p.parameters = std::move(parameters);
    for (const auto& [name, path] : input_files) p.inputs.emplace_back(name, file_digest(path));
    std::sort(p.inputs.begin(), p.inputs.end());
    std::uint64_t h = fnv1a(command);
    h = fnv1a(p.parameters.dump(), h);
    for (const auto& [name, digest] : p.inputs) {
        h = fnv1a(name, h);
        h = fnv1a(digest, h);
    }
    p.digest = hex64(h);
    return p;
}

Json provenance_json(const Provenance& p) {
    Json j;
    j["tool"] = "cartolab";
    j["version"] = "0.1.0";
    j["command"] = p.command;
    j["digest"] = p.digest;
    j["parameters"] = p.parameters;
    Json inputs = Json::object();
    for (const auto& [name, digest] : p.inputs) inputs[name] = digest;
    j["inputs"] = inputs;
    return j;
}

void write_provenance_file(const CmdContext& ctx, const Provenance& p) {
    write_text_file(ctx.out_path(p.command + "_provenance.json"),
                    provenance_json(p).dump(2) + "\n");
}

// --- output writers ----------------------------------------------------------

std::string format_trim(double v, int precision) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[512];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    std::string s(buf);
    if (s.find('.') != std::string::npos) {
        std::size_t last = s.find_last_not_of('0');
        if (s[last] == '.') --last;
        s.erase(last + 1);
    }
    if (s == "-0") s = "0";
    return s;
}

std::string csv_field(const std::string& value) {
    if (value.find_first_of(",\"\n\r") == std::string::npos) return value;
    std::string out = "\"";
    for (char c : value) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

void write_csv(const std::string& path, const Provenance& p, const std::string& header,
               const std::vector<std::string>& rows) {
    std::string out = "# provenance=" + p.digest + "\n" + header + "\n";
    for (const auto& row : rows) {
        out += row;
        out += '\n';
    }
    write_text_file(path, out);
}

void write_json(const std::string& path, Json content, const Provenance& p) {
    content["provenance"] = provenance_json(p);
    write_text_file(path, content.dump(2) + "\n");
}

void write_digest_sidecar(const std::string& path, const Provenance& p) {
    write_text_file(path + ".provenance", "provenance=" + p.digest + "\n");
}

// --- mapel sidecar -----------------------------------------------------------

const char* kSidecarHeader =
    "map_id,idx,x,y,size,orientation_deg,semantic_mode,"
    "ratio_background,ratio_contours,ratio_built,ratio_nonbuilt,ratio_water,ratio_road";

namespace {

// Line reader that skips "#" comment lines and handles trailing \r.
std::vector<std::string> csv_lines(const std::string& path) {
    const std::string text = read_text_file(path);
    std::vector<std::string> lines;
    std::string cur;
    std::istringstream in(text);
    while (std::getline(in, cur)) {
        if (!cur.empty() && cur.back() == '\r') cur.pop_back();
        if (cur.empty() || cur[0] == '#') continue;
        lines.push_back(cur);
    }
    return lines;
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::logic_error&) {
        throw Error("BadValue", what + ": '" + s + "' is not a number");
    }
}

int parse_int(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        int v = std::stoi(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::logic_error&) {
        throw Error("BadValue", what + ": '" + s + "' is not an integer");
    }
}

}  // namespace

std::vector<SidecarRow> read_sidecar(const std::string& path) {
    auto lines = csv_lines(path);
    if (lines.empty() || split_csv_line(lines[0]) != split_csv_line(kSidecarHeader))
        throw Error("MissingColumn", path + ": bad mapel sidecar header");
    std::vector<SidecarRow> rows;
    rows.reserve(lines.size() - 1);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        auto f = split_csv_line(lines[i]);
        if (f.size() != 13) throw Error("BadValue", path + ": sidecar row needs 13 fields");
        SidecarRow r;
        r.map_id = f[0];
        r.idx = parse_int(f[1], "idx");
        r.x = parse_double(f[2], "x");
        r.y = parse_double(f[3], "y");
        r.size = parse_int(f[4], "size");
        r.orientation_deg = parse_double(f[5], "orientation_deg");
        r.semantic_mode = parse_int(f[6], "semantic_mode");
        for (int c = 0; c < kNumClasses; ++c) r.ratio[c] = parse_double(f[7 + c], "ratio");
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<ClusterRow> read_clusters(const std::string& path, int* n_clusters) {
    auto lines = csv_lines(path);
    if (lines.empty() || split_csv_line(lines[0]) !=
                             std::vector<std::string>{"id", "cluster_id", "responsibility"})
        throw Error("MissingColumn", path + ": bad cluster assignment header");
    std::vector<ClusterRow> rows;
    rows.reserve(lines.size() - 1);
    int max_cluster = -1;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        auto f = split_csv_line(lines[i]);
        if (f.size() != 3) throw Error("BadValue", path + ": cluster row needs 3 fields");
        ClusterRow r;
        r.id = f[0];
        r.cluster = parse_int(f[1], "cluster_id");
        r.responsibility = parse_double(f[2], "responsibility");
        if (r.cluster < 0) throw Error("BadValue", path + ": negative cluster id");
        max_cluster = std::max(max_cluster, r.cluster);
        rows.push_back(std::move(r));
    }
    if (n_clusters) *n_clusters = max_cluster + 1;
    return rows;
}

std::pair<std::string, int> split_mapel_id(const std::string& id) {
    std::size_t pos = id.rfind('#');
    if (pos == std::string::npos || pos + 1 >= id.size())
        throw Error("BadValue", "mapel id '" + id + "' lacks a #index suffix");
    return {id.substr(0, pos), parse_int(id.substr(pos + 1), "mapel index")};
}

// --- dataset loading ---------------------------------------------------------

Dataset load_dataset(CmdContext& ctx, bool need_coverage) {
    const std::string meta = ctx.dataset_path("metadata");
    if (meta.empty()) throw Error("BadValue", "dataset.metadata is not set");
    LoadReport report;
    Dataset ds = load_metadata(meta, report);
    // Relative image and mask paths resolve against the catalog location, so
    // a corpus directory can move as one unit.
    const std::filesystem::path base = std::filesystem::path(meta).parent_path();
    for (auto& rec : ds.records) {
        auto resolve = [&](std::string& p) {
            if (!p.empty() && std::filesystem::path(p).is_relative())
                p = (base / p).string();
        };
        resolve(rec.image_path);
        if (rec.mask_path) resolve(*rec.mask_path);
    }
    const std::string cov = ctx.dataset_path("coverage");
    if (!cov.empty())
        load_coverage(cov, ds, report);
    else if (need_coverage)
        log_warn("dataset.coverage not set; coverage-based outputs will be empty");
    for (const auto& e : report.errors)
        log_warn("row " + std::to_string(e.row) + " skipped (" + e.code + "): " + e.message);
    ctx.skipped += report.errors.size();
    return ds;
}

JoinedSigns load_signs(CmdContext& ctx) {
    JoinedSigns out;
    out.rows = read_sidecar(ctx.out_path("mapels.csv"));
    auto assignments = read_clusters(ctx.out_path("clusters.csv"), &out.n_clusters);
    std::map<std::string, int> by_id;
    for (const auto& a : assignments) by_id[a.id] = a.cluster;
    std::vector<SidecarRow> joined;
    joined.reserve(out.rows.size());
    out.clusters.reserve(out.rows.size());
    for (auto& row : out.rows) {
        auto it = by_id.find(row.id());
        if (it == by_id.end()) {
            log_warn("mapel " + row.id() + " has no cluster assignment; dropped");
            ++ctx.skipped;
            continue;
        }
        out.clusters.push_back(it->second);
        joined.push_back(std::move(row));
    }
    out.rows = std::move(joined);
    return out;
}

// --- geometry ----------------------------------------------------------------

double haversine_km(double lat1, double lon1, double lat2, double lon2) {
    constexpr double kEarthRadiusKm = 6371.0;
    constexpr double kDeg = 3.14159265358979323846 / 180.0;
    const double dlat = (lat2 - lat1) * kDeg;
    const double dlon = (lon2 - lon1) * kDeg;
    const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(lat1 * kDeg) * std::cos(lat2 * kDeg) * std::sin(dlon / 2) *
                         std::sin(dlon / 2);
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

}  // namespace cartolab::cli
