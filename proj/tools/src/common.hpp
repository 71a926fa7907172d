#pragma once

#include "config.hpp"

#include <cartolab/model.hpp>
#include <cartolab/util.hpp>

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cartolab::cli {

// --- logging (stderr, level from CARTOLAB_LOG) -------------------------------

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Err = 3 };

LogLevel log_threshold();
void log_line(LogLevel level, const std::string& message);
inline void log_debug(const std::string& m) { log_line(LogLevel::Debug, m); }
inline void log_info(const std::string& m) { log_line(LogLevel::Info, m); }
inline void log_warn(const std::string& m) { log_line(LogLevel::Warn, m); }
inline void log_error(const std::string& m) { log_line(LogLevel::Err, m); }

// --- run context -------------------------------------------------------------

struct CmdContext {
    Json cfg;
    std::string out_dir;
    std::size_t skipped = 0;  // record-level skips; > 0 turns exit 0 into 2

    std::uint64_t seed() const { return cfg.at("seed").get<std::uint64_t>(); }
    int threads() const { return cfg.at("threads").get<int>(); }
    bool modes_on() const { return cfg.at("modes").get<bool>(); }
    std::string out_path(const std::string& name) const { return out_dir + "/" + name; }
    std::string dataset_path(const char* key) const {
        return cfg.at("dataset").at(key).get<std::string>();
    }
};

// --- provenance --------------------------------------------------------------

// Digest of everything that determines an output: the command, its resolved
// parameter block and the raw bytes of each input file. No clocks, no host
// state, so reruns on identical inputs rewrite identical bytes.
struct Provenance {
    std::string command;
    Json parameters;
    std::vector<std::pair<std::string, std::string>> inputs;  // (name, hex digest)
    std::string digest;
};

std::string file_digest(const std::string& path);
Provenance make_provenance(const std::string& command, Json parameters,
                           const std::vector<std::pair<std::string, std::string>>& input_files);
Json provenance_json(const Provenance& p);

// Writes <command>_provenance.json into the output directory.
void write_provenance_file(const CmdContext& ctx, const Provenance& p);

// --- deterministic output writers --------------------------------------------

// Fixed-notation double with trailing zeros trimmed ("0.25", "3", "0.000001").
std::string format_trim(double v, int precision = 6);
// CSV field quoting (RFC style) when the value needs it.
std::string csv_field(const std::string& value);

// CSV with a leading "# provenance=<digest>" comment line.
void write_csv(const std::string& path, const Provenance& p, const std::string& header,
               const std::vector<std::string>& rows);
// JSON with an embedded "provenance" object, 2-space indent, trailing newline.
void write_json(const std::string& path, Json content, const Provenance& p);
// Digest sidecar for binary outputs whose format has no comment field.
void write_digest_sidecar(const std::string& path, const Provenance& p);

// --- mapel sidecar -----------------------------------------------------------

struct SidecarRow {
    std::string map_id;
    int idx = 0;
    double x = 0, y = 0;
    int size = 0;
    double orientation_deg = 0;
    int semantic_mode = 0;  // 0 none, 1..8 otherwise
    std::array<double, kNumClasses> ratio{};

    std::string id() const { return map_id + "#" + std::to_string(idx); }
};

extern const char* kSidecarHeader;
std::vector<SidecarRow> read_sidecar(const std::string& path);

struct ClusterRow {
    std::string id;
    int cluster = 0;
    double responsibility = 0;
};
std::vector<ClusterRow> read_clusters(const std::string& path, int* n_clusters);

// Splits "map#idx" on the last '#'.
std::pair<std::string, int> split_mapel_id(const std::string& id);

// --- dataset loading with skip accounting ------------------------------------

Dataset load_dataset(CmdContext& ctx, bool need_coverage = false);

// Sidecar rows joined with their cluster assignment.
struct SignJoin {
    const SidecarRow* row = nullptr;
    int cluster = 0;
};
// Reads mapels.csv + clusters.csv from the output directory and joins them by
// mapel id. Throws FileNotFound when either artifact is missing.
struct JoinedSigns {
    std::vector<SidecarRow> rows;
    std::vector<int> clusters;  // aligned with rows
    int n_clusters = 0;
};
JoinedSigns load_signs(CmdContext& ctx);

// --- geometry ----------------------------------------------------------------

double haversine_km(double lat1, double lon1, double lat2, double lon2);

}  // namespace cartolab::cli
