#pragma once

#include "cartolab/util.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace cartolab {

struct CoverageGeom {
    double lat = 0.0;
    double lon = 0.0;
    double area_deg2 = 0.0;  // 0 means a point
};

struct MapRecord {
    std::string map_id;
    std::string image_path;
    std::optional<std::string> mask_path;
    int year = 0;  // midpoint of year_range when only a range was given
    std::optional<std::pair<int, int>> year_range;  // inclusive (lo, hi)
    std::optional<double> scale_denominator;        // the S of "1:S", > 0
    std::optional<std::pair<double, double>> pub_place;  // (lat, lon)
    std::optional<std::string> pub_city;
    std::optional<std::string> pub_country;  // ISO-3
    std::vector<std::string> creators;       // canonical creator ids
    std::vector<CoverageGeom> coverage;
    std::optional<bool> domestic;
};

// Pixel classes of the segmentation masks. Index order is fixed so mask files
// are self-describing.
enum SemanticClass : int {
    kBackground = 0,
    kContours = 1,
    kBuilt = 2,
    kNonBuilt = 3,
    kWater = 4,
    kRoad = 5,
};
inline constexpr int kNumClasses = 6;
extern const std::array<const char*, kNumClasses> kClassNames;

struct SemanticMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> labels;  // row-major, values in [0,5]

    std::uint8_t at(int x, int y) const {
        return labels[static_cast<std::size_t>(y) * width + x];
    }
    // Per-class pixel shares over the whole mask; sums to 1.
    std::array<double, kNumClasses> class_shares() const;
};

struct EmbeddingTable {
    int dim = 0;
    std::vector<std::string> ids;
    std::vector<float> vectors;  // ids.size() * dim, row-major
    std::unordered_map<std::string, std::size_t> index;

    std::size_t size() const { return ids.size(); }
    const float* vec(std::size_t i) const { return vectors.data() + i * static_cast<std::size_t>(dim); }
    std::optional<std::size_t> find(const std::string& id) const {
        auto it = index.find(id);
        if (it == index.end()) return std::nullopt;
        return it->second;
    }
    void rebuild_index();
};

struct Detection {
    double x = 0, y = 0, w = 0, h = 0;
    double score = 0;  // in [0,1]
    std::optional<int> cluster_id;
    std::optional<std::string> class_label;
};

struct DetectionSet {
    std::string map_id;
    std::vector<Detection> boxes;
};

struct Dataset {
    std::vector<MapRecord> records;
    std::unordered_map<std::string, std::size_t> by_id;

    const MapRecord* find(const std::string& map_id) const {
        auto it = by_id.find(map_id);
        return it == by_id.end() ? nullptr : &records[it->second];
    }
    void rebuild_index();
};

/// Metadata CSV. Header (exact): map_id,image_path,mask_path,year,year_lo,
// year_hi,scale_denominator,lat,lon,city,country,creators,domestic
// creators is ";"-joined. Bad rows go to the report and are skipped; a bad or
// missing header throws Error("MissingColumn").
Dataset load_metadata(const std::string& path, LoadReport& report);

/// Coverage CSV: map_id,lat,lon,area_deg2 (one row per geometry). Rows whose
// map_id does not resolve are reported.
void load_coverage(const std::string& path, Dataset& dataset, LoadReport& report);

// Mask = binary PGM (P5), 8-bit, single channel; label values must be in
// [0,5]. Throws Error("NotGrayscale") for color input and
// Error("BadLabelValue") naming value and pixel position otherwise.
SemanticMask load_mask(const std::string& path);
void save_mask(const std::string& path, const SemanticMask& mask);

// Embedding container: "EMB1" magic, LE u32 dim, LE u32 count, count*dim f32
// payload, then ids as "\n"-separated UTF-8 (one per row, no trailing "\n"
// required). Errors: BadMagic, CountMismatch, NonFiniteValue.
EmbeddingTable load_embeddings(const std::string& path);
void write_embeddings(const std::string& path, const EmbeddingTable& table);

// Detection CSV: map_id,x,y,w,h,score[,cluster_id][,class]. Boxes are grouped
// per map_id in first-seen order. Errors per row: ScoreOutOfRange,
// NegativeExtent.
std::vector<DetectionSet> load_detections(const std::string& path, LoadReport& report);

// Stratification helpers ------------------------------------------------------

enum class StratVar { Year, Scale, Country, City, Creator };
StratVar parse_strat_var(const std::string& name);  // "year" | "scale" | ...

// Numeric stratification value for continuous strata; year as-is, scale as
// log10(denominator). Returns nullopt when the record lacks the field.
std::optional<double> strat_value(const MapRecord& rec, StratVar var);

// Per-group record cap for overrepresented series; group key = creator-set
// plus city. cap == 0 disables. Deterministic under seed.
std::vector<std::size_t> subsample_groups(const Dataset& dataset, std::size_t cap, std::uint64_t seed);

}  // namespace cartolab
