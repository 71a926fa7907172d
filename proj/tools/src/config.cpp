#include "config.hpp"

#include <cartolab/model.hpp>
#include <cartolab/util.hpp>

#include <cctype>
#include <cmath>
#include <stdexcept>

namespace cartolab::cli {

Json config_defaults() {
    Json c;
    c["dataset"] = {
        {"metadata", ""},         // map catalog CSV, required by most commands
        {"coverage", ""},         // optional coverage geometry CSV
        {"embeddings", ""},       // external EMB file for `cluster` (else mapel features)
        {"name_embeddings", ""},  // creator-name-variant EMB file for `network`
        {"city_attributes", ""},  // optional city,population,continent,language CSV
    };
    c["output"] = "out";
    c["seed"] = 0;
    c["threads"] = 1;
    c["subsample_cap"] = 0;  // per creator-set+city group; 0 disables
    c["modes"] = true;       // semantic-conditional variants where available

    c["mapels"] = {
        {"size", 49},          {"n_max", 256},          {"min_dist_px", 100.0},
        {"buffer_px", 50.0},   {"cell_px", 32},         {"blank_threshold", 0.005},
        {"spatial_sigma", 3.0}, {"range_sigma", 25.0},  {"canny_low", 50.0},
        {"canny_high", 150.0},
    };
    c["cluster"] = {
        {"k", 4096},        {"batch", 131072},     {"max_iters", 200},
        {"patience", 5},    {"tol", 1e-4},         {"refine_gmm", true},
        {"gmm_iters", 30},  {"var_floor", 1e-6},   {"ward_tree", true},
        {"silhouette_cap", 5000},
    };
    c["rupture"] = {
        {"strata", "year"},
        {"window_steps", 200},
        {"stratum_frac", 0.05},        // share of the data per stratum (year)
        {"scale_stratum_frac", 0.10},  // wider strata for the sparser scale axis
        {"overlap_frac", 0.5},
        {"bootstrap", 1000},
        {"min_records", 125},
    };
    c["complexes"] = {
        {"presence_min", 3},
        {"p_threshold", 0.01},
        {"use_bh", false},
    };
    c["univocity"] = {
        {"bootstrap", 120},
        {"sample_size", 200},
        {"min_city_maps", 50},
    };
    c["composition"] = {
        {"content_threshold", 0.01}, {"epsilon", 1e-6},        {"types_k", 8},
        {"spectral", true},          {"train_cap", 2000},      {"roadwidth_splits", 200},
        {"min_roadwidth_maps", 10},
    };
    c["network"] = {
        {"name_threshold", 0.17},
        {"name_knn", 3},
        {"bin_widths", Json::array({5.0, 10.0, 20.0, 25.0, 50.0})},
    };
    c["diffusion"] = {
        {"min_creator_maps", 10}, {"max_pairs", 2000},         {"long_dist_km", 3200.0},
        {"min_city_maps", 200},   {"backward_eliminate", true}, {"p_keep", 0.025},
    };
    c["chrono"] = {
        {"sigma", 2.5},        {"radius", 5},          {"window", 3},
        {"max_offset", 12},    {"grid_cell_deg", 1.0}, {"min_side_deg", 0.5},
        {"active_min", 3},     {"presence_min", 1},    {"flow_strata", 6},
        {"flow_group", "country"},
    };
    c["mosaic"] = {
        {"rows", 0},  // 0 = square grid sized to the cluster count
        {"cols", 0},
        {"cell_px", 56},
    };
    return c;
}

namespace {

[[noreturn]] void bad(const std::string& what) { throw Error("BadValue", what); }

bool same_kind(const Json& def, const Json& user) {
    if (def.is_boolean()) return user.is_boolean();
    if (def.is_string()) return user.is_string();
    if (def.is_number_integer()) return user.is_number_integer();
    if (def.is_number_float()) return user.is_number();
    if (def.is_array()) return user.is_array();
    if (def.is_object()) return user.is_object();
    return false;
}

}  // namespace

void merge_config(Json& defaults, const Json& user, const std::string& path_prefix) {
    if (!user.is_object()) bad("config root must be a table, got " + std::string(user.type_name()));
    for (const auto& [key, value] : user.items()) {
        const std::string path = path_prefix.empty() ? key : path_prefix + "." + key;
        auto it = defaults.find(key);
        if (it == defaults.end()) throw Error("UnknownKey", path);
        Json& def = *it;
        if (def.is_object()) {
            if (!value.is_object()) bad(path + " must be a table");
            merge_config(def, value, path);
            continue;
        }
        if (!same_kind(def, value))
            bad(path + " must be " + std::string(def.type_name()) + ", got " +
                std::string(value.type_name()));
        if (def.is_array()) {
            for (const auto& elem : value)
                if (!elem.is_number()) bad(path + " elements must be numbers");
        }
        def = value;
    }
}

void check_config(const Json& cfg) {
    auto require = [&](bool ok, const std::string& what) {
        if (!ok) bad(what);
    };
    require(cfg["seed"].get<long long>() >= 0, "seed must be >= 0");
    require(cfg["threads"].get<long long>() >= 1, "threads must be >= 1");
    require(cfg["subsample_cap"].get<long long>() >= 0, "subsample_cap must be >= 0");

    parse_strat_var(cfg["rupture"]["strata"].get<std::string>());  // throws BadStrata

    const int size = cfg["mapels"]["size"].get<int>();
    require(size == 49 || size == 70 || size == 98, "mapels.size must be 49, 70 or 98");
    require(cfg["mapels"]["n_max"].get<int>() >= 1, "mapels.n_max must be >= 1");
    require(cfg["mapels"]["cell_px"].get<int>() >= 8, "mapels.cell_px must be >= 8");

    require(cfg["cluster"]["k"].get<int>() >= 1, "cluster.k must be >= 1");
    require(cfg["cluster"]["batch"].get<int>() >= 1, "cluster.batch must be >= 1");

    auto frac01 = [&](const Json& block, const char* name, bool open_top) {
        const double v = block[name].get<double>();
        if (v <= 0.0 || v > 1.0 || (open_top && v == 1.0))
            bad(std::string("rupture.") + name + " must be in (0,1" + (open_top ? ")" : "]"));
    };
    frac01(cfg["rupture"], "stratum_frac", false);
    frac01(cfg["rupture"], "scale_stratum_frac", false);
    const double overlap = cfg["rupture"]["overlap_frac"].get<double>();
    require(overlap >= 0.0 && overlap < 1.0, "rupture.overlap_frac must be in [0,1)");
    require(cfg["rupture"]["window_steps"].get<int>() >= 2, "rupture.window_steps must be >= 2");
    require(cfg["rupture"]["bootstrap"].get<int>() >= 0, "rupture.bootstrap must be >= 0");

    require(cfg["complexes"]["presence_min"].get<int>() >= 1, "complexes.presence_min must be >= 1");
    const double pt = cfg["complexes"]["p_threshold"].get<double>();
    require(pt > 0.0 && pt <= 1.0, "complexes.p_threshold must be in (0,1]");

    require(cfg["univocity"]["sample_size"].get<int>() >= 1, "univocity.sample_size must be >= 1");
    require(cfg["univocity"]["bootstrap"].get<int>() >= 0, "univocity.bootstrap must be >= 0");

    const double ct = cfg["composition"]["content_threshold"].get<double>();
    require(ct >= 0.0 && ct < 1.0, "composition.content_threshold must be in [0,1)");
    require(cfg["composition"]["epsilon"].get<double>() > 0.0, "composition.epsilon must be > 0");
    require(cfg["composition"]["types_k"].get<int>() >= 1, "composition.types_k must be >= 1");

    require(cfg["network"]["name_threshold"].get<double>() >= 0.0,
            "network.name_threshold must be >= 0");
    require(!cfg["network"]["bin_widths"].empty(), "network.bin_widths must not be empty");

    require(cfg["diffusion"]["min_creator_maps"].get<int>() >= 1,
            "diffusion.min_creator_maps must be >= 1");
    const double pk = cfg["diffusion"]["p_keep"].get<double>();
    require(pk > 0.0 && pk <= 1.0, "diffusion.p_keep must be in (0,1]");

    require(cfg["chrono"]["radius"].get<int>() >= 1, "chrono.radius must be >= 1");
    require(cfg["chrono"]["flow_strata"].get<int>() >= 2, "chrono.flow_strata must be >= 2");
    const std::string fg = cfg["chrono"]["flow_group"].get<std::string>();
    require(fg == "country" || fg == "city" || fg == "creator",
            "chrono.flow_group must be country, city or creator");

    require(cfg["mosaic"]["rows"].get<int>() >= 0 && cfg["mosaic"]["cols"].get<int>() >= 0,
            "mosaic.rows/cols must be >= 0");
    require(cfg["mosaic"]["cell_px"].get<int>() >= 8, "mosaic.cell_px must be >= 8");
}

// --- TOML subset -------------------------------------------------------------

namespace {

struct TomlCursor {
    const std::string& text;
    std::size_t pos = 0;
    int line = 1;

    bool eof() const { return pos >= text.size(); }
    char peek() const { return text[pos]; }
    char get() {
        char c = text[pos++];
        if (c == '\n') ++line;
        return c;
    }
    [[noreturn]] void fail(const std::string& what) const {
        bad("config line " + std::to_string(line) + ": " + what);
    }
    void skip_ws() {
        while (!eof() && (peek() == ' ' || peek() == '\t')) ++pos;
    }
    void skip_to_eol() {
        while (!eof() && peek() != '\n') ++pos;
    }
};

std::string parse_bare_key(TomlCursor& cur) {
    std::string key;
    while (!cur.eof()) {
        char c = cur.peek();
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')
            key.push_back(cur.get());
        else
            break;
    }
    if (key.empty()) cur.fail("expected a key");
    return key;
}

std::vector<std::string> parse_dotted_key(TomlCursor& cur) {
    std::vector<std::string> parts{parse_bare_key(cur)};
    while (!cur.eof() && cur.peek() == '.') {
        cur.get();
        parts.push_back(parse_bare_key(cur));
    }
    return parts;
}

std::string parse_basic_string(TomlCursor& cur) {
    cur.get();  // opening quote
    std::string out;
    while (true) {
        if (cur.eof()) cur.fail("unterminated string");
        char c = cur.get();
        if (c == '"') return out;
        if (c == '\n') cur.fail("newline in string");
        if (c != '\\') {
            out.push_back(c);
            continue;
        }
        if (cur.eof()) cur.fail("dangling escape");
        char e = cur.get();
        switch (e) {
            case '"': out.push_back('"'); break;
            case '\\': out.push_back('\\'); break;
            case 'n': out.push_back('\n'); break;
            case 't': out.push_back('\t'); break;
            case 'r': out.push_back('\r'); break;
            default: cur.fail(std::string("unsupported escape \\") + e);
        }
    }
}

Json parse_value(TomlCursor& cur);

Json parse_array(TomlCursor& cur) {
    cur.get();  // '['
    Json arr = Json::array();
    cur.skip_ws();
    if (!cur.eof() && cur.peek() == ']') {
        cur.get();
        return arr;
    }
    while (true) {
        cur.skip_ws();
        arr.push_back(parse_value(cur));
        cur.skip_ws();
        if (cur.eof()) cur.fail("unterminated array");
        char c = cur.get();
        if (c == ']') return arr;
        if (c != ',') cur.fail("expected , or ] in array");
    }
}

Json parse_number_or_bool(TomlCursor& cur) {
    std::string tok;
    while (!cur.eof()) {
        char c = cur.peek();
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '-' || c == '.' ||
            c == '_')
            tok.push_back(cur.get());
        else
            break;
    }
    if (tok == "true") return Json(true);
    if (tok == "false") return Json(false);
    std::string digits;
    for (char c : tok)
        if (c != '_') digits.push_back(c);
    if (digits.empty()) cur.fail("expected a value");
    const bool floaty = digits.find_first_of(".eE") != std::string::npos;
    try {
        std::size_t used = 0;
        if (floaty) {
            double v = std::stod(digits, &used);
            if (used != digits.size()) cur.fail("malformed number '" + tok + "'");
            return Json(v);
        }
        long long v = std::stoll(digits, &used);
        if (used != digits.size()) cur.fail("malformed number '" + tok + "'");
        return Json(v);
    } catch (const std::logic_error&) {
        cur.fail("malformed value '" + tok + "'");
    }
}

Json parse_value(TomlCursor& cur) {
    if (cur.eof()) cur.fail("expected a value");
    char c = cur.peek();
    if (c == '"') return Json(parse_basic_string(cur));
    if (c == '[') return parse_array(cur);
    return parse_number_or_bool(cur);
}

Json* descend(Json& root, const std::vector<std::string>& parts, TomlCursor& cur) {
    Json* node = &root;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        Json& next = (*node)[parts[i]];
        if (next.is_null()) next = Json::object();
        if (!next.is_object()) cur.fail("key " + parts[i] + " is not a table");
        node = &next;
    }
    return node;
}

}  // namespace

Json parse_toml(const std::string& text) {
    Json root = Json::object();
    Json* table = &root;
    TomlCursor cur{text};
    while (!cur.eof()) {
        cur.skip_ws();
        if (cur.eof()) break;
        char c = cur.peek();
        if (c == '\n' || c == '\r') {
            cur.get();
            continue;
        }
        if (c == '#') {
            cur.skip_to_eol();
            continue;
        }
        if (c == '[') {
            cur.get();
            cur.skip_ws();
            auto parts = parse_dotted_key(cur);
            cur.skip_ws();
            if (cur.eof() || cur.get() != ']') cur.fail("expected ] after table name");
            Json* parent = descend(root, parts, cur);
            Json& target = (*parent)[parts.back()];
            if (target.is_null()) target = Json::object();
            if (!target.is_object()) cur.fail("table " + parts.back() + " clashes with a value");
            table = &target;
        } else {
            auto parts = parse_dotted_key(cur);
            cur.skip_ws();
            if (cur.eof() || cur.get() != '=') cur.fail("expected = after key");
            cur.skip_ws();
            Json* parent = descend(*table, parts, cur);
            if (parent->contains(parts.back())) cur.fail("duplicate key " + parts.back());
            (*parent)[parts.back()] = parse_value(cur);
        }
        cur.skip_ws();
        if (!cur.eof() && cur.peek() == '#') cur.skip_to_eol();
        if (!cur.eof() && cur.peek() == '\r') cur.get();
        if (!cur.eof()) {
            if (cur.peek() != '\n') cur.fail("trailing characters after value");
            cur.get();
        }
    }
    return root;
}

Json load_config(const std::string& path) {
    const std::string text = read_text_file(path);
    std::size_t first = text.find_first_not_of(" \t\r\n");
    Json user;
    if (first != std::string::npos && text[first] == '{') {
        try {
            user = Json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            bad(std::string("config JSON: ") + e.what());
        }
    } else {
        user = parse_toml(text);
    }
    Json cfg = config_defaults();
    merge_config(cfg, user, "");
    check_config(cfg);
    return cfg;
}

Json resolved_defaults() {
    Json cfg = config_defaults();
    check_config(cfg);
    return cfg;
}

}  // namespace cartolab::cli
