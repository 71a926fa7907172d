#pragma once

#include <nlohmann/json.hpp>

#include <string>

namespace cartolab::cli {

using Json = nlohmann::ordered_json;

// Full default tree: one top-level block per subcommand plus shared dataset
// paths. Every key a config file may set exists here, so validation is a
// structural walk against this tree.
Json config_defaults();

// Parses TOML (a subset: tables, dotted keys, scalars, one-line arrays) or
// JSON depending on content, validates against the defaults and returns the
// merged tree. Unknown keys raise Error("UnknownKey"), type mismatches and
// out-of-range values Error("BadValue").
Json load_config(const std::string& path);

// The defaults alone, validated (used when no --config is given).
Json resolved_defaults();

// Minimal TOML reader used by load_config; exposed for tests.
Json parse_toml(const std::string& text);

// Merge user values into the default tree, rejecting unknown keys and type
// mismatches. path_prefix seeds error messages ("rupture.strata").
void merge_config(Json& defaults, const Json& user, const std::string& path_prefix);

// Range and enum checks that need the whole tree (seed >= 0, strata name,
// threads >= 1, fractions in (0,1], ...).
void check_config(const Json& cfg);

}  // namespace cartolab::cli
