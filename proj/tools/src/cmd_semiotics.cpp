#include "commands.hpp"
#include "render.hpp"

#include <cartolab/composition.hpp>
#include <cartolab/image.hpp>
#include <cartolab/png.hpp>
#include <cartolab/rng.hpp>
#include <cartolab/semiotics.hpp>
#include <cartolab/stats.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

namespace cartolab::cli {

namespace {

// Flattened line-width position inside FeatureVector::flatten(): the four
// histogram blocks plus the component count come first.
constexpr int kLineWidthIndex = 64 + 9 + 12 + 10 + 1;

Json finite_or_null(double v) {
    if (std::isfinite(v)) return Json(v);
    return Json();
}

// Group label(s) of a record under a categorical stratification.
std::vector<std::string> group_keys(const MapRecord& rec, StratVar var) {
    switch (var) {
        case StratVar::Country:
            return rec.pub_country ? std::vector<std::string>{*rec.pub_country}
                                   : std::vector<std::string>{};
        case StratVar::City:
            return rec.pub_city ? std::vector<std::string>{*rec.pub_city}
                                : std::vector<std::string>{};
        case StratVar::Creator: {
            std::vector<std::string> keys = rec.creators;
            std::sort(keys.begin(), keys.end());
            keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
            return keys;
        }
        default:
            return {};
    }
}

}  // namespace

// --- rupture -----------------------------------------------------------------

void cmd_rupture(CmdContext& ctx) {
    Dataset ds = load_dataset(ctx);
    JoinedSigns signs = load_signs(ctx);
    const Json& rc = ctx.cfg.at("rupture");
    const std::string strata_name = rc.at("strata").get<std::string>();
    const StratVar var = parse_strat_var(strata_name);
    const bool modes = ctx.modes_on();

    Json params_json = rc;
    params_json["modes"] = modes;
    params_json["seed"] = ctx.seed();
    Provenance prov = make_provenance("rupture", params_json,
                                      {{"metadata", ctx.dataset_path("metadata")},
                                       {"mapels", ctx.out_path("mapels.csv")},
                                       {"clusters", ctx.out_path("clusters.csv")}});

    if (var == StratVar::Year || var == StratVar::Scale) {
        std::vector<SignRecord> recs;
        recs.reserve(signs.rows.size());
        std::set<std::string> dangling, out_of_scope;
        for (std::size_t i = 0; i < signs.rows.size(); ++i) {
            const SidecarRow& row = signs.rows[i];
            const MapRecord* rec = ds.find(row.map_id);
            if (!rec) {
                dangling.insert(row.map_id);
                continue;
            }
            std::optional<double> sv = strat_value(*rec, var);
            if (!sv) {
                // Absent optional field: out of scope for this axis, not an error.
                out_of_scope.insert(row.map_id);
                continue;
            }
            recs.push_back({signs.clusters[i], *sv, modes ? row.semantic_mode : 0});
        }
        for (const auto& id : dangling) log_warn(id + ": not in the catalog; signs dropped");
        for (const auto& id : out_of_scope)
            log_info(id + ": no " + strata_name + " value; out of scope");
        ctx.skipped += dangling.size();

        const double frac = var == StratVar::Scale ? rc.at("scale_stratum_frac").get<double>()
                                                   : rc.at("stratum_frac").get<double>();
        auto curve = rupture_curve(recs, signs.n_clusters, rc.at("window_steps").get<int>(), frac,
                                   rc.at("overlap_frac").get<double>(),
                                   rc.at("bootstrap").get<int>(), ctx.seed(), modes,
                                   ctx.threads());

        Json points = Json::array();
        for (const auto& pt : curve) {
            Json p;
            p["position"] = pt.position;
            p["rho"] = pt.rho;
            p["ci_lo"] = pt.ci_lo;
            p["ci_hi"] = pt.ci_hi;
            points.push_back(p);
        }
        Json out;
        out["strata"] = strata_name;
        out["modes"] = modes;
        out["signs"] = recs.size();
        out["n_clusters"] = signs.n_clusters;
        out["stratum_frac"] = frac;
        out["points"] = points;
        write_json(ctx.out_path("rupture_curve_" + strata_name + ".json"), out, prov);
    } else {
        struct GroupAcc {
            std::vector<int> clusters;
            std::vector<int> modes;
            std::set<std::string> maps;
        };
        std::map<std::string, GroupAcc> acc;
        std::set<std::string> dangling, out_of_scope;
        for (std::size_t i = 0; i < signs.rows.size(); ++i) {
            const SidecarRow& row = signs.rows[i];
            const MapRecord* rec = ds.find(row.map_id);
            if (!rec) {
                dangling.insert(row.map_id);
                continue;
            }
            const auto keys = group_keys(*rec, var);
            if (keys.empty()) {
                out_of_scope.insert(row.map_id);
                continue;
            }
            for (const auto& key : keys) {
                GroupAcc& g = acc[key];
                g.clusters.push_back(signs.clusters[i]);
                if (modes) g.modes.push_back(row.semantic_mode);
                g.maps.insert(row.map_id);
            }
        }
        for (const auto& id : dangling) log_warn(id + ": not in the catalog; signs dropped");
        for (const auto& id : out_of_scope)
            log_info(id + ": no " + strata_name + " value; out of scope");
        ctx.skipped += dangling.size();

        std::vector<GroupSigns> groups;
        groups.reserve(acc.size());
        for (auto& [name, g] : acc) {
            GroupSigns gs;
            gs.name = name;
            gs.n_records = static_cast<long>(g.maps.size());
            gs.clusters = std::move(g.clusters);
            gs.modes = std::move(g.modes);
            groups.push_back(std::move(gs));
        }
        RuptureMatrix matrix = geographic_rupture_matrix(
            groups, signs.n_clusters, rc.at("min_records").get<long>(), modes);

        std::vector<std::string> rows;
        std::string header = "group";
        for (const auto& name : matrix.names) header += "," + csv_field(name);
        for (std::size_t i = 0; i < matrix.names.size(); ++i) {
            std::string line = csv_field(matrix.names[i]);
            for (std::size_t j = 0; j < matrix.names.size(); ++j)
                line += "," + format_trim(matrix.at(i, j), 6);
            rows.push_back(std::move(line));
        }
        write_csv(ctx.out_path("rupture_matrix_" + strata_name + ".csv"), prov, header, rows);

        const int n = static_cast<int>(matrix.names.size());
        Image heat = render_heatmap(matrix.rho, n, n, 16);
        write_png(ctx.out_path("rupture_matrix_" + strata_name + ".png"), heat,
                  {{"provenance", prov.digest}});
    }
    write_provenance_file(ctx, prov);
}

// --- complexes ---------------------------------------------------------------

void cmd_complexes(CmdContext& ctx) {
    Dataset ds = load_dataset(ctx);
    JoinedSigns signs = load_signs(ctx);
    const Json& cc = ctx.cfg.at("complexes");

    std::map<std::string, MapSigns> by_map;
    std::set<std::string> dropped;
    for (std::size_t i = 0; i < signs.rows.size(); ++i) {
        const SidecarRow& row = signs.rows[i];
        const MapRecord* rec = ds.find(row.map_id);
        if (!rec) {
            dropped.insert(row.map_id);
            continue;
        }
        MapSigns& m = by_map[row.map_id];
        m.map_id = row.map_id;
        m.year = rec->year;
        m.clusters.push_back(signs.clusters[i]);
    }
    for (const auto& id : dropped) log_warn(id + ": not in the catalog; signs dropped");
    ctx.skipped += dropped.size();

    std::vector<MapSigns> maps;
    maps.reserve(by_map.size());
    for (auto& [id, m] : by_map) maps.push_back(std::move(m));

    ComplexResult res = detect_complexes(maps, signs.n_clusters, cc.at("presence_min").get<int>(),
                                         cc.at("p_threshold").get<double>(),
                                         cc.at("use_bh").get<bool>(), ctx.seed(), ctx.threads());

    Json params_json = cc;
    params_json["seed"] = ctx.seed();
    Provenance prov = make_provenance("complexes", params_json,
                                      {{"metadata", ctx.dataset_path("metadata")},
                                       {"mapels", ctx.out_path("mapels.csv")},
                                       {"clusters", ctx.out_path("clusters.csv")}});

    Json edges = Json::array();
    for (const auto& e : res.edges) {
        Json j;
        j["a"] = e.a;
        j["b"] = e.b;
        j["p"] = e.p;
        if (cc.at("use_bh").get<bool>()) j["q"] = e.q;
        j["odds_ratio"] = finite_or_null(e.odds_ratio);
        edges.push_back(j);
    }
    Json complexes = Json::array();
    for (const auto& c : res.complexes) {
        Json j;
        j["complex_id"] = c.complex_id;
        j["clusters"] = c.member_clusters;
        j["support"] = c.support;
        complexes.push_back(j);
    }
    Json out;
    out["maps"] = maps.size();
    out["n_clusters"] = signs.n_clusters;
    out["pairs_tested"] = res.pairs_tested;
    out["modularity"] = res.modularity;
    out["edges"] = edges;
    out["complexes"] = complexes;
    write_json(ctx.out_path("complexes.json"), out, prov);
    write_provenance_file(ctx, prov);
}

// --- univocity ---------------------------------------------------------------

void cmd_univocity(CmdContext& ctx) {
    Dataset ds = load_dataset(ctx);
    JoinedSigns signs = load_signs(ctx);
    const Json& uc = ctx.cfg.at("univocity");

    // Counts per map over (cluster, 0-based mode). Modes 1..7 carry the
    // semantic-symbolic stat; unassigned (0) and contour-mode (8) signs stay
    // out of it.
    std::map<std::string, std::map<std::pair<int, int>, int>> counts;
    for (std::size_t i = 0; i < signs.rows.size(); ++i) {
        const SidecarRow& row = signs.rows[i];
        if (row.semantic_mode < 1 || row.semantic_mode > 7) continue;
        ++counts[row.map_id][{signs.clusters[i], row.semantic_mode - 1}];
    }
    SemanticSymbolicCounts x;
    x.n_clusters = signs.n_clusters;
    x.n_modes = 7;
    for (const auto& [map_id, per] : counts) {
        x.map_ids.push_back(map_id);
        std::vector<std::array<int, 3>> triplets;
        triplets.reserve(per.size());
        for (const auto& [key, count] : per) triplets.push_back({key.first, key.second, count});
        x.per_map.push_back(std::move(triplets));
    }
    if (x.map_ids.empty()) throw Error("EmptySubset", "no mode-tagged signs to pool");

    const int reps = uc.at("bootstrap").get<int>();
    const int sample_size = uc.at("sample_size").get<int>();
    std::vector<std::size_t> all(x.map_ids.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    UnivocityResult global = univocity(x, all, reps, sample_size, ctx.seed());

    auto result_json = [](const UnivocityResult& r) {
        Json j;
        j["upsilon"] = r.upsilon;
        j["boot_mean"] = r.boot_mean;
        j["ci_lo"] = r.ci_lo;
        j["ci_hi"] = r.ci_hi;
        j["clusters_used"] = r.clusters_used;
        return j;
    };

    // Per-city replication over cities with enough sign-bearing maps.
    std::map<std::string, std::vector<std::size_t>> city_subsets;
    for (std::size_t i = 0; i < x.map_ids.size(); ++i) {
        const MapRecord* rec = ds.find(x.map_ids[i]);
        if (rec && rec->pub_city) city_subsets[*rec->pub_city].push_back(i);
    }
    const Rng base(ctx.seed());
    const std::size_t min_city = uc.at("min_city_maps").get<std::size_t>();
    Json per_city = Json::array();
    std::uint64_t city_index = 0;
    for (const auto& [city, subset] : city_subsets) {
        ++city_index;
        if (subset.size() < min_city) continue;
        UnivocityResult r =
            univocity(x, subset, reps, sample_size, base.derive("city", city_index).next_u64());
        Json j = result_json(r);
        j["city"] = city;
        j["maps"] = subset.size();
        per_city.push_back(j);
    }

    Json params_json = uc;
    params_json["seed"] = ctx.seed();
    Provenance prov = make_provenance("univocity", params_json,
                                      {{"metadata", ctx.dataset_path("metadata")},
                                       {"mapels", ctx.out_path("mapels.csv")},
                                       {"clusters", ctx.out_path("clusters.csv")}});
    Json out;
    out["maps"] = x.map_ids.size();
    out["n_clusters"] = x.n_clusters;
    out["global"] = result_json(global);
    out["per_city"] = per_city;
    write_json(ctx.out_path("univocity.json"), out, prov);
    write_provenance_file(ctx, prov);
}

// --- composition -------------------------------------------------------------

void cmd_composition(CmdContext& ctx) {
    Dataset ds = load_dataset(ctx);
    const Json& cc = ctx.cfg.at("composition");
    const double content_threshold = cc.at("content_threshold").get<double>();

    std::vector<QuadrantProfile> profiles;
    std::vector<double> shapes;
    for (const auto& rec : ds.records) {
        if (!rec.mask_path) continue;
        try {
            SemanticMask mask = load_mask(*rec.mask_path);
            QuadrantProfile prof = quadrant_ratios(mask, content_threshold);
            prof.map_id = rec.map_id;
            shapes.push_back(shape_ratio(mask, content_threshold));
            profiles.push_back(std::move(prof));
        } catch (const Error& e) {
            log_warn(rec.map_id + ": " + e.what() + "; skipped");
            ++ctx.skipped;
        }
    }
    if (profiles.size() < 3)
        throw Error("EmptySample", "composition needs at least 3 mask profiles, got " +
                                       std::to_string(profiles.size()));

    Colocation colo = colocation_matrix(profiles);
    QuadrantGraph overall = quadrant_graph(profiles, -1);
    QuadrantGraph water = quadrant_graph(profiles, kWater);

    Json tests = Json::array();
    auto run_test = [&](const QuadrantGraph& graph, const std::string& name,
                        const std::string& class_label) {
        try {
            RelationshipTest t = relationship_test(graph, name);
            Json j;
            j["hypothesis"] = name;
            j["class"] = class_label;
            j["paired"] = t.paired;
            j["n_a"] = t.n_a;
            j["n_b"] = t.n_b;
            j["delta_r"] = finite_or_null(t.delta_r);
            j["t"] = finite_or_null(t.t);
            j["df"] = t.df;
            j["p"] = finite_or_null(t.p);
            tests.push_back(j);
        } catch (const Error& e) {
            log_warn("hypothesis " + name + " (" + class_label + "): " + e.what());
        }
    };
    for (const auto& name : relationship_hypotheses()) run_test(overall, name, "all");
    run_test(water, "bottom_top", "water");

    // Per-map composition features and semantic types.
    std::vector<std::vector<double>> feats;
    feats.reserve(profiles.size());
    EmbeddingTable feat_table;
    feat_table.dim = static_cast<int>(kNumClasses * CompositionFeatures::kComponents);
    for (const auto& prof : profiles) {
        CompositionFeatures f = composition_features(prof, cc.at("epsilon").get<double>());
        feats.emplace_back(f.phi.begin(), f.phi.end());
        feat_table.ids.push_back(prof.map_id);
        for (double v : f.phi) feat_table.vectors.push_back(static_cast<float>(v));
    }
    feat_table.rebuild_index();

    SemanticTypes types = semantic_types(feats, cc.at("types_k").get<int>(),
                                         cc.at("spectral").get<bool>(), ctx.seed(),
                                         ctx.threads(), cc.at("train_cap").get<std::size_t>());

    Json params_json = cc;
    params_json["modes"] = ctx.modes_on();
    params_json["seed"] = ctx.seed();
    std::vector<std::pair<std::string, std::string>> inputs = {
        {"metadata", ctx.dataset_path("metadata")}};
    const bool have_mapels = std::filesystem::exists(ctx.out_path("mapels.csv"));
    if (have_mapels) {
        inputs.emplace_back("mapels", ctx.out_path("mapels.csv"));
        inputs.emplace_back("features", ctx.out_path("mapel_features.emb"));
    }
    Provenance prov = make_provenance("composition", params_json, inputs);

    write_embeddings(ctx.out_path("composition_features.emb"), feat_table);
    write_digest_sidecar(ctx.out_path("composition_features.emb"), prov);

    std::vector<std::string> rows;
    for (std::size_t i = 0; i < profiles.size(); ++i)
        rows.push_back(csv_field(profiles[i].map_id) + "," + std::to_string(types.labels[i]));
    write_csv(ctx.out_path("composition_types.csv"), prov, "map_id,type", rows);

    // Road width against scale: mean stroke width of road-dominant mapels per
    // map, regressed on the catalog scale.
    Json roadwidth;
    if (have_mapels) {
        auto sidecar = read_sidecar(ctx.out_path("mapels.csv"));
        EmbeddingTable mapel_feats = load_embeddings(ctx.out_path("mapel_features.emb"));
        std::map<std::string, std::pair<double, long>> width_acc;  // sum, count
        for (const auto& row : sidecar) {
            if (row.semantic_mode != 4) continue;  // road > 90% of the square
            auto at = mapel_feats.find(row.id());
            if (!at) continue;
            width_acc[row.map_id].first += mapel_feats.vec(*at)[kLineWidthIndex];
            width_acc[row.map_id].second += 1;
        }
        std::vector<std::pair<double, double>> samples;
        for (const auto& [map_id, acc] : width_acc) {
            const MapRecord* rec = ds.find(map_id);
            if (!rec || !rec->scale_denominator || acc.second == 0) continue;
            samples.emplace_back(*rec->scale_denominator,
                                 acc.first / static_cast<double>(acc.second));
        }
        const std::size_t min_maps = cc.at("min_roadwidth_maps").get<std::size_t>();
        if (samples.size() >= min_maps) {
            auto fit_json = [](const RoadwidthFit& f) {
                Json j;
                j["beta0"] = f.beta0;
                j["beta1"] = f.beta1;
                j["r_squared"] = f.r_squared;
                j["mae"] = f.mae;
                j["mae_ci"] = Json::array({f.mae_ci_lo, f.mae_ci_hi});
                j["chance_mae"] = f.chance_mae;
                j["chance_ci"] = Json::array({f.chance_ci_lo, f.chance_ci_hi});
                j["explained_share"] = f.explained_share;
                j["p_permutation"] = f.p_permutation;
                return j;
            };
            const int splits = cc.at("roadwidth_splits").get<int>();
            roadwidth["samples"] = samples.size();
            try {
                roadwidth["scale_from_width"] =
                    fit_json(roadwidth_regression(samples, splits, ctx.seed(), false));
                roadwidth["width_from_scale"] =
                    fit_json(roadwidth_regression(samples, splits, ctx.seed(), true));
            } catch (const Error& e) {
                roadwidth["error"] = std::string(e.code());
                log_warn(std::string("roadwidth fit: ") + e.what());
            }
        } else {
            log_info("roadwidth fit skipped: " + std::to_string(samples.size()) +
                     " usable maps, need " + std::to_string(min_maps));
        }
    }

    auto matrix_json = [](const double* values, int n) {
        Json rows_json = Json::array();
        for (int i = 0; i < n; ++i) {
            Json row = Json::array();
            for (int j = 0; j < n; ++j) row.push_back(finite_or_null(values[i * n + j]));
            rows_json.push_back(row);
        }
        return rows_json;
    };

    Json out;
    out["maps_profiled"] = profiles.size();
    Json shape;
    shape["mean"] = mean(shapes);
    shape["p25"] = percentile(shapes, 25.0);
    shape["median"] = percentile(shapes, 50.0);
    shape["p75"] = percentile(shapes, 75.0);
    out["shape_ratio"] = shape;
    Json colo_json;
    colo_json["n"] = colo.n;
    colo_json["classes"] = std::vector<std::string>(kClassNames.begin(), kClassNames.end());
    colo_json["r"] = matrix_json(colo.r.data(), kNumClasses);
    colo_json["p"] = matrix_json(colo.p.data(), kNumClasses);
    out["colocation"] = colo_json;
    out["tests"] = tests;
    Json types_json;
    types_json["k"] = types.k;
    types_json["silhouette"] = types.silhouette;
    types_json["n_train"] = types.n_train;
    out["types"] = types_json;
    out["roadwidth"] = roadwidth;
    write_json(ctx.out_path("composition.json"), out, prov);

    Image heat = render_heatmap(std::vector<double>(colo.r.begin(), colo.r.end()), kNumClasses,
                                kNumClasses, 24);
    write_png(ctx.out_path("colocation.png"), heat, {{"provenance", prov.digest}});
    write_provenance_file(ctx, prov);
}

}  // namespace cartolab::cli
