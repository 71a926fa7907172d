#include "commands.hpp"
#include "render.hpp"

#include <cartolab/cluster.hpp>
#include <cartolab/image.hpp>
#include <cartolab/png.hpp>
#include <cartolab/rng.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

namespace cartolab::cli {

namespace {

std::string opt_str(const std::optional<std::string>& v) { return v ? *v : ""; }

}  // namespace

// --- ingest ------------------------------------------------------------------

void cmd_ingest(CmdContext& ctx) {
    std::vector<std::pair<std::string, std::string>> inputs = {
        {"metadata", ctx.dataset_path("metadata")}};
    if (!ctx.dataset_path("coverage").empty())
        inputs.emplace_back("coverage", ctx.dataset_path("coverage"));

    Dataset ds = load_dataset(ctx, false);
    const std::size_t row_errors = ctx.skipped;
    Provenance prov = make_provenance("ingest", Json::object(), inputs);

    std::vector<std::string> rows;
    rows.reserve(ds.records.size());
    long n_mask = 0, n_scale = 0, n_place = 0, n_city = 0, n_country = 0, n_creators = 0,
         n_domestic = 0, n_coverage = 0;
    int year_min = 0, year_max = 0;
    for (const auto& rec : ds.records) {
        if (rows.empty() || rec.year < year_min) year_min = rec.year;
        if (rows.empty() || rec.year > year_max) year_max = rec.year;
        n_mask += rec.mask_path.has_value();
        n_scale += rec.scale_denominator.has_value();
        n_place += rec.pub_place.has_value();
        n_city += rec.pub_city.has_value();
        n_country += rec.pub_country.has_value();
        n_creators += !rec.creators.empty();
        n_domestic += rec.domestic.has_value();
        n_coverage += static_cast<long>(rec.coverage.size());

        std::vector<std::string> f;
        f.push_back(csv_field(rec.map_id));
        f.push_back(csv_field(rec.image_path));
        f.push_back(csv_field(opt_str(rec.mask_path)));
        f.push_back(std::to_string(rec.year));
        f.push_back(rec.year_range ? std::to_string(rec.year_range->first) : "");
        f.push_back(rec.year_range ? std::to_string(rec.year_range->second) : "");
        f.push_back(rec.scale_denominator ? format_trim(*rec.scale_denominator, 6) : "");
        f.push_back(rec.pub_place ? format_trim(rec.pub_place->first, 6) : "");
        f.push_back(rec.pub_place ? format_trim(rec.pub_place->second, 6) : "");
        f.push_back(csv_field(opt_str(rec.pub_city)));
        f.push_back(csv_field(opt_str(rec.pub_country)));
        f.push_back(csv_field(join(rec.creators, ";")));
        f.push_back(rec.domestic ? (*rec.domestic ? "1" : "0") : "");
        rows.push_back(join(f, ","));
    }
    write_csv(ctx.out_path("records_normalized.csv"), prov,
              "map_id,image_path,mask_path,year,year_lo,year_hi,scale_denominator,"
              "lat,lon,city,country,creators,domestic",
              rows);

    Json summary;
    summary["records"] = ds.records.size();
    summary["row_errors"] = row_errors;
    summary["year_min"] = year_min;
    summary["year_max"] = year_max;
    summary["with_mask"] = n_mask;
    summary["with_scale"] = n_scale;
    summary["with_place"] = n_place;
    summary["with_city"] = n_city;
    summary["with_country"] = n_country;
    summary["with_creators"] = n_creators;
    summary["with_domestic"] = n_domestic;
    summary["coverage_geoms"] = n_coverage;
    write_json(ctx.out_path("ingest.json"), summary, prov);
    write_provenance_file(ctx, prov);
}

// --- mapels ------------------------------------------------------------------

void cmd_mapels(CmdContext& ctx) {
    Dataset ds = load_dataset(ctx, false);

    MapelParams params;
    const Json& mc = ctx.cfg.at("mapels");
    params.size = mc.at("size").get<int>();
    params.n_max = mc.at("n_max").get<int>();
    params.min_dist_px = mc.at("min_dist_px").get<double>();
    params.buffer_px = mc.at("buffer_px").get<double>();
    params.cell_px = mc.at("cell_px").get<int>();
    params.blank_threshold = mc.at("blank_threshold").get<double>();
    params.spatial_sigma = mc.at("spatial_sigma").get<double>();
    params.range_sigma = mc.at("range_sigma").get<double>();
    params.canny_low = mc.at("canny_low").get<double>();
    params.canny_high = mc.at("canny_high").get<double>();
    params.threads = ctx.threads();
    params.keep_patches = false;  // the mosaic recuts crops from source images

    std::vector<std::size_t> selected;
    const auto cap = ctx.cfg.at("subsample_cap").get<std::size_t>();
    if (cap > 0) {
        selected = subsample_groups(ds, cap, ctx.seed());
    } else {
        selected.resize(ds.records.size());
        for (std::size_t i = 0; i < selected.size(); ++i) selected[i] = i;
    }

    const Rng base(ctx.seed());
    std::vector<Mapel> all;
    std::size_t maps_done = 0;
    std::map<int, long> by_mode;
    for (std::size_t idx : selected) {
        const MapRecord& rec = ds.records[idx];
        if (rec.image_path.empty()) {
            log_warn(rec.map_id + ": no image path; skipped");
            ++ctx.skipped;
            continue;
        }
        try {
            Image img = load_image(rec.image_path);
            SemanticMask mask;
            const SemanticMask* mask_ptr = nullptr;
            if (rec.mask_path) {
                mask = load_mask(*rec.mask_path);
                mask_ptr = &mask;
            }
            MapelParams per_map = params;
            // Stable per-map stream: the draw does not depend on which other
            // maps are in the batch.
            per_map.seed = base.derive("mapels", fnv1a(rec.map_id)).next_u64();
            std::vector<Mapel> found = extract_mapels(rec.map_id, img, mask_ptr, per_map);
            for (auto& m : found) ++by_mode[m.semantic_mode];
            all.insert(all.end(), std::make_move_iterator(found.begin()),
                       std::make_move_iterator(found.end()));
            ++maps_done;
        } catch (const Error& e) {
            log_warn(rec.map_id + ": " + e.what() + "; skipped");
            ++ctx.skipped;
        }
    }

    Json params_json = mc;
    params_json["subsample_cap"] = cap;
    params_json["seed"] = ctx.seed();
    Provenance prov = make_provenance("mapels", params_json,
                                      {{"metadata", ctx.dataset_path("metadata")}});

    std::vector<std::string> rows;
    rows.reserve(all.size());
    EmbeddingTable features;
    features.dim = FeatureVector::kDim;
    features.vectors.reserve(all.size() * static_cast<std::size_t>(features.dim));
    for (const auto& m : all) {
        std::vector<std::string> f;
        f.push_back(csv_field(m.map_id));
        f.push_back(std::to_string(m.idx));
        f.push_back(format_trim(m.x, 2));
        f.push_back(format_trim(m.y, 2));
        f.push_back(std::to_string(m.size));
        f.push_back(format_trim(m.orientation_deg, 4));
        f.push_back(std::to_string(m.semantic_mode));
        for (int c = 0; c < kNumClasses; ++c) f.push_back(format_trim(m.semantic_ratio[c], 6));
        rows.push_back(join(f, ","));

        features.ids.push_back(m.map_id + "#" + std::to_string(m.idx));
        for (double v : m.features.flatten()) features.vectors.push_back(static_cast<float>(v));
    }
    features.rebuild_index();

    write_csv(ctx.out_path("mapels.csv"), prov, kSidecarHeader, rows);
    write_embeddings(ctx.out_path("mapel_features.emb"), features);
    write_digest_sidecar(ctx.out_path("mapel_features.emb"), prov);

    Json summary;
    summary["maps"] = maps_done;
    summary["skipped_maps"] = ctx.skipped;
    summary["mapels"] = all.size();
    Json modes = Json::object();
    for (const auto& [mode, count] : by_mode) modes[std::to_string(mode)] = count;
    summary["by_semantic_mode"] = modes;
    write_json(ctx.out_path("mapels.json"), summary, prov);
    write_provenance_file(ctx, prov);
}

// --- cluster -----------------------------------------------------------------

void cmd_cluster(CmdContext& ctx) {
    std::string emb_path = ctx.dataset_path("embeddings");
    if (emb_path.empty()) emb_path = ctx.out_path("mapel_features.emb");
    EmbeddingTable emb = load_embeddings(emb_path);
    if (emb.size() == 0) throw Error("EmptySample", "no vectors in " + emb_path);

    const Json& cc = ctx.cfg.at("cluster");
    KMeansOptions ko;
    ko.k = cc.at("k").get<int>();
    if (static_cast<std::size_t>(ko.k) > emb.size()) {
        log_warn("cluster.k " + std::to_string(ko.k) + " capped to the " +
                 std::to_string(emb.size()) + " available vectors");
        ko.k = static_cast<int>(emb.size());
    }
    ko.batch = cc.at("batch").get<int>();
    ko.max_iters = cc.at("max_iters").get<int>();
    ko.patience = cc.at("patience").get<int>();
    ko.tol = cc.at("tol").get<double>();
    ko.seed = ctx.seed();
    ko.threads = ctx.threads();

    const DataView data = DataView::of(emb);
    KMeansModel km = minibatch_kmeans(data, ko);

    std::vector<int> labels;
    std::vector<float> responsibility;
    std::vector<double> centers;
    double log_likelihood = 0.0;
    const bool refine = cc.at("refine_gmm").get<bool>();
    if (refine) {
        GmmOptions go;
        go.max_iters = cc.at("gmm_iters").get<int>();
        go.var_floor = cc.at("var_floor").get<double>();
        go.threads = ctx.threads();
        GmmModel gmm = gmm_refine(data, km, go);
        labels = gmm_assign(data, gmm, &responsibility, ctx.threads());
        centers = gmm.means;
        log_likelihood = gmm.log_likelihood;
    } else {
        labels = assign_nearest(data, km, ctx.threads());
        responsibility.assign(emb.size(), 1.0f);
        centers = km.centers;
    }

    std::vector<long> exemplars = select_exemplars(data, labels, centers, ko.k);
    const double sil = silhouette(data, labels, cc.at("silhouette_cap").get<std::size_t>(),
                                  ctx.seed(), ctx.threads());

    Json params_json = cc;
    params_json["k_effective"] = ko.k;
    params_json["seed"] = ctx.seed();
    Provenance prov = make_provenance("cluster", params_json, {{"embeddings", emb_path}});

    std::vector<std::string> rows;
    rows.reserve(emb.size());
    for (std::size_t i = 0; i < emb.size(); ++i)
        rows.push_back(csv_field(emb.ids[i]) + "," + std::to_string(labels[i]) + "," +
                       format_trim(responsibility[i], 6));
    write_csv(ctx.out_path("clusters.csv"), prov, "id,cluster_id,responsibility", rows);

    rows.clear();
    for (int c = 0; c < ko.k; ++c) {
        const long e = exemplars[c];
        rows.push_back(std::to_string(c) + "," +
                       (e >= 0 ? csv_field(emb.ids[static_cast<std::size_t>(e)]) : ""));
    }
    write_csv(ctx.out_path("exemplars.csv"), prov, "cluster_id,id", rows);

    if (cc.at("ward_tree").get<bool>() && ko.k >= 2) {
        std::vector<float> cf(centers.size());
        for (std::size_t i = 0; i < centers.size(); ++i) cf[i] = static_cast<float>(centers[i]);
        Dendrogram tree = ward_tree(DataView{cf.data(), static_cast<std::size_t>(ko.k), emb.dim});
        rows.clear();
        for (std::size_t s = 0; s < tree.merges.size(); ++s) {
            const auto& m = tree.merges[s];
            rows.push_back(std::to_string(s) + "," + std::to_string(m.a) + "," +
                           std::to_string(m.b) + "," + format_trim(m.height, 6) + "," +
                           std::to_string(m.size));
        }
        write_csv(ctx.out_path("dendrogram.csv"), prov, "step,a,b,height,size", rows);
    }

    std::vector<long> sizes(static_cast<std::size_t>(ko.k), 0);
    for (int l : labels) ++sizes[static_cast<std::size_t>(l)];

    Json summary;
    summary["vectors"] = emb.size();
    summary["dim"] = emb.dim;
    summary["k"] = ko.k;
    summary["kmeans_iterations"] = km.iterations;
    summary["kmeans_inertia"] = km.inertia;
    summary["refined_gmm"] = refine;
    if (refine) summary["gmm_log_likelihood"] = log_likelihood;
    summary["silhouette"] = sil;
    summary["cluster_sizes"] = sizes;
    write_json(ctx.out_path("cluster_model.json"), summary, prov);
    write_provenance_file(ctx, prov);
}

// --- mosaic ------------------------------------------------------------------

void cmd_mosaic(CmdContext& ctx) {
    Dataset ds = load_dataset(ctx, false);
    auto sidecar = read_sidecar(ctx.out_path("mapels.csv"));
    EmbeddingTable features = load_embeddings(ctx.out_path("mapel_features.emb"));

    // Exemplar rows: cluster_id,id with an empty id for empty clusters.
    auto lines_path = ctx.out_path("exemplars.csv");
    const std::string text = read_text_file(lines_path);
    std::vector<std::string> chosen_ids;
    {
        std::vector<std::string> lines = split_on(text, '\n');
        std::size_t start = 0;
        while (start < lines.size() && (lines[start].empty() || lines[start][0] == '#')) ++start;
        if (start >= lines.size() ||
            split_csv_line(lines[start]) != std::vector<std::string>{"cluster_id", "id"})
            throw Error("MissingColumn", lines_path + ": bad exemplar header");
        for (std::size_t i = start + 1; i < lines.size(); ++i) {
            if (trim(lines[i]).empty()) continue;
            auto f = split_csv_line(lines[i]);
            if (f.size() != 2) throw Error("BadValue", lines_path + ": exemplar row needs 2 fields");
            if (!f[1].empty()) chosen_ids.push_back(f[1]);
        }
    }
    if (chosen_ids.empty()) throw Error("EmptySample", "no exemplars to place");

    std::map<std::string, const SidecarRow*> by_id;
    for (const auto& r : sidecar) by_id[r.id()] = &r;

    const Json& mc = ctx.cfg.at("mosaic");
    int rows_n = mc.at("rows").get<int>();
    int cols_n = mc.at("cols").get<int>();
    if (rows_n == 0 || cols_n == 0) {
        const int side =
            static_cast<int>(std::ceil(std::sqrt(static_cast<double>(chosen_ids.size()))));
        rows_n = cols_n = std::max(1, side);
    }
    if (static_cast<std::size_t>(rows_n) * cols_n < chosen_ids.size())
        throw Error("GridTooSmall", std::to_string(chosen_ids.size()) + " exemplars vs " +
                                        std::to_string(rows_n * cols_n) + " cells");

    // One pass per map so each source image is decoded once.
    std::map<std::string, std::vector<std::size_t>> per_map;
    std::vector<Image> crops(chosen_ids.size());
    std::vector<double> vectors;
    vectors.reserve(chosen_ids.size() * 2);
    for (std::size_t i = 0; i < chosen_ids.size(); ++i) {
        auto it = by_id.find(chosen_ids[i]);
        if (it == by_id.end())
            throw Error("BadValue", "exemplar " + chosen_ids[i] + " missing from mapels.csv");
        per_map[it->second->map_id].push_back(i);
    }
    for (const auto& [map_id, indices] : per_map) {
        const MapRecord* rec = ds.find(map_id);
        if (!rec || rec->image_path.empty())
            throw Error("FileNotFound", "no image path for map " + map_id);
        Image img = ensure_rgb(load_image(rec->image_path));
        for (std::size_t i : indices) {
            const SidecarRow& r = *by_id[chosen_ids[i]];
            const int half = r.size / 2;
            Image crop;
            crop.width = r.size;
            crop.height = r.size;
            crop.channels = 3;
            crop.pixels.assign(static_cast<std::size_t>(r.size) * r.size * 3, 255);
            for (int y = 0; y < r.size; ++y) {
                const int sy = std::clamp(static_cast<int>(r.y) - half + y, 0, img.height - 1);
                for (int x = 0; x < r.size; ++x) {
                    const int sx = std::clamp(static_cast<int>(r.x) - half + x, 0, img.width - 1);
                    const std::uint8_t* s = img.px(sx, sy);
                    std::uint8_t* d = crop.px(x, y);
                    d[0] = s[0];
                    d[1] = s[1];
                    d[2] = s[2];
                }
            }
            crops[i] = std::move(crop);
        }
    }

    // Layout: 2-component projection of the exemplar features, snapped to the
    // grid without collisions.
    std::vector<float> sub;
    sub.reserve(chosen_ids.size() * static_cast<std::size_t>(features.dim));
    for (const auto& id : chosen_ids) {
        auto row = features.find(id);
        if (!row) throw Error("BadValue", "exemplar " + id + " missing from mapel_features.emb");
        const float* v = features.vec(*row);
        sub.insert(sub.end(), v, v + features.dim);
    }
    std::vector<int> cells;
    if (chosen_ids.size() == 1) {
        cells = {0};
    } else {
        PcaResult pca = pca_layout(DataView{sub.data(), chosen_ids.size(), features.dim}, 2,
                                   ctx.threads());
        cells = grid_snap(pca.coords, rows_n, cols_n);
    }

    Json params_json = mc;
    params_json["rows_effective"] = rows_n;
    params_json["cols_effective"] = cols_n;
    Provenance prov = make_provenance(
        "mosaic", params_json,
        {{"metadata", ctx.dataset_path("metadata")},
         {"mapels", ctx.out_path("mapels.csv")},
         {"features", ctx.out_path("mapel_features.emb")},
         {"exemplars", ctx.out_path("exemplars.csv")}});

    Image board = compose_mosaic(crops, cells, rows_n, cols_n, mc.at("cell_px").get<int>());
    write_png(ctx.out_path("mosaic.png"), board, {{"provenance", prov.digest}});

    Json summary;
    summary["exemplars"] = chosen_ids.size();
    summary["rows"] = rows_n;
    summary["cols"] = cols_n;
    summary["cell_px"] = mc.at("cell_px").get<int>();
    write_json(ctx.out_path("mosaic.json"), summary, prov);
    write_provenance_file(ctx, prov);
}

// --- report ------------------------------------------------------------------

void cmd_report(CmdContext& ctx) {
    static const char* kAnalysisFiles[] = {
        "ingest",     "mapels",       "cluster_model",      "rupture_curve_year",
        "rupture_curve_scale", "complexes",    "univocity",          "composition",
        "network",    "diffusion_creators", "diffusion_cities", "chrono",
        "mosaic",
    };
    Json analyses = Json::object();
    std::vector<std::pair<std::string, std::string>> inputs;
    for (const char* name : kAnalysisFiles) {
        const std::string path = ctx.out_path(std::string(name) + ".json");
        if (!std::filesystem::exists(path)) continue;
        try {
            analyses[name] = Json::parse(read_text_file(path));
        } catch (const nlohmann::json::parse_error& e) {
            throw Error("BadValue", path + ": " + e.what());
        }
        inputs.emplace_back(name, path);
    }
    Provenance prov = make_provenance("report", Json::object(), inputs);
    Json out;
    out["analyses"] = analyses;
    write_json(ctx.out_path("report.json"), out, prov);
    write_provenance_file(ctx, prov);
}

}  // namespace cartolab::cli
