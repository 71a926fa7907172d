#include "commands.hpp"
#include "render.hpp"

#include <cartolab/graph.hpp>
#include <cartolab/png.hpp>
#include <cartolab/rng.hpp>
#include <cartolab/semiotics.hpp>
#include <cartolab/stats.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <queue>
#include <set>
#include <sstream>

namespace cartolab::cli {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Json finite_or_null(double v) {
    if (std::isfinite(v)) return Json(v);
    return Json();
}

std::vector<std::vector<std::pair<int, double>>> adjacency(const Graph& g) {
    std::vector<std::vector<std::pair<int, double>>> adj(static_cast<std::size_t>(g.n));
    for (const auto& e : g.edges) {
        if (e.u == e.v) continue;
        adj[static_cast<std::size_t>(e.u)].emplace_back(e.v, e.w);
        adj[static_cast<std::size_t>(e.v)].emplace_back(e.u, e.w);
    }
    return adj;
}

// Unweighted hop counts from src; -1 where unreachable.
std::vector<int> bfs_hops(const std::vector<std::vector<std::pair<int, double>>>& adj, int src) {
    std::vector<int> hops(adj.size(), -1);
    std::queue<int> queue;
    hops[static_cast<std::size_t>(src)] = 0;
    queue.push(src);
    while (!queue.empty()) {
        int u = queue.front();
        queue.pop();
        for (const auto& [v, w] : adj[static_cast<std::size_t>(u)]) {
            if (hops[static_cast<std::size_t>(v)] >= 0) continue;
            hops[static_cast<std::size_t>(v)] = hops[static_cast<std::size_t>(u)] + 1;
            queue.push(v);
        }
    }
    return hops;
}

// Shortest paths with edge length 1/weight, so heavy collaborations are
// short; +inf where unreachable.
std::vector<double> dijkstra_inverse_weight(
    const std::vector<std::vector<std::pair<int, double>>>& adj, int src) {
    std::vector<double> dist(adj.size(), std::numeric_limits<double>::infinity());
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    dist[static_cast<std::size_t>(src)] = 0.0;
    heap.push({0.0, src});
    while (!heap.empty()) {
        auto [d, u] = heap.top();
        heap.pop();
        if (d > dist[static_cast<std::size_t>(u)]) continue;
        for (const auto& [v, w] : adj[static_cast<std::size_t>(u)]) {
            const double nd = d + 1.0 / std::max(w, 1e-12);
            if (nd < dist[static_cast<std::size_t>(v)]) {
                dist[static_cast<std::size_t>(v)] = nd;
                heap.push({nd, v});
            }
        }
    }
    return dist;
}

// Smallest |a - b| over two sorted year lists (0 when a year is shared).
int min_year_gap(const std::vector<int>& a, const std::vector<int>& b) {
    std::size_t i = 0, j = 0;
    int best = std::numeric_limits<int>::max();
    while (i < a.size() && j < b.size()) {
        best = std::min(best, std::abs(a[i] - b[j]));
        if (a[i] < b[j]) ++i;
        else ++j;
    }
    return best;
}

// Mean absolute difference between total-normalized sign distributions,
// averaged over the semantic modes active on either side. The same pipeline
// as the rupture coefficient with the saturation normalization swapped for
// plain relative frequencies, which stays stable on small samples.
double semiotic_delta(const std::map<std::pair<int, int>, long>& a,
                      const std::map<std::pair<int, int>, long>& b, int n_clusters,
                      bool use_modes) {
    const int mode_lo = use_modes ? 1 : 0;
    const int mode_hi = use_modes ? 7 : 0;
    double sum = 0.0;
    int active = 0;
    for (int mode = mode_lo; mode <= mode_hi; ++mode) {
        double tot_a = 0, tot_b = 0;
        for (const auto& [key, count] : a)
            if (key.first == mode) tot_a += static_cast<double>(count);
        for (const auto& [key, count] : b)
            if (key.first == mode) tot_b += static_cast<double>(count);
        if (tot_a <= 0 && tot_b <= 0) continue;
        double acc = 0.0;
        for (int cl = 0; cl < n_clusters; ++cl) {
            auto ia = a.find({mode, cl});
            auto ib = b.find({mode, cl});
            const double fa = (ia != a.end() && tot_a > 0)
                                  ? static_cast<double>(ia->second) / tot_a : 0.0;
            const double fb = (ib != b.end() && tot_b > 0)
                                  ? static_cast<double>(ib->second) / tot_b : 0.0;
            acc += std::abs(fa - fb);
        }
        sum += acc / static_cast<double>(n_clusters);
        ++active;
    }
    return active > 0 ? sum / active : 0.0;
}

Json regression_json(const RegressionResult& res) {
    Json predictors = Json::array();
    for (const auto& p : res.predictors) {
        Json j;
        j["name"] = p.name;
        j["beta"] = finite_or_null(p.beta);
        j["se"] = finite_or_null(p.se);
        j["t"] = finite_or_null(p.t);
        j["p"] = finite_or_null(p.p);
        j["sum_sq"] = finite_or_null(p.type2_ss);
        j["dropped"] = p.dropped;
        predictors.push_back(j);
    }
    Json out;
    out["predictors"] = predictors;
    out["intercept"] = res.intercept;
    out["intercept_se"] = res.intercept_se;
    out["residual_ss"] = res.residual_ss;
    out["residual_df"] = res.residual_df;
    if (res.fixed_effects_df > 0) {
        Json fe;
        fe["sum_sq"] = res.fixed_effects_ss;
        fe["df"] = res.fixed_effects_df;
        fe["dummies_dropped"] = res.fe_dummies_dropped;
        out["fixed_effects"] = fe;
    }
    out["total_ss"] = res.total_ss;
    out["r_squared"] = res.r_squared;
    out["variance_clamped"] = res.variance_clamped;
    return out;
}

// Drops zero-variance predictor columns (they cannot enter an intercepted
// design) and reports their names.
void drop_constant_predictors(DyadicDesign& design, std::vector<std::string>& removed) {
    for (std::size_t p = design.predictors.size(); p-- > 0;) {
        const auto& col = design.predictors[p];
        const bool constant =
            std::all_of(col.begin(), col.end(), [&](double v) { return v == col.front(); });
        if (constant) {
            removed.push_back(design.predictor_names[p]);
            design.predictors.erase(design.predictors.begin() + static_cast<std::ptrdiff_t>(p));
            design.predictor_names.erase(design.predictor_names.begin() +
                                         static_cast<std::ptrdiff_t>(p));
        }
    }
    std::reverse(removed.begin(), removed.end());
}

void min_max_scale(std::vector<double>& col) {
    const auto [lo_it, hi_it] = std::minmax_element(col.begin(), col.end());
    const double lo = *lo_it, hi = *hi_it;
    if (hi > lo)
        for (double& v : col) v = (v - lo) / (hi - lo);
}

}  // namespace

// --- network -----------------------------------------------------------------

void cmd_network(CmdContext& ctx) {
    Dataset ds = load_dataset(ctx);
    SocialGraph sg = build_social_graph(ds);
    if (sg.graph.n == 0) throw Error("EmptySample", "no creators in the catalog");

    const Json& nc = ctx.cfg.at("network");
    std::vector<int> community = louvain(sg.graph, ctx.seed());
    const double q = modularity(sg.graph, community);

    std::vector<double> widths;
    for (const auto& w : nc.at("bin_widths")) widths.push_back(w.get<double>());
    SweepResult sweep = temporal_modularity_sweep(sg.graph, sg.mean_year, widths);

    Json params_json = nc;
    params_json["seed"] = ctx.seed();
    std::vector<std::pair<std::string, std::string>> inputs = {
        {"metadata", ctx.dataset_path("metadata")}};
    const std::string name_emb_path = ctx.dataset_path("name_embeddings");
    if (!name_emb_path.empty()) inputs.emplace_back("name_embeddings", name_emb_path);
    Provenance prov = make_provenance("network", params_json, inputs);

    // Edge list sorted by endpoint names for stable bytes.
    std::vector<std::string> rows;
    {
        std::vector<std::pair<std::pair<std::string, std::string>, double>> edges;
        for (const auto& e : sg.graph.edges) {
            std::string a = sg.graph.node_ids[static_cast<std::size_t>(e.u)];
            std::string b = sg.graph.node_ids[static_cast<std::size_t>(e.v)];
            if (b < a) std::swap(a, b);
            edges.push_back({{a, b}, e.w});
        }
        std::sort(edges.begin(), edges.end());
        for (const auto& [pair, w] : edges)
            rows.push_back(csv_field(pair.first) + "," + csv_field(pair.second) + "," +
                           format_trim(w, 6));
    }
    write_csv(ctx.out_path("social_graph_edges.csv"), prov, "src,dst,weight", rows);

    rows.clear();
    {
        std::vector<std::size_t> order(static_cast<std::size_t>(sg.graph.n));
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return sg.graph.node_ids[a] < sg.graph.node_ids[b];
        });
        for (std::size_t i : order) {
            rows.push_back(csv_field(sg.graph.node_ids[i]) + "," +
                           std::to_string(sg.publication_count[i]) + "," +
                           format_trim(sg.mean_year[i], 2) + "," + csv_field(sg.main_city[i]) +
                           "," + csv_field(sg.main_country[i]) + "," +
                           std::to_string(community[i]));
        }
    }
    write_csv(ctx.out_path("social_graph_nodes.csv"), prov,
              "creator,publications,mean_year,main_city,main_country,community", rows);

    Json name_norm;
    if (!name_emb_path.empty()) {
        EmbeddingTable variants = load_embeddings(name_emb_path);
        std::map<std::string, long> mentions;
        for (const auto& rec : ds.records)
            for (const auto& c : rec.creators) ++mentions[c];
        std::vector<long> counts;
        counts.reserve(variants.size());
        for (const auto& id : variants.ids) {
            auto it = mentions.find(id);
            counts.push_back(it == mentions.end() ? 0 : it->second);
        }
        NameMap nm = normalize_names(variants, counts, nc.at("name_threshold").get<double>(),
                                     nc.at("name_knn").get<int>(), ctx.threads());
        rows.clear();
        std::map<std::string, std::string> sorted(nm.canonical.begin(), nm.canonical.end());
        for (const auto& [variant, canonical] : sorted)
            rows.push_back(csv_field(variant) + "," + csv_field(canonical));
        write_csv(ctx.out_path("canonical_names.csv"), prov, "variant,canonical", rows);
        name_norm["variants"] = variants.size();
        name_norm["components"] = nm.n_components;
    }

    Json sweep_json;
    {
        Json points = Json::array();
        for (const auto& pt : sweep.points) {
            Json j;
            j["width"] = pt.width;
            j["q"] = pt.q;
            j["n_bins"] = pt.n_bins;
            points.push_back(j);
        }
        sweep_json["points"] = points;
        sweep_json["best_width"] = sweep.best_width;
        sweep_json["best_q"] = sweep.best_q;
    }

    Json out;
    out["creators"] = sg.graph.n;
    out["edges"] = sg.graph.edges.size();
    out["modularity"] = q;
    out["communities"] = *std::max_element(community.begin(), community.end()) + 1;
    out["temporal_sweep"] = sweep_json;
    out["name_normalization"] = name_norm;
    write_json(ctx.out_path("network.json"), out, prov);
    write_provenance_file(ctx, prov);
}

// --- diffusion ---------------------------------------------------------------

namespace {

struct CreatorInfo {
    long n_maps = 0;
    std::vector<int> years;  // sorted, one entry per map
    double mean_year = kNaN;
    std::vector<std::pair<double, double>> places;  // distinct publication places
    double mean_lat = kNaN, mean_lon = kNaN;
    bool has_place = false;
    std::map<std::pair<int, int>, long> dist;  // (mode, cluster) -> count
    long n_signs = 0;
    int node = -1;
};

struct CityAttr {
    double population = kNaN;
    std::string continent;
    std::string language;
};

std::map<std::string, CityAttr> load_city_attributes(const std::string& path) {
    std::map<std::string, CityAttr> attrs;
    const std::string text = read_text_file(path);
    std::istringstream in(text);
    std::string line;
    bool header_done = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto f = split_csv_line(line);
        if (!header_done) {
            if (f != std::vector<std::string>{"city", "population", "continent", "language"})
                throw Error("MissingColumn", path + ": expected city,population,continent,language");
            header_done = true;
            continue;
        }
        if (f.size() != 4) {
            log_warn(path + ": malformed row skipped");
            continue;
        }
        CityAttr a;
        if (!f[1].empty()) {
            try {
                a.population = std::stod(f[1]);
            } catch (const std::logic_error&) {
                log_warn(path + ": bad population for " + f[0]);
            }
        }
        a.continent = f[2];
        a.language = f[3];
        attrs[f[0]] = a;
    }
    return attrs;
}

}  // namespace

void cmd_diffusion(CmdContext& ctx) {
    Dataset ds = load_dataset(ctx);
    JoinedSigns signs = load_signs(ctx);
    const Json& dc = ctx.cfg.at("diffusion");
    const bool modes = ctx.modes_on();

    Json params_json = dc;
    params_json["modes"] = modes;
    params_json["seed"] = ctx.seed();
    std::vector<std::pair<std::string, std::string>> inputs = {
        {"metadata", ctx.dataset_path("metadata")},
        {"mapels", ctx.out_path("mapels.csv")},
        {"clusters", ctx.out_path("clusters.csv")}};
    const std::string attr_path = ctx.dataset_path("city_attributes");
    if (!attr_path.empty()) inputs.emplace_back("city_attributes", attr_path);
    Provenance prov = make_provenance("diffusion", params_json, inputs);

    RegressionOptions opts;
    opts.cluster_robust = true;
    opts.backward_eliminate = dc.at("backward_eliminate").get<bool>();
    opts.p_keep = dc.at("p_keep").get<double>();

    // ---- creator pairs ------------------------------------------------------
    std::map<std::string, CreatorInfo> creators;
    for (const auto& rec : ds.records) {
        std::vector<std::string> names = rec.creators;
        std::sort(names.begin(), names.end());
        names.erase(std::unique(names.begin(), names.end()), names.end());
        for (const auto& name : names) {
            CreatorInfo& c = creators[name];
            ++c.n_maps;
            c.years.push_back(rec.year);
            if (rec.pub_place) c.places.push_back(*rec.pub_place);
        }
    }
    for (auto& [name, c] : creators) {
        std::sort(c.years.begin(), c.years.end());
        double sum = 0;
        for (int y : c.years) sum += y;
        c.mean_year = sum / static_cast<double>(c.years.size());
        if (!c.places.empty()) {
            double lat = 0, lon = 0;
            for (const auto& [la, lo] : c.places) {
                lat += la;
                lon += lo;
            }
            c.mean_lat = lat / static_cast<double>(c.places.size());
            c.mean_lon = lon / static_cast<double>(c.places.size());
            c.has_place = true;
            std::sort(c.places.begin(), c.places.end());
            c.places.erase(std::unique(c.places.begin(), c.places.end()), c.places.end());
        }
    }

    // Sign distributions per creator; a map's signs count for all its makers.
    for (std::size_t i = 0; i < signs.rows.size(); ++i) {
        const SidecarRow& row = signs.rows[i];
        const MapRecord* rec = ds.find(row.map_id);
        if (!rec) continue;
        int mode = 0;
        if (modes) {
            if (row.semantic_mode < 1 || row.semantic_mode > 7) continue;
            mode = row.semantic_mode;
        }
        for (const auto& name : rec->creators) {
            auto it = creators.find(name);
            if (it == creators.end()) continue;
            ++it->second.dist[{mode, signs.clusters[i]}];
            ++it->second.n_signs;
        }
    }

    SocialGraph sg = build_social_graph(ds);
    std::map<std::string, int> node_of;
    for (int i = 0; i < sg.graph.n; ++i)
        node_of[sg.graph.node_ids[static_cast<std::size_t>(i)]] = i;
    for (auto& [name, c] : creators) {
        auto it = node_of.find(name);
        if (it != node_of.end()) c.node = it->second;
    }
    const auto adj = adjacency(sg.graph);
    std::set<std::pair<int, int>> direct_edges;
    for (const auto& e : sg.graph.edges)
        direct_edges.insert({std::min(e.u, e.v), std::max(e.u, e.v)});

    const long min_maps = dc.at("min_creator_maps").get<long>();
    std::vector<std::string> eligible;
    for (const auto& [name, c] : creators)
        if (c.n_maps >= min_maps && c.n_signs > 0 && c.node >= 0) eligible.push_back(name);

    Json creators_out;
    creators_out["eligible_creators"] = eligible.size();
    if (eligible.size() < 3) {
        creators_out["skipped"] = "needs at least 3 eligible creators";
        log_warn("creator diffusion model skipped: " +
                 std::to_string(eligible.size()) + " eligible creators");
    } else {
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (std::size_t i = 0; i < eligible.size(); ++i)
            for (std::size_t j = i + 1; j < eligible.size(); ++j) pairs.push_back({i, j});
        const std::size_t max_pairs = dc.at("max_pairs").get<std::size_t>();
        if (pairs.size() > max_pairs) {
            Rng rng(ctx.seed());
            auto keep = rng.derive("pairs", 0).sample_without_replacement(pairs.size(), max_pairs);
            std::sort(keep.begin(), keep.end());
            std::vector<std::pair<std::size_t, std::size_t>> kept;
            kept.reserve(max_pairs);
            for (std::size_t k : keep) kept.push_back(pairs[k]);
            pairs = std::move(kept);
        }

        // Graph distances from each eligible creator.
        std::map<int, std::vector<int>> hops_from;
        std::map<int, std::vector<double>> wdist_from;
        for (const auto& name : eligible) {
            const int node = creators[name].node;
            if (!hops_from.count(node)) {
                hops_from[node] = bfs_hops(adj, node);
                wdist_from[node] = dijkstra_inverse_weight(adj, node);
            }
        }

        std::vector<double> connected, d_sp, d_wsp, d_prod, min_prod, max_prod, d_time, min_time,
            d_geo, min_geo, long_dist, response;
        std::vector<std::string> id_i, id_j;
        long dropped_pairs = 0;
        for (const auto& [i, j] : pairs) {
            const CreatorInfo& a = creators[eligible[i]];
            const CreatorInfo& b = creators[eligible[j]];
            if (!a.has_place || !b.has_place) {
                ++dropped_pairs;
                continue;
            }
            const auto& hops = hops_from[a.node];
            const auto& wdist = wdist_from[a.node];
            const int h = hops[static_cast<std::size_t>(b.node)];
            d_sp.push_back(h > 0 ? h - 1 : (h == 0 ? 0 : kNaN));  // intermediate nodes
            d_wsp.push_back(wdist[static_cast<std::size_t>(b.node)]);
            connected.push_back(
                direct_edges.count({std::min(a.node, b.node), std::max(a.node, b.node)}) ? 1.0
                                                                                         : 0.0);
            d_prod.push_back(std::abs(static_cast<double>(a.n_maps - b.n_maps)));
            min_prod.push_back(static_cast<double>(std::min(a.n_maps, b.n_maps)));
            max_prod.push_back(static_cast<double>(std::max(a.n_maps, b.n_maps)));
            d_time.push_back(std::abs(a.mean_year - b.mean_year));
            min_time.push_back(static_cast<double>(min_year_gap(a.years, b.years)));
            const double geo = haversine_km(a.mean_lat, a.mean_lon, b.mean_lat, b.mean_lon);
            d_geo.push_back(geo);
            double mg = std::numeric_limits<double>::infinity();
            for (const auto& [la, lo] : a.places)
                for (const auto& [lb, lb2] : b.places)
                    mg = std::min(mg, haversine_km(la, lo, lb, lb2));
            min_geo.push_back(mg);
            long_dist.push_back(geo > dc.at("long_dist_km").get<double>() ? 1.0 : 0.0);
            response.push_back(semiotic_delta(a.dist, b.dist, signs.n_clusters, modes));
            id_i.push_back(eligible[i]);
            id_j.push_back(eligible[j]);
        }

        creators_out["pairs"] = response.size();
        creators_out["pairs_dropped"] = dropped_pairs;
        if (response.size() < 3) {
            creators_out["skipped"] = "not enough usable pairs";
        } else {
            // Unreachable pairs sit one step beyond the largest observed
            // distance, keeping the columns finite and monotone.
            auto cap_infinite = [](std::vector<double>& col) {
                double max_finite = 0.0;
                for (double v : col)
                    if (std::isfinite(v)) max_finite = std::max(max_finite, v);
                for (double& v : col)
                    if (!std::isfinite(v)) v = max_finite + 1.0;
            };
            cap_infinite(d_sp);
            cap_infinite(d_wsp);

            DyadicDesign design;
            design.id_i = id_i;
            design.id_j = id_j;
            design.response = response;
            design.two_way_fe = false;
            design.predictor_names = {"connected",          "d_shortest_path",
                                      "rank_d_weighted_path", "rank_d_production",
                                      "rank_min_production", "rank_max_production",
                                      "rank_d_time",        "min_time",
                                      "rank_d_geo",         "min_geo",
                                      "long_dist"};
            min_max_scale(d_sp);
            min_max_scale(min_time);
            min_max_scale(min_geo);
            design.predictors = {connected,
                                 d_sp,
                                 rank_transform(d_wsp),
                                 rank_transform(d_prod),
                                 rank_transform(min_prod),
                                 rank_transform(max_prod),
                                 rank_transform(d_time),
                                 min_time,
                                 rank_transform(d_geo),
                                 min_geo,
                                 long_dist};
            std::vector<std::string> removed;
            drop_constant_predictors(design, removed);
            creators_out["constant_predictors_removed"] = removed;
            try {
                RegressionResult res = dyadic_regression(design, opts);
                creators_out["model"] = regression_json(res);
            } catch (const Error& e) {
                creators_out["skipped"] = std::string(e.what());
                log_warn(std::string("creator diffusion model: ") + e.what());
            }
        }
    }

    // ---- city pairs ---------------------------------------------------------
    struct CityAcc {
        std::vector<int> clusters;
        std::vector<int> modes;
        std::set<std::string> maps;
        double lat_sum = 0, lon_sum = 0;
        long n_place = 0;
        double year_sum = 0;
        long n_year = 0;
        std::map<std::string, long> countries;
    };
    std::map<std::string, CityAcc> city_acc;
    for (const auto& rec : ds.records) {
        if (!rec.pub_city) continue;
        CityAcc& c = city_acc[*rec.pub_city];
        c.year_sum += rec.year;
        ++c.n_year;
        if (rec.pub_place) {
            c.lat_sum += rec.pub_place->first;
            c.lon_sum += rec.pub_place->second;
            ++c.n_place;
        }
        if (rec.pub_country) ++c.countries[*rec.pub_country];
    }
    for (std::size_t i = 0; i < signs.rows.size(); ++i) {
        const MapRecord* rec = ds.find(signs.rows[i].map_id);
        if (!rec || !rec->pub_city) continue;
        auto it = city_acc.find(*rec->pub_city);
        if (it == city_acc.end()) continue;
        it->second.clusters.push_back(signs.clusters[i]);
        if (modes) it->second.modes.push_back(signs.rows[i].semantic_mode);
        it->second.maps.insert(signs.rows[i].map_id);
    }

    std::map<std::string, CityAttr> attrs;
    if (!attr_path.empty()) attrs = load_city_attributes(attr_path);

    const long min_city_maps = dc.at("min_city_maps").get<long>();
    std::vector<std::string> cities;
    for (const auto& [name, c] : city_acc)
        if (static_cast<long>(c.maps.size()) >= min_city_maps && c.n_place > 0)
            cities.push_back(name);

    Json cities_out;
    cities_out["eligible_cities"] = cities.size();
    if (cities.size() < 3) {
        cities_out["skipped"] = "needs at least 3 eligible cities";
        log_warn("city diffusion model skipped: " + std::to_string(cities.size()) +
                 " eligible cities");
    } else {
        std::vector<GroupSigns> groups;
        for (const auto& name : cities) {
            CityAcc& c = city_acc[name];
            GroupSigns g;
            g.name = name;
            g.n_records = static_cast<long>(c.maps.size());
            g.clusters = c.clusters;
            g.modes = c.modes;
            groups.push_back(std::move(g));
        }
        RuptureMatrix rho = geographic_rupture_matrix(groups, signs.n_clusters, 1, modes);

        const bool have_pop = std::all_of(cities.begin(), cities.end(), [&](const std::string& n) {
            auto it = attrs.find(n);
            return it != attrs.end() && std::isfinite(it->second.population);
        });
        const bool have_continent =
            std::all_of(cities.begin(), cities.end(), [&](const std::string& n) {
                auto it = attrs.find(n);
                return it != attrs.end() && !it->second.continent.empty();
            });
        const bool have_language =
            std::all_of(cities.begin(), cities.end(), [&](const std::string& n) {
                auto it = attrs.find(n);
                return it != attrs.end() && !it->second.language.empty();
            });
        if (!attr_path.empty() && !(have_pop && have_continent && have_language))
            log_warn("city attributes incomplete; population/continent/language predictors "
                     "limited to fully covered ones");

        auto modal_country = [&](const std::string& name) {
            const auto& counts = city_acc[name].countries;
            std::string best;
            long best_n = -1;
            for (const auto& [country, n] : counts)
                if (n > best_n || (n == best_n && country < best)) {
                    best = country;
                    best_n = n;
                }
            return best;
        };

        DyadicDesign design;
        design.two_way_fe = true;
        std::vector<double> d_geo, d_time, d_pop, min_pop, same_country, same_continent,
            same_language;
        for (std::size_t i = 0; i < cities.size(); ++i) {
            const CityAcc& a = city_acc[cities[i]];
            for (std::size_t j = i + 1; j < cities.size(); ++j) {
                const CityAcc& b = city_acc[cities[j]];
                design.id_i.push_back(cities[i]);
                design.id_j.push_back(cities[j]);
                design.response.push_back(rho.at(i, j));
                d_geo.push_back(haversine_km(
                    a.lat_sum / a.n_place, a.lon_sum / a.n_place,
                    b.lat_sum / b.n_place, b.lon_sum / b.n_place));
                d_time.push_back(std::abs(a.year_sum / a.n_year - b.year_sum / b.n_year));
                if (have_pop) {
                    const double pa = attrs[cities[i]].population;
                    const double pb = attrs[cities[j]].population;
                    d_pop.push_back(std::abs(pa - pb));
                    min_pop.push_back(std::min(pa, pb));
                }
                same_country.push_back(modal_country(cities[i]) == modal_country(cities[j]) &&
                                               !modal_country(cities[i]).empty()
                                           ? 1.0
                                           : 0.0);
                if (have_continent)
                    same_continent.push_back(
                        attrs[cities[i]].continent == attrs[cities[j]].continent ? 1.0 : 0.0);
                if (have_language)
                    same_language.push_back(
                        attrs[cities[i]].language == attrs[cities[j]].language ? 1.0 : 0.0);
            }
        }
        min_max_scale(d_geo);
        min_max_scale(d_time);
        design.predictor_names = {"d_geo", "d_time"};
        design.predictors = {d_geo, d_time};
        if (have_pop) {
            min_max_scale(d_pop);
            min_max_scale(min_pop);
            design.predictor_names.insert(design.predictor_names.end(), {"d_pop", "min_pop"});
            design.predictors.push_back(d_pop);
            design.predictors.push_back(min_pop);
        }
        design.predictor_names.push_back("same_country");
        design.predictors.push_back(same_country);
        if (have_continent) {
            design.predictor_names.push_back("same_continent");
            design.predictors.push_back(same_continent);
        }
        if (have_language) {
            design.predictor_names.push_back("same_language");
            design.predictors.push_back(same_language);
        }
        std::vector<std::string> removed;
        drop_constant_predictors(design, removed);
        cities_out["pairs"] = design.response.size();
        cities_out["constant_predictors_removed"] = removed;
        // Difference and minimum of the city populations jointly alias the
        // two-way dummies (their sum is additive in the pair members), so the
        // city fit sheds redundant dummies instead of rejecting the design.
        RegressionOptions city_opts = opts;
        city_opts.drop_aliased = true;
        try {
            RegressionResult res = dyadic_regression(design, city_opts);
            cities_out["model"] = regression_json(res);
        } catch (const Error& e) {
            cities_out["skipped"] = std::string(e.what());
            log_warn(std::string("city diffusion model: ") + e.what());
        }
    }

    write_json(ctx.out_path("diffusion_creators.json"), creators_out, prov);
    write_json(ctx.out_path("diffusion_cities.json"), cities_out, prov);
    write_provenance_file(ctx, prov);
}

// --- chrono ------------------------------------------------------------------

void cmd_chrono(CmdContext& ctx) {
    Dataset ds = load_dataset(ctx, true);
    if (ds.records.empty()) throw Error("EmptySample", "no records");
    const Json& hc = ctx.cfg.at("chrono");
    const double sigma = hc.at("sigma").get<double>();
    const int radius = hc.at("radius").get<int>();

    std::vector<std::pair<std::string, std::string>> inputs = {
        {"metadata", ctx.dataset_path("metadata")}};
    if (!ctx.dataset_path("coverage").empty())
        inputs.emplace_back("coverage", ctx.dataset_path("coverage"));
    const bool have_signs = std::filesystem::exists(ctx.out_path("mapels.csv")) &&
                            std::filesystem::exists(ctx.out_path("clusters.csv"));
    if (have_signs) {
        inputs.emplace_back("mapels", ctx.out_path("mapels.csv"));
        inputs.emplace_back("clusters", ctx.out_path("clusters.csv"));
    }
    Json params_json = hc;
    params_json["modes"] = ctx.modes_on();
    params_json["seed"] = ctx.seed();
    Provenance prov = make_provenance("chrono", params_json, inputs);
    Json out;

    // Yearly production counts; absent years are true zeros.
    int year_min = ds.records.front().year, year_max = ds.records.front().year;
    for (const auto& rec : ds.records) {
        year_min = std::min(year_min, rec.year);
        year_max = std::max(year_max, rec.year);
    }
    const int n_years = year_max - year_min + 1;
    std::vector<double> counts(static_cast<std::size_t>(n_years), 0.0);
    std::vector<double> domestic_counts(static_cast<std::size_t>(n_years), 0.0);
    std::vector<double> foreign_counts(static_cast<std::size_t>(n_years), 0.0);
    for (const auto& rec : ds.records) {
        const std::size_t at = static_cast<std::size_t>(rec.year - year_min);
        counts[at] += 1.0;
        if (rec.domestic) (*rec.domestic ? domestic_counts : foreign_counts)[at] += 1.0;
    }
    std::vector<double> counts_smooth = gaussian_smooth(counts, sigma, radius);
    {
        std::vector<std::string> rows;
        for (int y = 0; y < n_years; ++y)
            rows.push_back(std::to_string(year_min + y) + "," +
                           format_trim(counts[static_cast<std::size_t>(y)], 0) + "," +
                           format_trim(counts_smooth[static_cast<std::size_t>(y)], 6));
        write_csv(ctx.out_path("map_counts.csv"), prov, "year,count,smoothed", rows);
    }
    auto mk_json = [](const std::vector<double>& series) -> Json {
        try {
            MannKendall mk = mann_kendall(series);
            Json j;
            j["s"] = mk.s;
            j["z"] = mk.z;
            j["tau"] = mk.tau;
            j["p"] = mk.p;
            j["sen_slope"] = mk.sen_slope;
            return j;
        } catch (const Error& e) {
            Json j;
            j["error"] = std::string(e.code());
            return j;
        }
    };
    out["production_trend"] = mk_json(counts);

    // Domestic share with binomial confidence bands.
    const int window = hc.at("window").get<int>();
    ShareSeries share = domestic_share_series(ds, window, sigma, radius);
    {
        std::vector<std::string> rows;
        for (std::size_t i = 0; i < share.share.size(); ++i) {
            const bool present = std::isfinite(share.share[i]);
            rows.push_back(std::to_string(share.year0 + static_cast<int>(i)) + "," +
                           std::to_string(share.n[i]) + "," +
                           (present ? format_trim(share.share[i], 6) : "") + "," +
                           (std::isfinite(share.smoothed[i]) ? format_trim(share.smoothed[i], 6)
                                                             : "") +
                           "," + (present ? format_trim(share.ci_lo[i], 6) : "") + "," +
                           (present ? format_trim(share.ci_hi[i], 6) : ""));
        }
        write_csv(ctx.out_path("domestic_share.csv"), prov,
                  "year,n,share,smoothed,ci_lo,ci_hi", rows);
        std::vector<double> present;
        for (double v : share.share)
            if (std::isfinite(v)) present.push_back(v);
        out["domestic_share_trend"] = present.size() >= 4 ? mk_json(present) : Json();
    }

    // Lagged dependency between the domestic and foreign production series.
    {
        Json lagged;
        const bool any_dom = std::any_of(domestic_counts.begin(), domestic_counts.end(),
                                         [](double v) { return v > 0; });
        const bool any_for = std::any_of(foreign_counts.begin(), foreign_counts.end(),
                                         [](double v) { return v > 0; });
        if (any_dom && any_for) {
            std::vector<double> a = gaussian_smooth(domestic_counts, sigma, radius);
            std::vector<double> b = gaussian_smooth(foreign_counts, sigma, radius);
            std::vector<int> skipped_taus;
            auto points =
                lagged_correlation(a, b, hc.at("max_offset").get<int>(), &skipped_taus);
            if (!points.empty()) {
                std::vector<std::string> rows;
                const LagPoint* best = &points.front();
                for (const auto& pt : points) {
                    if (std::abs(pt.r) > std::abs(best->r)) best = &pt;
                    rows.push_back(std::to_string(pt.tau) + "," + std::to_string(pt.n) + "," +
                                   format_trim(pt.r, 6) + "," + format_trim(pt.ci_lo, 6) + "," +
                                   format_trim(pt.ci_hi, 6));
                }
                write_csv(ctx.out_path("lagged_correlation.csv"), prov, "tau,n,r,ci_lo,ci_hi",
                          rows);
                lagged["series"] = "domestic leads foreign at positive tau";
                lagged["best_tau"] = best->tau;
                lagged["best_r"] = best->r;
                lagged["skipped_offsets"] = skipped_taus;
            }
        }
        out["lagged_dependency"] = lagged;
    }

    // Spatial attention raster over all coverage geometries.
    {
        Json attention;
        std::vector<CoverageGeom> geoms;
        for (const auto& rec : ds.records)
            geoms.insert(geoms.end(), rec.coverage.begin(), rec.coverage.end());
        if (!geoms.empty()) {
            GridSpec spec;
            spec.cell_deg = hc.at("grid_cell_deg").get<double>();
            AttentionRaster raster =
                attention_raster(geoms, spec, hc.at("min_side_deg").get<double>());
            // Log compression, north up.
            std::vector<double> display(raster.intensity.size());
            for (int r = 0; r < raster.rows; ++r)
                for (int c = 0; c < raster.cols; ++c)
                    display[static_cast<std::size_t>(raster.rows - 1 - r) * raster.cols + c] =
                        std::log1p(raster.at(r, c));
            Image heat = render_heatmap(display, raster.rows, raster.cols, 2);
            write_png(ctx.out_path("attention.png"), heat, {{"provenance", prov.digest}});
            attention["geometries"] = geoms.size();
            attention["rows"] = raster.rows;
            attention["cols"] = raster.cols;
            attention["total_mass"] = raster.total();
            attention["max_cell"] =
                *std::max_element(raster.intensity.begin(), raster.intensity.end());
        }
        out["attention"] = attention;
    }

    // Production-path divergence between the two best-covered countries.
    {
        Json ks;
        std::map<std::string, std::vector<double>> by_country;
        for (const auto& rec : ds.records)
            if (rec.pub_country) by_country[*rec.pub_country].push_back(rec.year);
        std::vector<std::pair<long, std::string>> ranked;
        for (const auto& [name, years] : by_country)
            ranked.push_back({static_cast<long>(years.size()), name});
        std::sort(ranked.begin(), ranked.end(),
                  [](const auto& a, const auto& b) {
                      return a.first != b.first ? a.first > b.first : a.second < b.second;
                  });
        if (ranked.size() >= 2) {
            const std::string& ca = ranked[0].second;
            const std::string& cb = ranked[1].second;
            std::vector<double> path_a(static_cast<std::size_t>(n_years), 0.0);
            std::vector<double> path_b(static_cast<std::size_t>(n_years), 0.0);
            for (double y : by_country[ca]) path_a[static_cast<std::size_t>(y - year_min)] += 1;
            for (double y : by_country[cb]) path_b[static_cast<std::size_t>(y - year_min)] += 1;
            for (int y = 1; y < n_years; ++y) {
                path_a[static_cast<std::size_t>(y)] += path_a[static_cast<std::size_t>(y - 1)];
                path_b[static_cast<std::size_t>(y)] += path_b[static_cast<std::size_t>(y - 1)];
            }
            ks["country_a"] = ca;
            ks["country_b"] = cb;
            ks["ks"] = ks_statistic(by_country[ca], by_country[cb]);
            ks["ks_cumsum"] = ks_cumsum(path_a, path_b);
        }
        out["production_divergence"] = ks;
    }

    // Sign diversity, per-map complexity and the diachronic flow, when sign
    // data is available.
    if (have_signs) {
        JoinedSigns signs = load_signs(ctx);
        std::map<int, long> maps_per_year;
        for (const auto& rec : ds.records) ++maps_per_year[rec.year];

        std::vector<int> sign_clusters;
        std::vector<int> sign_years;
        std::map<std::string, MapSigns> by_map;
        std::vector<FlowSign> flow_signs;
        const std::string flow_group = hc.at("flow_group").get<std::string>();
        const StratVar flow_var = parse_strat_var(flow_group);
        std::set<std::string> dangling;
        for (std::size_t i = 0; i < signs.rows.size(); ++i) {
            const SidecarRow& row = signs.rows[i];
            const MapRecord* rec = ds.find(row.map_id);
            if (!rec) {
                dangling.insert(row.map_id);
                continue;
            }
            sign_clusters.push_back(signs.clusters[i]);
            sign_years.push_back(rec->year);
            MapSigns& m = by_map[row.map_id];
            m.map_id = row.map_id;
            m.year = rec->year;
            m.clusters.push_back(signs.clusters[i]);

            std::vector<std::string> keys;
            if (flow_var == StratVar::Country && rec->pub_country) keys = {*rec->pub_country};
            if (flow_var == StratVar::City && rec->pub_city) keys = {*rec->pub_city};
            if (flow_var == StratVar::Creator) keys = rec->creators;
            for (const auto& key : keys) {
                FlowSign fs;
                fs.group = key;
                fs.map_id = row.map_id;
                fs.strat = rec->year;
                fs.cluster = signs.clusters[i];
                fs.mode = ctx.modes_on() ? row.semantic_mode : 0;
                flow_signs.push_back(std::move(fs));
            }
        }
        for (const auto& id : dangling) log_warn(id + ": not in the catalog; signs dropped");
        ctx.skipped += dangling.size();

        auto diversity = diversity_series(sign_clusters, sign_years, maps_per_year,
                                          signs.n_clusters, hc.at("active_min").get<int>());
        {
            std::vector<std::string> rows;
            std::vector<double> macro;
            for (const auto& pt : diversity) {
                macro.push_back(pt.macro_diversity);
                rows.push_back(std::to_string(pt.year) + "," + std::to_string(pt.active) + "," +
                               std::to_string(pt.maps) + "," +
                               format_trim(pt.macro_diversity, 6) + "," +
                               format_trim(pt.micro_diversity, 6));
            }
            write_csv(ctx.out_path("diversity.csv"), prov, "year,active,maps,macro,micro", rows);
            out["diversity_trend"] = macro.size() >= 4 ? mk_json(macro) : Json();
        }

        std::vector<MapSigns> maps;
        maps.reserve(by_map.size());
        for (auto& [id, m] : by_map) maps.push_back(std::move(m));
        auto complexity = complexity_series(maps, hc.at("presence_min").get<int>());
        {
            std::vector<std::string> rows;
            for (const auto& pt : complexity)
                rows.push_back(std::to_string(pt.year) + "," + std::to_string(pt.maps) + "," +
                               format_trim(pt.mean_active, 6));
            write_csv(ctx.out_path("complexity.csv"), prov, "year,maps,mean_active", rows);
        }

        Json flow_json;
        if (!flow_signs.empty()) {
            try {
                FlowResult flow = diachronic_flow(flow_signs, signs.n_clusters,
                                                  hc.at("flow_strata").get<int>(),
                                                  ctx.modes_on());
                flow_json["group"] = flow_group;
                flow_json["strata_edges"] = flow.strata_edges;
                Json nodes = Json::array();
                for (const auto& n : flow.nodes) {
                    Json j;
                    j["group"] = n.group;
                    j["stratum"] = n.stratum;
                    j["count"] = n.count;
                    nodes.push_back(j);
                }
                flow_json["nodes"] = nodes;
                Json edges = Json::array();
                for (const auto& e : flow.edges) {
                    Json j;
                    j["from"] = e.from;
                    j["from_stratum"] = e.from_stratum;
                    j["to"] = e.to;
                    j["to_stratum"] = e.to_stratum;
                    j["rho"] = e.rho;
                    j["significant"] = e.significant;
                    edges.push_back(j);
                }
                flow_json["edges"] = edges;
                flow_json["mean_rho"] = flow.mean_rho;
                flow_json["sd_rho"] = flow.sd_rho;
                flow_json["n_pairs"] = flow.n_pairs;
                flow_json["threshold"] = flow.threshold;
            } catch (const Error& e) {
                flow_json["error"] = std::string(e.code());
                log_warn(std::string("diachronic flow: ") + e.what());
            }
        }
        out["flow"] = flow_json;
    }

    write_json(ctx.out_path("chrono.json"), out, prov);
    write_provenance_file(ctx, prov);
}

}  // namespace cartolab::cli
