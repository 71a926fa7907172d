#include "cartolab/graph.hpp"

#include "cartolab/rng.hpp"
#include "cartolab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

namespace cartolab {

namespace {

void check_graph(const Graph& g) {
    for (const auto& e : g.edges) {
        if (e.u < 0 || e.u >= g.n || e.v < 0 || e.v >= g.n)
            throw Error("BadValue", "edge endpoint out of range");
        if (e.w < 0.0) throw Error("BadValue", "negative edge weight");
    }
}

}  // namespace

double modularity(const Graph& graph, const std::vector<int>& community) {
    check_graph(graph);
    if (static_cast<int>(community.size()) != graph.n)
        throw Error("DimensionMismatch", "partition must cover all nodes");
    if (graph.n == 0) return 0.0;

    int n_comm = 0;
    for (int c : community) {
        if (c < 0) throw Error("BadValue", "community labels must be >= 0");
        n_comm = std::max(n_comm, c + 1);
    }
    std::vector<double> degree(static_cast<std::size_t>(graph.n), 0.0);
    std::vector<double> internal(static_cast<std::size_t>(n_comm), 0.0);
    std::vector<double> total(static_cast<std::size_t>(n_comm), 0.0);
    double m2 = 0.0;  // sum of all degrees = 2m
    for (const auto& e : graph.edges) {
        if (e.u == e.v) {
            degree[static_cast<std::size_t>(e.u)] += 2.0 * e.w;
            m2 += 2.0 * e.w;
            internal[static_cast<std::size_t>(community[static_cast<std::size_t>(e.u)])] +=
                2.0 * e.w;
        } else {
            degree[static_cast<std::size_t>(e.u)] += e.w;
            degree[static_cast<std::size_t>(e.v)] += e.w;
            m2 += 2.0 * e.w;
            if (community[static_cast<std::size_t>(e.u)] ==
                community[static_cast<std::size_t>(e.v)])
                internal[static_cast<std::size_t>(community[static_cast<std::size_t>(e.u)])] +=
                    2.0 * e.w;
        }
    }
    if (m2 <= 0.0) return 0.0;
    for (int i = 0; i < graph.n; ++i)
        total[static_cast<std::size_t>(community[static_cast<std::size_t>(i)])] +=
            degree[static_cast<std::size_t>(i)];

    double q = 0.0;
    for (int c = 0; c < n_comm; ++c) {
        double in = internal[static_cast<std::size_t>(c)];
        double tot = total[static_cast<std::size_t>(c)];
        q += in / m2 - (tot / m2) * (tot / m2);
    }
    return q;
}

namespace {

// One aggregation level: local moves to a fixpoint, then collapse.
struct LevelGraph {
    int n = 0;
    std::vector<std::vector<std::pair<int, double>>> adj;  // neighbor, weight (no self)
    std::vector<double> self_weight;                       // ordered-pair mass A_ii
    std::vector<double> degree;
    double m2 = 0.0;
};

LevelGraph to_level(const Graph& g) {
    LevelGraph lg;
    lg.n = g.n;
    lg.adj.assign(static_cast<std::size_t>(g.n), {});
    lg.self_weight.assign(static_cast<std::size_t>(g.n), 0.0);
    std::map<std::pair<int, int>, double> merged;
    for (const auto& e : g.edges) {
        if (e.u == e.v) {
            lg.self_weight[static_cast<std::size_t>(e.u)] += 2.0 * e.w;
        } else {
            const int lo = std::min(e.u, e.v), hi = std::max(e.u, e.v);
            merged[{lo, hi}] += e.w;
        }
    }
    for (const auto& [uv, w] : merged) {
        lg.adj[static_cast<std::size_t>(uv.first)].push_back({uv.second, w});
        lg.adj[static_cast<std::size_t>(uv.second)].push_back({uv.first, w});
    }
    lg.degree.assign(static_cast<std::size_t>(g.n), 0.0);
    for (int i = 0; i < g.n; ++i) {
        double d = lg.self_weight[static_cast<std::size_t>(i)];
        for (const auto& [j, w] : lg.adj[static_cast<std::size_t>(i)]) {
            (void)j;
            d += w;
        }
        lg.degree[static_cast<std::size_t>(i)] = d;
        lg.m2 += d;
    }
    return lg;
}

// Local-move phase; returns true when at least one node moved.
bool local_moves(const LevelGraph& lg, std::vector<int>& comm, Rng& rng) {
    std::vector<double> comm_total(static_cast<std::size_t>(lg.n), 0.0);
    for (int i = 0; i < lg.n; ++i)
        comm_total[static_cast<std::size_t>(comm[static_cast<std::size_t>(i)])] +=
            lg.degree[static_cast<std::size_t>(i)];

    std::vector<int> order(static_cast<std::size_t>(lg.n));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    bool any_move = false;
    bool moved = true;
    int pass = 0;
    while (moved && pass < 100) {
        moved = false;
        ++pass;
        for (int idx : order) {
            const std::size_t i = static_cast<std::size_t>(idx);
            int old_c = comm[i];
            std::map<int, double> k_to;  // links from i to each neighboring community
            k_to[old_c] += 0.0;
            for (const auto& [j, w] : lg.adj[i]) k_to[comm[static_cast<std::size_t>(j)]] += w;

            comm_total[static_cast<std::size_t>(old_c)] -= lg.degree[i];
            double best_gain = -std::numeric_limits<double>::infinity();
            int best_c = old_c;
            for (const auto& [c, k] : k_to) {  // map order: smallest id wins ties
                double gain = k - comm_total[static_cast<std::size_t>(c)] * lg.degree[i] / lg.m2;
                if (gain > best_gain + 1e-12) {
                    best_gain = gain;
                    best_c = c;
                }
            }
            comm_total[static_cast<std::size_t>(best_c)] += lg.degree[i];
            if (best_c != old_c) {
                comm[i] = best_c;
                moved = true;
                any_move = true;
            }
        }
    }
    return any_move;
}

void compact_labels(std::vector<int>& comm) {
    std::map<int, int> remap;
    for (int c : comm) remap.emplace(c, 0);
    int next = 0;
    for (auto& [old_label, fresh] : remap) {
        (void)old_label;
        fresh = next++;
    }
    for (int& c : comm) c = remap[c];
}

}  // namespace

std::vector<int> louvain(const Graph& graph, std::uint64_t seed) {
    check_graph(graph);
    std::vector<int> assignment(static_cast<std::size_t>(graph.n));
    std::iota(assignment.begin(), assignment.end(), 0);
    if (graph.n == 0 || graph.edges.empty()) {
        std::fill(assignment.begin(), assignment.end(), 0);
        return assignment;
    }

    Rng rng(seed);
    Graph level = graph;
    // node_to_level[i] = the current super-node holding original node i
    std::vector<int> node_to_level(assignment);

    for (int depth = 0; depth < 64; ++depth) {
        LevelGraph lg = to_level(level);
        if (lg.m2 <= 0.0) break;
        std::vector<int> comm(static_cast<std::size_t>(lg.n));
        std::iota(comm.begin(), comm.end(), 0);
        bool any = local_moves(lg, comm, rng);
        if (!any) break;
        compact_labels(comm);

        for (auto& c : node_to_level) c = comm[static_cast<std::size_t>(c)];

        // Aggregate into the next-level graph.
        int n_comm = 0;
        for (int c : comm) n_comm = std::max(n_comm, c + 1);
        if (n_comm == lg.n) break;
        Graph next;
        next.n = n_comm;
        std::map<std::pair<int, int>, double> agg;
        for (int i = 0; i < lg.n; ++i) {
            std::size_t ci = static_cast<std::size_t>(comm[static_cast<std::size_t>(i)]);
            if (lg.self_weight[static_cast<std::size_t>(i)] > 0.0)
                agg[{static_cast<int>(ci), static_cast<int>(ci)}] +=
                    lg.self_weight[static_cast<std::size_t>(i)] / 2.0;
            for (const auto& [j, w] : lg.adj[static_cast<std::size_t>(i)]) {
                if (j < i) continue;  // each undirected edge once
                int cj = comm[static_cast<std::size_t>(j)];
                const int lo = std::min(static_cast<int>(ci), cj);
                const int hi = std::max(static_cast<int>(ci), cj);
                agg[{lo, hi}] += w;  // internal edges self-loop
            }
        }
        for (const auto& [uv, w] : agg) next.edges.push_back({uv.first, uv.second, w});
        level = std::move(next);
        if (level.n <= 1) break;
    }

    compact_labels(node_to_level);
    // Never return a partition worse than the trivial one.
    if (modularity(graph, node_to_level) < 0.0) {
        std::fill(node_to_level.begin(), node_to_level.end(), 0);
    } else {
        // Relabel by smallest member so output is order-stable.
        int n_comm = 0;
        for (int c : node_to_level) n_comm = std::max(n_comm, c + 1);
        std::vector<int> first_member(static_cast<std::size_t>(n_comm),
                                      std::numeric_limits<int>::max());
        for (int i = 0; i < graph.n; ++i)
            first_member[static_cast<std::size_t>(node_to_level[static_cast<std::size_t>(i)])] =
                std::min(first_member[static_cast<std::size_t>(
                             node_to_level[static_cast<std::size_t>(i)])],
                         i);
        std::vector<int> by_first(static_cast<std::size_t>(n_comm));
        std::iota(by_first.begin(), by_first.end(), 0);
        std::sort(by_first.begin(), by_first.end(), [&](int a, int b) {
            return first_member[static_cast<std::size_t>(a)] <
                   first_member[static_cast<std::size_t>(b)];
        });
        std::vector<int> relabel(static_cast<std::size_t>(n_comm));
        for (int i = 0; i < n_comm; ++i) relabel[static_cast<std::size_t>(by_first[static_cast<std::size_t>(i)])] = i;
        for (int& c : node_to_level) c = relabel[static_cast<std::size_t>(c)];
    }
    return node_to_level;
}

SweepResult temporal_modularity_sweep(const Graph& graph, const std::vector<double>& node_year,
                                      const std::vector<double>& bin_widths) {
    check_graph(graph);
    if (static_cast<int>(node_year.size()) != graph.n)
        throw Error("DimensionMismatch", "every node needs a year");
    SweepResult out;
    if (graph.n == 0 || bin_widths.empty()) return out;
    double ymin = *std::min_element(node_year.begin(), node_year.end());

    out.best_q = -std::numeric_limits<double>::infinity();
    for (double width : bin_widths) {
        if (width <= 0.0) throw Error("BadValue", "bin width must be > 0");
        std::vector<int> comm(static_cast<std::size_t>(graph.n));
        int n_bins = 0;
        for (int i = 0; i < graph.n; ++i) {
            int b = static_cast<int>(std::floor((node_year[static_cast<std::size_t>(i)] - ymin) / width));
            comm[static_cast<std::size_t>(i)] = b;
            n_bins = std::max(n_bins, b + 1);
        }
        SweepPoint p;
        p.width = width;
        p.n_bins = n_bins;
        p.q = modularity(graph, comm);
        out.points.push_back(p);
        if (p.q > out.best_q) {
            out.best_q = p.q;
            out.best_width = width;
        }
    }
    return out;
}

// --- name normalization ------------------------------------------------------

namespace {

double cosine_distance(const float* a, const float* b, int dim) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int d = 0; d < dim; ++d) {
        dot += static_cast<double>(a[d]) * b[d];
        na += static_cast<double>(a[d]) * a[d];
        nb += static_cast<double>(b[d]) * b[d];
    }
    if (na <= 0.0 || nb <= 0.0) return 1.0;  // zero vectors are similar to nothing
    return 1.0 - dot / std::sqrt(na * nb);
}

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int x) {
        while (parent[static_cast<std::size_t>(x)] != x) {
            parent[static_cast<std::size_t>(x)] =
                parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
            x = parent[static_cast<std::size_t>(x)];
        }
        return x;
    }
    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
    }
};

}  // namespace

NameMap normalize_names(const EmbeddingTable& variants, const std::vector<long>& mention_counts,
                        double threshold, int knn, int threads) {
    if (mention_counts.size() != variants.size())
        throw Error("DimensionMismatch", "one mention count per variant");
    if (threshold <= 0.0 || threshold >= 2.0) throw Error("BadValue", "threshold must be in (0,2)");
    if (knn < 1) throw Error("BadValue", "knn must be >= 1");
    const std::size_t n = variants.size();
    NameMap out;
    if (n == 0) return out;

    // kNN links under the distance cut, computed per node.
    std::vector<std::vector<int>> links(n);
    parallel_for(n, threads, [&](std::size_t i) {
        std::vector<std::pair<double, std::size_t>> dist;
        dist.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            dist.push_back({cosine_distance(variants.vec(i), variants.vec(j), variants.dim), j});
        }
        std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(knn), dist.size());
        std::partial_sort(dist.begin(), dist.begin() + static_cast<long>(kk), dist.end());
        for (std::size_t t = 0; t < kk; ++t)
            if (dist[t].first <= threshold) links[i].push_back(static_cast<int>(dist[t].second));
    });

    UnionFind uf(n);
    for (std::size_t i = 0; i < n; ++i)
        for (int j : links[i]) uf.unite(static_cast<int>(i), j);

    // Canonical per component: most mentions, then lexicographic.
    std::map<int, std::size_t> best;
    for (std::size_t i = 0; i < n; ++i) {
        int root = uf.find(static_cast<int>(i));
        auto it = best.find(root);
        if (it == best.end()) {
            best[root] = i;
            continue;
        }
        std::size_t cur = it->second;
        if (mention_counts[i] > mention_counts[cur] ||
            (mention_counts[i] == mention_counts[cur] && variants.ids[i] < variants.ids[cur]))
            it->second = i;
    }
    out.n_components = static_cast<int>(best.size());
    for (std::size_t i = 0; i < n; ++i)
        out.canonical[variants.ids[i]] = variants.ids[best[uf.find(static_cast<int>(i))]];
    return out;
}

// --- domain saliency ---------------------------------------------------------

SalientScores salient_similarity(const std::vector<float>& entity,
                                 const std::vector<DomainPointers>& domains, double epsilon,
                                 double threshold, SaliencyPolarity polarity) {
    if (domains.size() < 2) throw Error("BadValue", "need at least two domains");
    SalientScores out;
    out.sigma.reserve(domains.size());
    const int dim = static_cast<int>(entity.size());
    for (const auto& dom : domains) {
        if (dom.pointers.empty()) throw Error("EmptySample", "domain without pointers");
        double sigma = std::numeric_limits<double>::infinity();
        for (const auto& p : dom.pointers) {
            if (static_cast<int>(p.size()) != dim)
                throw Error("DimensionMismatch", "pointer dim mismatch");
            sigma = std::min(sigma, cosine_distance(entity.data(), p.data(), dim));
        }
        out.sigma.push_back(sigma);
    }
    double total = std::accumulate(out.sigma.begin(), out.sigma.end(), 0.0);
    out.s.reserve(domains.size());
    for (double sg : out.sigma) out.s.push_back(sg / (total + epsilon));
    if (polarity != SaliencyPolarity::None) {
        for (std::size_t i = 0; i < out.s.size(); ++i) {
            bool pass = polarity == SaliencyPolarity::Above ? out.s[i] > threshold
                                                            : out.s[i] < threshold;
            if (pass) out.assigned.push_back(static_cast<int>(i));
        }
    }
    return out;
}

// --- community stylometry ----------------------------------------------------

double map_icon_distance(const EmbeddingTable& icons, const std::vector<std::size_t>& a,
                         const std::vector<std::size_t>& b) {
    if (a.empty() || b.empty()) throw Error("EmptySample", "icon set is empty");
    double row_part = 0.0;
    for (std::size_t i : a) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j : b)
            best = std::min(best, cosine_distance(icons.vec(i), icons.vec(j), icons.dim));
        row_part += std::tanh(best);
    }
    double col_part = 0.0;
    for (std::size_t j : b) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i : a)
            best = std::min(best, cosine_distance(icons.vec(i), icons.vec(j), icons.dim));
        col_part += std::tanh(best);
    }
    return row_part / static_cast<double>(a.size()) + col_part / static_cast<double>(b.size());
}

CommunityDistanceResult community_distance_test(
    const EmbeddingTable& icons, const std::vector<std::vector<std::size_t>>& map_icons,
    const std::vector<int>& community, int n_batches, int batch_size, std::size_t max_icons,
    std::uint64_t seed, int threads) {
    if (map_icons.size() != community.size())
        throw Error("DimensionMismatch", "one community label per map");
    if (n_batches < 1 || batch_size < 2) throw Error("BadValue", "need batches of >= 2 maps");

    // Maps usable at all: non-empty icon sets.
    std::vector<std::size_t> usable;
    for (std::size_t m = 0; m < map_icons.size(); ++m)
        if (!map_icons[m].empty()) usable.push_back(m);
    std::set<int> communities;
    for (std::size_t m : usable) communities.insert(community[m]);
    if (communities.size() < 2)
        throw Error("SingletonBatch", "need at least two communities with icon sets");

    Rng root(seed);
    CommunityDistanceResult out;
    for (int b = 0; b < n_batches; ++b) {
        Rng rng = root.derive("batch", static_cast<std::uint64_t>(b));
        // Stratified pick: one map from each of two distinct communities first,
        // the rest uniform without replacement.
        std::vector<std::size_t> chosen;
        std::vector<std::size_t> pool(usable);
        rng.shuffle(pool);
        std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(batch_size), pool.size());
        int first_comm = community[pool[0]];
        chosen.push_back(pool[0]);
        std::size_t second = pool.size();
        for (std::size_t t = 1; t < pool.size(); ++t) {
            if (community[pool[t]] != first_comm) {
                second = t;
                break;
            }
        }
        if (second == pool.size()) throw Error("SingletonBatch", "batch has a single community");
        chosen.push_back(pool[second]);
        for (std::size_t t = 1; t < pool.size() && chosen.size() < want; ++t) {
            if (t == second) continue;
            chosen.push_back(pool[t]);
        }
        std::sort(chosen.begin(), chosen.end());

        // Cap icon sets deterministically per map.
        std::vector<std::vector<std::size_t>> sets(chosen.size());
        for (std::size_t t = 0; t < chosen.size(); ++t) {
            const auto& full = map_icons[chosen[t]];
            if (full.size() <= max_icons) {
                sets[t] = full;
            } else {
                Rng sub = rng.derive("icons", static_cast<std::uint64_t>(chosen[t]));
                auto pick = sub.sample_without_replacement(full.size(), max_icons);
                std::sort(pick.begin(), pick.end());
                for (std::size_t p : pick) sets[t].push_back(full[p]);
            }
        }

        const std::size_t nm = chosen.size();
        std::vector<double> dmat(nm * nm, 0.0);
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (std::size_t i = 0; i + 1 < nm; ++i)
            for (std::size_t j = i + 1; j < nm; ++j) pairs.push_back({i, j});
        parallel_for(pairs.size(), threads, [&](std::size_t p) {
            auto [i, j] = pairs[p];
            dmat[i * nm + j] = map_icon_distance(icons, sets[i], sets[j]);
        });

        std::vector<double> d, delta;
        for (const auto& [i, j] : pairs) {
            d.push_back(dmat[i * nm + j]);
            delta.push_back(community[chosen[i]] != community[chosen[j]] ? 1.0 : 0.0);
        }
        out.per_batch_rho.push_back(pearson(d, delta));
    }

    out.mean_rho = mean(out.per_batch_rho);
    if (out.per_batch_rho.size() > 1) {
        double sd = std::sqrt(sample_variance(out.per_batch_rho));
        double half = 1.959963984540054 * sd /
                      std::sqrt(static_cast<double>(out.per_batch_rho.size()));
        out.ci_lo = out.mean_rho - half;
        out.ci_hi = out.mean_rho + half;
    } else {
        out.ci_lo = out.ci_hi = out.mean_rho;
    }
    return out;
}

// --- social graph ------------------------------------------------------------

SocialGraph build_social_graph(const Dataset& dataset) {
    std::map<std::string, std::vector<std::size_t>> by_creator;  // creator -> record ids
    for (std::size_t r = 0; r < dataset.records.size(); ++r) {
        std::set<std::string> uniq(dataset.records[r].creators.begin(),
                                   dataset.records[r].creators.end());
        for (const auto& c : uniq) by_creator[c].push_back(r);
    }

    SocialGraph sg;
    std::unordered_map<std::string, int> node_of;
    for (const auto& [creator, recs] : by_creator) {
        int id = static_cast<int>(sg.graph.node_ids.size());
        node_of[creator] = id;
        sg.graph.node_ids.push_back(creator);
        sg.publication_count.push_back(static_cast<int>(recs.size()));
        double ysum = 0.0;
        std::map<std::string, int> cities, countries;
        for (std::size_t r : recs) {
            const auto& rec = dataset.records[r];
            ysum += rec.year;
            if (rec.pub_city) ++cities[*rec.pub_city];
            if (rec.pub_country) ++countries[*rec.pub_country];
        }
        sg.mean_year.push_back(ysum / static_cast<double>(recs.size()));
        auto mode_of = [](const std::map<std::string, int>& counts) {
            std::string best;
            int best_n = 0;
            for (const auto& [name, cnt] : counts)
                if (cnt > best_n) {  // map order: first (lexicographic) wins ties
                    best = name;
                    best_n = cnt;
                }
            return best;
        };
        sg.main_city.push_back(mode_of(cities));
        sg.main_country.push_back(mode_of(countries));
    }
    sg.graph.n = static_cast<int>(sg.graph.node_ids.size());

    std::map<std::pair<int, int>, double> weight;
    for (const auto& rec : dataset.records) {
        std::set<std::string> uniq(rec.creators.begin(), rec.creators.end());
        std::vector<int> nodes;
        for (const auto& c : uniq) nodes.push_back(node_of[c]);
        std::sort(nodes.begin(), nodes.end());
        for (std::size_t a = 0; a + 1 < nodes.size(); ++a)
            for (std::size_t b = a + 1; b < nodes.size(); ++b)
                weight[{nodes[a], nodes[b]}] += 1.0;
    }
    for (const auto& [uv, w] : weight) sg.graph.edges.push_back({uv.first, uv.second, w});
    return sg;
}

}  // namespace cartolab
