#include "cartolab/semiotics.hpp"

#include "cartolab/graph.hpp"
#include "cartolab/rng.hpp"
#include "cartolab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

namespace cartolab {

namespace {

constexpr int kNumModes = 7;

void normalize_columns(StrataTable& t) {
    t.normalized.assign(t.counts.size(), 0.0);
    for (int s = 0; s < t.n_strata; ++s) {
        std::vector<double> col(static_cast<std::size_t>(t.n_clusters));
        long total = 0;
        for (int m = 0; m < t.n_clusters; ++m) {
            col[static_cast<std::size_t>(m)] = static_cast<double>(t.count_at(m, s));
            total += t.count_at(m, s);
        }
        if (total == 0) {
            t.empty_strata.push_back(s);
            continue;
        }
        double p95 = percentile(col, 95.0);
        if (p95 <= 0.0) continue;
        for (int m = 0; m < t.n_clusters; ++m)
            t.normalized[static_cast<std::size_t>(m) * t.n_strata + s] =
                std::min(col[static_cast<std::size_t>(m)] / p95, 1.0);
    }
}

std::string stratum_label(double lo, double hi, bool last) {
    std::ostringstream os;
    os << "[" << format_double(lo, 6) << "," << format_double(hi, 6) << (last ? "]" : ")");
    return os.str();
}

// Per-mode single-column tables for modes 1..7.
std::vector<StrataTable> mode_tables(const std::vector<int>& clusters,
                                     const std::vector<int>& modes, int n_clusters) {
    std::vector<StrataTable> out;
    out.reserve(kNumModes);
    for (int k = 1; k <= kNumModes; ++k)
        out.push_back(single_stratum_table(clusters, n_clusters, &modes, k));
    return out;
}

}  // namespace

StrataTable build_strata_table(const std::vector<int>& clusters,
                               const std::vector<double>& strat_values,
                               const std::vector<double>& strata_edges, int n_clusters,
                               const std::vector<int>* modes, int mode_filter) {
    if (clusters.size() != strat_values.size())
        throw Error("DimensionMismatch", "clusters and strat values differ in length");
    if (modes && modes->size() != clusters.size())
        throw Error("DimensionMismatch", "modes and clusters differ in length");
    if (n_clusters < 1) throw Error("BadValue", "n_clusters must be >= 1");
    if (strata_edges.size() < 2) throw Error("BadValue", "need at least two strata edges");
    if (!std::is_sorted(strata_edges.begin(), strata_edges.end()))
        throw Error("BadValue", "strata edges must be ordered");

    StrataTable t;
    t.n_clusters = n_clusters;
    t.n_strata = static_cast<int>(strata_edges.size()) - 1;
    t.counts.assign(static_cast<std::size_t>(n_clusters) * t.n_strata, 0);
    if (mode_filter > 0) t.mode = mode_filter;
    for (int s = 0; s < t.n_strata; ++s)
        t.strata_labels.push_back(stratum_label(strata_edges[static_cast<std::size_t>(s)],
                                                strata_edges[static_cast<std::size_t>(s) + 1],
                                                s == t.n_strata - 1));

    for (std::size_t i = 0; i < clusters.size(); ++i) {
        if (mode_filter > 0 && (*modes)[i] != mode_filter) continue;
        int m = clusters[i];
        if (m < 0 || m >= n_clusters) throw Error("BadValue", "cluster index out of range");
        double v = strat_values[i];
        if (v < strata_edges.front() || v > strata_edges.back()) continue;
        auto it = std::upper_bound(strata_edges.begin(), strata_edges.end(), v);
        int s = static_cast<int>(it - strata_edges.begin()) - 1;
        if (s == t.n_strata) --s;  // top edge belongs to the last stratum
        ++t.counts[static_cast<std::size_t>(m) * t.n_strata + s];
    }
    normalize_columns(t);
    return t;
}

StrataTable single_stratum_table(const std::vector<int>& clusters, int n_clusters,
                                 const std::vector<int>* modes, int mode_filter) {
    if (modes && modes->size() != clusters.size())
        throw Error("DimensionMismatch", "modes and clusters differ in length");
    if (n_clusters < 1) throw Error("BadValue", "n_clusters must be >= 1");
    StrataTable t;
    t.n_clusters = n_clusters;
    t.n_strata = 1;
    t.counts.assign(static_cast<std::size_t>(n_clusters), 0);
    t.strata_labels.push_back("all");
    if (mode_filter > 0) t.mode = mode_filter;
    for (std::size_t i = 0; i < clusters.size(); ++i) {
        if (mode_filter > 0 && (*modes)[i] != mode_filter) continue;
        int m = clusters[i];
        if (m < 0 || m >= n_clusters) throw Error("BadValue", "cluster index out of range");
        ++t.counts[static_cast<std::size_t>(m)];
    }
    normalize_columns(t);
    return t;
}

std::vector<double> characteristicity(const StrataTable& table) {
    std::vector<double> chi(table.normalized.size(),
                            -std::numeric_limits<double>::infinity());
    for (int s = 0; s < table.n_strata; ++s) {
        double mu = 0.0;
        for (int m = 0; m < table.n_clusters; ++m) mu += table.norm_at(m, s);
        mu /= static_cast<double>(table.n_clusters);
        if (mu <= 0.0) continue;
        for (int m = 0; m < table.n_clusters; ++m) {
            double v = table.norm_at(m, s);
            if (v > 0.0)
                chi[static_cast<std::size_t>(m) * table.n_strata + s] = std::log(v / mu);
        }
    }
    return chi;
}

std::vector<int> top_characteristic(const StrataTable& table, const std::vector<double>& chi,
                                    int stratum, int top_n) {
    if (chi.size() != table.normalized.size())
        throw Error("DimensionMismatch", "chi does not match the table");
    if (stratum < 0 || stratum >= table.n_strata)
        throw Error("BadValue", "stratum out of range");
    std::vector<std::pair<double, int>> ranked;
    for (int m = 0; m < table.n_clusters; ++m) {
        double v = chi[static_cast<std::size_t>(m) * table.n_strata + stratum];
        if (std::isfinite(v)) ranked.push_back({-v, m});
    }
    std::sort(ranked.begin(), ranked.end());
    std::vector<int> out;
    for (std::size_t i = 0; i < ranked.size() && static_cast<int>(i) < top_n; ++i)
        out.push_back(ranked[i].second);
    return out;
}

double rupture(const StrataTable& a, const StrataTable& b) {
    if (a.n_strata != 1 || b.n_strata != 1)
        throw Error("DimensionMismatch", "rupture expects single-stratum tables");
    if (a.n_clusters != b.n_clusters)
        throw Error("DimensionMismatch", "tables cover different cluster sets");
    double sum = 0.0;
    for (int m = 0; m < a.n_clusters; ++m)
        sum += std::abs(a.norm_at(m, 0) - b.norm_at(m, 0));
    return sum / static_cast<double>(a.n_clusters);
}

double rupture_semantic(const std::vector<StrataTable>& a, const std::vector<StrataTable>& b,
                        std::vector<int>* skipped) {
    if (a.size() != b.size())
        throw Error("DimensionMismatch", "mode table counts differ");
    if (skipped) skipped->clear();
    double sum = 0.0;
    int active = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        long mass = std::accumulate(a[k].counts.begin(), a[k].counts.end(), 0L) +
                    std::accumulate(b[k].counts.begin(), b[k].counts.end(), 0L);
        if (mass == 0) {
            if (skipped) skipped->push_back(static_cast<int>(k));
            continue;
        }
        sum += rupture(a[k], b[k]);
        ++active;
    }
    if (active == 0) throw Error("NoActiveMode", "every mode has zero mass on both sides");
    return sum / active;
}

std::vector<RupturePoint> rupture_curve(std::vector<SignRecord> signs, int n_clusters,
                                        int window_steps, double stratum_frac,
                                        double overlap_frac, int bootstrap_n,
                                        std::uint64_t seed, bool use_modes, int threads) {
    if (n_clusters < 1) throw Error("BadValue", "n_clusters must be >= 1");
    if (window_steps < 1) throw Error("BadValue", "window_steps must be >= 1");
    if (stratum_frac <= 0.0 || stratum_frac > 1.0)
        throw Error("BadValue", "stratum_frac must lie in (0,1]");
    if (overlap_frac < 0.0 || overlap_frac >= 1.0)
        throw Error("BadValue", "overlap_frac must lie in [0,1)");
    const long n = static_cast<long>(signs.size());
    const long window = std::max(1L, std::lround(stratum_frac * static_cast<double>(n)));
    const long gap = std::max(1L, std::lround((1.0 - overlap_frac) * static_cast<double>(window)));
    const long span = gap + window;
    if (n < span)
        throw Error("InsufficientData", "dataset smaller than one window pair");

    std::sort(signs.begin(), signs.end(), [](const SignRecord& x, const SignRecord& y) {
        return x.strat < y.strat;
    });

    std::vector<RupturePoint> out(static_cast<std::size_t>(window_steps));
    Rng base(seed);
    parallel_for(static_cast<std::size_t>(window_steps), threads, [&](std::size_t t) {
        long start =
            window_steps == 1
                ? 0
                : std::lround(static_cast<double>(t) * static_cast<double>(n - span) /
                              static_cast<double>(window_steps - 1));
        auto window_signs = [&](long lo, long hi) {
            std::vector<int> cl, md;
            cl.reserve(static_cast<std::size_t>(hi - lo));
            md.reserve(static_cast<std::size_t>(hi - lo));
            for (long i = lo; i < hi; ++i) {
                cl.push_back(signs[static_cast<std::size_t>(i)].cluster);
                md.push_back(signs[static_cast<std::size_t>(i)].mode);
            }
            return std::pair{cl, md};
        };
        auto [cl_a, md_a] = window_signs(start, start + window);
        auto [cl_b, md_b] = window_signs(start + gap, start + span);

        // Cluster-level absolute differences, one row per active mode.
        std::vector<std::vector<double>> diffs;
        if (use_modes) {
            auto ta = mode_tables(cl_a, md_a, n_clusters);
            auto tb = mode_tables(cl_b, md_b, n_clusters);
            for (int k = 0; k < kNumModes; ++k) {
                long mass =
                    std::accumulate(ta[static_cast<std::size_t>(k)].counts.begin(),
                                    ta[static_cast<std::size_t>(k)].counts.end(), 0L) +
                    std::accumulate(tb[static_cast<std::size_t>(k)].counts.begin(),
                                    tb[static_cast<std::size_t>(k)].counts.end(), 0L);
                if (mass == 0) continue;
                std::vector<double> d(static_cast<std::size_t>(n_clusters));
                for (int m = 0; m < n_clusters; ++m)
                    d[static_cast<std::size_t>(m)] =
                        std::abs(ta[static_cast<std::size_t>(k)].norm_at(m, 0) -
                                 tb[static_cast<std::size_t>(k)].norm_at(m, 0));
                diffs.push_back(std::move(d));
            }
        } else {
            StrataTable ta = single_stratum_table(cl_a, n_clusters);
            StrataTable tb = single_stratum_table(cl_b, n_clusters);
            std::vector<double> d(static_cast<std::size_t>(n_clusters));
            for (int m = 0; m < n_clusters; ++m)
                d[static_cast<std::size_t>(m)] = std::abs(ta.norm_at(m, 0) - tb.norm_at(m, 0));
            diffs.push_back(std::move(d));
        }

        auto curve_rho = [&](const std::vector<std::size_t>& idx) {
            if (diffs.empty()) return 0.0;
            double sum_modes = 0.0;
            for (const auto& d : diffs) {
                double s = 0.0;
                for (std::size_t m : idx) s += d[m];
                sum_modes += s / static_cast<double>(idx.size());
            }
            return sum_modes / static_cast<double>(diffs.size());
        };

        std::vector<std::size_t> all(static_cast<std::size_t>(n_clusters));
        std::iota(all.begin(), all.end(), 0u);
        RupturePoint& pt = out[t];
        long mid = std::min<long>(n - 1, start + span / 2);
        pt.position = signs[static_cast<std::size_t>(mid)].strat;
        pt.rho = curve_rho(all);

        if (bootstrap_n > 0 && !diffs.empty()) {
            Rng wrng = base.derive("window", t);
            std::vector<double> reps(static_cast<std::size_t>(bootstrap_n));
            std::vector<std::size_t> draw(static_cast<std::size_t>(n_clusters));
            for (int r = 0; r < bootstrap_n; ++r) {
                Rng rr = wrng.derive("rep", static_cast<std::uint64_t>(r));
                for (auto& v : draw) v = rr.below(static_cast<std::uint64_t>(n_clusters));
                reps[static_cast<std::size_t>(r)] = curve_rho(draw);
            }
            pt.ci_lo = percentile(reps, 2.5);
            pt.ci_hi = percentile(reps, 97.5);
        } else {
            pt.ci_lo = pt.ci_hi = pt.rho;
        }
    });
    return out;
}

std::vector<DiversityPoint> diversity_series(const std::vector<int>& clusters,
                                             const std::vector<int>& years,
                                             const std::map<int, long>& maps_per_year,
                                             int n_clusters, int active_min) {
    if (clusters.size() != years.size())
        throw Error("DimensionMismatch", "clusters and years differ in length");
    if (n_clusters < 1) throw Error("BadValue", "n_clusters must be >= 1");
    std::map<int, std::unordered_map<int, long>> per_year;
    for (std::size_t i = 0; i < clusters.size(); ++i)
        ++per_year[years[i]][clusters[i]];

    std::vector<DiversityPoint> out;
    for (const auto& [year, counts] : per_year) {
        auto it = maps_per_year.find(year);
        if (it == maps_per_year.end() || it->second <= 0)
            throw Error("ZeroMaps", "no maps recorded for year " + std::to_string(year));
        DiversityPoint p;
        p.year = year;
        p.maps = it->second;
        for (const auto& [cl, cnt] : counts)
            if (cnt >= active_min) ++p.active;
        p.macro_diversity = static_cast<double>(p.active) / static_cast<double>(n_clusters);
        p.micro_diversity = p.macro_diversity / static_cast<double>(p.maps);
        out.push_back(p);
    }
    return out;
}

std::vector<ComplexityPoint> complexity_series(const std::vector<MapSigns>& maps,
                                               int presence_min) {
    if (presence_min < 1) throw Error("BadValue", "presence_min must be >= 1");
    std::map<int, std::pair<long, double>> per_year;  // maps, sum of active counts
    for (const MapSigns& m : maps) {
        std::unordered_map<int, long> counts;
        for (int c : m.clusters) ++counts[c];
        long active = 0;
        for (const auto& [cl, cnt] : counts)
            if (cnt >= presence_min) ++active;
        auto& agg = per_year[m.year];
        ++agg.first;
        agg.second += static_cast<double>(active);
    }
    std::vector<ComplexityPoint> out;
    for (const auto& [year, agg] : per_year) {
        ComplexityPoint p;
        p.year = year;
        p.maps = agg.first;
        p.mean_active = agg.second / static_cast<double>(agg.first);
        out.push_back(p);
    }
    return out;
}

PairTest contingency_test(long a, long b, long c, long d) {
    PairTest t;
    t.p = fisher_exact_greater(a, b, c, d);
    if (b == 0 || c == 0)
        t.odds_ratio = std::numeric_limits<double>::infinity();
    else
        t.odds_ratio = (static_cast<double>(a) * static_cast<double>(d)) /
                       (static_cast<double>(b) * static_cast<double>(c));
    return t;
}

ComplexResult detect_complexes(const std::vector<MapSigns>& maps, int n_clusters,
                               int presence_min, double p_threshold, bool use_bh,
                               std::uint64_t seed, int threads) {
    if (n_clusters < 1) throw Error("BadValue", "n_clusters must be >= 1");
    if (presence_min < 1) throw Error("BadValue", "presence_min must be >= 1");
    const long n_maps = static_cast<long>(maps.size());
    const std::size_t words = (maps.size() + 63) / 64;

    // Presence bitset per cluster over maps.
    std::vector<std::vector<std::uint64_t>> presence(
        static_cast<std::size_t>(n_clusters), std::vector<std::uint64_t>(words, 0));
    for (std::size_t i = 0; i < maps.size(); ++i) {
        std::unordered_map<int, long> counts;
        for (int c : maps[i].clusters) {
            if (c < 0 || c >= n_clusters) throw Error("BadValue", "cluster index out of range");
            ++counts[c];
        }
        for (const auto& [cl, cnt] : counts)
            if (cnt >= presence_min)
                presence[static_cast<std::size_t>(cl)][i / 64] |= 1ull << (i % 64);
    }
    std::vector<long> margin(static_cast<std::size_t>(n_clusters), 0);
    for (int j = 0; j < n_clusters; ++j) {
        long s = 0;
        for (std::uint64_t w : presence[static_cast<std::size_t>(j)])
            s += __builtin_popcountll(w);
        margin[static_cast<std::size_t>(j)] = s;
    }

    ComplexResult res;
    std::vector<std::vector<ClusterEdge>> cand(static_cast<std::size_t>(n_clusters));
    std::vector<std::vector<double>> all_p(use_bh ? static_cast<std::size_t>(n_clusters) : 0);
    std::vector<long> tested(static_cast<std::size_t>(n_clusters), 0);
    parallel_for(static_cast<std::size_t>(n_clusters), threads, [&](std::size_t j) {
        if (margin[j] == 0) return;
        for (int k = static_cast<int>(j) + 1; k < n_clusters; ++k) {
            if (margin[static_cast<std::size_t>(k)] == 0) continue;
            long a = 0;
            for (std::size_t w = 0; w < words; ++w)
                a += __builtin_popcountll(presence[j][w] & presence[static_cast<std::size_t>(k)][w]);
            long b = margin[j] - a;
            long c = margin[static_cast<std::size_t>(k)] - a;
            long d = n_maps - a - b - c;
            PairTest pt = contingency_test(a, b, c, d);
            ++tested[j];
            if (use_bh) all_p[j].push_back(pt.p);
            if (pt.p < p_threshold) {
                ClusterEdge e;
                e.a = static_cast<int>(j);
                e.b = k;
                e.p = pt.p;
                e.odds_ratio = pt.odds_ratio;
                cand[j].push_back(e);
            }
        }
    });
    res.pairs_tested = std::accumulate(tested.begin(), tested.end(), 0L);

    if (use_bh && res.pairs_tested > 0) {
        std::vector<double> sorted_p;
        sorted_p.reserve(static_cast<std::size_t>(res.pairs_tested));
        for (const auto& v : all_p) sorted_p.insert(sorted_p.end(), v.begin(), v.end());
        std::sort(sorted_p.begin(), sorted_p.end());
        std::vector<double> q(sorted_p.size());
        const double m = static_cast<double>(sorted_p.size());
        double run = 1.0;
        for (std::size_t i = sorted_p.size(); i-- > 0;) {
            run = std::min(run, sorted_p[i] * m / static_cast<double>(i + 1));
            q[i] = run;
        }
        for (auto& v : cand)
            for (ClusterEdge& e : v) {
                std::size_t pos = static_cast<std::size_t>(
                    std::lower_bound(sorted_p.begin(), sorted_p.end(), e.p) - sorted_p.begin());
                e.q = q[pos];
            }
        for (auto& v : cand)
            v.erase(std::remove_if(v.begin(), v.end(),
                                   [&](const ClusterEdge& e) { return e.q >= p_threshold; }),
                    v.end());
    }
    for (auto& v : cand) res.edges.insert(res.edges.end(), v.begin(), v.end());

    if (res.edges.empty()) {
        res.community.resize(static_cast<std::size_t>(n_clusters));
        std::iota(res.community.begin(), res.community.end(), 0);
        res.modularity = 0.0;
    } else {
        Graph g;
        g.n = n_clusters;
        for (const ClusterEdge& e : res.edges) g.edges.push_back({e.a, e.b, 1.0});
        res.community = louvain(g, seed);
        res.modularity = modularity(g, res.community);
    }

    std::map<int, SignComplex> by_comm;
    for (int m = 0; m < n_clusters; ++m) {
        SignComplex& sc = by_comm[res.community[static_cast<std::size_t>(m)]];
        sc.complex_id = res.community[static_cast<std::size_t>(m)];
        sc.member_clusters.push_back(m);
    }
    for (auto& [id, sc] : by_comm) {
        std::vector<std::uint64_t> acc(words, 0);
        for (int m : sc.member_clusters)
            for (std::size_t w = 0; w < words; ++w) acc[w] |= presence[static_cast<std::size_t>(m)][w];
        long s = 0;
        for (std::uint64_t w : acc) s += __builtin_popcountll(w);
        sc.support = s;
        res.complexes.push_back(std::move(sc));
    }
    return res;
}

namespace {

double pooled_upsilon(const SemanticSymbolicCounts& x, const std::vector<std::size_t>& chosen,
                      std::vector<long>& scratch, long* clusters_used) {
    const std::size_t mk = static_cast<std::size_t>(x.n_clusters) * x.n_modes;
    scratch.assign(mk, 0);
    for (std::size_t mi : chosen)
        for (const auto& [cl, mode, cnt] : x.per_map[mi])
            scratch[static_cast<std::size_t>(cl) * x.n_modes + static_cast<std::size_t>(mode)] +=
                cnt;
    double sum = 0.0;
    long used = 0;
    for (int m = 0; m < x.n_clusters; ++m) {
        long tot = 0, best = 0;
        for (int k = 0; k < x.n_modes; ++k) {
            long v = scratch[static_cast<std::size_t>(m) * x.n_modes + static_cast<std::size_t>(k)];
            tot += v;
            best = std::max(best, v);
        }
        if (tot > 0) {
            sum += static_cast<double>(best) / static_cast<double>(tot);
            ++used;
        }
    }
    if (clusters_used) *clusters_used = used;
    if (used == 0) throw Error("EmptySubset", "subset has no sign occurrences");
    return sum / static_cast<double>(used);
}

}  // namespace

UnivocityResult univocity(const SemanticSymbolicCounts& x, const std::vector<std::size_t>& subset,
                          int bootstrap_reps, int sample_size, std::uint64_t seed) {
    if (subset.empty()) throw Error("EmptySubset", "map subset is empty");
    if (x.n_modes < 1 || x.n_clusters < 1)
        throw Error("BadValue", "counts carry no clusters or modes");
    for (std::size_t mi : subset) {
        if (mi >= x.per_map.size()) throw Error("BadValue", "map index out of range");
        for (const auto& [cl, mode, cnt] : x.per_map[mi]) {
            if (cl < 0 || cl >= x.n_clusters || mode < 0 || mode >= x.n_modes || cnt < 0)
                throw Error("BadValue", "bad count triplet");
        }
    }

    UnivocityResult res;
    std::vector<long> scratch;
    res.upsilon = pooled_upsilon(x, subset, scratch, &res.clusters_used);
    if (bootstrap_reps <= 0) {
        res.boot_mean = res.upsilon;
        res.ci_lo = res.ci_hi = res.upsilon;
        return res;
    }

    const std::size_t n = subset.size();
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(sample_size), n);
    Rng rng(seed);
    std::vector<double> reps;
    reps.reserve(static_cast<std::size_t>(bootstrap_reps));
    std::vector<std::size_t> chosen(k);
    for (int r = 0; r < bootstrap_reps; ++r) {
        Rng rr = rng.derive("rep", static_cast<std::uint64_t>(r));
        if (n > static_cast<std::size_t>(sample_size)) {
            auto idx = rr.sample_without_replacement(n, k);
            for (std::size_t i = 0; i < k; ++i) chosen[i] = subset[idx[i]];
        } else {
            for (std::size_t i = 0; i < k; ++i)
                chosen[i] = subset[rr.below(static_cast<std::uint64_t>(n))];
        }
        reps.push_back(pooled_upsilon(x, chosen, scratch, nullptr));
    }
    res.boot_mean = mean(reps);
    res.ci_lo = percentile(reps, 5.0);
    res.ci_hi = percentile(reps, 95.0);
    return res;
}

RuptureMatrix geographic_rupture_matrix(const std::vector<GroupSigns>& groups, int n_clusters,
                                        long min_records, bool use_modes) {
    std::vector<const GroupSigns*> kept;
    for (const GroupSigns& g : groups)
        if (g.n_records >= min_records) kept.push_back(&g);
    if (kept.size() < 2)
        throw Error("TooFewGroups", "fewer than two groups meet the record minimum");

    RuptureMatrix mat;
    for (const GroupSigns* g : kept) mat.names.push_back(g->name);
    const std::size_t n = kept.size();
    mat.rho.assign(n * n, 0.0);

    std::vector<StrataTable> plain(n);
    std::vector<std::vector<StrataTable>> per_mode(n);
    for (std::size_t i = 0; i < n; ++i) {
        plain[i] = single_stratum_table(kept[i]->clusters, n_clusters);
        if (use_modes && !kept[i]->modes.empty())
            per_mode[i] = mode_tables(kept[i]->clusters, kept[i]->modes, n_clusters);
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double r;
            if (!per_mode[i].empty() && !per_mode[j].empty()) {
                try {
                    r = rupture_semantic(per_mode[i], per_mode[j]);
                } catch (const Error& e) {
                    if (e.code() != "NoActiveMode") throw;
                    r = rupture(plain[i], plain[j]);
                }
            } else {
                r = rupture(plain[i], plain[j]);
            }
            mat.rho[i * n + j] = r;
            mat.rho[j * n + i] = r;
        }
    }
    return mat;
}

FlowResult diachronic_flow(const std::vector<FlowSign>& signs, int n_clusters, int n_strata,
                           bool use_modes) {
    if (n_strata < 2) throw Error("BadValue", "need at least two strata");
    if (signs.size() < static_cast<std::size_t>(n_strata))
        throw Error("InsufficientData", "fewer signs than strata");

    std::vector<std::size_t> order(signs.size());
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return signs[a].strat < signs[b].strat;
    });

    FlowResult res;
    const std::size_t n = signs.size();
    std::vector<int> stratum_of(n);
    for (std::size_t rank = 0; rank < n; ++rank)
        stratum_of[order[rank]] =
            static_cast<int>(rank * static_cast<std::size_t>(n_strata) / n);
    res.strata_edges.push_back(signs[order.front()].strat);
    for (int s = 1; s < n_strata; ++s) {
        // First rank assigned to stratum s.
        std::size_t rank = (static_cast<std::size_t>(s) * n + static_cast<std::size_t>(n_strata) - 1) /
                           static_cast<std::size_t>(n_strata);
        res.strata_edges.push_back(signs[order[std::min(rank, n - 1)]].strat);
    }
    res.strata_edges.push_back(signs[order.back()].strat);

    // Group signs per (group, stratum) cell.
    struct Cell {
        std::vector<int> clusters, modes;
        std::set<std::string> map_ids;
        long n_signs = 0;
        bool has_ids = false;
    };
    std::map<std::pair<std::string, int>, Cell> cells;
    for (std::size_t i = 0; i < n; ++i) {
        Cell& c = cells[{signs[i].group, stratum_of[i]}];
        c.clusters.push_back(signs[i].cluster);
        c.modes.push_back(signs[i].mode);
        ++c.n_signs;
        if (!signs[i].map_id.empty()) {
            c.has_ids = true;
            c.map_ids.insert(signs[i].map_id);
        }
    }
    for (const auto& [key, cell] : cells) {
        FlowNode node;
        node.group = key.first;
        node.stratum = key.second;
        node.count = cell.has_ids ? static_cast<long>(cell.map_ids.size()) : cell.n_signs;
        res.nodes.push_back(node);
    }

    std::map<std::pair<std::string, int>, StrataTable> plain;
    std::map<std::pair<std::string, int>, std::vector<StrataTable>> per_mode;
    bool any_mode = false;
    if (use_modes)
        for (const auto& [key, cell] : cells)
            for (int m : cell.modes)
                if (m >= 1 && m <= kNumModes) {
                    any_mode = true;
                    break;
                }
    for (const auto& [key, cell] : cells) {
        plain[key] = single_stratum_table(cell.clusters, n_clusters);
        if (use_modes && any_mode) per_mode[key] = mode_tables(cell.clusters, cell.modes, n_clusters);
    }

    for (int t = 0; t + 1 < n_strata; ++t) {
        for (const auto& [ka, ca] : cells) {
            if (ka.second != t) continue;
            for (const auto& [kb, cb] : cells) {
                if (kb.second != t + 1) continue;
                FlowEdge e;
                e.from = ka.first;
                e.from_stratum = t;
                e.to = kb.first;
                e.to_stratum = t + 1;
                if (use_modes && any_mode) {
                    try {
                        e.rho = rupture_semantic(per_mode[ka], per_mode[kb]);
                    } catch (const Error& err) {
                        if (err.code() != "NoActiveMode") throw;
                        e.rho = rupture(plain[ka], plain[kb]);
                    }
                } else {
                    e.rho = rupture(plain[ka], plain[kb]);
                }
                res.edges.push_back(std::move(e));
            }
        }
    }
    res.n_pairs = static_cast<long>(res.edges.size());
    if (res.n_pairs > 0) {
        std::vector<double> rhos;
        rhos.reserve(res.edges.size());
        for (const FlowEdge& e : res.edges) rhos.push_back(e.rho);
        res.mean_rho = mean(rhos);
        res.sd_rho = res.n_pairs > 1 ? std::sqrt(sample_variance(rhos)) : 0.0;
        res.threshold = res.mean_rho -
                        1.96 * res.sd_rho / std::sqrt(static_cast<double>(res.n_pairs));
        for (FlowEdge& e : res.edges) e.significant = e.rho < res.threshold;
    }
    return res;
}

}  // namespace cartolab
