#include "cartolab/composition.hpp"

#include "cartolab/cluster.hpp"
#include "cartolab/rng.hpp"
#include "cartolab/stats.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace cartolab {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

struct ContentBox {
    int row0, row1, col0, col1;
};

ContentBox content_box(const SemanticMask& mask, double threshold) {
    if (mask.width <= 0 || mask.height <= 0 || mask.labels.empty())
        throw Error("BadValue", "empty mask");
    std::vector<long> row_fg(static_cast<std::size_t>(mask.height), 0);
    std::vector<long> col_fg(static_cast<std::size_t>(mask.width), 0);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(x, y) != kBackground) {
                ++row_fg[static_cast<std::size_t>(y)];
                ++col_fg[static_cast<std::size_t>(x)];
            }
    ContentBox box{-1, -1, -1, -1};
    for (int y = 0; y < mask.height; ++y)
        if (static_cast<double>(row_fg[static_cast<std::size_t>(y)]) / mask.width > threshold) {
            if (box.row0 < 0) box.row0 = y;
            box.row1 = y + 1;
        }
    for (int x = 0; x < mask.width; ++x)
        if (static_cast<double>(col_fg[static_cast<std::size_t>(x)]) / mask.height > threshold) {
            if (box.col0 < 0) box.col0 = x;
            box.col1 = x + 1;
        }
    if (box.row0 < 0 || box.col0 < 0)
        throw Error("NoContent", "no row or column exceeds the content threshold");
    return box;
}

// Rounded thirds; f(w,q) + f(w,3-q) == w, so mirrored masks split into
// mirrored quadrants exactly.
inline int third_boundary(int lo, int extent, int q) {
    return lo + static_cast<int>(std::lround(static_cast<double>(extent) * q / 3.0));
}

// Two-sided p for a Pearson r over n samples.
double pearson_p(double r, long n) {
    if (n < 3) return kNan;
    double rr = std::min(std::abs(r), 1.0);
    if (1.0 - rr * rr <= 0.0) return 0.0;
    double t = rr * std::sqrt(static_cast<double>(n - 2) / (1.0 - rr * rr));
    return 2.0 * (1.0 - student_t_cdf(t, static_cast<double>(n - 2)));
}

int transpose_q(int q) {
    int r = (q - 1) / 3, c = (q - 1) % 3;
    return c * 3 + r + 1;
}
int hmirror_q(int q) {
    int r = (q - 1) / 3, c = (q - 1) % 3;
    return r * 3 + (2 - c) + 1;
}
int vmirror_q(int q) {
    int r = (q - 1) / 3, c = (q - 1) % 3;
    return (2 - r) * 3 + c + 1;
}

using QEdge = std::pair<int, int>;

QEdge canon(int a, int b) { return a < b ? QEdge{a, b} : QEdge{b, a}; }

QEdge map_edge(const QEdge& e, int (*f)(int)) { return canon(f(e.first), f(e.second)); }

std::vector<QEdge> all_edges() {
    std::vector<QEdge> out;
    for (int a = 1; a <= 9; ++a)
        for (int b = a + 1; b <= 9; ++b) out.push_back({a, b});
    return out;
}

// Unordered mirror pairs (e, f(e)) with e != f(e); the A side is chosen by
// the comparator on e vs f(e).
std::vector<std::pair<QEdge, QEdge>> mirror_pairs(int (*f)(int),
                                                  bool (*a_side)(const QEdge&, const QEdge&)) {
    std::vector<std::pair<QEdge, QEdge>> pairs;
    std::set<QEdge> used;
    for (const QEdge& e : all_edges()) {
        QEdge m = map_edge(e, f);
        if (m == e || used.count(e) || used.count(m)) continue;
        used.insert(e);
        used.insert(m);
        if (a_side(e, m))
            pairs.push_back({e, m});
        else
            pairs.push_back({m, e});
    }
    return pairs;
}

double mean_row(const QEdge& e) {
    return ((e.first - 1) / 3 + (e.second - 1) / 3) / 2.0;
}
double mean_col(const QEdge& e) {
    return ((e.first - 1) % 3 + (e.second - 1) % 3) / 2.0;
}

double edge_value(const QuadrantGraph& g, const QEdge& e) {
    double v = g.edge(e.first, e.second);
    if (std::isnan(v))
        throw Error("ZeroVariance", "edge (" + std::to_string(e.first) + "," +
                                        std::to_string(e.second) + ") is undefined");
    return v;
}

}  // namespace

QuadrantProfile quadrant_ratios(const SemanticMask& mask, double content_threshold) {
    ContentBox box = content_box(mask, content_threshold);
    if (box.row1 - box.row0 < 3 || box.col1 - box.col0 < 3)
        throw Error("NoContent", "content box too small to split into nine quadrants");

    QuadrantProfile p;
    p.row0 = box.row0;
    p.row1 = box.row1;
    p.col0 = box.col0;
    p.col1 = box.col1;
    const int h = box.row1 - box.row0, w = box.col1 - box.col0;
    for (int qr = 0; qr < 3; ++qr) {
        int y0 = third_boundary(box.row0, h, qr), y1 = third_boundary(box.row0, h, qr + 1);
        for (int qc = 0; qc < 3; ++qc) {
            int x0 = third_boundary(box.col0, w, qc), x1 = third_boundary(box.col0, w, qc + 1);
            long counts[kNumClasses] = {0, 0, 0, 0, 0, 0};
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) ++counts[mask.at(x, y)];
            long total = static_cast<long>(y1 - y0) * (x1 - x0);
            auto& row = p.ratios[static_cast<std::size_t>(qr * 3 + qc)];
            for (int c = 0; c < kNumClasses; ++c)
                row[static_cast<std::size_t>(c)] =
                    static_cast<double>(counts[c]) / static_cast<double>(total);
        }
    }
    return p;
}

double shape_ratio(const SemanticMask& mask, double content_threshold) {
    ContentBox box = content_box(mask, content_threshold);
    return static_cast<double>(box.row1 - box.row0) / static_cast<double>(box.col1 - box.col0);
}

Colocation colocation_matrix(const std::vector<QuadrantProfile>& profiles) {
    Colocation co;
    co.n = static_cast<long>(profiles.size()) * 9;
    if (co.n < 3) throw Error("InsufficientData", "need at least three quadrant samples");

    std::array<std::vector<double>, kNumClasses> samples;
    for (auto& v : samples) v.reserve(static_cast<std::size_t>(co.n));
    for (const QuadrantProfile& p : profiles)
        for (int q = 0; q < 9; ++q)
            for (int c = 0; c < kNumClasses; ++c)
                samples[static_cast<std::size_t>(c)].push_back(
                    p.ratios[static_cast<std::size_t>(q)][static_cast<std::size_t>(c)]);

    for (int c = 0; c < kNumClasses; ++c)
        co.defined[static_cast<std::size_t>(c)] =
            sample_variance(samples[static_cast<std::size_t>(c)]) > 0.0;

    co.r.fill(kNan);
    co.p.fill(kNan);
    for (int a = 0; a < kNumClasses; ++a) {
        if (!co.defined[static_cast<std::size_t>(a)]) continue;
        co.r[static_cast<std::size_t>(a) * kNumClasses + a] = 1.0;
        co.p[static_cast<std::size_t>(a) * kNumClasses + a] = 0.0;
        for (int b = a + 1; b < kNumClasses; ++b) {
            if (!co.defined[static_cast<std::size_t>(b)]) continue;
            double r = pearson(samples[static_cast<std::size_t>(a)],
                               samples[static_cast<std::size_t>(b)]);
            double p = pearson_p(r, co.n);
            co.r[static_cast<std::size_t>(a) * kNumClasses + b] = r;
            co.r[static_cast<std::size_t>(b) * kNumClasses + a] = r;
            co.p[static_cast<std::size_t>(a) * kNumClasses + b] = p;
            co.p[static_cast<std::size_t>(b) * kNumClasses + a] = p;
        }
    }
    return co;
}

QuadrantGraph quadrant_graph(const std::vector<QuadrantProfile>& profiles, int class_id) {
    if (class_id >= kNumClasses) throw Error("BadValue", "class_id out of range");
    QuadrantGraph g;
    g.class_id = class_id;
    g.n = static_cast<long>(profiles.size());
    if (g.n < 3) throw Error("InsufficientData", "need at least three maps");

    std::array<std::vector<double>, 9> samples;
    for (auto& v : samples) v.reserve(profiles.size());
    for (const QuadrantProfile& p : profiles)
        for (int q = 0; q < 9; ++q) {
            const auto& row = p.ratios[static_cast<std::size_t>(q)];
            double v = class_id < 0 ? 1.0 - row[kBackground]
                                    : row[static_cast<std::size_t>(class_id)];
            samples[static_cast<std::size_t>(q)].push_back(v);
        }

    for (int q = 0; q < 9; ++q)
        g.defined[static_cast<std::size_t>(q)] =
            sample_variance(samples[static_cast<std::size_t>(q)]) > 0.0;

    g.r.fill(kNan);
    g.p.fill(kNan);
    for (int a = 0; a < 9; ++a) {
        if (!g.defined[static_cast<std::size_t>(a)]) continue;
        g.r[static_cast<std::size_t>(a) * 9 + a] = 1.0;
        g.p[static_cast<std::size_t>(a) * 9 + a] = 0.0;
        for (int b = a + 1; b < 9; ++b) {
            if (!g.defined[static_cast<std::size_t>(b)]) continue;
            double r = pearson(samples[static_cast<std::size_t>(a)],
                               samples[static_cast<std::size_t>(b)]);
            double p = pearson_p(r, g.n);
            g.r[static_cast<std::size_t>(a) * 9 + b] = r;
            g.r[static_cast<std::size_t>(b) * 9 + a] = r;
            g.p[static_cast<std::size_t>(a) * 9 + b] = p;
            g.p[static_cast<std::size_t>(b) * 9 + a] = p;
        }
    }
    return g;
}

std::vector<std::pair<int, int>> edge_set(EdgeSet which) {
    switch (which) {
        case EdgeSet::CentralCross:
            return {{2, 5}, {4, 5}, {5, 6}, {5, 8}};
        case EdgeSet::OuterSquare:
            return {{1, 2}, {2, 3}, {1, 4}, {3, 6}, {4, 7}, {6, 9}, {7, 8}, {8, 9}};
        case EdgeSet::Circumjacent: {
            auto e = edge_set(EdgeSet::OuterSquare);
            e.insert(e.end(), {{2, 4}, {2, 6}, {4, 8}, {6, 8}});
            return e;
        }
        case EdgeSet::Radial:
            return {{1, 5}, {3, 5}, {5, 7}, {5, 9}};
        case EdgeSet::LongHorizontal:
            return {{1, 3}, {4, 6}, {7, 9}};
        case EdgeSet::LongVertical:
            return {{1, 7}, {2, 8}, {3, 9}};
    }
    throw Error("BadValue", "unknown edge set");
}

std::vector<std::string> relationship_hypotheses() {
    return {"circumjacent_radial",       "central_outer",
            "longrange_horizontal_vertical", "cross_horizontal_vertical",
            "horizontal_vertical",       "right_left",
            "top_bottom",                "bottom_top"};
}

RelationshipTest relationship_test(const QuadrantGraph& graph, const std::string& hypothesis) {
    RelationshipTest res;
    res.hypothesis = hypothesis;

    std::vector<double> a, b;
    auto collect = [&](const std::vector<QEdge>& edges, std::vector<double>& out) {
        for (const QEdge& e : edges) out.push_back(edge_value(graph, e));
    };
    auto collect_pairs = [&](const std::vector<std::pair<QEdge, QEdge>>& pairs) {
        for (const auto& [ea, eb] : pairs) {
            a.push_back(edge_value(graph, ea));
            b.push_back(edge_value(graph, eb));
        }
    };

    if (hypothesis == "circumjacent_radial") {
        res.paired = false;
        collect(edge_set(EdgeSet::Circumjacent), a);
        collect(edge_set(EdgeSet::Radial), b);
    } else if (hypothesis == "central_outer") {
        res.paired = false;
        collect(edge_set(EdgeSet::CentralCross), a);
        collect(edge_set(EdgeSet::OuterSquare), b);
    } else if (hypothesis == "longrange_horizontal_vertical") {
        res.paired = true;
        std::vector<std::pair<QEdge, QEdge>> pairs;
        for (const auto& [x, y] : edge_set(EdgeSet::LongHorizontal))
            pairs.push_back({canon(x, y), map_edge(canon(x, y), transpose_q)});
        collect_pairs(pairs);
    } else if (hypothesis == "cross_horizontal_vertical") {
        res.paired = true;
        std::vector<std::pair<QEdge, QEdge>> pairs = {{{4, 5}, {2, 5}}, {{5, 6}, {5, 8}}};
        collect_pairs(pairs);
    } else if (hypothesis == "horizontal_vertical") {
        res.paired = true;
        std::vector<std::pair<QEdge, QEdge>> pairs;
        for (int r = 0; r < 3; ++r) {
            int q0 = r * 3 + 1;
            for (const QEdge& e :
                 {canon(q0, q0 + 1), canon(q0 + 1, q0 + 2), canon(q0, q0 + 2)})
                pairs.push_back({e, map_edge(e, transpose_q)});
        }
        collect_pairs(pairs);
    } else if (hypothesis == "right_left") {
        res.paired = true;
        collect_pairs(mirror_pairs(hmirror_q, [](const QEdge& e, const QEdge& m) {
            return mean_col(e) > mean_col(m);
        }));
    } else if (hypothesis == "top_bottom") {
        res.paired = true;
        collect_pairs(mirror_pairs(vmirror_q, [](const QEdge& e, const QEdge& m) {
            return mean_row(e) < mean_row(m);
        }));
    } else if (hypothesis == "bottom_top") {
        res.paired = true;
        collect_pairs(mirror_pairs(vmirror_q, [](const QEdge& e, const QEdge& m) {
            return mean_row(e) > mean_row(m);
        }));
    } else {
        throw Error("UnknownHypothesis", hypothesis);
    }

    res.n_a = static_cast<long>(a.size());
    res.n_b = static_cast<long>(b.size());
    TTest t = res.paired ? paired_t_test(a, b) : unpaired_t_test(a, b);
    res.delta_r = t.mean_diff;
    res.t = t.t;
    res.df = t.df;
    res.p = t.p_greater;
    return res;
}

CompositionFeatures composition_features(const QuadrantProfile& profile, double epsilon) {
    if (epsilon <= 0.0) throw Error("BadValue", "epsilon must be > 0");
    CompositionFeatures f;
    const double eps = epsilon * 9.0;  // total quadrant mass is 9
    for (int c = 0; c < kNumClasses; ++c) {
        auto rho = [&](int q) {
            return profile.ratios[static_cast<std::size_t>(q - 1)][static_cast<std::size_t>(c)];
        };
        double all = 0.0;
        for (int q = 1; q <= 9; ++q) all += rho(q);
        double mid_col = rho(2) + rho(5) + rho(8);
        double top = rho(1) + rho(2) + rho(3);
        double bottom = rho(7) + rho(8) + rho(9);
        double left = rho(1) + rho(4) + rho(7);
        double right = rho(3) + rho(6) + rho(9);
        double* out = f.phi.data() + c * CompositionFeatures::kComponents;
        out[0] = std::log10((all + eps) / (9.0 + eps));
        out[1] = std::log10((3.0 * mid_col + eps) / (all + eps));
        out[2] = std::log10((top + eps) / (bottom + eps));
        out[3] = std::log10((left + eps) / (right + eps));
    }
    return f;
}

SemanticTypes semantic_types(const std::vector<std::vector<double>>& features, int k,
                             bool spectral, std::uint64_t seed, int threads,
                             std::size_t train_cap) {
    const std::size_t n = features.size();
    if (n < 2) throw Error("InsufficientData", "need at least two feature rows");
    const int dim = static_cast<int>(features.front().size());
    for (const auto& row : features)
        if (static_cast<int>(row.size()) != dim)
            throw Error("DimensionMismatch", "ragged feature rows");

    // Standardize.
    std::vector<float> std_rows(n * static_cast<std::size_t>(dim));
    for (int d = 0; d < dim; ++d) {
        double mu = 0.0;
        for (const auto& row : features) mu += row[static_cast<std::size_t>(d)];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (const auto& row : features) {
            double diff = row[static_cast<std::size_t>(d)] - mu;
            var += diff * diff;
        }
        double sd = std::sqrt(var / static_cast<double>(n));
        for (std::size_t i = 0; i < n; ++i)
            std_rows[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(d)] =
                sd > 1e-12
                    ? static_cast<float>((features[i][static_cast<std::size_t>(d)] - mu) / sd)
                    : 0.0f;
    }

    Rng rng(seed);
    std::vector<std::size_t> train_idx;
    if (n > train_cap) {
        train_idx = rng.sample_without_replacement(n, train_cap);
        std::sort(train_idx.begin(), train_idx.end());
    } else {
        train_idx.resize(n);
        std::iota(train_idx.begin(), train_idx.end(), 0u);
    }
    const std::size_t n_train = train_idx.size();
    if (k < 1 || static_cast<std::size_t>(k) >= n_train)
        throw Error("KTooLarge", "k must be below the training-subset size");

    std::vector<float> train(n_train * static_cast<std::size_t>(dim));
    for (std::size_t i = 0; i < n_train; ++i)
        std::copy_n(std_rows.data() + train_idx[i] * static_cast<std::size_t>(dim), dim,
                    train.data() + i * static_cast<std::size_t>(dim));

    std::vector<int> train_labels;
    KMeansOptions kopt;
    kopt.k = k;
    kopt.batch = static_cast<int>(n_train);
    kopt.max_iters = 100;
    kopt.seed = rng.derive("kmeans", 0).next_u64();
    kopt.threads = threads;
    if (spectral) {
        // Gaussian affinity at the median pairwise distance, normalized
        // Laplacian, k smallest eigenvectors, row-normalized, then k-means.
        Eigen::MatrixXd dist(n_train, n_train);
        std::vector<double> pos;
        for (std::size_t i = 0; i < n_train; ++i) {
            dist(static_cast<long>(i), static_cast<long>(i)) = 0.0;
            for (std::size_t j = i + 1; j < n_train; ++j) {
                double s = 0.0;
                const float* a = train.data() + i * static_cast<std::size_t>(dim);
                const float* b = train.data() + j * static_cast<std::size_t>(dim);
                for (int d = 0; d < dim; ++d) {
                    double diff = static_cast<double>(a[d]) - b[d];
                    s += diff * diff;
                }
                double ds = std::sqrt(s);
                dist(static_cast<long>(i), static_cast<long>(j)) = ds;
                dist(static_cast<long>(j), static_cast<long>(i)) = ds;
                if (ds > 0.0) pos.push_back(ds);
            }
        }
        double sigma = pos.empty() ? 1.0 : percentile(pos, 50.0);
        Eigen::MatrixXd aff(n_train, n_train);
        for (std::size_t i = 0; i < n_train; ++i)
            for (std::size_t j = 0; j < n_train; ++j) {
                double d = dist(static_cast<long>(i), static_cast<long>(j));
                aff(static_cast<long>(i), static_cast<long>(j)) =
                    i == j ? 0.0 : std::exp(-d * d / (2.0 * sigma * sigma));
            }
        Eigen::VectorXd deg = aff.rowwise().sum();
        Eigen::VectorXd dinv = deg.unaryExpr(
            [](double v) { return v > 0.0 ? 1.0 / std::sqrt(v) : 0.0; });
        Eigen::MatrixXd lap =
            Eigen::MatrixXd::Identity(static_cast<long>(n_train), static_cast<long>(n_train)) -
            dinv.asDiagonal() * aff * dinv.asDiagonal();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lap);
        if (es.info() != Eigen::Success)
            throw Error("NumericalFailure", "eigendecomposition failed");
        Eigen::MatrixXd emb = es.eigenvectors().leftCols(k);
        for (long i = 0; i < emb.rows(); ++i) {
            double norm = emb.row(i).norm();
            if (norm > 0.0) emb.row(i) /= norm;
        }
        std::vector<float> emb_rows(n_train * static_cast<std::size_t>(k));
        for (std::size_t i = 0; i < n_train; ++i)
            for (int d = 0; d < k; ++d)
                emb_rows[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(d)] =
                    static_cast<float>(emb(static_cast<long>(i), d));
        DataView ev{emb_rows.data(), n_train, k};
        KMeansModel model = minibatch_kmeans(ev, kopt);
        train_labels = assign_nearest(ev, model, threads);
    } else {
        DataView tv{train.data(), n_train, dim};
        KMeansModel model = minibatch_kmeans(tv, kopt);
        train_labels = assign_nearest(tv, model, threads);
    }

    SemanticTypes out;
    out.k = k;
    out.n_train = static_cast<long>(n_train);
    out.labels.assign(n, -1);
    for (std::size_t i = 0; i < n_train; ++i) out.labels[train_idx[i]] = train_labels[i];

    std::vector<std::size_t> held;
    for (std::size_t i = 0, t = 0; i < n; ++i) {
        if (t < n_train && train_idx[t] == i)
            ++t;
        else
            held.push_back(i);
    }
    DataView train_view{train.data(), n_train, dim};
    if (!held.empty()) {
        std::vector<float> query(held.size() * static_cast<std::size_t>(dim));
        for (std::size_t i = 0; i < held.size(); ++i)
            std::copy_n(std_rows.data() + held[i] * static_cast<std::size_t>(dim), dim,
                        query.data() + i * static_cast<std::size_t>(dim));
        DataView qv{query.data(), held.size(), dim};
        std::vector<int> prop = knn_classify(train_view, train_labels, qv, 7, threads);
        for (std::size_t i = 0; i < held.size(); ++i) out.labels[held[i]] = prop[i];
        out.silhouette = silhouette(qv, prop, 5000, rng.derive("sil", 0).next_u64(), threads);
    } else {
        out.silhouette =
            silhouette(train_view, train_labels, 5000, rng.derive("sil", 0).next_u64(), threads);
    }
    return out;
}

}  // namespace cartolab
