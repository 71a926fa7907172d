#include "cartolab/cluster.hpp"

#include "cartolab/rng.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <thread>

namespace cartolab {

namespace {

double sqdist(const float* a, const double* c, int dim) {
    double s = 0.0;
    for (int d = 0; d < dim; ++d) {
        double diff = static_cast<double>(a[d]) - c[d];
        s += diff * diff;
    }
    return s;
}

double sqdist_ff(const float* a, const float* b, int dim) {
    double s = 0.0;
    for (int d = 0; d < dim; ++d) {
        double diff = static_cast<double>(a[d]) - static_cast<double>(b[d]);
        s += diff * diff;
    }
    return s;
}

int nearest_center(const float* p, const std::vector<double>& centers, int k, int dim,
                   double* best_out = nullptr) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
        double d = sqdist(p, centers.data() + static_cast<std::size_t>(c) * dim, dim);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    if (best_out) *best_out = best_d;
    return best;
}

// k-means++ over a subset: D^2-weighted picks, distances updated per center.
std::vector<double> kmeanspp_init(DataView data, const std::vector<std::size_t>& subset, int k,
                                  int threads, Rng& rng) {
    const int dim = data.dim;
    std::vector<double> centers(static_cast<std::size_t>(k) * dim);
    const std::size_t m = subset.size();

    std::size_t first = subset[rng.below(m)];
    for (int d = 0; d < dim; ++d) centers[static_cast<std::size_t>(d)] = data.row(first)[d];

    std::vector<double> dist2(m);
    parallel_for(m, threads, [&](std::size_t i) {
        dist2[i] = sqdist(data.row(subset[i]), centers.data(), dim);
    });

    std::vector<double> cum(m);
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            total += dist2[i];
            cum[i] = total;
        }
        std::size_t pick;
        if (total > 0.0) {
            double target = rng.uniform() * total;
            pick = static_cast<std::size_t>(
                std::lower_bound(cum.begin(), cum.end(), target) - cum.begin());
            if (pick >= m) pick = m - 1;
        } else {
            pick = rng.below(m);  // all remaining points coincide with a center
        }
        double* dst = centers.data() + static_cast<std::size_t>(c) * dim;
        const float* src = data.row(subset[pick]);
        for (int d = 0; d < dim; ++d) dst[d] = src[d];
        parallel_for(m, threads, [&](std::size_t i) {
            double nd = sqdist(data.row(subset[i]), dst, dim);
            if (nd < dist2[i]) dist2[i] = nd;
        });
    }
    return centers;
}

}  // namespace

KMeansModel minibatch_kmeans(DataView data, const KMeansOptions& options) {
    if (options.k < 1 || options.batch < 1 || options.max_iters < 1)
        throw Error("BadValue", "k, batch and max_iters must all be >= 1");
    if (data.count < static_cast<std::size_t>(options.k))
        throw Error("TooFewPoints", "fewer points than requested clusters");

    const int dim = data.dim;
    const int k = options.k;
    Rng rng(options.seed);

    std::size_t init_size =
        std::min(data.count, std::max<std::size_t>(3 * static_cast<std::size_t>(k), 8192));
    std::vector<std::size_t> subset;
    if (init_size == data.count) {
        subset.resize(data.count);
        std::iota(subset.begin(), subset.end(), std::size_t{0});
    } else {
        subset = rng.sample_without_replacement(data.count, init_size);
    }

    KMeansModel model;
    model.dim = dim;
    model.k = k;
    model.centers = kmeanspp_init(data, subset, k, options.threads, rng);
    model.counts.assign(static_cast<std::size_t>(k), 0.0);

    const std::size_t batch =
        std::min(data.count, static_cast<std::size_t>(options.batch));
    std::vector<std::size_t> batch_idx(batch);
    std::vector<int> batch_assign(batch);
    std::vector<double> batch_dist(batch);

    double best_inertia = std::numeric_limits<double>::infinity();
    int stall = 0;
    for (int iter = 0; iter < options.max_iters; ++iter) {
        for (std::size_t b = 0; b < batch; ++b) batch_idx[b] = rng.below(data.count);
        parallel_for(batch, options.threads, [&](std::size_t b) {
            batch_assign[b] =
                nearest_center(data.row(batch_idx[b]), model.centers, k, dim, &batch_dist[b]);
        });
        double inertia = 0.0;
        for (std::size_t b = 0; b < batch; ++b) inertia += batch_dist[b];
        inertia /= static_cast<double>(batch);
        model.inertia = inertia;
        model.iterations = iter + 1;

        // Per-center running-mean update (one pass, deterministic order).
        for (std::size_t b = 0; b < batch; ++b) {
            int c = batch_assign[b];
            double& n = model.counts[static_cast<std::size_t>(c)];
            n += 1.0;
            double eta = 1.0 / n;
            double* ctr = model.centers.data() + static_cast<std::size_t>(c) * dim;
            const float* p = data.row(batch_idx[b]);
            for (int d = 0; d < dim; ++d) ctr[d] += eta * (static_cast<double>(p[d]) - ctr[d]);
        }

        if (inertia < best_inertia) {
            double rel = (best_inertia - inertia) / best_inertia;
            best_inertia = inertia;
            if (std::isfinite(rel) && rel < options.tol)
                ++stall;
            else
                stall = 0;
        } else {
            ++stall;
        }
        if (stall >= options.patience) break;
    }
    return model;
}

std::vector<int> assign_nearest(DataView data, const KMeansModel& model, int threads) {
    std::vector<int> out(data.count);
    parallel_for(data.count, threads, [&](std::size_t i) {
        out[i] = nearest_center(data.row(i), model.centers, model.k, model.dim);
    });
    return out;
}

double mean_inertia(DataView data, const KMeansModel& model, int threads) {
    if (data.count == 0) throw Error("EmptySample", "no points");
    std::vector<double> dist(data.count);
    parallel_for(data.count, threads, [&](std::size_t i) {
        nearest_center(data.row(i), model.centers, model.k, model.dim, &dist[i]);
    });
    double s = 0.0;
    for (double d : dist) s += d;
    return s / static_cast<double>(data.count);
}

// --- GMM ---------------------------------------------------------------------

namespace {

struct GmmPartial {
    std::vector<double> weight, mean, m2;
    double ll = 0.0;
    void init(int k, int dim) {
        weight.assign(static_cast<std::size_t>(k), 0.0);
        mean.assign(static_cast<std::size_t>(k) * dim, 0.0);
        m2.assign(static_cast<std::size_t>(k) * dim, 0.0);
        ll = 0.0;
    }
};

// One E step over [lo, hi): accumulates soft counts into `part`.
void gmm_estep_range(DataView data, const GmmModel& g, std::size_t lo, std::size_t hi,
                     const std::vector<double>& log_norm, GmmPartial& part) {
    const int k = g.k, dim = g.dim;
    std::vector<double> logp(static_cast<std::size_t>(k));
    for (std::size_t i = lo; i < hi; ++i) {
        const float* x = data.row(i);
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            const double* mu = g.means.data() + static_cast<std::size_t>(c) * dim;
            const double* var = g.variances.data() + static_cast<std::size_t>(c) * dim;
            double q = log_norm[static_cast<std::size_t>(c)];
            for (int d = 0; d < dim; ++d) {
                double diff = static_cast<double>(x[d]) - mu[d];
                q -= 0.5 * diff * diff / var[d];
            }
            logp[static_cast<std::size_t>(c)] = q;
            if (q > mx) mx = q;
        }
        double denom = 0.0;
        for (int c = 0; c < k; ++c) denom += std::exp(logp[static_cast<std::size_t>(c)] - mx);
        double lse = mx + std::log(denom);
        part.ll += lse;
        for (int c = 0; c < k; ++c) {
            double r = std::exp(logp[static_cast<std::size_t>(c)] - lse);
            if (r < 1e-12) continue;
            part.weight[static_cast<std::size_t>(c)] += r;
            double* pm = part.mean.data() + static_cast<std::size_t>(c) * dim;
            double* p2 = part.m2.data() + static_cast<std::size_t>(c) * dim;
            for (int d = 0; d < dim; ++d) {
                double v = static_cast<double>(x[d]);
                pm[d] += r * v;
                p2[d] += r * v * v;
            }
        }
    }
}

}  // namespace

GmmModel gmm_refine(DataView data, const KMeansModel& init, const GmmOptions& options) {
    if (data.count == 0) throw Error("EmptySample", "no points");
    if (options.max_iters < 1) throw Error("BadValue", "max_iters must be >= 1");
    const int k = init.k, dim = init.dim;
    const std::size_t n = data.count;

    GmmModel g;
    g.k = k;
    g.dim = dim;
    g.means = init.centers;
    g.weights.assign(static_cast<std::size_t>(k), 1.0 / k);
    // Per-cluster variance from the hard assignment, floored.
    std::vector<int> hard = assign_nearest(data, init, options.threads);
    std::vector<double> var_acc(static_cast<std::size_t>(k) * dim, 0.0);
    std::vector<double> cnt(static_cast<std::size_t>(k), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        int c = hard[i];
        const float* x = data.row(i);
        const double* mu = g.means.data() + static_cast<std::size_t>(c) * dim;
        double* va = var_acc.data() + static_cast<std::size_t>(c) * dim;
        for (int d = 0; d < dim; ++d) {
            double diff = static_cast<double>(x[d]) - mu[d];
            va[d] += diff * diff;
        }
        cnt[static_cast<std::size_t>(c)] += 1.0;
    }
    g.variances.assign(static_cast<std::size_t>(k) * dim, options.var_floor);
    for (int c = 0; c < k; ++c) {
        if (cnt[static_cast<std::size_t>(c)] < 2.0) continue;
        for (int d = 0; d < dim; ++d) {
            double v = var_acc[static_cast<std::size_t>(c) * dim + d] / cnt[static_cast<std::size_t>(c)];
            g.variances[static_cast<std::size_t>(c) * dim + d] = std::max(v, options.var_floor);
        }
    }

    const int nt = std::max(1, std::min<int>(options.threads, static_cast<int>(n)));
    std::vector<GmmPartial> parts(static_cast<std::size_t>(nt));
    double prev_ll = -std::numeric_limits<double>::infinity();
    constexpr double kLogTwoPi = 1.8378770664093453;

    for (int iter = 0; iter < options.max_iters; ++iter) {
        std::vector<double> log_norm(static_cast<std::size_t>(k));
        for (int c = 0; c < k; ++c) {
            double s = std::log(std::max(g.weights[static_cast<std::size_t>(c)], 1e-300));
            for (int d = 0; d < dim; ++d)
                s -= 0.5 * (kLogTwoPi +
                            std::log(g.variances[static_cast<std::size_t>(c) * dim + d]));
            log_norm[static_cast<std::size_t>(c)] = s;
        }

        for (auto& p : parts) p.init(k, dim);
        if (nt == 1) {
            gmm_estep_range(data, g, 0, n, log_norm, parts[0]);
        } else {
            std::vector<std::thread> workers;
            workers.reserve(static_cast<std::size_t>(nt));
            for (int w = 0; w < nt; ++w) {
                std::size_t lo = n * static_cast<std::size_t>(w) / static_cast<std::size_t>(nt);
                std::size_t hi = n * static_cast<std::size_t>(w + 1) / static_cast<std::size_t>(nt);
                workers.emplace_back([&, lo, hi, w] {
                    gmm_estep_range(data, g, lo, hi, log_norm, parts[static_cast<std::size_t>(w)]);
                });
            }
            for (auto& t : workers) t.join();
        }

        // Chunk-ordered reduction keeps the result fixed for a given thread count.
        GmmPartial total;
        total.init(k, dim);
        for (const auto& p : parts) {
            total.ll += p.ll;
            for (std::size_t i = 0; i < total.weight.size(); ++i) total.weight[i] += p.weight[i];
            for (std::size_t i = 0; i < total.mean.size(); ++i) total.mean[i] += p.mean[i];
            for (std::size_t i = 0; i < total.m2.size(); ++i) total.m2[i] += p.m2[i];
        }

        for (int c = 0; c < k; ++c) {
            double w = total.weight[static_cast<std::size_t>(c)];
            if (w < 1e-10) continue;  // dead component keeps its parameters
            g.weights[static_cast<std::size_t>(c)] = w / static_cast<double>(n);
            for (int d = 0; d < dim; ++d) {
                std::size_t idx = static_cast<std::size_t>(c) * dim + d;
                double mu = total.mean[idx] / w;
                g.means[idx] = mu;
                g.variances[idx] = std::max(total.m2[idx] / w - mu * mu, options.var_floor);
            }
        }
        g.log_likelihood = total.ll / static_cast<double>(n);
        g.iterations = iter + 1;
        if (iter > 0) {
            double rel = std::abs(g.log_likelihood - prev_ll) /
                         std::max(1.0, std::abs(prev_ll));
            if (rel < 1e-6) break;
        }
        prev_ll = g.log_likelihood;
    }
    return g;
}

std::vector<int> gmm_assign(DataView data, const GmmModel& g,
                            std::vector<float>* responsibility, int threads) {
    const int k = g.k, dim = g.dim;
    std::vector<double> log_norm(static_cast<std::size_t>(k));
    constexpr double kLogTwoPi = 1.8378770664093453;
    for (int c = 0; c < k; ++c) {
        double s = std::log(std::max(g.weights[static_cast<std::size_t>(c)], 1e-300));
        for (int d = 0; d < dim; ++d)
            s -= 0.5 * (kLogTwoPi + std::log(g.variances[static_cast<std::size_t>(c) * dim + d]));
        log_norm[static_cast<std::size_t>(c)] = s;
    }
    std::vector<int> out(data.count);
    if (responsibility) responsibility->assign(data.count, 0.0f);
    parallel_for(data.count, threads, [&](std::size_t i) {
        const float* x = data.row(i);
        double best = -std::numeric_limits<double>::infinity();
        double mx = best;
        int arg = 0;
        std::vector<double> logp(static_cast<std::size_t>(k));
        for (int c = 0; c < k; ++c) {
            const double* mu = g.means.data() + static_cast<std::size_t>(c) * dim;
            const double* var = g.variances.data() + static_cast<std::size_t>(c) * dim;
            double q = log_norm[static_cast<std::size_t>(c)];
            for (int d = 0; d < dim; ++d) {
                double diff = static_cast<double>(x[d]) - mu[d];
                q -= 0.5 * diff * diff / var[d];
            }
            logp[static_cast<std::size_t>(c)] = q;
            if (q > mx) mx = q;
            if (q > best) {
                best = q;
                arg = c;
            }
        }
        out[i] = arg;
        if (responsibility) {
            double denom = 0.0;
            for (int c = 0; c < k; ++c) denom += std::exp(logp[static_cast<std::size_t>(c)] - mx);
            (*responsibility)[i] = static_cast<float>(std::exp(best - mx) / denom);
        }
    });
    return out;
}

std::vector<long> select_exemplars(DataView data, const std::vector<int>& labels,
                                   const std::vector<double>& centers, int k) {
    if (labels.size() != data.count)
        throw Error("DimensionMismatch", "labels must match the point count");
    std::vector<long> out(static_cast<std::size_t>(k), -1);
    std::vector<double> best(static_cast<std::size_t>(k),
                             std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < data.count; ++i) {
        int c = labels[i];
        if (c < 0 || c >= k) continue;
        double d = sqdist(data.row(i), centers.data() + static_cast<std::size_t>(c) * data.dim,
                          data.dim);
        if (d < best[static_cast<std::size_t>(c)]) {
            best[static_cast<std::size_t>(c)] = d;
            out[static_cast<std::size_t>(c)] = static_cast<long>(i);
        }
    }
    return out;
}

// --- Ward --------------------------------------------------------------------

namespace {

struct WardCluster {
    int id = -1;  // creation-order id; -1 = inactive
    int size = 0;
    std::vector<double> centroid;
};

double ward_cost(const WardCluster& a, const WardCluster& b) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < a.centroid.size(); ++i) {
        double diff = a.centroid[i] - b.centroid[i];
        d2 += diff * diff;
    }
    double na = a.size, nb = b.size;
    return na * nb / (na + nb) * d2;
}

// (cost, min id, max id) lexicographic order fixes every tie.
bool better(double cost, int ia, int ib, double best_cost, int ba, int bb) {
    if (cost != best_cost) return cost < best_cost;
    int lo = std::min(ia, ib), hi = std::max(ia, ib);
    int blo = std::min(ba, bb), bhi = std::max(ba, bb);
    if (lo != blo) return lo < blo;
    return hi < bhi;
}

}  // namespace

Dendrogram ward_tree(DataView data) {
    const std::size_t n = data.count;
    if (n == 0) throw Error("EmptySample", "no points");
    Dendrogram tree;
    tree.n_leaves = static_cast<int>(n);
    if (n == 1) return tree;

    std::vector<WardCluster> slots(n);
    for (std::size_t i = 0; i < n; ++i) {
        slots[i].id = static_cast<int>(i);
        slots[i].size = 1;
        slots[i].centroid.assign(data.row(i), data.row(i) + data.dim);
    }

    // Cached nearest neighbor per slot; rebuilt lazily after merges.
    struct NN {
        double cost = std::numeric_limits<double>::infinity();
        int slot = -1;
        bool valid = false;
    };
    std::vector<NN> nn(n);
    auto recompute_nn = [&](std::size_t s) {
        NN best;
        for (std::size_t t = 0; t < slots.size(); ++t) {
            if (t == s || slots[t].id < 0) continue;
            double c = ward_cost(slots[s], slots[t]);
            if (best.slot < 0 ||
                better(c, slots[s].id, slots[t].id, best.cost, slots[s].id,
                       slots[static_cast<std::size_t>(best.slot)].id)) {
                best.cost = c;
                best.slot = static_cast<int>(t);
            }
        }
        best.valid = true;
        nn[s] = best;
    };
    for (std::size_t s = 0; s < n; ++s) recompute_nn(s);

    int next_id = static_cast<int>(n);
    for (std::size_t step = 0; step + 1 < n; ++step) {
        // Global best over the NN cache, ids breaking ties.
        int best_slot = -1;
        for (std::size_t s = 0; s < slots.size(); ++s) {
            if (slots[s].id < 0) continue;
            if (!nn[s].valid) recompute_nn(s);
            if (nn[s].slot < 0) continue;
            if (best_slot < 0 ||
                better(nn[s].cost, slots[s].id, slots[static_cast<std::size_t>(nn[s].slot)].id,
                       nn[static_cast<std::size_t>(best_slot)].cost,
                       slots[static_cast<std::size_t>(best_slot)].id,
                       slots[static_cast<std::size_t>(nn[static_cast<std::size_t>(best_slot)].slot)]
                           .id))
                best_slot = static_cast<int>(s);
        }
        std::size_t sa = static_cast<std::size_t>(best_slot);
        std::size_t sb = static_cast<std::size_t>(nn[sa].slot);
        WardCluster& a = slots[sa];
        WardCluster& b = slots[sb];

        Dendrogram::Merge m;
        m.a = std::min(a.id, b.id);
        m.b = std::max(a.id, b.id);
        m.height = nn[sa].cost;
        m.size = a.size + b.size;
        tree.merges.push_back(m);

        // Merge b into a's slot; give it the fresh id.
        double na = a.size, nb = b.size;
        for (std::size_t d = 0; d < a.centroid.size(); ++d)
            a.centroid[d] = (na * a.centroid[d] + nb * b.centroid[d]) / (na + nb);
        a.size += b.size;
        a.id = next_id++;
        b.id = -1;
        b.centroid.clear();
        nn[sa].valid = false;
        nn[sb].valid = false;
        // Invalidate anyone that pointed at either endpoint.
        for (std::size_t s = 0; s < slots.size(); ++s) {
            if (slots[s].id < 0 || !nn[s].valid) continue;
            if (nn[s].slot == static_cast<int>(sa) || nn[s].slot == static_cast<int>(sb))
                nn[s].valid = false;
        }
    }
    return tree;
}

std::vector<int> cut_tree(const Dendrogram& tree, int n_clusters) {
    const int n = tree.n_leaves;
    if (n_clusters < 1 || n_clusters > n)
        throw Error("BadValue", "n_clusters must be in [1, n_leaves]");
    std::vector<int> parent(static_cast<std::size_t>(n) + tree.merges.size());
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) {
        while (parent[static_cast<std::size_t>(x)] != x) {
            parent[static_cast<std::size_t>(x)] =
                parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
            x = parent[static_cast<std::size_t>(x)];
        }
        return x;
    };
    int keep = n - n_clusters;
    for (int t = 0; t < keep; ++t) {
        const auto& m = tree.merges[static_cast<std::size_t>(t)];
        int target = n + t;
        parent[static_cast<std::size_t>(find(m.a))] = target;
        parent[static_cast<std::size_t>(find(m.b))] = target;
    }
    // Roots labeled by their smallest leaf for stable numbering.
    std::map<int, int> root_min;
    for (int leaf = 0; leaf < n; ++leaf) {
        int r = find(leaf);
        auto it = root_min.find(r);
        if (it == root_min.end())
            root_min[r] = leaf;
    }
    std::vector<std::pair<int, int>> ordered(root_min.size());
    std::size_t pos = 0;
    for (const auto& [root, leaf] : root_min) ordered[pos++] = {leaf, root};
    std::sort(ordered.begin(), ordered.end());
    std::map<int, int> label_of;
    for (std::size_t i = 0; i < ordered.size(); ++i) label_of[ordered[i].second] = static_cast<int>(i);

    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int leaf = 0; leaf < n; ++leaf) labels[static_cast<std::size_t>(leaf)] = label_of[find(leaf)];
    return labels;
}

// --- PCA ---------------------------------------------------------------------

PcaResult pca_layout(DataView data, int n_components, int threads) {
    (void)threads;
    if (data.count < 2) throw Error("TooFewPoints", "need at least two points");
    const int dim = data.dim;
    if (n_components < 1 || n_components > dim)
        throw Error("BadValue", "n_components must be in [1, dim]");
    const Eigen::Index n = static_cast<Eigen::Index>(data.count);

    Eigen::MatrixXd x(n, dim);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int d = 0; d < dim; ++d)
            x(i, d) = static_cast<double>(data.row(static_cast<std::size_t>(i))[d]);
    Eigen::RowVectorXd mu = x.colwise().mean();
    x.rowwise() -= mu;
    Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw Error("NumericFailure", "eigendecomposition failed");

    PcaResult r;
    r.dim = dim;
    r.n_components = n_components;
    r.components.resize(static_cast<std::size_t>(n_components) * dim);
    r.explained.resize(static_cast<std::size_t>(n_components));
    double total_var = 0.0;
    for (int d = 0; d < dim; ++d) total_var += std::max(0.0, es.eigenvalues()(d));

    Eigen::MatrixXd comp(n_components, dim);
    for (int c = 0; c < n_components; ++c) {
        Eigen::VectorXd v = es.eigenvectors().col(dim - 1 - c);  // ascending order inside Eigen
        // Largest-magnitude loading positive: kills the sign ambiguity.
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        comp.row(c) = v.transpose();
        double ev = std::max(0.0, es.eigenvalues()(dim - 1 - c));
        r.explained[static_cast<std::size_t>(c)] = total_var > 0.0 ? ev / total_var : 0.0;
        for (int d = 0; d < dim; ++d)
            r.components[static_cast<std::size_t>(c) * dim + d] = v(d);
    }
    Eigen::MatrixXd coords = x * comp.transpose();
    r.coords.resize(static_cast<std::size_t>(n) * n_components);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int c = 0; c < n_components; ++c)
            r.coords[static_cast<std::size_t>(i) * n_components + c] = coords(i, c);
    return r;
}

// --- grid snap ---------------------------------------------------------------

std::vector<int> grid_snap(const std::vector<double>& xy, int rows, int cols) {
    if (xy.size() % 2 != 0) throw Error("DimensionMismatch", "xy must hold (x, y) pairs");
    const std::size_t n = xy.size() / 2;
    if (rows < 1 || cols < 1) throw Error("BadValue", "grid must be at least 1x1");
    if (n > static_cast<std::size_t>(rows) * cols)
        throw Error("GridTooSmall", "more points than grid cells");
    if (n == 0) return {};

    // Normalize to the unit square so displacement is scale free.
    double xmin = xy[0], xmax = xy[0], ymin = xy[1], ymax = xy[1];
    for (std::size_t i = 0; i < n; ++i) {
        xmin = std::min(xmin, xy[2 * i]);
        xmax = std::max(xmax, xy[2 * i]);
        ymin = std::min(ymin, xy[2 * i + 1]);
        ymax = std::max(ymax, xy[2 * i + 1]);
    }
    auto norm = [](double v, double lo, double hi) {
        return hi > lo ? (v - lo) / (hi - lo) : 0.5;
    };
    std::vector<double> px(n), py(n);
    for (std::size_t i = 0; i < n; ++i) {
        px[i] = norm(xy[2 * i], xmin, xmax);
        py[i] = norm(xy[2 * i + 1], ymin, ymax);
    }

    auto cell_x = [&](int cell) { return (cell % cols + 0.5) / cols; };
    auto cell_y = [&](int cell) { return (cell / cols + 0.5) / rows; };
    auto cost = [&](std::size_t point, int cell) {
        double dx = px[point] - cell_x(cell);
        double dy = py[point] - cell_y(cell);
        return dx * dx + dy * dy;
    };

    // Row-major fill in (y, x) order.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (py[a] != py[b]) return py[a] < py[b];
        if (px[a] != px[b]) return px[a] < px[b];
        return a < b;
    });
    const int n_cells = rows * cols;
    std::vector<long> occupant(static_cast<std::size_t>(n_cells), -1);
    std::vector<int> cell_of(n, -1);
    for (std::size_t r = 0; r < n; ++r) {
        occupant[r] = static_cast<long>(order[r]);
        cell_of[order[r]] = static_cast<int>(r);
    }

    // Local improvement: swap or shift across 4-neighbor edges until stable.
    bool changed = true;
    for (int sweep = 0; sweep < 200 && changed; ++sweep) {
        changed = false;
        for (int cell = 0; cell < n_cells; ++cell) {
            const int neighbors[2] = {cell % cols + 1 < cols ? cell + 1 : -1,
                                      cell / cols + 1 < rows ? cell + cols : -1};
            for (int nb : neighbors) {
                if (nb < 0) continue;
                long p = occupant[static_cast<std::size_t>(cell)];
                long q = occupant[static_cast<std::size_t>(nb)];
                if (p < 0 && q < 0) continue;
                double before = (p >= 0 ? cost(static_cast<std::size_t>(p), cell) : 0.0) +
                                (q >= 0 ? cost(static_cast<std::size_t>(q), nb) : 0.0);
                double after = (p >= 0 ? cost(static_cast<std::size_t>(p), nb) : 0.0) +
                               (q >= 0 ? cost(static_cast<std::size_t>(q), cell) : 0.0);
                if (after < before - 1e-15) {
                    occupant[static_cast<std::size_t>(cell)] = q;
                    occupant[static_cast<std::size_t>(nb)] = p;
                    if (p >= 0) cell_of[static_cast<std::size_t>(p)] = nb;
                    if (q >= 0) cell_of[static_cast<std::size_t>(q)] = cell;
                    changed = true;
                }
            }
        }
    }
    return cell_of;
}

// --- silhouette & kNN --------------------------------------------------------

double silhouette(DataView data, const std::vector<int>& labels, std::size_t sample_cap,
                  std::uint64_t seed, int threads) {
    if (labels.size() != data.count)
        throw Error("DimensionMismatch", "labels must match the point count");
    if (data.count < 2) throw Error("TooFewPoints", "need at least two points");
    int k = 0;
    for (int l : labels) k = std::max(k, l + 1);
    if (k < 2) throw Error("BadValue", "need at least two clusters");

    std::vector<std::size_t> pick;
    if (sample_cap > 0 && data.count > sample_cap) {
        Rng rng(seed);
        pick = rng.sample_without_replacement(data.count, sample_cap);
        std::sort(pick.begin(), pick.end());
    } else {
        pick.resize(data.count);
        std::iota(pick.begin(), pick.end(), std::size_t{0});
    }

    std::vector<std::size_t> cluster_size(static_cast<std::size_t>(k), 0);
    for (int l : labels)
        if (l >= 0) ++cluster_size[static_cast<std::size_t>(l)];

    std::vector<double> scores(pick.size(), 0.0);
    parallel_for(pick.size(), threads, [&](std::size_t s) {
        std::size_t i = pick[s];
        int li = labels[i];
        if (li < 0 || cluster_size[static_cast<std::size_t>(li)] < 2) {
            scores[s] = 0.0;
            return;
        }
        std::vector<double> sum(static_cast<std::size_t>(k), 0.0);
        for (std::size_t j = 0; j < data.count; ++j) {
            if (j == i || labels[j] < 0) continue;
            sum[static_cast<std::size_t>(labels[j])] +=
                std::sqrt(sqdist_ff(data.row(i), data.row(j), data.dim));
        }
        double a = sum[static_cast<std::size_t>(li)] /
                   static_cast<double>(cluster_size[static_cast<std::size_t>(li)] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            if (c == li || cluster_size[static_cast<std::size_t>(c)] == 0) continue;
            b = std::min(b, sum[static_cast<std::size_t>(c)] /
                                static_cast<double>(cluster_size[static_cast<std::size_t>(c)]));
        }
        scores[s] = std::isfinite(b) && std::max(a, b) > 0.0 ? (b - a) / std::max(a, b) : 0.0;
    });
    double total = 0.0;
    for (double v : scores) total += v;
    return total / static_cast<double>(scores.size());
}

std::vector<int> knn_classify(DataView train, const std::vector<int>& labels, DataView query,
                              int k, int threads) {
    if (labels.size() != train.count)
        throw Error("DimensionMismatch", "labels must match the train count");
    if (train.count == 0) throw Error("EmptySample", "empty training set");
    if (k < 1) throw Error("BadValue", "k must be >= 1");
    if (train.dim != query.dim) throw Error("DimensionMismatch", "train/query dim differ");
    const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), train.count);

    std::vector<int> out(query.count);
    parallel_for(query.count, threads, [&](std::size_t qi) {
        std::vector<std::pair<double, std::size_t>> dist(train.count);
        for (std::size_t t = 0; t < train.count; ++t)
            dist[t] = {sqdist_ff(query.row(qi), train.row(t), train.dim), t};
        std::partial_sort(dist.begin(), dist.begin() + static_cast<long>(kk), dist.end());
        std::map<int, int> votes;
        for (std::size_t t = 0; t < kk; ++t) ++votes[labels[dist[t].second]];
        int best_label = -1, best_count = -1;
        for (const auto& [label, count] : votes) {
            if (count > best_count) {  // map order makes the tie prefer smaller labels
                best_count = count;
                best_label = label;
            }
        }
        out[qi] = best_label;
    });
    return out;
}

}  // namespace cartolab
