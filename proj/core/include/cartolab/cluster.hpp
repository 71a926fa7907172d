#pragma once

#include "cartolab/model.hpp"
#include "cartolab/util.hpp"

#include <cstdint>
#include <vector>

namespace cartolab {

// Borrowed row-major float matrix; the embedding tables own the storage.
struct DataView {
    const float* data = nullptr;
    std::size_t count = 0;
    int dim = 0;

    const float* row(std::size_t i) const { return data + i * static_cast<std::size_t>(dim); }
    static DataView of(const EmbeddingTable& t) {
        return DataView{t.vectors.data(), t.size(), t.dim};
    }
};

// --- k-means -----------------------------------------------------------------

struct KMeansOptions {
    int k = 4096;
    int batch = 131072;
    int max_iters = 200;
    int patience = 5;     // consecutive low-improvement batches before stopping
    double tol = 1e-4;    // relative inertia improvement threshold
    std::uint64_t seed = 0;
    int threads = 1;
};

struct KMeansModel {
    int dim = 0;
    int k = 0;
    std::vector<double> centers;  // k * dim
    std::vector<double> counts;   // per-center update mass
    double inertia = 0.0;         // mean squared distance of the last batch
    int iterations = 0;

    const double* center(int c) const { return centers.data() + static_cast<std::size_t>(c) * dim; }
};

// Mini-batch k-means with k-means++ seeding. Throws Error("TooFewPoints")
// when k exceeds the number of points.
KMeansModel minibatch_kmeans(DataView data, const KMeansOptions& options);

std::vector<int> assign_nearest(DataView data, const KMeansModel& model, int threads = 1);
double mean_inertia(DataView data, const KMeansModel& model, int threads = 1);

// --- Gaussian mixture refinement ---------------------------------------------

struct GmmOptions {
    int max_iters = 30;
    double var_floor = 1e-6;
    int threads = 1;
};

struct GmmModel {
    int dim = 0;
    int k = 0;
    std::vector<double> means;      // k * dim
    std::vector<double> variances;  // k * dim, diagonal
    std::vector<double> weights;    // k
    double log_likelihood = 0.0;
    int iterations = 0;
};

// Diagonal-covariance EM started from a k-means solution.
GmmModel gmm_refine(DataView data, const KMeansModel& init, const GmmOptions& options);

// Hard assignment by posterior; `responsibility` (optional) receives the
// winning posterior per point.
std::vector<int> gmm_assign(DataView data, const GmmModel& model,
                            std::vector<float>* responsibility = nullptr, int threads = 1);

// Per cluster, the index of the member closest to its center (-1 when empty).
// Ties break toward the smaller index.
std::vector<long> select_exemplars(DataView data, const std::vector<int>& labels,
                                   const std::vector<double>& centers, int k);

// --- hierarchy ---------------------------------------------------------------

struct Dendrogram {
    struct Merge {
        int a = 0, b = 0;      // cluster ids; leaves are 0..n-1, internal n+t
        double height = 0.0;   // Ward cost: the SSE increase of this merge
        int size = 0;
    };
    int n_leaves = 0;
    std::vector<Merge> merges;  // n_leaves - 1 entries, in merge order
};

// Agglomerative Ward linkage over Euclidean coordinates. Merge ties break
// toward the smaller id pair.
Dendrogram ward_tree(DataView data);

// Labels after keeping the first (n_leaves - n_clusters) merges; roots are
// numbered by their smallest leaf.
std::vector<int> cut_tree(const Dendrogram& tree, int n_clusters);

// --- layout ------------------------------------------------------------------

struct PcaResult {
    int dim = 0, n_components = 0;
    std::vector<double> components;  // n_components * dim, unit rows
    std::vector<double> coords;      // n * n_components
    std::vector<double> explained;   // variance share per component
};

// Dense eigen-decomposition of the covariance. Component signs are fixed by
// making the largest-magnitude loading positive.
PcaResult pca_layout(DataView data, int n_components, int threads = 1);

// Injective snap of 2D points onto a rows x cols grid: row-major fill in
// (y, x) order, then improving swaps between 4-adjacent cells to a fixpoint.
// Returns cell index (row * cols + col) per point.
// Throws Error("GridTooSmall") when points outnumber cells.
std::vector<int> grid_snap(const std::vector<double>& xy, int rows, int cols);

// --- quality & assignment ----------------------------------------------------

// Mean silhouette over at most sample_cap points (sampled deterministically).
// Single-member clusters score 0.
double silhouette(DataView data, const std::vector<int>& labels, std::size_t sample_cap,
                  std::uint64_t seed, int threads = 1);

// Majority-vote kNN with Euclidean distance; ties at the boundary prefer the
// smaller train index, vote ties prefer the smaller label.
std::vector<int> knn_classify(DataView train, const std::vector<int>& labels, DataView query,
                              int k = 7, int threads = 1);

}  // namespace cartolab
