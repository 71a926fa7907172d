#pragma once

#include "cartolab/model.hpp"
#include "cartolab/util.hpp"

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace cartolab {

// Weighted undirected graph. A u==v entry is a self-loop; its weight counts
// twice toward the node degree (graph-theory convention), which keeps
// modularity consistent under Louvain aggregation.
struct Graph {
    int n = 0;
    std::vector<std::string> node_ids;  // optional, size n when present
    struct Edge {
        int u = 0, v = 0;
        double w = 1.0;
    };
    std::vector<Edge> edges;
};

// Weighted Newman modularity of a full partition.
double modularity(const Graph& graph, const std::vector<int>& community);

// Louvain with seed-shuffled node order. Falls back to one community when the
// final partition would score below it, so Q(result) >= 0 always.
std::vector<int> louvain(const Graph& graph, std::uint64_t seed);

// Q of the year-binned partition, one point per bin width.
struct SweepPoint {
    double width = 0.0;
    double q = 0.0;
    int n_bins = 0;
};
struct SweepResult {
    std::vector<SweepPoint> points;
    double best_width = 0.0;
    double best_q = 0.0;
};
SweepResult temporal_modularity_sweep(const Graph& graph, const std::vector<double>& node_year,
                                      const std::vector<double>& bin_widths);

// --- name normalization ------------------------------------------------------

struct NameMap {
    std::unordered_map<std::string, std::string> canonical;
    int n_components = 0;
};

// Variants whose cosine distance is <= threshold among each other's knn
// nearest neighbors are collapsed; the canonical form takes the most
// mentions, ties broken lexicographically.
NameMap normalize_names(const EmbeddingTable& variants, const std::vector<long>& mention_counts,
                        double threshold = 0.17, int knn = 3, int threads = 1);

// --- domain saliency ---------------------------------------------------------

struct DomainPointers {
    std::string name;
    std::vector<std::vector<float>> pointers;  // >= 1 per domain
};

enum class SaliencyPolarity { None, Above, Below };

struct SalientScores {
    std::vector<double> sigma;  // min cosine distance per domain
    std::vector<double> s;      // sigma_i / (sum sigma + epsilon)
    std::vector<int> assigned;  // domain indices passing the threshold
};

// s_i = sigma_i / (sum_j sigma_j + epsilon). The score is a distance share,
// so which side of a threshold counts as "assigned" is left to the caller;
// polarity None returns scores without assignments.
SalientScores salient_similarity(const std::vector<float>& entity,
                                 const std::vector<DomainPointers>& domains,
                                 double epsilon = 1e-2, double threshold = 0.0,
                                 SaliencyPolarity polarity = SaliencyPolarity::None);

// --- community stylometry ----------------------------------------------------

struct CommunityDistanceResult {
    std::vector<double> per_batch_rho;
    double mean_rho = 0.0;
    double ci_lo = 0.0, ci_hi = 0.0;  // t-based 95% over batches
};

// Batched correlation between icon-vocabulary map distance and community
// non-membership: batches are sampled so each holds >= 2 communities, icon
// sets are capped at max_icons per map, and rho is Pearson over the lower
// triangle of each batch's distance matrix against the 0/1 "different
// community" encoding. Throws Error("SingletonBatch") when a batch cannot
// hold two communities.
CommunityDistanceResult community_distance_test(
    const EmbeddingTable& icons, const std::vector<std::vector<std::size_t>>& map_icons,
    const std::vector<int>& community, int n_batches = 17, int batch_size = 50,
    std::size_t max_icons = 128, std::uint64_t seed = 0, int threads = 1);

// d_map used by the test, exposed for direct checks: mean of tanh of the
// row minima plus mean of tanh of the column minima of the pairwise icon
// cosine-distance block.
double map_icon_distance(const EmbeddingTable& icons, const std::vector<std::size_t>& a,
                         const std::vector<std::size_t>& b);

// --- social graph ------------------------------------------------------------

struct SocialGraph {
    Graph graph;  // node_ids = creator ids; edge weight = co-publication count
    std::vector<int> publication_count;
    std::vector<double> mean_year;
    std::vector<std::string> main_city;
    std::vector<std::string> main_country;
};

// One node per creator, one edge per unordered pair that shares a map; no
// self-loops even when a record lists a creator twice.
SocialGraph build_social_graph(const Dataset& dataset);

}  // namespace cartolab
