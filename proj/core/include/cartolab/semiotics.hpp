#pragma once

#include "cartolab/util.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cartolab {

// --- strata tables -----------------------------------------------------------

// Per-cluster sign counts across ordered strata, with a saturated
// normalization: each column is divided by its 95th percentile (linear
// interpolation between order statistics) and clipped to 1.
struct StrataTable {
    int n_clusters = 0;
    int n_strata = 0;
    std::vector<long> counts;        // n_clusters * n_strata, row-major
    std::vector<double> normalized;  // same layout, in [0,1]
    std::vector<std::string> strata_labels;
    std::optional<int> mode;         // set when built under a mode filter
    std::vector<int> empty_strata;   // strata with zero total count

    long count_at(int m, int s) const {
        return counts[static_cast<std::size_t>(m) * n_strata + s];
    }
    double norm_at(int m, int s) const {
        return normalized[static_cast<std::size_t>(m) * n_strata + s];
    }
};

// Buckets items into the strata defined by ordered edges (S+1 edges -> S
// strata, last stratum closed above); items outside the range are dropped.
// When mode_filter > 0 only signs with that mode are counted.
StrataTable build_strata_table(const std::vector<int>& clusters,
                               const std::vector<double>& strat_values,
                               const std::vector<double>& strata_edges, int n_clusters,
                               const std::vector<int>* modes = nullptr, int mode_filter = 0);

// Single-stratum table over all signs (optionally mode-filtered).
StrataTable single_stratum_table(const std::vector<int>& clusters, int n_clusters,
                                 const std::vector<int>* modes = nullptr, int mode_filter = 0);

// chi[m][s] = ln(normalized / column mean); cells with zero normalized value
// get -infinity, which never ranks among top exemplars.
std::vector<double> characteristicity(const StrataTable& table);

// Clusters of one stratum ranked by descending chi, -inf excluded, ties by
// cluster index.
std::vector<int> top_characteristic(const StrataTable& table, const std::vector<double>& chi,
                                    int stratum, int top_n);

// --- rupture -----------------------------------------------------------------

// Mean absolute difference of two single-stratum normalized tables over the
// shared cluster set. Symmetric, zero on identical tables, bounded by 1.
double rupture(const StrataTable& a, const StrataTable& b);

// Mean of per-mode rupture over K aligned mode tables. Modes with zero mass
// on both sides are skipped (indices reported through *skipped); all modes
// inactive raises Error("NoActiveMode").
double rupture_semantic(const std::vector<StrataTable>& a, const std::vector<StrataTable>& b,
                        std::vector<int>* skipped = nullptr);

// One dated sign occurrence: cluster assignment, continuous stratification
// value, optional semantic mode (0 = none, 1..8 otherwise).
struct SignRecord {
    int cluster = 0;
    double strat = 0.0;
    int mode = 0;
};

struct RupturePoint {
    double position = 0.0;  // stratification value at the window midpoint
    double rho = 0.0;
    double ci_lo = 0.0, ci_hi = 0.0;
};

// Sliding-window rupture: signs sorted by strat, window pairs each covering
// stratum_frac of the data and overlapping by overlap_frac, window_steps
// evenly spaced positions. CI is a percentile bootstrap (2.5/97.5) over
// cluster-level absolute differences. use_modes switches to the per-mode
// mean over modes 1..7.
std::vector<RupturePoint> rupture_curve(std::vector<SignRecord> signs, int n_clusters,
                                        int window_steps = 200, double stratum_frac = 0.05,
                                        double overlap_frac = 0.5, int bootstrap_n = 1000,
                                        std::uint64_t seed = 0, bool use_modes = false,
                                        int threads = 1);

// --- diversity and complexity ------------------------------------------------

struct DiversityPoint {
    int year = 0;
    long active = 0;   // clusters with >= active_min instances that year
    long maps = 0;
    double macro_diversity = 0.0;  // active / n_clusters
    double micro_diversity = 0.0;  // macro / maps
};

// Yearly share of active clusters; a cluster is active in a year when it has
// at least active_min sign instances. Throws Error("ZeroMaps") when signs
// exist for a year with no recorded map count.
std::vector<DiversityPoint> diversity_series(const std::vector<int>& clusters,
                                             const std::vector<int>& years,
                                             const std::map<int, long>& maps_per_year,
                                             int n_clusters, int active_min = 3);

// Cluster multiset of one map.
struct MapSigns {
    std::string map_id;
    int year = 0;
    std::vector<int> clusters;
};

struct ComplexityPoint {
    int year = 0;
    long maps = 0;
    double mean_active = 0.0;  // mean distinct clusters per map
};

// Yearly mean number of distinct clusters per map; a cluster counts toward a
// map once it has presence_min instances there.
std::vector<ComplexityPoint> complexity_series(const std::vector<MapSigns>& maps,
                                               int presence_min = 1);

// --- sign complexes ----------------------------------------------------------

struct SignComplex {
    int complex_id = 0;
    std::vector<int> member_clusters;
    long support = 0;  // maps where at least one member is present
};

struct ClusterEdge {
    int a = 0, b = 0;
    double p = 1.0;
    double q = 1.0;           // Benjamini-Hochberg, only filled under use_bh
    double odds_ratio = 0.0;  // +inf sentinel when the off-diagonal is empty
};

struct ComplexResult {
    std::vector<SignComplex> complexes;
    std::vector<ClusterEdge> edges;  // pairs passing the significance rule
    std::vector<int> community;      // per cluster
    double modularity = 0.0;
    long pairs_tested = 0;
};

// Presence matrix at presence_min instances per map, one-sided Fisher exact
// test per cluster pair (co-presence enrichment), an edge at p < p_threshold
// (or BH q < p_threshold under use_bh), Louvain communities of the edge
// graph. Isolated clusters stay singleton complexes.
ComplexResult detect_complexes(const std::vector<MapSigns>& maps, int n_clusters,
                               int presence_min = 3, double p_threshold = 0.01,
                               bool use_bh = false, std::uint64_t seed = 0, int threads = 1);

// Odds ratio with a +inf sentinel for empty off-diagonals, plus the one-sided
// enrichment p for one 2x2 table.
struct PairTest {
    double p = 1.0;
    double odds_ratio = 0.0;
};
PairTest contingency_test(long a, long b, long c, long d);

// --- univocity ---------------------------------------------------------------

// Sparse map x cluster x mode counts; modes are 0-based indices over the
// K = 7 non-contour semantic modes.
struct SemanticSymbolicCounts {
    int n_clusters = 0;
    int n_modes = 7;
    std::vector<std::string> map_ids;
    std::vector<std::vector<std::array<int, 3>>> per_map;  // (cluster, mode, count)
};

struct UnivocityResult {
    double upsilon = 0.0;    // exact pooled value over the subset
    double boot_mean = 0.0;
    double ci_lo = 0.0, ci_hi = 0.0;  // 5/95 bootstrap percentiles
    long clusters_used = 0;
};

// Pooled univocity over a map subset: per cluster with any occurrence, the
// share of its dominant mode; upsilon is the mean across those clusters.
// Bootstrap draws sample_size maps per rep (without replacement when the
// subset is larger, with replacement otherwise). bootstrap_reps = 0 skips
// the bootstrap. Throws Error("EmptySubset").
UnivocityResult univocity(const SemanticSymbolicCounts& x, const std::vector<std::size_t>& subset,
                          int bootstrap_reps = 120, int sample_size = 200, std::uint64_t seed = 0);

// --- geographic rupture ------------------------------------------------------

struct GroupSigns {
    std::string name;
    long n_records = 0;  // map records behind the group
    std::vector<int> clusters;
    std::vector<int> modes;  // empty when modes are not tracked
};

struct RuptureMatrix {
    std::vector<std::string> names;
    std::vector<double> rho;  // names.size()^2, symmetric, zero diagonal

    double at(std::size_t i, std::size_t j) const { return rho[i * names.size() + j]; }
};

// Pairwise rupture between groups with at least min_records map records.
// Uses the per-mode mean when use_modes and mode data are available, falling
// back to the plain coefficient for pairs without active modes. Throws
// Error("TooFewGroups") when fewer than two groups survive the filter.
RuptureMatrix geographic_rupture_matrix(const std::vector<GroupSigns>& groups, int n_clusters,
                                        long min_records = 125, bool use_modes = true);

// --- diachronic flow ---------------------------------------------------------

struct FlowSign {
    std::string group;
    std::string map_id;  // optional; node sizes count distinct maps when set
    double strat = 0.0;
    int cluster = 0;
    int mode = 0;
};

struct FlowNode {
    std::string group;
    int stratum = 0;
    long count = 0;
};

struct FlowEdge {
    std::string from;
    int from_stratum = 0;
    std::string to;
    int to_stratum = 0;
    double rho = 0.0;
    bool significant = false;
};

struct FlowResult {
    std::vector<double> strata_edges;  // n_strata+1 stratification boundaries
    std::vector<FlowNode> nodes;
    std::vector<FlowEdge> edges;  // all consecutive-stratum group pairs
    double mean_rho = 0.0;
    double sd_rho = 0.0;
    long n_pairs = 0;
    double threshold = 0.0;  // mean - 1.96 * sd / sqrt(n_pairs)
};

// Equal-count stratification into n_strata, rupture for every (group at t,
// group at t+1) pair, and a significance flag for pairs whose coefficient
// falls below the all-pair mean by 1.96 standard errors.
FlowResult diachronic_flow(const std::vector<FlowSign>& signs, int n_clusters, int n_strata = 6,
                           bool use_modes = true);

}  // namespace cartolab
