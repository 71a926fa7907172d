#pragma once

#include "cartolab/model.hpp"
#include "cartolab/util.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace cartolab {

// --- quadrants ---------------------------------------------------------------

// Content bounding box plus class shares of the nine quadrants obtained by
// splitting the box 3x3 (rounded boundaries, so mirroring the mask mirrors
// the quadrants exactly). Quadrants are numbered row-major 1..9.
struct QuadrantProfile {
    std::string map_id;
    int row0 = 0, row1 = 0;  // content box, half-open pixel ranges
    int col0 = 0, col1 = 0;
    std::array<std::array<double, kNumClasses>, 9> ratios{};  // each sums to 1
};

// Box = rows/columns whose non-background share exceeds content_threshold.
// Throws Error("NoContent") when no row or column qualifies or the box is
// too small to split into nine parts.
QuadrantProfile quadrant_ratios(const SemanticMask& mask, double content_threshold = 0.01);

// Height/width of the content bounding box.
double shape_ratio(const SemanticMask& mask, double content_threshold = 0.01);

// --- co-location -------------------------------------------------------------

// Pearson correlations between class shares, one sample per map quadrant.
struct Colocation {
    std::array<double, 36> r{};  // 6x6, NaN where undefined
    std::array<double, 36> p{};  // two-sided
    std::array<bool, kNumClasses> defined{};
    long n = 0;  // quadrant samples
};
Colocation colocation_matrix(const std::vector<QuadrantProfile>& profiles);

// Pearson correlations between quadrants across maps. The per-quadrant value
// is the non-background share, or the share of class_id when >= 0.
struct QuadrantGraph {
    std::array<double, 81> r{};  // 9x9, NaN where undefined
    std::array<double, 81> p{};
    std::array<bool, 9> defined{};
    int class_id = -1;
    long n = 0;  // maps

    double edge(int qa, int qb) const {  // 1-based quadrant numbers
        return r[static_cast<std::size_t>(qa - 1) * 9 + (qb - 1)];
    }
};
QuadrantGraph quadrant_graph(const std::vector<QuadrantProfile>& profiles, int class_id = -1);

// --- spatial-relationship hypotheses -----------------------------------------

enum class EdgeSet {
    CentralCross,
    OuterSquare,
    Circumjacent,
    Radial,
    LongHorizontal,
    LongVertical,
};

// Declared 1-based quadrant pairs for each named set.
std::vector<std::pair<int, int>> edge_set(EdgeSet which);

struct RelationshipTest {
    std::string hypothesis;
    bool paired = false;
    long n_a = 0, n_b = 0;  // edges per side
    double delta_r = 0.0;   // mean(side A) - mean(side B)
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;  // one-sided, A > B
};

// Table of supported hypothesis names; directional "A > B" tests on the edge
// weights of one quadrant graph. Mirror-matched sets use a paired t-test,
// disjoint sets an unpaired one. Throws Error("UnknownHypothesis").
//   circumjacent_radial          unpaired  circumjacent vs radial
//   central_outer                unpaired  central cross vs outer square
//   longrange_horizontal_vertical paired   long-range H vs V (transpose pairs)
//   cross_horizontal_vertical    paired    central-cross H vs V
//   horizontal_vertical          paired    all same-row vs same-column edges
//   right_left                   paired    horizontal-mirror pairs
//   top_bottom / bottom_top      paired    vertical-mirror pairs, both ways
std::vector<std::string> relationship_hypotheses();
RelationshipTest relationship_test(const QuadrantGraph& graph, const std::string& hypothesis);

// --- composition features ----------------------------------------------------

// Per class, four log10 components: overall share, center-column emphasis,
// top/bottom balance, left/right balance. epsilon (a fraction of the total
// quadrant mass) keeps all logs finite. Layout: [class * 4 + component].
struct CompositionFeatures {
    static constexpr int kComponents = 4;
    std::array<double, kNumClasses * kComponents> phi{};
};
CompositionFeatures composition_features(const QuadrantProfile& profile, double epsilon = 1e-6);

// --- semantic types ----------------------------------------------------------

struct SemanticTypes {
    int k = 0;
    std::vector<int> labels;     // one per input row
    double silhouette = 0.0;     // on rows outside the training subset
    long n_train = 0;
};

// Standardizes the feature rows, clusters a training subset (spectral:
// normalized-Laplacian eigenvectors + k-means; otherwise plain k-means) and
// propagates labels to all rows by 7-nearest-neighbor vote. Throws
// Error("KTooLarge") when k is not below the training-subset size.
SemanticTypes semantic_types(const std::vector<std::vector<double>>& features, int k,
                             bool spectral, std::uint64_t seed, int threads = 1,
                             std::size_t train_cap = 2000);

}  // namespace cartolab
