#pragma once

#include "cartolab/model.hpp"
#include "cartolab/util.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cartolab {

// --- smoothing & series ------------------------------------------------------

// Truncated discrete Gaussian, kernel renormalized, reflective boundaries
// (x[-1] mirrors x[1]). NaN entries are treated as gaps: the kernel is
// renormalized over present neighbors, and gaps stay NaN.
std::vector<double> gaussian_smooth(const std::vector<double>& series, double sigma = 2.5,
                                    int radius = 5);

struct LagPoint {
    int tau = 0;
    double r = 0.0;
    double ci_lo = 0.0, ci_hi = 0.0;  // Fisher-z 95%
    int n = 0;
};
// r(tau) = Pearson(a[t], b[t+tau]): positive tau means a leads b by tau.
// Offsets with overlap < min_overlap are omitted and listed in `skipped`.
std::vector<LagPoint> lagged_correlation(const std::vector<double>& a,
                                         const std::vector<double>& b, int max_offset,
                                         std::vector<int>* skipped = nullptr,
                                         int min_overlap = 10);

struct MannKendall {
    long long s = 0;
    double var_s = 0.0;
    double z = 0.0;
    double tau = 0.0;  // tau-b (tie corrected)
    double p = 0.0;    // two-sided, normal approximation
    double sen_slope = 0.0;
};
MannKendall mann_kendall(const std::vector<double>& series);  // throws AllTies

// Two-sample Kolmogorov–Smirnov statistic: sup |F - G| over the ECDFs.
double ks_statistic(std::vector<double> f, std::vector<double> g);
// KS-type statistic over two cumulative-sum paths on a shared index,
// each normalized to end at 1.
double ks_cumsum(const std::vector<double>& path_f, const std::vector<double>& path_g);

// --- exact tests & simple tests ----------------------------------------------

// P(X >= k) for X ~ Hypergeometric(N, K, n): k successes among n draws from a
// population of N with K successes. Long-double log-factorial path; terms
// summed in ascending magnitude.
double hypergeom_tail_ge(long long N, long long K, long long n, long long k);

// One-sided Fisher exact test on [[a, b], [c, d]], alternative "top-left
// larger than expected" (odds ratio > 1): p = P(X >= a) given all margins.
double fisher_exact_greater(long long a, long long b, long long c, long long d);

struct TTest {
    double t = 0.0;
    double df = 0.0;
    double p_two = 1.0;
    double p_greater = 0.5;  // one-sided: first sample mean larger
    double mean_diff = 0.0;
};
TTest unpaired_t_test(const std::vector<double>& a, const std::vector<double>& b);  // pooled variance
TTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

double normal_cdf(double z);
double student_t_cdf(double t, double df);

// --- rasters & shares --------------------------------------------------------

struct GridSpec {
    double lat_min = -90, lat_max = 90;
    double lon_min = -180, lon_max = 180;
    double cell_deg = 1.0;
};

struct AttentionRaster {
    GridSpec spec;
    int rows = 0, cols = 0;
    std::vector<double> intensity;  // row-major, row 0 = lat_min edge
    double& at(int r, int c) { return intensity[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return intensity[static_cast<std::size_t>(r) * cols + c]; }
    double total() const;
};

// Each geometry deposits total mass 1: intensity density is 1/area, so
// small-area (close-attention) maps burn brighter. Point records are enlarged
// to a square of side min_side_deg.
AttentionRaster attention_raster(const std::vector<CoverageGeom>& geoms, const GridSpec& spec,
                                 double min_side_deg = 0.5);

struct ShareSeries {
    int year0 = 0;
    std::vector<double> share;     // NaN where absent
    std::vector<double> smoothed;  // gap-aware Gaussian smoothing
    std::vector<double> ci_lo, ci_hi;  // Wilson 95% binomial
    std::vector<int> n;
};
ShareSeries domestic_share_series(const Dataset& dataset, int window = 3, double sigma = 2.5,
                                  int radius = 5);

// --- ranks -------------------------------------------------------------------

// Average ranks scaled by (n-1) onto [0,1]; (3,1,2) -> (1.0, 0.0, 0.5).
std::vector<double> rank_transform(const std::vector<double>& column);

// --- dyadic regression -------------------------------------------------------

struct DyadicDesign {
    std::vector<std::string> id_i, id_j;  // per-observation pair members
    std::vector<std::string> predictor_names;
    std::vector<std::vector<double>> predictors;  // predictors[p][obs]
    std::vector<double> response;
    bool two_way_fe = false;  // add one dummy block per pair side
    std::size_t n() const { return response.size(); }
};

struct RegressionOptions {
    bool cluster_robust = true;       // CGM two-way (V_i + V_j - V_{i∩j})
    bool backward_eliminate = false;  // drop predictors with p >= p_keep
    double p_keep = 0.025;
    // Fixed-effect dummies already spanned by the intercept, the predictors,
    // and earlier dummies are dropped left-to-right instead of failing the
    // fit. Monadic predictors entered pairwise (e.g. a difference plus a
    // minimum of a per-unit quantity) alias the dummy block by construction,
    // so an identified fit requires shedding the redundant dummies.
    bool drop_aliased = false;
};

struct PredictorStat {
    std::string name;
    double beta = 0.0;
    double se = 0.0;
    double t = 0.0;
    double p = 1.0;
    double type2_ss = 0.0;  // RSS(model w/o predictor) - RSS(full)
    bool dropped = false;
};

struct RegressionResult {
    std::vector<PredictorStat> predictors;  // in input order; dropped ones flagged
    double intercept = 0.0;
    double intercept_se = 0.0;
    double residual_ss = 0.0;
    long residual_df = 0;
    double fixed_effects_ss = 0.0;  // type-II SS of the whole dummy block
    long fixed_effects_df = 0;
    double total_ss = 0.0;
    double r_squared = 0.0;
    bool variance_clamped = false;  // CGM had negative eigenvalues, clamped at 0
    int fe_dummies_dropped = 0;     // aliased dummies removed (drop_aliased)
};

// OLS with optional two-way fixed effects and CGM cluster-robust variance.
// Throws Error("RankDeficient") when the dummy-coded design loses rank.
RegressionResult dyadic_regression(const DyadicDesign& design, const RegressionOptions& options);

// --- road width vs scale -----------------------------------------------------

struct RoadwidthFit {
    double beta0 = 0.0, beta1 = 0.0;  // psi = beta0 + beta1 * log2(W)
    double r_squared = 0.0;
    double mae = 0.0, mae_ci_lo = 0.0, mae_ci_hi = 0.0;
    double chance_mae = 0.0, chance_ci_lo = 0.0, chance_ci_hi = 0.0;
    double explained_share = 0.0;  // 1 - base^(mae - chance), base = 10 forward
    double p_permutation = 1.0;    // P(chance split beats the fitted split)
    bool reversed = false;         // predicting width from scale instead
};

// samples: (scale_denominator S, width W). Forward: psi = log10(S) from
// log2(W); reversed swaps response and predictor (base 2 for the share).
RoadwidthFit roadwidth_regression(const std::vector<std::pair<double, double>>& samples,
                                  int n_splits, std::uint64_t seed, bool reversed = false);

}  // namespace cartolab
