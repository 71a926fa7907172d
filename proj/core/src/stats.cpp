#include "cartolab/stats.hpp"

#include "cartolab/rng.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

namespace cartolab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Reflective index fold: x[-1] mirrors x[1], x[n] mirrors x[n-2].
int reflect_index(int i, int n) {
    if (n == 1) return 0;
    int period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

}  // namespace

std::vector<double> gaussian_smooth(const std::vector<double>& series, double sigma, int radius) {
    if (series.empty()) return {};
    if (sigma <= 0.0 || radius < 0) throw Error("BadValue", "sigma must be > 0 and radius >= 0");
    const int n = static_cast<int>(series.size());
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    for (int k = -radius; k <= radius; ++k)
        kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * (k * k) / (sigma * sigma));

    std::vector<double> out(series.size(), kNaN);
    for (int i = 0; i < n; ++i) {
        if (std::isnan(series[static_cast<std::size_t>(i)])) continue;  // gaps stay gaps
        double acc = 0.0, wsum = 0.0;
        for (int k = -radius; k <= radius; ++k) {
            double v = series[static_cast<std::size_t>(reflect_index(i + k, n))];
            if (std::isnan(v)) continue;
            double w = kernel[static_cast<std::size_t>(k + radius)];
            acc += w * v;
            wsum += w;
        }
        out[static_cast<std::size_t>(i)] = wsum > 0.0 ? acc / wsum : kNaN;
    }
    return out;
}

std::vector<LagPoint> lagged_correlation(const std::vector<double>& a, const std::vector<double>& b,
                                         int max_offset, std::vector<int>* skipped,
                                         int min_overlap) {
    if (max_offset < 0) throw Error("BadValue", "max_offset must be >= 0");
    const int na = static_cast<int>(a.size());
    const int nb = static_cast<int>(b.size());
    std::vector<LagPoint> out;
    for (int tau = -max_offset; tau <= max_offset; ++tau) {
        // a[t] against b[t + tau]
        int t_lo = std::max(0, -tau);
        int t_hi = std::min(na, nb - tau);
        std::vector<double> xs, ys;
        for (int t = t_lo; t < t_hi; ++t) {
            double x = a[static_cast<std::size_t>(t)];
            double y = b[static_cast<std::size_t>(t + tau)];
            if (std::isnan(x) || std::isnan(y)) continue;
            xs.push_back(x);
            ys.push_back(y);
        }
        const int n = static_cast<int>(xs.size());
        if (n < min_overlap) {
            if (skipped) skipped->push_back(tau);
            continue;
        }
        LagPoint p;
        p.tau = tau;
        p.n = n;
        try {
            p.r = pearson(xs, ys);
        } catch (const Error&) {  // zero variance in the overlap window
            if (skipped) skipped->push_back(tau);
            continue;
        }
        if (n > 3 && std::abs(p.r) < 1.0) {
            double z = std::atanh(p.r);
            double half = 1.959963984540054 / std::sqrt(static_cast<double>(n - 3));
            p.ci_lo = std::tanh(z - half);
            p.ci_hi = std::tanh(z + half);
        } else {
            p.ci_lo = -1.0;
            p.ci_hi = 1.0;
        }
        out.push_back(p);
    }
    return out;
}

MannKendall mann_kendall(const std::vector<double>& series) {
    const std::size_t n = series.size();
    if (n < 2) throw Error("EmptySample", "need at least two observations");
    for (double v : series)
        if (std::isnan(v)) throw Error("BadValue", "series has NaN entries");

    MannKendall mk;
    std::vector<double> slopes;
    slopes.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double d = series[j] - series[i];
            mk.s += (d > 0) - (d < 0);
            slopes.push_back(d / static_cast<double>(j - i));
        }
    }

    // Tie groups over the values.
    std::map<double, long long> groups;
    for (double v : series) ++groups[v];
    if (groups.size() == 1) throw Error("AllTies", "constant series has no trend direction");

    const double dn = static_cast<double>(n);
    double var = dn * (dn - 1.0) * (2.0 * dn + 5.0);
    double tie_pairs = 0.0;  // sum t(t-1)/2
    for (const auto& [value, t] : groups) {
        (void)value;
        if (t < 2) continue;
        double td = static_cast<double>(t);
        var -= td * (td - 1.0) * (2.0 * td + 5.0);
        tie_pairs += td * (td - 1.0) / 2.0;
    }
    var /= 18.0;
    mk.var_s = var;

    double n0 = dn * (dn - 1.0) / 2.0;
    mk.tau = static_cast<double>(mk.s) / std::sqrt(n0 * (n0 - tie_pairs));

    if (mk.s > 0)
        mk.z = (static_cast<double>(mk.s) - 1.0) / std::sqrt(var);
    else if (mk.s < 0)
        mk.z = (static_cast<double>(mk.s) + 1.0) / std::sqrt(var);
    mk.p = 2.0 * (1.0 - normal_cdf(std::abs(mk.z)));
    mk.sen_slope = percentile(std::move(slopes), 50.0);
    return mk;
}

double ks_statistic(std::vector<double> f, std::vector<double> g) {
    if (f.empty() || g.empty()) throw Error("EmptySample", "both samples must be non-empty");
    std::sort(f.begin(), f.end());
    std::sort(g.begin(), g.end());
    const double nf = static_cast<double>(f.size());
    const double ng = static_cast<double>(g.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < f.size() || j < g.size()) {
        double x;
        if (i < f.size() && (j >= g.size() || f[i] <= g[j]))
            x = f[i];
        else
            x = g[j];
        while (i < f.size() && f[i] == x) ++i;
        while (j < g.size() && g[j] == x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / nf - static_cast<double>(j) / ng));
    }
    return d;
}

double ks_cumsum(const std::vector<double>& path_f, const std::vector<double>& path_g) {
    if (path_f.size() != path_g.size())
        throw Error("DimensionMismatch", "paths must share one index");
    if (path_f.empty()) throw Error("EmptySample", "empty paths");
    double tf = path_f.back(), tg = path_g.back();
    if (tf <= 0.0 || tg <= 0.0) throw Error("EmptySample", "zero-mass path");
    double d = 0.0;
    for (std::size_t i = 0; i < path_f.size(); ++i)
        d = std::max(d, std::abs(path_f[i] / tf - path_g[i] / tg));
    return d;
}

namespace {

long double lfact(long long x) {
    thread_local std::vector<long double> table{0.0L};
    while (static_cast<long long>(table.size()) <= x)
        table.push_back(table.back() + std::log(static_cast<long double>(table.size())));
    return table[static_cast<std::size_t>(x)];
}

}  // namespace

double hypergeom_tail_ge(long long N, long long K, long long n, long long k) {
    if (N < 0 || K < 0 || n < 0 || K > N || n > N)
        throw Error("BadValue", "invalid hypergeometric parameters");
    long long lo = std::max(0LL, n + K - N);
    long long hi = std::min(n, K);
    if (k <= lo) return 1.0;
    if (k > hi) return 0.0;
    const long double denom = lfact(N) - lfact(n) - lfact(N - n);
    std::vector<long double> logs;
    logs.reserve(static_cast<std::size_t>(hi - k + 1));
    for (long long x = k; x <= hi; ++x) {
        logs.push_back(lfact(K) - lfact(x) - lfact(K - x) + lfact(N - K) - lfact(n - x) -
                       lfact(N - K - n + x) - denom);
    }
    std::sort(logs.begin(), logs.end());  // ascending magnitude keeps the sum tight
    long double sum = 0.0L;
    for (long double lg : logs) sum += std::exp(lg);
    return static_cast<double>(std::min(sum, 1.0L));
}

double fisher_exact_greater(long long a, long long b, long long c, long long d) {
    if (a < 0 || b < 0 || c < 0 || d < 0) throw Error("NegativeCell", "table cells must be >= 0");
    long long N = a + b + c + d;
    if (N == 0) throw Error("EmptySample", "empty table");
    return hypergeom_tail_ge(N, a + b, a + c, a);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double student_t_cdf(double t, double df) {
    if (df <= 0) throw Error("BadValue", "df must be > 0");
    if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
    boost::math::students_t dist(df);
    return boost::math::cdf(dist, t);
}

namespace {

TTest finish_t(TTest r, double t, double df) {
    r.t = t;
    r.df = df;
    if (std::isinf(t)) {
        r.p_two = 0.0;
        r.p_greater = t > 0 ? 0.0 : 1.0;
    } else {
        r.p_two = 2.0 * (1.0 - student_t_cdf(std::abs(t), df));
        r.p_greater = 1.0 - student_t_cdf(t, df);
    }
    return r;
}

}  // namespace

TTest unpaired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t na = a.size(), nb = b.size();
    if (na < 2 || nb < 2) throw Error("EmptySample", "need two observations per group");
    TTest r;
    r.mean_diff = mean(a) - mean(b);
    double df = static_cast<double>(na + nb - 2);
    double sp2 = ((na - 1) * sample_variance(a) + (nb - 1) * sample_variance(b)) / df;
    if (sp2 <= 0.0) {
        if (r.mean_diff == 0.0) {
            r.df = df;
            return r;  // t = 0, p_two = 1, p_greater = 0.5
        }
        return finish_t(r, r.mean_diff > 0 ? std::numeric_limits<double>::infinity()
                                           : -std::numeric_limits<double>::infinity(),
                        df);
    }
    double t = r.mean_diff / std::sqrt(sp2 * (1.0 / na + 1.0 / nb));
    return finish_t(r, t, df);
}

TTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw Error("DimensionMismatch", "paired samples differ in length");
    if (a.size() < 2) throw Error("EmptySample", "need at least two pairs");
    std::vector<double> diff(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
    TTest r;
    r.mean_diff = mean(diff);
    double df = static_cast<double>(a.size() - 1);
    double sd = std::sqrt(sample_variance(diff));
    if (sd <= 0.0) {
        if (r.mean_diff == 0.0) {
            r.df = df;
            return r;
        }
        return finish_t(r, r.mean_diff > 0 ? std::numeric_limits<double>::infinity()
                                           : -std::numeric_limits<double>::infinity(),
                        df);
    }
    double t = r.mean_diff / (sd / std::sqrt(static_cast<double>(a.size())));
    return finish_t(r, t, df);
}

// --- rasters -----------------------------------------------------------------

double AttentionRaster::total() const {
    return std::accumulate(intensity.begin(), intensity.end(), 0.0);
}

AttentionRaster attention_raster(const std::vector<CoverageGeom>& geoms, const GridSpec& spec,
                                 double min_side_deg) {
    if (spec.cell_deg <= 0.0) throw Error("BadValue", "cell_deg must be > 0");
    if (spec.lat_max <= spec.lat_min || spec.lon_max <= spec.lon_min)
        throw Error("BadValue", "grid extent is empty");
    AttentionRaster r;
    r.spec = spec;
    r.rows = std::max(1, static_cast<int>(std::ceil((spec.lat_max - spec.lat_min) / spec.cell_deg -
                                                    1e-9)));
    r.cols = std::max(1, static_cast<int>(std::ceil((spec.lon_max - spec.lon_min) / spec.cell_deg -
                                                    1e-9)));
    r.intensity.assign(static_cast<std::size_t>(r.rows) * r.cols, 0.0);

    for (const auto& g : geoms) {
        double side = std::max(std::sqrt(std::max(g.area_deg2, 0.0)), min_side_deg);
        if (side <= 0.0) continue;
        double lat_lo = g.lat - side / 2, lat_hi = g.lat + side / 2;
        double lon_lo = g.lon - side / 2, lon_hi = g.lon + side / 2;
        int r0 = std::max(0, static_cast<int>(std::floor((lat_lo - spec.lat_min) / spec.cell_deg)));
        int r1 = std::min(r.rows - 1,
                          static_cast<int>(std::floor((lat_hi - spec.lat_min) / spec.cell_deg)));
        int c0 = std::max(0, static_cast<int>(std::floor((lon_lo - spec.lon_min) / spec.cell_deg)));
        int c1 = std::min(r.cols - 1,
                          static_cast<int>(std::floor((lon_hi - spec.lon_min) / spec.cell_deg)));
        double inv_area = 1.0 / (side * side);
        for (int row = r0; row <= r1; ++row) {
            double cl = spec.lat_min + row * spec.cell_deg;
            double ch = cl + spec.cell_deg;
            double dlat = std::min(lat_hi, ch) - std::max(lat_lo, cl);
            if (dlat <= 0.0) continue;
            for (int col = c0; col <= c1; ++col) {
                double gl = spec.lon_min + col * spec.cell_deg;
                double gh = gl + spec.cell_deg;
                double dlon = std::min(lon_hi, gh) - std::max(lon_lo, gl);
                if (dlon <= 0.0) continue;
                r.at(row, col) += dlat * dlon * inv_area;
            }
        }
    }
    return r;
}

ShareSeries domestic_share_series(const Dataset& dataset, int window, double sigma, int radius) {
    if (window < 1 || window % 2 == 0) throw Error("BadValue", "window must be odd and >= 1");
    int ymin = std::numeric_limits<int>::max(), ymax = std::numeric_limits<int>::min();
    std::map<int, std::pair<int, int>> per_year;  // year -> (domestic, total)
    for (const auto& rec : dataset.records) {
        if (!rec.domestic) continue;
        auto& [dom, tot] = per_year[rec.year];
        ++tot;
        if (*rec.domestic) ++dom;
        ymin = std::min(ymin, rec.year);
        ymax = std::max(ymax, rec.year);
    }
    if (per_year.empty()) throw Error("EmptySample", "no records carry a domestic flag");

    ShareSeries s;
    s.year0 = ymin;
    const int half = window / 2;
    const double z = 1.959963984540054, z2 = z * z;
    for (int y = ymin; y <= ymax; ++y) {
        int dom = 0, tot = 0;
        for (int w = y - half; w <= y + half; ++w) {
            auto it = per_year.find(w);
            if (it == per_year.end()) continue;
            dom += it->second.first;
            tot += it->second.second;
        }
        s.n.push_back(tot);
        if (tot == 0) {
            s.share.push_back(kNaN);
            s.ci_lo.push_back(kNaN);
            s.ci_hi.push_back(kNaN);
            continue;
        }
        double p = static_cast<double>(dom) / tot;
        s.share.push_back(p);
        double nn = tot;
        double center = (p + z2 / (2 * nn)) / (1 + z2 / nn);
        double half_w = z * std::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn)) / (1 + z2 / nn);
        s.ci_lo.push_back(std::max(0.0, center - half_w));
        s.ci_hi.push_back(std::min(1.0, center + half_w));
    }
    s.smoothed = gaussian_smooth(s.share, sigma, radius);
    return s;
}

std::vector<double> rank_transform(const std::vector<double>& column) {
    const std::size_t n = column.size();
    if (n == 0) return {};
    if (n == 1) return {0.5};
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return column[a] < column[b]; });
    std::vector<double> out(n, 0.0);
    const double scale = 1.0 / static_cast<double>(n - 1);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && column[order[j + 1]] == column[order[i]]) ++j;
        double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0;  // 0-based ranks
        for (std::size_t k = i; k <= j; ++k) out[order[k]] = avg * scale;
        i = j + 1;
    }
    return out;
}

// --- dyadic regression -------------------------------------------------------

namespace {

struct DesignMatrix {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
    std::vector<int> predictor_col;  // input predictor index -> column (-1 if inactive)
    int fe_begin = 0, fe_count = 0;
    int fe_dropped = 0;
    std::vector<int> cluster_i, cluster_j, cluster_ij;
    int n_cluster_i = 0, n_cluster_j = 0;
};

DesignMatrix build_design(const DyadicDesign& d, const std::vector<bool>& active, bool with_fe,
                          bool drop_aliased = false) {
    const std::size_t n = d.n();
    DesignMatrix m;
    m.y = Eigen::Map<const Eigen::VectorXd>(d.response.data(), static_cast<Eigen::Index>(n));

    std::vector<std::string> levels_i(d.id_i), levels_j(d.id_j);
    std::sort(levels_i.begin(), levels_i.end());
    levels_i.erase(std::unique(levels_i.begin(), levels_i.end()), levels_i.end());
    std::sort(levels_j.begin(), levels_j.end());
    levels_j.erase(std::unique(levels_j.begin(), levels_j.end()), levels_j.end());
    std::unordered_map<std::string, int> index_i, index_j;
    for (std::size_t k = 0; k < levels_i.size(); ++k) index_i[levels_i[k]] = static_cast<int>(k);
    for (std::size_t k = 0; k < levels_j.size(); ++k) index_j[levels_j[k]] = static_cast<int>(k);
    m.n_cluster_i = static_cast<int>(levels_i.size());
    m.n_cluster_j = static_cast<int>(levels_j.size());

    m.cluster_i.resize(n);
    m.cluster_j.resize(n);
    m.cluster_ij.resize(n);
    std::map<std::pair<int, int>, int> pair_id;
    for (std::size_t r = 0; r < n; ++r) {
        m.cluster_i[r] = index_i[d.id_i[r]];
        m.cluster_j[r] = index_j[d.id_j[r]];
        auto key = std::make_pair(m.cluster_i[r], m.cluster_j[r]);
        auto [it, fresh] = pair_id.emplace(key, static_cast<int>(pair_id.size()));
        (void)fresh;
        m.cluster_ij[r] = it->second;
    }

    int n_active = 0;
    for (bool a : active) n_active += a;
    int fe_cols = 0;
    if (with_fe)
        fe_cols = std::max(0, m.n_cluster_i - 1) + std::max(0, m.n_cluster_j - 1);
    m.x.setZero(static_cast<Eigen::Index>(n), 1 + n_active + fe_cols);
    m.x.col(0).setOnes();

    m.predictor_col.assign(d.predictor_names.size(), -1);
    int col = 1;
    for (std::size_t p = 0; p < d.predictor_names.size(); ++p) {
        if (!active[p]) continue;
        m.predictor_col[p] = col;
        for (std::size_t r = 0; r < n; ++r)
            m.x(static_cast<Eigen::Index>(r), col) = d.predictors[p][r];
        ++col;
    }
    m.fe_begin = col;
    m.fe_count = fe_cols;
    if (with_fe) {
        for (std::size_t r = 0; r < n; ++r) {
            int ci = m.cluster_i[r];
            if (ci > 0) m.x(static_cast<Eigen::Index>(r), col + ci - 1) = 1.0;
            int cj = m.cluster_j[r];
            if (cj > 0)
                m.x(static_cast<Eigen::Index>(r), col + std::max(0, m.n_cluster_i - 1) + cj - 1) =
                    1.0;
        }
    }
    if (with_fe && drop_aliased && fe_cols > 0) {
        // Left-to-right sweep: a dummy whose residual against the columns kept
        // so far vanishes is redundant and removed, mirroring how standard
        // regression software resolves aliased factor levels.
        const Eigen::Index rows = m.x.rows();
        Eigen::MatrixXd basis(rows, m.x.cols());
        Eigen::Index nb = 0;
        auto absorb = [&](const Eigen::VectorXd& v) {
            Eigen::VectorXd w = v;
            for (int pass = 0; pass < 2; ++pass)
                if (nb > 0) w -= basis.leftCols(nb) * (basis.leftCols(nb).transpose() * w);
            if (w.norm() <= 1e-8 * std::max(1.0, v.norm())) return false;
            basis.col(nb++) = w / w.norm();
            return true;
        };
        for (int c = 0; c < m.fe_begin; ++c) absorb(m.x.col(c));
        std::vector<int> kept;
        for (int c = 0; c < fe_cols; ++c)
            if (absorb(m.x.col(m.fe_begin + c))) kept.push_back(c);
        if (static_cast<int>(kept.size()) < fe_cols) {
            Eigen::MatrixXd reduced(rows, m.fe_begin + static_cast<Eigen::Index>(kept.size()));
            reduced.leftCols(m.fe_begin) = m.x.leftCols(m.fe_begin);
            for (std::size_t k = 0; k < kept.size(); ++k)
                reduced.col(m.fe_begin + static_cast<Eigen::Index>(k)) =
                    m.x.col(m.fe_begin + kept[k]);
            m.x = std::move(reduced);
            m.fe_dropped = fe_cols - static_cast<int>(kept.size());
            m.fe_count = static_cast<int>(kept.size());
        }
    }
    return m;
}

struct FitCore {
    Eigen::VectorXd beta;
    Eigen::VectorXd residuals;
    Eigen::MatrixXd xtx_inv;
    double rss = 0.0;
    long df = 0;
};

FitCore solve_ols(const DesignMatrix& m) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m.x);
    if (qr.rank() < m.x.cols())
        throw Error("RankDeficient", "design matrix is rank deficient");
    FitCore f;
    f.beta = qr.solve(m.y);
    f.residuals = m.y - m.x * f.beta;
    f.rss = f.residuals.squaredNorm();
    f.df = static_cast<long>(m.x.rows() - m.x.cols());
    Eigen::MatrixXd xtx = m.x.transpose() * m.x;
    f.xtx_inv = xtx.ldlt().solve(Eigen::MatrixXd::Identity(m.x.cols(), m.x.cols()));
    return f;
}

Eigen::MatrixXd cluster_meat(const DesignMatrix& m, const Eigen::VectorXd& u,
                             const std::vector<int>& assignment, int n_clusters) {
    const Eigen::Index k = m.x.cols();
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
    std::vector<Eigen::VectorXd> sums(static_cast<std::size_t>(n_clusters),
                                      Eigen::VectorXd::Zero(k));
    for (Eigen::Index r = 0; r < m.x.rows(); ++r)
        sums[static_cast<std::size_t>(assignment[static_cast<std::size_t>(r)])] +=
            m.x.row(r).transpose() * u(r);
    for (const auto& s : sums) meat += s * s.transpose();
    return meat;
}

struct Covariance {
    Eigen::MatrixXd v;
    bool clamped = false;
    int min_clusters = 0;
};

// CGM two-way clustering: V_i + V_j - V_{i∩j}, no finite-sample factors, so a
// design where every observation is its own cluster reduces exactly to HC0.
Covariance cgm_covariance(const DesignMatrix& m, const FitCore& f) {
    Covariance c;
    int n_pairs = 1 + *std::max_element(m.cluster_ij.begin(), m.cluster_ij.end());
    Eigen::MatrixXd meat = cluster_meat(m, f.residuals, m.cluster_i, m.n_cluster_i) +
                           cluster_meat(m, f.residuals, m.cluster_j, m.n_cluster_j) -
                           cluster_meat(m, f.residuals, m.cluster_ij, n_pairs);
    c.v = f.xtx_inv * meat * f.xtx_inv;
    c.v = ((c.v + c.v.transpose()) / 2.0).eval();
    c.min_clusters = std::min(m.n_cluster_i, m.n_cluster_j);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.v);
    if (es.eigenvalues().minCoeff() < 0.0) {
        Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
        c.v = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
        c.clamped = true;
    }
    return c;
}

}  // namespace

RegressionResult dyadic_regression(const DyadicDesign& design, const RegressionOptions& options) {
    const std::size_t n = design.n();
    if (n == 0) throw Error("EmptySample", "no observations");
    if (design.id_i.size() != n || design.id_j.size() != n)
        throw Error("DimensionMismatch", "pair ids must match the response length");
    if (design.predictor_names.size() != design.predictors.size())
        throw Error("DimensionMismatch", "predictor names and columns differ");
    for (const auto& col : design.predictors)
        if (col.size() != n) throw Error("DimensionMismatch", "predictor column length mismatch");

    const std::size_t np = design.predictors.size();
    std::vector<bool> active(np, true);

    auto fit_once = [&](const std::vector<bool>& act) {
        DesignMatrix m = build_design(design, act, design.two_way_fe, options.drop_aliased);
        FitCore f = solve_ols(m);
        return std::make_pair(std::move(m), std::move(f));
    };

    RegressionResult out;
    out.predictors.resize(np);
    for (std::size_t p = 0; p < np; ++p) out.predictors[p].name = design.predictor_names[p];

    while (true) {
        auto [m, f] = fit_once(active);

        Eigen::MatrixXd v;
        int t_df = 0;
        if (options.cluster_robust) {
            Covariance c = cgm_covariance(m, f);
            v = c.v;
            out.variance_clamped = c.clamped;
            t_df = c.min_clusters - 1;
            if (t_df < 1) t_df = static_cast<int>(std::max(1L, f.df));
        } else {
            double s2 = f.rss / static_cast<double>(std::max(1L, f.df));
            v = s2 * f.xtx_inv;
            t_df = static_cast<int>(std::max(1L, f.df));
        }

        // p-values for the active predictors under the current fit
        double worst_p = -1.0;
        std::size_t worst_idx = np;
        for (std::size_t p = 0; p < np; ++p) {
            if (!active[p]) continue;
            int col = m.predictor_col[p];
            double se = std::sqrt(std::max(0.0, v(col, col)));
            double beta = f.beta(col);
            double pv = 1.0;
            if (se > 0.0) {
                double t = beta / se;
                pv = 2.0 * (1.0 - student_t_cdf(std::abs(t), t_df));
            }
            if (pv > worst_p) {
                worst_p = pv;
                worst_idx = p;
            }
        }

        bool drop = options.backward_eliminate && worst_idx < np && worst_p >= options.p_keep;
        int n_active = 0;
        for (bool a : active) n_active += a;
        if (drop && n_active > 0) {
            active[worst_idx] = false;
            out.predictors[worst_idx].dropped = true;
            out.predictors[worst_idx].beta = 0.0;
            out.predictors[worst_idx].se = 0.0;
            out.predictors[worst_idx].t = 0.0;
            out.predictors[worst_idx].p = worst_p;
            out.predictors[worst_idx].type2_ss = 0.0;
            continue;
        }

        // Final model: fill stats.
        for (std::size_t p = 0; p < np; ++p) {
            if (!active[p]) continue;
            auto& st = out.predictors[p];
            int col = m.predictor_col[p];
            st.beta = f.beta(col);
            st.se = std::sqrt(std::max(0.0, v(col, col)));
            st.t = st.se > 0.0 ? st.beta / st.se : 0.0;
            st.p = st.se > 0.0 ? 2.0 * (1.0 - student_t_cdf(std::abs(st.t), t_df)) : 1.0;

            std::vector<bool> reduced = active;
            reduced[p] = false;
            auto [mr, fr] = fit_once(reduced);
            (void)mr;
            st.type2_ss = std::max(0.0, fr.rss - f.rss);
        }
        out.intercept = f.beta(0);
        out.intercept_se = std::sqrt(std::max(0.0, v(0, 0)));
        out.residual_ss = f.rss;
        out.residual_df = f.df;

        if (design.two_way_fe) {
            DesignMatrix m0 = build_design(design, active, false);
            FitCore f0 = solve_ols(m0);
            out.fixed_effects_ss = std::max(0.0, f0.rss - f.rss);
            out.fixed_effects_df = m.fe_count;
            out.fe_dummies_dropped = m.fe_dropped;
        }

        double ybar = mean(design.response);
        double tss = 0.0;
        for (double yv : design.response) tss += (yv - ybar) * (yv - ybar);
        out.total_ss = tss;
        out.r_squared = tss > 0.0 ? 1.0 - f.rss / tss : 0.0;
        break;
    }
    return out;
}

// --- road width vs scale -----------------------------------------------------

namespace {

struct SimpleFit {
    double b0 = 0.0, b1 = 0.0;
};

SimpleFit ols_line(const std::vector<double>& x, const std::vector<double>& y,
                   const std::vector<std::size_t>& idx) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i : idx) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    double n = static_cast<double>(idx.size());
    double denom = n * sxx - sx * sx;
    if (denom == 0.0) throw Error("ZeroVariance", "predictor is constant in the split");
    SimpleFit f;
    f.b1 = (n * sxy - sx * sy) / denom;
    f.b0 = (sy - f.b1 * sx) / n;
    return f;
}

}  // namespace

RoadwidthFit roadwidth_regression(const std::vector<std::pair<double, double>>& samples,
                                  int n_splits, std::uint64_t seed, bool reversed) {
    if (samples.size() < 4) throw Error("EmptySample", "need at least four samples");
    if (n_splits < 1) throw Error("BadValue", "n_splits must be >= 1");
    const std::size_t n = samples.size();
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = samples[i].first, w = samples[i].second;
        if (s <= 0.0 || w <= 0.0) throw Error("BadValue", "scale and width must be > 0");
        double psi = std::log10(s), lw = std::log2(w);
        x[i] = reversed ? psi : lw;
        y[i] = reversed ? lw : psi;
    }

    RoadwidthFit out;
    out.reversed = reversed;
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    SimpleFit full = ols_line(x, y, all);
    out.beta0 = full.b0;
    out.beta1 = full.b1;
    double ybar = mean(y), tss = 0.0, rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double e = y[i] - (full.b0 + full.b1 * x[i]);
        rss += e * e;
        tss += (y[i] - ybar) * (y[i] - ybar);
    }
    out.r_squared = tss > 0.0 ? 1.0 - rss / tss : 0.0;

    Rng rng(seed);
    std::vector<double> maes, chances;
    int chance_wins = 0;
    maes.reserve(static_cast<std::size_t>(n_splits));
    chances.reserve(static_cast<std::size_t>(n_splits));
    for (int s = 0; s < n_splits; ++s) {
        Rng split_rng = rng.derive("split", static_cast<std::uint64_t>(s));
        std::vector<std::size_t> order(all);
        split_rng.shuffle(order);
        std::size_t half = n / 2;
        std::vector<std::size_t> train(order.begin(), order.begin() + half);
        std::vector<std::size_t> test(order.begin() + half, order.end());

        SimpleFit f = ols_line(x, y, train);
        double mae = 0.0;
        for (std::size_t i : test) mae += std::abs(y[i] - (f.b0 + f.b1 * x[i]));
        mae /= static_cast<double>(test.size());
        maes.push_back(mae);

        // Chance run: same split, response permuted within the training half.
        std::vector<double> y_perm(y);
        std::vector<std::size_t> tr(train);
        split_rng.shuffle(tr);
        for (std::size_t k = 0; k < train.size(); ++k) y_perm[train[k]] = y[tr[k]];
        SimpleFit fc = ols_line(x, y_perm, train);
        double cm = 0.0;
        for (std::size_t i : test) cm += std::abs(y[i] - (fc.b0 + fc.b1 * x[i]));
        cm /= static_cast<double>(test.size());
        chances.push_back(cm);
        if (cm <= mae) ++chance_wins;
    }
    out.mae = mean(maes);
    out.chance_mae = mean(chances);
    out.mae_ci_lo = percentile(maes, 2.5);
    out.mae_ci_hi = percentile(maes, 97.5);
    out.chance_ci_lo = percentile(chances, 2.5);
    out.chance_ci_hi = percentile(chances, 97.5);
    double base = reversed ? 2.0 : 10.0;
    out.explained_share = 1.0 - std::pow(base, out.mae - out.chance_mae);
    out.p_permutation = (1.0 + chance_wins) / (static_cast<double>(n_splits) + 1.0);
    return out;
}

}  // namespace cartolab
