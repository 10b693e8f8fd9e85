#pragma once

// Clustering quality (Rand index, NMI, best-assignment accuracy), binned
// distributions with KL / JS / Wasserstein-1 distances, and a k-means++
// baseline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fsgan/error.hpp"
#include "fsgan/tensor_nn.hpp"

namespace fsgan {

inline constexpr double kHistogramSmoothing = 1e-9;

/// Probability vector over fixed bins.
struct DiscreteDist {
    std::vector<double> probs;
    std::vector<double> edges;  // probs.size() + 1 ascending values

    DiscreteDist() = default;

    DiscreteDist(std::vector<double> p, std::vector<double> e) : probs(std::move(p)), edges(std::move(e)) {
        validate();
    }

    /// Bins of equal width over [0,1].
    explicit DiscreteDist(std::vector<double> p) : probs(std::move(p)) {
        const std::size_t k = probs.size();
        edges.resize(k + 1);
        for (std::size_t i = 0; i <= k; ++i) edges[i] = static_cast<double>(i) / static_cast<double>(k);
        validate();
    }

    std::size_t size() const { return probs.size(); }
    double bin_width(std::size_t i) const { return edges[i + 1] - edges[i]; }
    double bin_center(std::size_t i) const { return 0.5 * (edges[i] + edges[i + 1]); }

    void validate() const {
        if (probs.empty()) throw ConfigError("DiscreteDist: no bins");
        if (edges.size() != probs.size() + 1) throw ConfigError("DiscreteDist: need K+1 edges");
        for (std::size_t i = 0; i + 1 < edges.size(); ++i)
            if (!(edges[i] < edges[i + 1])) throw ConfigError("DiscreteDist: edges must ascend");
        double s = 0.0;
        for (double v : probs) {
            if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("DiscreteDist: negative or non-finite mass");
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-12) throw ConfigError("DiscreteDist: probabilities do not sum to 1");
    }
};

inline void require_same_bins(const DiscreteDist& p, const DiscreteDist& q) {
    if (p.edges != q.edges) throw ConfigError("distributions use different bin edges");
}

/// Equal-width histogram over [lo, hi]; out-of-range values land in the
/// boundary bins. Counts are smoothed by +1e-9 per bin and renormalized.
inline DiscreteDist histogram(std::span<const double> values, std::size_t bins, double lo, double hi) {
    if (values.empty()) throw ConfigError("histogram: empty input");
    if (bins < 1 || !(lo < hi)) throw ConfigError("histogram: need bins >= 1 and lo < hi");
    std::vector<double> counts(bins, 0.0);
    const double scale = static_cast<double>(bins) / (hi - lo);
    for (double v : values) {
        double pos = std::floor((v - lo) * scale);
        if (!(pos >= 0.0)) pos = 0.0;  // also catches NaN
        const auto idx = std::min(static_cast<std::size_t>(pos), bins - 1);
        counts[idx] += 1.0;
    }
    const double n = static_cast<double>(values.size());
    const double norm = 1.0 + static_cast<double>(bins) * kHistogramSmoothing;
    std::vector<double> p(bins);
    for (std::size_t i = 0; i < bins; ++i) p[i] = (counts[i] / n + kHistogramSmoothing) / norm;
    // Push the residual rounding error into the largest bin.
    const double residual = 1.0 - std::accumulate(p.begin(), p.end(), 0.0);
    *std::max_element(p.begin(), p.end()) += residual;
    std::vector<double> edges(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i) edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
    return DiscreteDist(std::move(p), std::move(edges));
}

/// KL(p || q) in nats. Empty bins of q are floored at the smoothing constant.
inline double kl_divergence(const DiscreteDist& p, const DiscreteDist& q) {
    require_same_bins(p, q);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p.probs[i] == 0.0) continue;
        const double qi = std::max(q.probs[i], kHistogramSmoothing);
        s += p.probs[i] * std::log(p.probs[i] / qi);
    }
    return std::max(0.0, s);
}

inline double js_divergence(const DiscreteDist& p, const DiscreteDist& q) {
    require_same_bins(p, q);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p.probs[i] + q.probs[i]);
        if (p.probs[i] > 0.0) s += 0.5 * p.probs[i] * std::log(p.probs[i] / m);
        if (q.probs[i] > 0.0) s += 0.5 * q.probs[i] * std::log(q.probs[i] / m);
    }
    return std::clamp(s, 0.0, std::log(2.0));
}

/// 1-D earth mover's distance via the CDF difference, in units of the binned variable.
inline double wasserstein1(const DiscreteDist& p, const DiscreteDist& q) {
    require_same_bins(p, q);
    double cp = 0.0, cq = 0.0, s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        cp += p.probs[i];
        cq += q.probs[i];
        s += std::abs(cp - cq) * p.bin_width(i);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Clustering metrics

using Labeling = std::vector<int>;

/// Counts of (true class, predicted class) co-occurrences. Label values are
/// remapped to dense indices in ascending order.
struct ContingencyTable {
    std::vector<std::vector<std::int64_t>> counts;  // [true][pred]
    std::vector<std::int64_t> row_sums;
    std::vector<std::int64_t> col_sums;
    std::int64_t n = 0;

    std::size_t rows() const { return row_sums.size(); }
    std::size_t cols() const { return col_sums.size(); }
};

namespace detail {

inline std::vector<int> dense_ids(std::span<const int> labels, std::size_t& distinct) {
    std::vector<int> uniq(labels.begin(), labels.end());
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    distinct = uniq.size();
    std::vector<int> ids(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
        ids[i] = static_cast<int>(std::lower_bound(uniq.begin(), uniq.end(), labels[i]) - uniq.begin());
    return ids;
}

inline double pairs(std::int64_t k) { return 0.5 * static_cast<double>(k) * static_cast<double>(k - 1); }

}  // namespace detail

inline ContingencyTable contingency(std::span<const int> truth, std::span<const int> pred) {
    if (truth.size() != pred.size()) throw ShapeError("labelings differ in length");
    std::size_t kt = 0, kp = 0;
    const auto t = detail::dense_ids(truth, kt);
    const auto p = detail::dense_ids(pred, kp);
    ContingencyTable c;
    c.counts.assign(kt, std::vector<std::int64_t>(kp, 0));
    c.row_sums.assign(kt, 0);
    c.col_sums.assign(kp, 0);
    for (std::size_t i = 0; i < t.size(); ++i) {
        ++c.counts[t[i]][p[i]];
        ++c.row_sums[t[i]];
        ++c.col_sums[p[i]];
    }
    c.n = static_cast<std::int64_t>(truth.size());
    return c;
}

inline double rand_index(std::span<const int> truth, std::span<const int> pred) {
    if (truth.size() != pred.size()) throw ShapeError("labelings differ in length");
    if (truth.size() < 2) throw ConfigError("rand_index: need at least two samples");
    const auto c = contingency(truth, pred);
    // Exact integer pair counts.
    std::int64_t tp = 0, same_true = 0, same_pred = 0;
    for (const auto& row : c.counts)
        for (auto v : row) tp += v * (v - 1) / 2;
    for (auto v : c.row_sums) same_true += v * (v - 1) / 2;
    for (auto v : c.col_sums) same_pred += v * (v - 1) / 2;
    const std::int64_t total = c.n * (c.n - 1) / 2;
    const std::int64_t fp = same_pred - tp;
    const std::int64_t fn = same_true - tp;
    const std::int64_t tn = total - tp - fp - fn;
    return static_cast<double>(tp + tn) / static_cast<double>(total);
}

inline double nmi(std::span<const int> truth, std::span<const int> pred) {
    const auto c = contingency(truth, pred);
    if (c.n == 0) throw ConfigError("nmi: empty labelings");
    const double n = static_cast<double>(c.n);
    auto entropy = [n](const std::vector<std::int64_t>& sums) {
        double h = 0.0;
        for (auto v : sums)
            if (v > 0) {
                const double p = static_cast<double>(v) / n;
                h -= p * std::log(p);
            }
        return h;
    };
    const double hu = entropy(c.row_sums);
    const double hv = entropy(c.col_sums);
    double mi = 0.0;
    for (std::size_t i = 0; i < c.rows(); ++i)
        for (std::size_t j = 0; j < c.cols(); ++j) {
            const auto v = c.counts[i][j];
            if (v == 0) continue;
            const double pij = static_cast<double>(v) / n;
            mi += pij * std::log(n * static_cast<double>(v) /
                                 (static_cast<double>(c.row_sums[i]) * static_cast<double>(c.col_sums[j])));
        }
    const double denom = hu + hv;
    if (denom == 0.0) return 1.0;
    if (mi <= 0.0) return 0.0;
    return std::clamp(2.0 * mi / denom, 0.0, 1.0);
}

/// Maximum-weight perfect matching on a square benefit matrix (Hungarian
/// algorithm, O(k^3)). Returns assignment[row] = column.
inline std::vector<int> hungarian_max(const std::vector<std::vector<double>>& benefit) {
    const int k = static_cast<int>(benefit.size());
    const double inf = std::numeric_limits<double>::infinity();
    // 1-based potentials; cost = -benefit.
    std::vector<double> u(k + 1, 0.0), v(k + 1, 0.0);
    std::vector<int> match(k + 1, 0), way(k + 1, 0);
    for (int i = 1; i <= k; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(k + 1, inf);
        std::vector<char> used(k + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = match[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= k; ++j) {
                if (used[j]) continue;
                const double cur = -benefit[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= k; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const int j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> assignment(k, -1);
    for (int j = 1; j <= k; ++j)
        if (match[j] != 0) assignment[match[j] - 1] = j - 1;
    return assignment;
}

inline constexpr std::size_t kMaxAccLabels = 64;

/// Best one-to-one relabeling accuracy.
inline double acc(std::span<const int> truth, std::span<const int> pred) {
    const auto c = contingency(truth, pred);
    if (c.n == 0) throw ConfigError("acc: empty labelings");
    if (c.rows() > kMaxAccLabels || c.cols() > kMaxAccLabels) throw ConfigError("acc: more than 64 distinct labels");
    const std::size_t k = std::max(c.rows(), c.cols());
    std::vector<std::vector<double>> benefit(k, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < c.rows(); ++i)
        for (std::size_t j = 0; j < c.cols(); ++j) benefit[i][j] = static_cast<double>(c.counts[i][j]);
    const auto assignment = hungarian_max(benefit);
    std::int64_t matched = 0;
    for (std::size_t i = 0; i < c.rows(); ++i)
        if (assignment[i] >= 0 && static_cast<std::size_t>(assignment[i]) < c.cols())
            matched += c.counts[i][static_cast<std::size_t>(assignment[i])];
    return static_cast<double>(matched) / static_cast<double>(c.n);
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` is reached.
inline Labeling kmeans_plusplus(const Matrix& records, int k, Rng& rng, int max_iters = 300) {
    const Eigen::Index n = records.rows();
    if (k < 1) throw ConfigError("kmeans_plusplus: k must be >= 1");
    if (k > n) throw ConfigError("kmeans_plusplus: k exceeds the number of records");

    Matrix centers(k, records.cols());
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    centers.row(0) = records.row(pick(rng));
    Vector d2 = (records.rowwise() - centers.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
        const double total = d2.sum();
        Eigen::Index chosen = 0;
        if (total > 0.0) {
            std::uniform_real_distribution<double> u(0.0, total);
            double r = u(rng);
            chosen = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                r -= d2[i];
                if (r < 0.0 && d2[i] > 0.0) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = pick(rng);
        }
        centers.row(c) = records.row(chosen);
        d2 = d2.cwiseMin((records.rowwise() - centers.row(c)).rowwise().squaredNorm());
    }

    Labeling labels(static_cast<std::size_t>(n), -1);
    for (int it = 0; it < max_iters; ++it) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index best = 0;
            (centers.rowwise() - records.row(i)).rowwise().squaredNorm().minCoeff(&best);
            if (labels[static_cast<std::size_t>(i)] != static_cast<int>(best)) {
                labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
                changed = true;
            }
        }
        if (!changed) break;
        Matrix sums = Matrix::Zero(k, records.cols());
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(labels[static_cast<std::size_t>(i)]) += records.row(i);
            ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
        }
        for (int c = 0; c < k; ++c)
            if (counts[static_cast<std::size_t>(c)] > 0) centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
    }
    return labels;
}

/// Shannon entropy (nats) of a probability vector.
inline double entropy(std::span<const double> p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

}  // namespace fsgan
