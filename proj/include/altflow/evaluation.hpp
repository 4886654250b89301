#pragma once

#include <altflow/numerics.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace altflow {

/// Mann-Whitney AUROC: P(score+ > score-) + 0.5 P(tie), via midranks.
/// Labels are nonzero for positives (anomalies).
template <class Label>
double auroc(std::span<const double> scores, std::span<const Label> labels) {
    if (scores.size() != labels.size()) fail(ErrorKind::ShapeMismatch, "auroc: scores and labels differ in length");
    ensure_finite(scores, "auroc scores");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Doubled midranks keep the rank sum integral until the final division.
    double rank_sum_x2 = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i + 1;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank_x2 = static_cast<double>(i + 1 + j); // 2 * mean of ranks i+1 .. j
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] != Label{0}) {
                rank_sum_x2 += midrank_x2;
                ++n_pos;
            }
        i = j;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        fail(ErrorKind::DegenerateLabels, "auroc needs at least one positive and one negative label");
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    const double u_x2 = rank_sum_x2 - np * (np + 1.0);
    return u_x2 / (2.0 * np * nn);
}

inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    return auroc<int>(std::span<const double>(scores), std::span<const int>(labels));
}

/// Pools every pixel of every map. Mask entries must be exactly 0 or 1.
inline double pixel_auroc(const Tensor4& maps, const Tensor4& masks) {
    if (maps.shape() != masks.shape())
        fail(ErrorKind::ShapeMismatch, "pixel_auroc: maps " + maps.shape().str() + " vs masks " + masks.shape().str());
    for (double m : masks.data())
        if (m != 0.0 && m != 1.0) fail(ErrorKind::FormatError, "pixel_auroc: mask is not binary");
    return auroc<double>(maps.data(), masks.data());
}

struct EpochWindow {
    std::size_t start = 0; ///< inclusive
    std::size_t end = 0;   ///< inclusive
};

struct StabilityReport {
    double best_auroc = 0.0;
    EpochWindow window;
    double mean_auroc = 0.0;
    double std_auroc = 0.0;
    std::vector<std::pair<std::size_t, double>> per_epoch;
};

/// Final half of `epochs` recorded epochs.
inline EpochWindow default_window(std::size_t epochs) {
    if (epochs == 0) fail(ErrorKind::EmptyWindow, "no epochs recorded");
    return EpochWindow{epochs / 2, epochs - 1};
}

/// Best over every recorded epoch; mean and unbiased std over the window only.
/// Non-finite entries (epochs without a measurement) are skipped.
inline StabilityReport stability(const std::vector<std::pair<std::size_t, double>>& per_epoch, EpochWindow window) {
    StabilityReport r;
    r.window = window;
    r.per_epoch = per_epoch;
    r.best_auroc = -std::numeric_limits<double>::infinity();
    std::vector<double> in;
    for (const auto& [epoch, value] : per_epoch) {
        if (!std::isfinite(value)) continue;
        r.best_auroc = std::max(r.best_auroc, value);
        if (epoch >= window.start && epoch <= window.end) in.push_back(value);
    }
    if (in.empty()) fail(ErrorKind::EmptyWindow, "no AUROC values inside the stability window");
    double sum = 0.0;
    for (double v : in) sum += v;
    r.mean_auroc = sum / static_cast<double>(in.size());
    if (in.size() > 1) {
        double ss = 0.0;
        for (double v : in) ss += (v - r.mean_auroc) * (v - r.mean_auroc);
        r.std_auroc = std::sqrt(ss / static_cast<double>(in.size() - 1));
    }
    return r;
}

} // namespace altflow
