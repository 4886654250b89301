#pragma once

#include <altflow/base.hpp>
#include <altflow/numerics.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace altflow {

struct AnomalyResult {
    Tensor4 anomaly_map;              ///< [B, 1, H, W]; closer to 0 is more anomalous
    std::vector<double> image_scores; ///< spatial max of the map per sample
};

/// Spatial max of each sample's map.
inline std::vector<double> image_score(const Tensor4& anomaly_map) {
    const Shape4& s = anomaly_map.shape();
    std::vector<double> out(s.b, -std::numeric_limits<double>::infinity());
    for (std::size_t b = 0; b < s.b; ++b)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t h = 0; h < s.h; ++h)
                for (std::size_t w = 0; w < s.w; ++w) out[b] = std::max(out[b], anomaly_map(b, c, h, w));
    return out;
}

inline std::vector<double> image_score(const AnomalyResult& result) { return image_score(result.anomaly_map); }

/// Score under the fixed standard-normal base:
///   -exp(-(1 / 2|C|) * sum_c z_c^2)   per (b, h, w).
inline AnomalyResult score_map_fixed(const Tensor4& z) {
    ensure_finite(z, "score_map_fixed input");
    const Shape4& s = z.shape();
    Tensor4 map(Shape4{s.b, 1, s.h, s.w});
    const double k = 1.0 / (2.0 * static_cast<double>(s.c));
    for (std::size_t b = 0; b < s.b; ++b)
        for (std::size_t h = 0; h < s.h; ++h)
            for (std::size_t w = 0; w < s.w; ++w) {
                double acc = 0.0;
                for (std::size_t c = 0; c < s.c; ++c) {
                    const double v = z(b, c, h, w);
                    acc += v * v;
                }
                map(b, 0, h, w) = -std::exp(-k * acc);
            }
    auto scores = image_score(map);
    return AnomalyResult{std::move(map), std::move(scores)};
}

/// Score under a learned diagonal base:
///   -exp(-(1 / 2|C|) * sum_c [ (z_c - mu_c)^2 / sigma_c^2 + 2 log_sigma_c ])   per (b, h, w).
/// With mu = 0 and log_sigma = 0 this reproduces score_map_fixed bit for bit.
inline AnomalyResult score_map_learned(const Tensor4& z, const BaseDistribution& base) {
    ensure_finite(z, "score_map_learned input");
    base.check_compatible(z, "score_map_learned");
    const Shape4& s = z.shape();
    Tensor4 map(Shape4{s.b, 1, s.h, s.w});
    const double k = 1.0 / (2.0 * static_cast<double>(s.c));
    const Tensor4& mu = base.mu();
    const Tensor4& lam = base.log_sigma();
    for (std::size_t b = 0; b < s.b; ++b)
        for (std::size_t h = 0; h < s.h; ++h)
            for (std::size_t w = 0; w < s.w; ++w) {
                double acc = 0.0;
                for (std::size_t c = 0; c < s.c; ++c) {
                    const double d = z(b, c, h, w) - mu(0, c, h, w);
                    const double l = lam(0, c, h, w);
                    acc += d * d * std::exp(-2.0 * l) + 2.0 * l;
                }
                map(b, 0, h, w) = -std::exp(-k * acc);
            }
    auto scores = image_score(map);
    return AnomalyResult{std::move(map), std::move(scores)};
}

} // namespace altflow
