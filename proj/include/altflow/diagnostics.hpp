#pragma once

#include <altflow/base.hpp>
#include <altflow/flow.hpp>
#include <altflow/numerics.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

namespace altflow {

/// Standard normal CDF.
inline double normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// One-sample Kolmogorov-Smirnov statistic sup_x |F_n(x) - F(x)|, evaluated
/// exactly at the jumps of the empirical CDF.
template <class Cdf>
double ks_statistic(std::span<const double> samples, Cdf&& cdf) {
    if (samples.empty()) fail(ErrorKind::EmptyInput, "ks_statistic needs at least one sample");
    ensure_finite(samples, "ks_statistic input");
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const double f = cdf(sorted[i]);
        d = std::max({d, std::abs(static_cast<double>(i + 1) / n - f), std::abs(static_cast<double>(i) / n - f)});
    }
    return d;
}

inline double ks_statistic(std::span<const double> samples) { return ks_statistic(samples, normal_cdf); }

struct KsReport {
    std::vector<double> per_channel_ks;
    double mean = 0.0;
    double ci95_halfwidth = 0.0;
    std::size_t n_samples = 0;   ///< values per channel per measurement
    std::size_t measurements = 1; ///< number of pooled snapshots
};

namespace detail {

inline void summarize(KsReport& r) {
    const auto& v = r.per_channel_ks;
    const double n = static_cast<double>(v.size());
    double sum = 0.0;
    for (double x : v) sum += x;
    r.mean = sum / n;
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    const double sd = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    r.ci95_halfwidth = 1.96 * sd / std::sqrt(n);
}

} // namespace detail

/// KS of each channel z[:, c, :, :] against N(0, 1), after standardizing by
/// `base` when one is given.
inline KsReport channel_ks_report(const Tensor4& z, const BaseDistribution* base = nullptr) {
    const Shape4& s = z.shape();
    const std::size_t per_channel = s.b * s.h * s.w;
    if (per_channel < 2) fail(ErrorKind::EmptyInput, "channel_ks_report needs at least two values per channel");
    const Tensor4 u = base ? standardize(*base, z) : z;
    KsReport r;
    r.n_samples = per_channel;
    std::vector<double> values;
    values.reserve(per_channel);
    for (std::size_t c = 0; c < s.c; ++c) {
        values.clear();
        for (std::size_t b = 0; b < s.b; ++b)
            for (std::size_t h = 0; h < s.h; ++h)
                for (std::size_t w = 0; w < s.w; ++w) values.push_back(u(b, c, h, w));
        r.per_channel_ks.push_back(ks_statistic(values));
    }
    detail::summarize(r);
    return r;
}

inline KsReport channel_ks_report(const Tensor4& z, const BaseDistribution& base) { return channel_ks_report(z, &base); }

/// Pools per-epoch snapshots: statistics run over all C * measurements values.
inline KsReport pool_ks_reports(std::span<const KsReport> reports) {
    if (reports.empty()) fail(ErrorKind::EmptyInput, "pool_ks_reports needs at least one report");
    KsReport r;
    r.n_samples = reports.front().n_samples;
    r.measurements = 0;
    for (const auto& rep : reports) {
        r.per_channel_ks.insert(r.per_channel_ks.end(), rep.per_channel_ks.begin(), rep.per_channel_ks.end());
        r.measurements += rep.measurements;
    }
    detail::summarize(r);
    return r;
}

/// 5% critical value of the one-sample KS statistic, asymptotic form.
inline double ks_critical_value_5pct(std::size_t n) { return 1.36 / std::sqrt(static_cast<double>(n)); }

/// Mean of z^2 over every entry.
inline double mean_square_statistic(const Tensor4& z) {
    if (z.empty()) fail(ErrorKind::EmptyInput, "mean_square_statistic of an empty tensor");
    double acc = 0.0;
    for (double v : z.data()) acc += v * v;
    return acc / static_cast<double>(z.size());
}

/// Synthetic data source with an optional closed-form log-density.
struct DataSampler {
    std::function<Tensor4(Rng&, std::size_t)> sample;
    std::function<std::vector<double>(const Tensor4&)> log_density;
};

/// Independent Gaussian N(mean, std^2) in every dimension of a (C, H, W) sample.
inline DataSampler gaussian_sampler(Shape4 sample_shape, double mean, double std_dev) {
    sample_shape.b = 1;
    DataSampler s;
    s.sample = [=](Rng& rng, std::size_t n) {
        Shape4 sh = sample_shape;
        sh.b = n;
        Tensor4 t = gaussian_sample(rng, sh);
        for (auto& v : t.data()) v = mean + std_dev * v;
        return t;
    };
    s.log_density = [=](const Tensor4& x) {
        const std::size_t d = x.shape().per_sample();
        std::vector<double> out(x.shape().b, 0.0);
        const double log_sd = std::log(std_dev);
        for (std::size_t b = 0; b < x.shape().b; ++b)
            for (std::size_t i = 0; i < d; ++i) {
                const double u = (x[b * d + i] - mean) / std_dev;
                out[b] += -kHalfLog2Pi - log_sd - 0.5 * u * u;
            }
        return out;
    };
    return s;
}

struct KlEstimate {
    double kl_x = 0.0;
    double kl_z = 0.0;
    double stderr_x = 0.0;
    double stderr_z = 0.0;
    std::size_t n = 0;
};

/// Monte-Carlo estimates of KL(p*_X || p_X) and KL(p*_Z || p_Z) on one shared
/// sample set. p_X comes from the flow's change of variables; p*_Z is the
/// pushforward of the data density, log p*_X(x) - logdet(x).
inline KlEstimate kl_identity_check(const FlowModel& model, const BaseDistribution& base, const DataSampler& sampler,
                                    std::size_t n, Rng& rng) {
    if (!sampler.log_density || !sampler.sample)
        fail(ErrorKind::RequiresKnownDensity, "kl_identity_check needs a sampler with a closed-form density");
    if (n < 10000) fail(ErrorKind::InvalidSpec, "kl_identity_check needs n >= 10000");
    const Tensor4 x = sampler.sample(rng, n);
    const std::vector<double> log_px_true = sampler.log_density(x);
    const FlowOutput out = forward(model, x);
    const std::vector<double> log_pz = log_prob(base, out.z);

    std::vector<double> dx(n), dz(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double log_px_model = log_pz[i] + out.logdet[i];
        const double log_pz_true = log_px_true[i] - out.logdet[i];
        dx[i] = log_px_true[i] - log_px_model;
        dz[i] = log_pz_true - log_pz[i];
    }
    auto mean_se = [n](const std::vector<double>& v) {
        double m = 0.0;
        for (double a : v) m += a;
        m /= static_cast<double>(n);
        double ss = 0.0;
        for (double a : v) ss += (a - m) * (a - m);
        return std::pair{m, std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n))};
    };
    const auto [mx, sx] = mean_se(dx);
    const auto [mz, sz] = mean_se(dz);
    return KlEstimate{mx, mz, sx, sz, n};
}

} // namespace altflow
