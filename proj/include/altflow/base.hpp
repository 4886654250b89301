#pragma once

#include <altflow/numerics.hpp>

#include <cmath>
#include <numbers>
#include <vector>

namespace altflow {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178; // 0.5 * ln(2 pi)

/// Diagonal Gaussian N(mu, diag(sigma^2)) over the C*H*W dimensions of one sample.
/// The spread is stored as log_sigma = ln(sigma), so any real value is valid.
class BaseDistribution {
public:
    BaseDistribution() = default;

    /// Standard normal: mu = 0 and log_sigma = 0 exactly.
    BaseDistribution(std::size_t c, std::size_t h, std::size_t w)
        : mu_(Shape4{1, c, h, w}, 0.0), log_sigma_(Shape4{1, c, h, w}, 0.0) {}

    BaseDistribution(Tensor4 mu, Tensor4 log_sigma) : mu_(std::move(mu)), log_sigma_(std::move(log_sigma)) {
        if (mu_.shape() != log_sigma_.shape() || mu_.shape().b != 1)
            fail(ErrorKind::ShapeMismatch, "base parameters must both have shape [1,C,H,W]");
    }

    const Tensor4& mu() const noexcept { return mu_; }
    const Tensor4& log_sigma() const noexcept { return log_sigma_; }
    Tensor4& mu() noexcept { return mu_; }
    Tensor4& log_sigma() noexcept { return log_sigma_; }
    std::size_t dims() const noexcept { return mu_.size(); }
    Shape4 sample_shape() const noexcept { return mu_.shape(); }

    bool is_standard() const noexcept {
        for (std::size_t i = 0; i < mu_.size(); ++i)
            if (mu_[i] != 0.0 || log_sigma_[i] != 0.0) return false;
        return true;
    }

    void check_compatible(const Tensor4& z, const char* op) const {
        const Shape4& s = z.shape();
        const Shape4& m = mu_.shape();
        if (s.c != m.c || s.h != m.h || s.w != m.w)
            fail(ErrorKind::ShapeMismatch, std::string(op) + ": tensor " + s.str() + " vs base " + m.str());
    }

    bool operator==(const BaseDistribution&) const = default;

private:
    Tensor4 mu_;
    Tensor4 log_sigma_;
};

struct BaseGrads {
    Tensor4 mu;
    Tensor4 log_sigma;
};

/// Per-sample log-density summed over all C*H*W dimensions.
inline std::vector<double> log_prob(const BaseDistribution& base, const Tensor4& z) {
    base.check_compatible(z, "log_prob");
    const std::size_t d = base.dims();
    std::vector<double> out(z.shape().b, 0.0);
    for (std::size_t b = 0; b < z.shape().b; ++b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double lam = base.log_sigma()[i];
            const double u = (z[b * d + i] - base.mu()[i]) * std::exp(-lam);
            acc += -kHalfLog2Pi - lam - 0.5 * u * u;
        }
        out[b] = acc;
    }
    ensure_finite(out, "log_prob");
    return out;
}

/// Batch-mean gradients of the negative log-likelihood with respect to mu and log_sigma.
///   dL/dmu        = (mu - z) / sigma^2
///   dL/dlog_sigma = 1 - (z - mu)^2 / sigma^2
inline BaseGrads grad_psi(const BaseDistribution& base, const Tensor4& z) {
    base.check_compatible(z, "grad_psi");
    const std::size_t d = base.dims();
    const std::size_t n = z.shape().b;
    if (n == 0) fail(ErrorKind::EmptyInput, "grad_psi on an empty batch");
    BaseGrads g{Tensor4(base.sample_shape()), Tensor4(base.sample_shape())};
    for (std::size_t i = 0; i < d; ++i) {
        const double inv_var = std::exp(-2.0 * base.log_sigma()[i]);
        double gm = 0.0, gl = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
            const double diff = z[b * d + i] - base.mu()[i];
            gm += -diff * inv_var;
            gl += 1.0 - diff * diff * inv_var;
        }
        g.mu[i] = gm / static_cast<double>(n);
        g.log_sigma[i] = gl / static_cast<double>(n);
    }
    ensure_finite(g.mu, "grad_psi");
    ensure_finite(g.log_sigma, "grad_psi");
    return g;
}

/// Per-element d(-log_prob)/dz = (z - mu) / sigma^2 (not batch-averaged).
inline Tensor4 grad_z(const BaseDistribution& base, const Tensor4& z) {
    base.check_compatible(z, "grad_z");
    const std::size_t d = base.dims();
    Tensor4 g(z.shape());
    for (std::size_t b = 0; b < z.shape().b; ++b)
        for (std::size_t i = 0; i < d; ++i)
            g[b * d + i] = (z[b * d + i] - base.mu()[i]) * std::exp(-2.0 * base.log_sigma()[i]);
    ensure_finite(g, "grad_z");
    return g;
}

/// (z - mu) / sigma.
inline Tensor4 standardize(const BaseDistribution& base, const Tensor4& z) {
    base.check_compatible(z, "standardize");
    const std::size_t d = base.dims();
    Tensor4 out(z.shape());
    for (std::size_t b = 0; b < z.shape().b; ++b)
        for (std::size_t i = 0; i < d; ++i)
            out[b * d + i] = (z[b * d + i] - base.mu()[i]) * std::exp(-base.log_sigma()[i]);
    return out;
}

/// mu + sigma * u.
inline Tensor4 unstandardize(const BaseDistribution& base, const Tensor4& u) {
    base.check_compatible(u, "unstandardize");
    const std::size_t d = base.dims();
    Tensor4 out(u.shape());
    for (std::size_t b = 0; b < u.shape().b; ++b)
        for (std::size_t i = 0; i < d; ++i)
            out[b * d + i] = base.mu()[i] + u[b * d + i] * std::exp(base.log_sigma()[i]);
    return out;
}

} // namespace altflow
