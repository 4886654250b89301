#pragma once

#include <altflow/numerics.hpp>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace altflow {

/// Log-scales are squashed as alpha * tanh(raw / alpha), so |log s| <= alpha.
inline constexpr double kScaleBound = 2.0;

/// One affine coupling layer acting on the channel vector at each (h, w).
///
/// The channel vector splits into an identity part (passed through) and a
/// transformed part. For even parity the first ceil(C/2) channels are the
/// identity part; odd parity swaps the roles. A one-hidden-layer tanh network
/// maps the identity part to (scale_raw, shift) for the transformed part:
///
///     y_t = x_t * exp(alpha * tanh(scale_raw / alpha)) + shift
///
/// Parameters live in the owning FlowModel's flat vector starting at `offset`,
/// laid out as W1 [hidden x n_id], b1 [hidden], W2 [2 n_t x hidden], b2 [2 n_t].
/// Rows [0, n_t) of W2 produce scale_raw, rows [n_t, 2 n_t) produce shift.
struct CouplingLayer {
    std::size_t channels = 0;
    std::size_t hidden = 0;
    unsigned parity = 0;
    std::size_t offset = 0;

    std::size_t split() const noexcept { return (channels + 1) / 2; }
    std::size_t n_id() const noexcept { return parity == 0 ? split() : channels - split(); }
    std::size_t n_t() const noexcept { return channels - n_id(); }
    std::size_t id_channel(std::size_t i) const noexcept { return parity == 0 ? i : split() + i; }
    std::size_t t_channel(std::size_t i) const noexcept { return parity == 0 ? split() + i : i; }

    std::size_t w1() const noexcept { return offset; }
    std::size_t b1() const noexcept { return w1() + hidden * n_id(); }
    std::size_t w2() const noexcept { return b1() + hidden; }
    std::size_t b2() const noexcept { return w2() + 2 * n_t() * hidden; }
    std::size_t parameter_count() const noexcept { return hidden * n_id() + hidden + 2 * n_t() * hidden + 2 * n_t(); }

    bool operator==(const CouplingLayer&) const = default;
};

struct FlowOutput {
    Tensor4 z;
    std::vector<double> logdet; ///< one entry per sample, summed over layers and positions
};

/// Per-layer inputs recorded during a forward pass, consumed by backward.
struct FlowTape {
    std::vector<Tensor4> layer_inputs;
    FlowOutput output;
};

struct FlowGrads {
    std::vector<double> params; ///< same layout as FlowModel::parameters()
    Tensor4 x;
};

class FlowModel {
public:
    FlowModel() = default;

    /// Identity-initialized model with every parameter zero.
    FlowModel(std::size_t channels, std::size_t depth, std::size_t hidden, std::uint64_t seed = 0)
        : channels_(channels), hidden_(hidden), seed_(seed) {
        if (channels == 0) fail(ErrorKind::InvalidSpec, "flow needs at least one channel");
        std::size_t off = 0;
        for (std::size_t l = 0; l < depth; ++l) {
            CouplingLayer layer{channels, hidden, static_cast<unsigned>(l % 2), off};
            off += layer.parameter_count();
            layers_.push_back(layer);
        }
        params_.assign(off, 0.0);
    }

    /// Trainable default: W1 ~ N(0, 1/fan_in), b1 and the output layer zero.
    /// The output layer being zero makes the model the identity at start while
    /// keeping every parameter reachable by gradient descent.
    static FlowModel initialized(std::size_t channels, std::size_t depth, std::size_t hidden, std::uint64_t seed) {
        FlowModel m(channels, depth, hidden, seed);
        Rng rng = Rng(seed).split(0xF10A);
        for (const auto& layer : m.layers_) {
            const double scale = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(layer.n_id(), 1)));
            for (std::size_t i = 0; i < layer.hidden * layer.n_id(); ++i) m.params_[layer.w1() + i] = scale * rng.normal();
        }
        return m;
    }

    /// All parameters i.i.d. N(0, scale^2); used for frozen random warps and tests.
    static FlowModel random(std::size_t channels, std::size_t depth, std::size_t hidden, std::uint64_t seed,
                            double scale) {
        FlowModel m(channels, depth, hidden, seed);
        Rng rng = Rng(seed).split(0x5A2D);
        for (auto& p : m.params_) p = scale * rng.normal();
        return m;
    }

    std::size_t channels() const noexcept { return channels_; }
    std::size_t depth() const noexcept { return layers_.size(); }
    std::size_t hidden() const noexcept { return hidden_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const std::vector<CouplingLayer>& layers() const noexcept { return layers_; }

    std::span<const double> parameters() const noexcept { return params_; }
    std::span<double> parameters() noexcept { return params_; }
    std::size_t parameter_count() const noexcept { return params_.size(); }

    void set_parameters(std::span<const double> p) {
        if (p.size() != params_.size()) fail(ErrorKind::ShapeMismatch, "flow parameter count mismatch");
        params_.assign(p.begin(), p.end());
    }

    bool operator==(const FlowModel&) const = default;

private:
    std::size_t channels_ = 0;
    std::size_t hidden_ = 0;
    std::uint64_t seed_ = 0;
    std::vector<CouplingLayer> layers_;
    std::vector<double> params_;
};

namespace detail {

/// Evaluates the subnet of `layer` on one identity-part vector.
/// Writes hidden activations to `act` and (log-scale, shift) per transformed channel.
inline void coupling_subnet(const CouplingLayer& layer, std::span<const double> p, std::span<const double> x_id,
                            std::span<double> act, std::span<double> log_scale, std::span<double> shift) {
    const std::size_t nid = layer.n_id(), nt = layer.n_t(), hid = layer.hidden;
    for (std::size_t j = 0; j < hid; ++j) {
        double a = p[layer.b1() + j];
        for (std::size_t i = 0; i < nid; ++i) a += p[layer.w1() + j * nid + i] * x_id[i];
        act[j] = std::tanh(a);
    }
    for (std::size_t k = 0; k < 2 * nt; ++k) {
        double o = p[layer.b2() + k];
        for (std::size_t j = 0; j < hid; ++j) o += p[layer.w2() + k * hid + j] * act[j];
        if (k < nt)
            log_scale[k] = kScaleBound * std::tanh(o / kScaleBound);
        else
            shift[k - nt] = o;
    }
}

struct LayerScratch {
    std::vector<double> x_id, act, log_scale, shift;
    explicit LayerScratch(const CouplingLayer& l) : x_id(l.n_id()), act(l.hidden), log_scale(l.n_t()), shift(l.n_t()) {}
};

inline void check_channels(const FlowModel& model, const Tensor4& t, const char* op) {
    if (t.shape().c != model.channels())
        fail(ErrorKind::ShapeMismatch, std::string(op) + ": tensor has " + std::to_string(t.shape().c) +
                                           " channels, model expects " + std::to_string(model.channels()));
}

/// Applies one layer in place, accumulating per-sample log-determinants.
inline void layer_forward(const CouplingLayer& layer, std::span<const double> p, Tensor4& t,
                          std::vector<double>& logdet) {
    const Shape4 s = t.shape();
    LayerScratch sc(layer);
    for (std::size_t b = 0; b < s.b; ++b) {
        double ld = 0.0;
        for (std::size_t h = 0; h < s.h; ++h)
            for (std::size_t w = 0; w < s.w; ++w) {
                for (std::size_t i = 0; i < layer.n_id(); ++i) sc.x_id[i] = t(b, layer.id_channel(i), h, w);
                coupling_subnet(layer, p, sc.x_id, sc.act, sc.log_scale, sc.shift);
                for (std::size_t k = 0; k < layer.n_t(); ++k) {
                    double& v = t(b, layer.t_channel(k), h, w);
                    v = v * std::exp(sc.log_scale[k]) + sc.shift[k];
                    ld += sc.log_scale[k];
                }
            }
        logdet[b] += ld;
    }
}

inline void layer_inverse(const CouplingLayer& layer, std::span<const double> p, Tensor4& t) {
    const Shape4 s = t.shape();
    LayerScratch sc(layer);
    for (std::size_t b = 0; b < s.b; ++b)
        for (std::size_t h = 0; h < s.h; ++h)
            for (std::size_t w = 0; w < s.w; ++w) {
                for (std::size_t i = 0; i < layer.n_id(); ++i) sc.x_id[i] = t(b, layer.id_channel(i), h, w);
                coupling_subnet(layer, p, sc.x_id, sc.act, sc.log_scale, sc.shift);
                for (std::size_t k = 0; k < layer.n_t(); ++k) {
                    double& v = t(b, layer.t_channel(k), h, w);
                    v = (v - sc.shift[k]) * std::exp(-sc.log_scale[k]);
                }
            }
}

} // namespace detail

/// Forward pass recording each layer's input for a later backward.
inline FlowTape forward_tape(const FlowModel& model, const Tensor4& x) {
    detail::check_channels(model, x, "flow forward");
    FlowTape tape;
    tape.layer_inputs.reserve(model.depth());
    Tensor4 cur = x;
    std::vector<double> logdet(x.shape().b, 0.0);
    for (const auto& layer : model.layers()) {
        tape.layer_inputs.push_back(cur);
        detail::layer_forward(layer, model.parameters(), cur, logdet);
        ensure_finite(cur, "flow forward");
    }
    ensure_finite(logdet, "flow forward logdet");
    tape.output = FlowOutput{std::move(cur), std::move(logdet)};
    return tape;
}

inline FlowOutput forward(const FlowModel& model, const Tensor4& x) {
    detail::check_channels(model, x, "flow forward");
    Tensor4 cur = x;
    std::vector<double> logdet(x.shape().b, 0.0);
    for (const auto& layer : model.layers()) {
        detail::layer_forward(layer, model.parameters(), cur, logdet);
        ensure_finite(cur, "flow forward");
    }
    ensure_finite(logdet, "flow forward logdet");
    return FlowOutput{std::move(cur), std::move(logdet)};
}

inline Tensor4 inverse(const FlowModel& model, const Tensor4& z) {
    detail::check_channels(model, z, "flow inverse");
    Tensor4 cur = z;
    const auto& layers = model.layers();
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
        detail::layer_inverse(*it, model.parameters(), cur);
        ensure_finite(cur, "flow inverse");
    }
    return cur;
}

/// Per-location log-determinant, shape [B, 1, H, W]; summing over (h, w)
/// gives FlowOutput::logdet.
inline Tensor4 local_logdet(const FlowModel& model, const Tensor4& x) {
    detail::check_channels(model, x, "local_logdet");
    const Shape4 s = x.shape();
    Tensor4 cur = x;
    Tensor4 out(Shape4{s.b, 1, s.h, s.w}, 0.0);
    for (const auto& layer : model.layers()) {
        detail::LayerScratch sc(layer);
        for (std::size_t b = 0; b < s.b; ++b)
            for (std::size_t h = 0; h < s.h; ++h)
                for (std::size_t w = 0; w < s.w; ++w) {
                    for (std::size_t i = 0; i < layer.n_id(); ++i) sc.x_id[i] = cur(b, layer.id_channel(i), h, w);
                    detail::coupling_subnet(layer, model.parameters(), sc.x_id, sc.act, sc.log_scale, sc.shift);
                    for (std::size_t k = 0; k < layer.n_t(); ++k) {
                        double& v = cur(b, layer.t_channel(k), h, w);
                        v = v * std::exp(sc.log_scale[k]) + sc.shift[k];
                        out(b, 0, h, w) += sc.log_scale[k];
                    }
                }
    }
    ensure_finite(out, "local_logdet");
    return out;
}

/// Reverse-mode gradients of a scalar loss L(z, logdet).
///
/// `grad_z` is dL/dz (same shape as z) and `grad_logdet[b]` is dL/dlogdet[b].
/// Returns dL/dtheta in the flat parameter layout and dL/dx.
inline FlowGrads backward(const FlowModel& model, const FlowTape& tape, const Tensor4& grad_z,
                          std::span<const double> grad_logdet) {
    if (grad_z.shape() != tape.output.z.shape())
        fail(ErrorKind::ShapeMismatch, "backward: upstream z gradient shape " + grad_z.shape().str());
    if (grad_logdet.size() != tape.output.logdet.size())
        fail(ErrorKind::ShapeMismatch, "backward: upstream logdet gradient length mismatch");

    const auto p = model.parameters();
    FlowGrads g{std::vector<double>(model.parameter_count(), 0.0), grad_z};
    Tensor4& gy = g.x;
    const auto& layers = model.layers();

    for (std::size_t li = layers.size(); li-- > 0;) {
        const CouplingLayer& L = layers[li];
        const Tensor4& xin = tape.layer_inputs[li];
        const Shape4 s = xin.shape();
        const std::size_t nid = L.n_id(), nt = L.n_t(), hid = L.hidden;
        detail::LayerScratch sc(L);
        std::vector<double> g_out(2 * nt), g_h(hid);

        for (std::size_t b = 0; b < s.b; ++b)
            for (std::size_t h = 0; h < s.h; ++h)
                for (std::size_t w = 0; w < s.w; ++w) {
                    for (std::size_t i = 0; i < nid; ++i) sc.x_id[i] = xin(b, L.id_channel(i), h, w);
                    detail::coupling_subnet(L, p, sc.x_id, sc.act, sc.log_scale, sc.shift);

                    for (std::size_t k = 0; k < nt; ++k) {
                        const std::size_t c = L.t_channel(k);
                        const double gyt = gy(b, c, h, w);
                        const double scale = std::exp(sc.log_scale[k]);
                        // y = x*s + t and logdet += log s
                        const double g_logs = gyt * xin(b, c, h, w) * scale + grad_logdet[b];
                        const double r = sc.log_scale[k] / kScaleBound;
                        g_out[k] = g_logs * (1.0 - r * r);
                        g_out[nt + k] = gyt;
                        gy(b, c, h, w) = gyt * scale;
                    }

                    std::fill(g_h.begin(), g_h.end(), 0.0);
                    for (std::size_t k = 0; k < 2 * nt; ++k) {
                        g.params[L.b2() + k] += g_out[k];
                        for (std::size_t j = 0; j < hid; ++j) {
                            g.params[L.w2() + k * hid + j] += g_out[k] * sc.act[j];
                            g_h[j] += p[L.w2() + k * hid + j] * g_out[k];
                        }
                    }
                    for (std::size_t j = 0; j < hid; ++j) {
                        const double gj = g_h[j] * (1.0 - sc.act[j] * sc.act[j]);
                        g.params[L.b1() + j] += gj;
                        for (std::size_t i = 0; i < nid; ++i) {
                            g.params[L.w1() + j * nid + i] += gj * sc.x_id[i];
                            gy(b, L.id_channel(i), h, w) += p[L.w1() + j * nid + i] * gj;
                        }
                    }
                }
        ensure_finite(gy, "flow backward");
    }
    ensure_finite(g.params, "flow backward");
    return g;
}

inline FlowGrads backward(const FlowModel& model, const Tensor4& x, const Tensor4& grad_z,
                          std::span<const double> grad_logdet) {
    return backward(model, forward_tape(model, x), grad_z, grad_logdet);
}

} // namespace altflow
