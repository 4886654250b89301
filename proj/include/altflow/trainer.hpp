#pragma once

#include <altflow/base.hpp>
#include <altflow/flow.hpp>
#include <altflow/numerics.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace altflow {

struct TrainConfig {
    double eta1 = 1e-3;
    double eta2_max = 0.05;
    std::size_t freezing_interval = 5;
    std::size_t epochs = 200;
    std::size_t batch_size = 32;
    double clip_norm = 100.0;
    std::size_t warmup_epochs = 0;
    bool altub_enabled = true;
    bool stereotype_mode = false;
    std::uint64_t seed = 25;
    // Step decay of eta1: multiplied by gamma every `decay_every` epochs (0 = constant).
    double eta1_decay_gamma = 1.0;
    std::size_t eta1_decay_every = 0;

    void validate() const {
        if (!(eta1 > 0.0)) fail(ErrorKind::ConfigError, "eta1 must be positive");
        if (!(eta2_max > 0.0 && eta2_max <= 1.0)) fail(ErrorKind::ConfigError, "eta2_max must lie in (0, 1]");
        if (freezing_interval < 1) fail(ErrorKind::ConfigError, "freezing_interval must be >= 1");
        if (!(clip_norm > 0.0)) fail(ErrorKind::ConfigError, "clip_norm must be positive");
        if (batch_size < 1) fail(ErrorKind::ConfigError, "batch_size must be >= 1");
        if (altub_enabled && stereotype_mode)
            fail(ErrorKind::ConfigError, "altub and stereotype modes are mutually exclusive");
        if (!(eta1_decay_gamma > 0.0)) fail(ErrorKind::ConfigError, "eta1_decay_gamma must be positive");
    }

    bool learns_base() const noexcept { return altub_enabled || stereotype_mode; }
};

enum class EpochKind { joint, base_only };

inline const char* to_string(EpochKind k) noexcept { return k == EpochKind::joint ? "joint" : "base_only"; }

inline EpochKind epoch_kind(const TrainConfig& cfg, std::size_t epoch) noexcept {
    const bool base_only = cfg.altub_enabled && epoch >= cfg.warmup_epochs && epoch % cfg.freezing_interval == 0;
    return base_only ? EpochKind::base_only : EpochKind::joint;
}

inline std::vector<std::size_t> base_only_epochs(const TrainConfig& cfg) {
    std::vector<std::size_t> out;
    for (std::size_t e = 0; e < cfg.epochs; ++e)
        if (epoch_kind(cfg, e) == EpochKind::base_only) out.push_back(e);
    return out;
}

inline double eta1_at(const TrainConfig& cfg, std::size_t epoch) {
    if (cfg.eta1_decay_every == 0) return cfg.eta1;
    return cfg.eta1 * std::pow(cfg.eta1_decay_gamma, static_cast<double>(epoch / cfg.eta1_decay_every));
}

/// eta2(t) = eta2_max * eta1(t) / max_t eta1(t).
inline double eta2_schedule(const TrainConfig& cfg, std::size_t epoch) {
    double peak = 0.0;
    for (std::size_t e = 0; e < std::max<std::size_t>(cfg.epochs, 1); ++e) peak = std::max(peak, eta1_at(cfg, e));
    return cfg.eta2_max * eta1_at(cfg, epoch) / peak;
}

/// Scales `grad` in place so its L2 norm is at most `max_norm`. Returns the pre-clip norm.
inline double clip_by_norm(std::span<double> grad, double max_norm) {
    const double norm = global_norm({std::span<const double>(grad)});
    if (norm > max_norm) {
        const double k = max_norm / norm;
        for (auto& g : grad) g *= k;
    }
    return norm;
}

class Adam {
public:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    Adam() = default;
    explicit Adam(std::size_t n) : m_(n, 0.0), v_(n, 0.0) {}

    std::size_t size() const noexcept { return m_.size(); }
    std::size_t steps() const noexcept { return t_; }

    void step(std::span<double> params, std::span<const double> grads, double lr) {
        if (params.size() != m_.size() || grads.size() != m_.size())
            fail(ErrorKind::ShapeMismatch, "Adam moments do not match parameter count");
        ++t_;
        const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grads[i];
            v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grads[i] * grads[i];
            params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + kEps);
        }
    }

    bool operator==(const Adam&) const = default;

private:
    std::vector<double> m_, v_;
    std::size_t t_ = 0;
};

struct TrainState {
    std::size_t epoch = 0;
    Adam theta_opt;
    Adam psi_opt; ///< over [mu ; log_sigma], joint epochs only
    std::vector<double> loss_history;

    TrainState() = default;
    TrainState(const FlowModel& model, const BaseDistribution& base)
        : theta_opt(model.parameter_count()), psi_opt(2 * base.dims()) {}

    bool operator==(const TrainState&) const = default;
};

struct LossAndGrads {
    double loss = 0.0;
    std::vector<double> grad_theta;
    BaseGrads grad_psi;
};

/// Batch-mean negative log-likelihood -[log p_Z(f(x)) + logdet] with its gradients.
/// grad_psi has no log-det contribution: the log-determinant depends on theta only.
inline LossAndGrads loss_and_grads(const FlowModel& model, const BaseDistribution& base, const Tensor4& batch) {
    const std::size_t n = batch.shape().b;
    if (n == 0) fail(ErrorKind::EmptyInput, "loss_and_grads on an empty batch");
    const FlowTape tape = forward_tape(model, batch);
    const Tensor4& z = tape.output.z;
    const std::vector<double> lp = log_prob(base, z);
    double loss = 0.0;
    for (std::size_t b = 0; b < n; ++b) loss -= lp[b] + tape.output.logdet[b];
    const double inv_n = 1.0 / static_cast<double>(n);
    loss *= inv_n;

    Tensor4 gz = grad_z(base, z);
    for (auto& v : gz.data()) v *= inv_n;
    const std::vector<double> gld(n, -inv_n);
    FlowGrads fg = backward(model, tape, gz, gld);
    ensure_finite(std::span<const double>(&loss, 1), "loss_and_grads");
    return LossAndGrads{loss, std::move(fg.params), grad_psi(base, z)};
}

/// Negative log-likelihood only (no gradients).
inline double nll(const FlowModel& model, const BaseDistribution& base, const Tensor4& x) {
    const FlowOutput out = forward(model, x);
    const std::vector<double> lp = log_prob(base, out.z);
    double loss = 0.0;
    for (std::size_t b = 0; b < lp.size(); ++b) loss -= lp[b] + out.logdet[b];
    return loss / static_cast<double>(lp.size());
}

struct EpochResult {
    std::size_t epoch = 0;
    EpochKind kind = EpochKind::joint;
    double loss = 0.0; ///< sample-weighted mean of batch losses
    double max_psi_grad_norm = 0.0; ///< largest pre-clip norm seen on a base-only epoch
};

/// Batch order for `epoch`, derived from (seed, epoch) only.
inline std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = Rng(seed).split(0xE90C0000ull + epoch);
    rng.shuffle(order);
    return order;
}

/// One pass over `data`.
///
/// Base-only epochs (AltUB enabled, past warm-up, epoch a multiple of the
/// freezing interval) take plain SGD steps on psi at eta2 with the psi gradient
/// norm-clipped; theta is untouched. Every other epoch takes Adam steps on theta
/// at eta1, and on psi too when the base is learnable and warm-up is over.
/// A non-finite value anywhere restores the epoch-start state and rethrows.
inline EpochResult train_epoch(FlowModel& model, BaseDistribution& base, const Tensor4& data, const TrainConfig& cfg,
                               TrainState& state) {
    if (state.epoch >= cfg.epochs) fail(ErrorKind::ConfigError, "train_epoch called past the configured epochs");
    if (data.shape().b == 0) fail(ErrorKind::EmptyInput, "training data is empty");
    if (state.theta_opt.size() != model.parameter_count() || state.psi_opt.size() != 2 * base.dims())
        fail(ErrorKind::ShapeMismatch, "train state does not match model/base");

    const FlowModel model0 = model;
    const BaseDistribution base0 = base;
    const TrainState state0 = state;

    const std::size_t e = state.epoch;
    EpochResult res{e, epoch_kind(cfg, e), 0.0, 0.0};
    const bool psi_joint = cfg.learns_base() && e >= cfg.warmup_epochs;
    const double lr1 = eta1_at(cfg, e);
    const double lr2 = eta2_schedule(cfg, e);
    const std::size_t d = base.dims();
    const std::vector<std::size_t> order = epoch_order(cfg.seed, e, data.shape().b);

    try {
        double loss_sum = 0.0;
        std::vector<double> psi(2 * d), gpsi(2 * d);
        for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, order.size() - first);
            const Tensor4 batch = data.gather_batch(std::span<const std::size_t>(order).subspan(first, count));
            LossAndGrads lg = loss_and_grads(model, base, batch);
            loss_sum += lg.loss * static_cast<double>(count);

            std::copy(lg.grad_psi.mu.data().begin(), lg.grad_psi.mu.data().end(), gpsi.begin());
            std::copy(lg.grad_psi.log_sigma.data().begin(), lg.grad_psi.log_sigma.data().end(), gpsi.begin() + d);

            if (res.kind == EpochKind::base_only) {
                res.max_psi_grad_norm = std::max(res.max_psi_grad_norm, clip_by_norm(gpsi, cfg.clip_norm));
                for (std::size_t i = 0; i < d; ++i) {
                    base.mu()[i] -= lr2 * gpsi[i];
                    base.log_sigma()[i] -= lr2 * gpsi[d + i];
                }
            } else {
                state.theta_opt.step(model.parameters(), lg.grad_theta, lr1);
                if (psi_joint) {
                    std::copy(base.mu().data().begin(), base.mu().data().end(), psi.begin());
                    std::copy(base.log_sigma().data().begin(), base.log_sigma().data().end(), psi.begin() + d);
                    state.psi_opt.step(psi, gpsi, lr1);
                    std::copy(psi.begin(), psi.begin() + static_cast<std::ptrdiff_t>(d), base.mu().data().begin());
                    std::copy(psi.begin() + static_cast<std::ptrdiff_t>(d), psi.end(), base.log_sigma().data().begin());
                }
            }
            ensure_finite(model.parameters(), "theta update");
            ensure_finite(base.mu(), "mu update");
            ensure_finite(base.log_sigma(), "log_sigma update");
        }
        res.loss = loss_sum / static_cast<double>(order.size());
    } catch (const Error& err) {
        model = model0;
        base = base0;
        state = state0;
        if (err.kind() == ErrorKind::NonFinite)
            fail(ErrorKind::NonFinite, "epoch " + std::to_string(e) + " aborted and rolled back: " + err.what());
        throw;
    }
    state.loss_history.push_back(res.loss);
    ++state.epoch;
    return res;
}

struct EpochRecord {
    std::size_t epoch = 0;
    EpochKind kind = EpochKind::joint;
    double loss = std::numeric_limits<double>::quiet_NaN();
    double auroc_pixel = std::numeric_limits<double>::quiet_NaN();
    double auroc_image = std::numeric_limits<double>::quiet_NaN();
    double ks_mean = std::numeric_limits<double>::quiet_NaN();
    std::string error; ///< non-empty when the epoch was rolled back
};

struct TrainReport {
    TrainConfig config;
    std::vector<EpochRecord> epochs;
    std::vector<std::string> errors;

    std::vector<double> loss_curve() const {
        std::vector<double> out;
        for (const auto& r : epochs) out.push_back(r.loss);
        return out;
    }
};

/// Called after every epoch with the freshly updated parameters; fills metric fields.
using EpochCallback = std::function<void(const FlowModel&, const BaseDistribution&, EpochRecord&)>;

/// Runs every configured epoch. A rolled-back epoch is recorded (loss NaN,
/// error text set) and training resumes from the restored state.
inline TrainReport fit(FlowModel& model, BaseDistribution& base, const Tensor4& data, const TrainConfig& cfg,
                       const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (data.shape().b == 0) fail(ErrorKind::EmptyInput, "dataset is empty");
    TrainReport report;
    report.config = cfg;
    TrainState state(model, base);
    while (state.epoch < cfg.epochs) {
        EpochRecord rec;
        rec.epoch = state.epoch;
        rec.kind = epoch_kind(cfg, state.epoch);
        try {
            rec.loss = train_epoch(model, base, data, cfg, state).loss;
        } catch (const Error& err) {
            if (err.kind() != ErrorKind::NonFinite) throw;
            rec.error = err.what();
            report.errors.push_back(rec.error);
            state.loss_history.push_back(rec.loss);
            ++state.epoch;
        }
        if (on_epoch) on_epoch(model, base, rec);
        report.epochs.push_back(std::move(rec));
    }
    return report;
}

} // namespace altflow
