#pragma once

#include <altflow/base.hpp>
#include <altflow/data.hpp>
#include <altflow/diagnostics.hpp>
#include <altflow/evaluation.hpp>
#include <altflow/flow.hpp>
#include <altflow/scoring.hpp>
#include <altflow/trainer.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace altflow {

struct FlowSpec {
    std::size_t depth = 2;
    std::size_t hidden = 0; ///< 0 means 2 * C
};

/// Everything a training run depends on.
struct ExperimentConfig {
    SyntheticSpec synthetic;
    std::string features; ///< manifest path; empty means generate `synthetic`
    FlowSpec flow;
    TrainConfig train;
    std::optional<EpochWindow> eval_window; ///< default: final half of the epochs
    std::size_t diagnostics_every = 10;
    std::size_t checkpoint_every = 0; ///< 0 writes only the final checkpoint
    std::string out_dir = "altflow_out";
    std::vector<std::uint64_t> seeds{25, 26, 27};
    std::vector<std::size_t> depths{2, 8};

    EpochWindow window() const { return eval_window.value_or(default_window(train.epochs)); }

    void validate() const {
        train.validate();
        if (flow.depth == 0) fail(ErrorKind::ConfigError, "flow depth must be >= 1");
        if (diagnostics_every == 0) fail(ErrorKind::ConfigError, "diagnostics_every must be >= 1");
        if (eval_window && (eval_window->start > eval_window->end || eval_window->end >= train.epochs))
            fail(ErrorKind::ConfigError, "eval window must satisfy start <= end < epochs");
        if (!features.empty()) return;
        try {
            synthetic.validate();
        } catch (const Error& e) {
            fail(ErrorKind::ConfigError, e.what());
        }
    }
};

inline Dataset load_dataset(const ExperimentConfig& cfg) {
    return cfg.features.empty() ? generate(cfg.synthetic) : load_features(cfg.features);
}

inline FlowModel make_flow(const ExperimentConfig& cfg, std::size_t channels) {
    const std::size_t hidden = cfg.flow.hidden ? cfg.flow.hidden : 2 * channels;
    return FlowModel::initialized(channels, cfg.flow.depth, hidden, cfg.train.seed);
}

/// Scores against the learned base when it is trainable, against N(0, I) otherwise.
inline AnomalyResult score(const FlowModel& model, const BaseDistribution& base, const Tensor4& x, bool learned) {
    const Tensor4 z = forward(model, x).z;
    return learned ? score_map_learned(z, base) : score_map_fixed(z);
}

struct EvalMetrics {
    double auroc_pixel = std::numeric_limits<double>::quiet_NaN();
    double auroc_image = std::numeric_limits<double>::quiet_NaN();
    AnomalyResult result;
};

inline EvalMetrics evaluate(const FlowModel& model, const BaseDistribution& base, const Dataset& ds, bool learned) {
    EvalMetrics m;
    m.result = score(model, base, ds.test, learned);
    m.auroc_pixel = pixel_auroc(m.result.anomaly_map, ds.test_pixel_masks);
    m.auroc_image = auroc(m.result.image_scores, ds.test_image_labels);
    return m;
}

inline bool has_both_classes(const std::vector<int>& labels) {
    bool pos = false, neg = false;
    for (int l : labels) (l ? pos : neg) = true;
    return pos && neg;
}

struct RunResult {
    TrainReport report;
    FlowModel model;
    BaseDistribution base;
    StabilityReport pixel_stability;
    StabilityReport image_stability;
    std::vector<KsReport> ks_snapshots; ///< one per diagnostics epoch, train normals standardized by the base
    KsReport final_ks;
    double final_mean_square = 0.0;
};

/// Trains one model on `ds` and evaluates it every epoch.
inline RunResult run_training(const ExperimentConfig& cfg, const Dataset& ds, const EpochCallback& extra = {}) {
    cfg.validate();
    const Shape4 s = ds.train.shape();
    RunResult out;
    out.model = make_flow(cfg, s.c);
    out.base = BaseDistribution(s.c, s.h, s.w);
    const bool learned = cfg.train.learns_base();
    const bool can_eval = has_both_classes(ds.test_image_labels);

    auto on_epoch = [&](const FlowModel& model, const BaseDistribution& base, EpochRecord& rec) {
        if (can_eval && rec.error.empty()) {
            const EvalMetrics m = evaluate(model, base, ds, learned);
            rec.auroc_pixel = m.auroc_pixel;
            rec.auroc_image = m.auroc_image;
        }
        const bool last = rec.epoch + 1 == cfg.train.epochs;
        if (rec.error.empty() && (rec.epoch % cfg.diagnostics_every == cfg.diagnostics_every - 1 || last)) {
            KsReport ks = channel_ks_report(forward(model, ds.train).z, base);
            rec.ks_mean = ks.mean;
            out.ks_snapshots.push_back(std::move(ks));
        }
        if (extra) extra(model, base, rec);
    };
    out.report = fit(out.model, out.base, ds.train, cfg.train, on_epoch);

    const Tensor4 z = forward(out.model, ds.train).z;
    out.final_ks = channel_ks_report(z, out.base);
    out.final_mean_square = mean_square_statistic(z);
    if (can_eval) {
        std::vector<std::pair<std::size_t, double>> px, im;
        for (const auto& r : out.report.epochs) {
            px.emplace_back(r.epoch, r.auroc_pixel);
            im.emplace_back(r.epoch, r.auroc_image);
        }
        try {
            out.pixel_stability = stability(px, cfg.window());
            out.image_stability = stability(im, cfg.window());
        } catch (const Error& e) {
            // Every epoch in the window was rolled back; report.errors says why.
            if (e.kind() != ErrorKind::EmptyWindow || out.report.errors.empty()) throw;
            const double nan = std::numeric_limits<double>::quiet_NaN();
            out.pixel_stability = out.image_stability = StabilityReport{nan, cfg.window(), nan, nan, px};
        }
    }
    return out;
}

inline std::string variant_name(const TrainConfig& t) {
    return t.altub_enabled ? "altub" : t.stereotype_mode ? "stereotype" : "baseline";
}

} // namespace altflow
