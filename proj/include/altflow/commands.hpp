#pragma once

#include <altflow/config.hpp>
#include <altflow/data.hpp>
#include <altflow/diagnostics.hpp>
#include <altflow/evaluation.hpp>
#include <altflow/experiment.hpp>
#include <altflow/io.hpp>
#include <altflow/scoring.hpp>
#include <altflow/trainer.hpp>

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace altflow::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kConfigError = 2, kDataError = 3, kNumericalError = 4 };

inline int exit_code_for(ErrorKind k) noexcept {
    switch (k) {
    case ErrorKind::ConfigError:
    case ErrorKind::InvalidSpec: return kConfigError;
    case ErrorKind::NonFinite:
    case ErrorKind::DomainError: return kNumericalError;
    default: return kDataError;
    }
}

// ---------------------------------------------------------------------------
// JSON views of the report types

inline json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json to_json(const KsReport& r) {
    return {{"per_channel_ks", r.per_channel_ks}, {"mean", r.mean},         {"ci95_halfwidth", r.ci95_halfwidth},
            {"n_samples", r.n_samples},          {"measurements", r.measurements}};
}

inline json to_json(const StabilityReport& r) {
    json per = json::array();
    for (const auto& [e, v] : r.per_epoch) per.push_back({{"epoch", e}, {"auroc", num(v)}});
    return {{"best_auroc", num(r.best_auroc)},
            {"window", {{"start_epoch", r.window.start}, {"end_epoch", r.window.end}}},
            {"mean_auroc", num(r.mean_auroc)},
            {"std_auroc", num(r.std_auroc)},
            {"per_epoch", per}};
}

inline json to_json(const EpochRecord& r) {
    json j = {{"epoch", r.epoch},           {"kind", to_string(r.kind)},        {"loss", num(r.loss)},
              {"auroc_pixel", num(r.auroc_pixel)}, {"auroc_image", num(r.auroc_image)}, {"ks_mean", num(r.ks_mean)}};
    if (!r.error.empty()) j["error"] = r.error;
    return j;
}

inline std::string metrics_csv(const TrainReport& rep) {
    std::string out = "epoch,loss,auroc_pixel,auroc_image,ks_mean\n";
    for (const auto& r : rep.epochs)
        out += std::to_string(r.epoch) + "," + io::format_real(r.loss) + "," + io::format_real(r.auroc_pixel) + "," +
               io::format_real(r.auroc_image) + "," + io::format_real(r.ks_mean) + "\n";
    return out;
}

/// Long format (run, epoch, metric, value) for plotting tools; NaN rows omitted.
inline std::string metrics_long_csv(const std::string& run, const TrainReport& rep, bool header = true) {
    std::string out = header ? "run,epoch,metric,value\n" : "";
    for (const auto& r : rep.epochs) {
        const std::pair<const char*, double> rows[] = {
            {"loss", r.loss}, {"auroc_pixel", r.auroc_pixel}, {"auroc_image", r.auroc_image}, {"ks_mean", r.ks_mean}};
        for (const auto& [name, v] : rows)
            if (std::isfinite(v)) out += run + "," + std::to_string(r.epoch) + "," + name + "," + io::format_real(v) + "\n";
    }
    return out;
}

inline void write_json(const fs::path& path, const json& j) { io::write_file(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Parallel execution of independent runs. Results are stored by index, so the
// output does not depend on the thread count.

inline std::size_t thread_cap() {
    if (const char* env = std::getenv("ALTFLOW_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

template <class R>
std::vector<R> parallel_map(std::size_t n, const std::function<R(std::size_t)>& task) {
    std::vector<R> out(n);
    std::vector<std::exception_ptr> errs(n);
    const std::size_t workers = std::min(n, thread_cap());
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = task(i);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    out[i] = task(i);
                } catch (...) {
                    errs[i] = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
    return out;
}

/// Config for one seed of a multi-seed experiment: the seed drives both the
/// synthetic data and the flow initialization / shuffling.
inline ExperimentConfig with_seed(ExperimentConfig cfg, std::uint64_t seed) {
    cfg.synthetic.seed = seed;
    cfg.train.seed = seed;
    return cfg;
}

/// NLL for reporting; NaN instead of an exception when the data overflow.
inline double safe_nll(const FlowModel& m, const BaseDistribution& b, const Tensor4& x) {
    try {
        return nll(m, b, x);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::NonFinite) throw;
        return std::numeric_limits<double>::quiet_NaN();
    }
}

// ---------------------------------------------------------------------------
// train

struct TrainOutcome {
    RunResult run;
    int exit_code = kOk;
};

inline TrainOutcome cmd_train(const ExperimentConfig& cfg) {
    cfg.validate();
    const Dataset ds = load_dataset(cfg);
    const fs::path out = cfg.out_dir;
    fs::create_directories(out);
    write_json(out / "config.json", config::to_json(cfg));

    EpochCallback save_ckpt;
    if (cfg.checkpoint_every > 0)
        save_ckpt = [&](const FlowModel& m, const BaseDistribution& b, EpochRecord& rec) {
            if ((rec.epoch + 1) % cfg.checkpoint_every == 0) {
                char name[32];
                std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", rec.epoch);
                io::save_checkpoint(out / "checkpoints" / name, m, b);
            }
        };
    TrainOutcome res{run_training(cfg, ds, save_ckpt), kOk};
    const RunResult& r = res.run;
    io::save_checkpoint(out / "model.ckpt", r.model, r.base);

    json epochs = json::array();
    for (const auto& e : r.report.epochs) epochs.push_back(to_json(e));
    json report = {{"config", config::to_json(cfg)},
                   {"variant", variant_name(cfg.train)},
                   {"epochs", epochs},
                   {"errors", r.report.errors},
                   {"final",
                    {{"train_nll", num(safe_nll(r.model, r.base, ds.train))},
                     {"ks_standardized", to_json(r.final_ks)},
                     {"mean_square", num(r.final_mean_square)}}}};
    if (!r.ks_snapshots.empty()) report["ks_pooled"] = to_json(pool_ks_reports(r.ks_snapshots));
    if (has_both_classes(ds.test_image_labels))
        report["stability"] = {{"pixel", to_json(r.pixel_stability)}, {"image", to_json(r.image_stability)}};
    write_json(out / "report.json", report);
    io::write_file(out / "metrics.csv", metrics_csv(r.report));
    io::write_file(out / "metrics_long.csv", metrics_long_csv(variant_name(cfg.train), r.report));

    if (!r.report.errors.empty()) {
        std::fprintf(stderr, "train: %zu epoch(s) rolled back after non-finite values; first: %s\n",
                     r.report.errors.size(), r.report.errors.front().c_str());
        res.exit_code = kNumericalError;
    }
    return res;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
    std::vector<fs::path> checkpoints; ///< in epoch order; each yields one AUROC row
    std::string split = "test";        ///< "test" or "train"
    bool oracle = false;               ///< score with the true synthetic density instead of a checkpoint
};

struct EvalOutcome {
    StabilityReport pixel;
    StabilityReport image;
    json report;
};

inline EvalOutcome cmd_eval(const ExperimentConfig& cfg, const EvalOptions& opt) {
    cfg.validate();
    if (opt.split != "test" && opt.split != "train") fail(ErrorKind::ConfigError, "--split must be test or train");
    if (!opt.oracle && opt.checkpoints.empty()) fail(ErrorKind::ConfigError, "eval needs --checkpoint or --oracle");
    if (opt.oracle && !cfg.features.empty()) fail(ErrorKind::ConfigError, "--oracle requires synthetic data");
    const Dataset ds = load_dataset(cfg);
    const bool on_train = opt.split == "train";
    const Tensor4& x = on_train ? ds.train : ds.test;
    const std::vector<int> labels = on_train ? std::vector<int>(ds.train.shape().b, 0) : ds.test_image_labels;
    const Tensor4 masks =
        on_train ? Tensor4(Shape4{ds.train.shape().b, 1, ds.train.shape().h, ds.train.shape().w}, 0.0) : ds.test_pixel_masks;

    std::vector<std::pair<std::size_t, double>> px, im;
    AnomalyResult last;
    json rows = json::array();
    const std::size_t n_rows = opt.oracle ? 1 : opt.checkpoints.size();
    for (std::size_t i = 0; i < n_rows; ++i) {
        if (opt.oracle) {
            Tensor4 map = oracle_score_map(cfg.synthetic, x);
            auto scores = image_score(map);
            last = AnomalyResult{std::move(map), std::move(scores)};
        } else {
            const io::Checkpoint ck = io::load_checkpoint(opt.checkpoints[i]);
            last = score_map_learned(forward(ck.flow, x).z, ck.base);
        }
        const double p = pixel_auroc(last.anomaly_map, masks);
        const double m = auroc(last.image_scores, labels);
        px.emplace_back(i, p);
        im.emplace_back(i, m);
        rows.push_back({{"index", i},
                        {"source", opt.oracle ? std::string("oracle") : opt.checkpoints[i].string()},
                        {"auroc_pixel", p},
                        {"auroc_image", m}});
    }
    EvalOutcome res;
    const EpochWindow w = default_window(n_rows);
    res.pixel = stability(px, w);
    res.image = stability(im, w);
    res.report = {{"split", opt.split}, {"rows", rows}, {"pixel", to_json(res.pixel)}, {"image", to_json(res.image)}};

    const fs::path out = cfg.out_dir;
    write_json(out / "eval.json", res.report);
    io::write_file(out / "image_scores.csv", io::encode_scores_csv(last.image_scores, labels));
    io::save_tensor(out / "anomaly_maps.aft", last.anomaly_map);
    return res;
}

// ---------------------------------------------------------------------------
// diagnose

struct DiagnoseOutcome {
    KsReport raw;
    KsReport standardized;
    double mean_square_raw = 0.0;
    double mean_square_standardized = 0.0;
    double critical_value = 0.0;
    json report;
};

/// KS of each channel of the flow outputs on training normals, both raw
/// (against N(0,1)) and standardized by the checkpoint's base.
inline DiagnoseOutcome cmd_diagnose(const ExperimentConfig& cfg, const fs::path& checkpoint) {
    cfg.validate();
    const Dataset ds = load_dataset(cfg);
    const io::Checkpoint ck = io::load_checkpoint(checkpoint);
    const Tensor4 z = forward(ck.flow, ds.train).z;
    DiagnoseOutcome d;
    d.raw = channel_ks_report(z);
    d.standardized = channel_ks_report(z, ck.base);
    d.mean_square_raw = mean_square_statistic(z);
    d.mean_square_standardized = mean_square_statistic(standardize(ck.base, z));
    d.critical_value = ks_critical_value_5pct(d.raw.n_samples);
    d.report = {{"checkpoint", checkpoint.string()},
                {"raw", to_json(d.raw)},
                {"standardized", to_json(d.standardized)},
                {"mean_square_raw", d.mean_square_raw},
                {"mean_square_standardized", d.mean_square_standardized},
                {"ks_critical_value_5pct", d.critical_value}};
    const fs::path out = cfg.out_dir;
    write_json(out / "diagnose.json", d.report);
    std::string csv = "variant,channel,ks\n";
    for (std::size_t c = 0; c < d.raw.per_channel_ks.size(); ++c)
        csv += "raw," + std::to_string(c) + "," + io::format_real(d.raw.per_channel_ks[c]) + "\n";
    for (std::size_t c = 0; c < d.standardized.per_channel_ks.size(); ++c)
        csv += "standardized," + std::to_string(c) + "," + io::format_real(d.standardized.per_channel_ks[c]) + "\n";
    io::write_file(out / "ks_per_channel.csv", csv);
    return d;
}

// ---------------------------------------------------------------------------
// sweep-depth

struct SweepRow {
    std::uint64_t seed = 0;
    std::size_t depth = 0;
    double final_train_nll = 0.0;
    double mean_ks = 0.0;
    double mean_square = 0.0;
    double pixel_auroc_mean = std::numeric_limits<double>::quiet_NaN();
    double pixel_auroc_std = std::numeric_limits<double>::quiet_NaN();
};

inline std::vector<SweepRow> cmd_sweep_depth(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.depths.empty() || cfg.seeds.empty()) fail(ErrorKind::ConfigError, "sweep needs at least one depth and seed");
    struct Task {
        std::uint64_t seed;
        std::size_t depth;
    };
    std::vector<Task> tasks;
    for (auto s : cfg.seeds)
        for (auto d : cfg.depths) tasks.push_back({s, d});
    const auto rows = parallel_map<SweepRow>(tasks.size(), [&](std::size_t i) {
        ExperimentConfig c = with_seed(cfg, tasks[i].seed);
        c.flow.depth = tasks[i].depth;
        const Dataset ds = load_dataset(c);
        const RunResult r = run_training(c, ds);
        if (!r.report.errors.empty()) fail(ErrorKind::NonFinite, "depth " + std::to_string(c.flow.depth) + ": " + r.report.errors.front());
        SweepRow row{tasks[i].seed, tasks[i].depth, nll(r.model, r.base, ds.train), r.final_ks.mean, r.final_mean_square};
        if (has_both_classes(ds.test_image_labels)) {
            row.pixel_auroc_mean = r.pixel_stability.mean_auroc;
            row.pixel_auroc_std = r.pixel_stability.std_auroc;
        }
        return row;
    });
    std::string csv = "seed,depth,final_train_nll,mean_ks,mean_square,pixel_auroc_mean,pixel_auroc_std\n";
    for (const auto& r : rows)
        csv += std::to_string(r.seed) + "," + std::to_string(r.depth) + "," + io::format_real(r.final_train_nll) + "," +
               io::format_real(r.mean_ks) + "," + io::format_real(r.mean_square) + "," + io::format_real(r.pixel_auroc_mean) +
               "," + io::format_real(r.pixel_auroc_std) + "\n";
    const fs::path out = cfg.out_dir;
    fs::create_directories(out);
    write_json(out / "config.json", config::to_json(cfg));
    io::write_file(out / "sweep_depth.csv", csv);
    return rows;
}

// ---------------------------------------------------------------------------
// compare

struct CompareRun {
    std::uint64_t seed = 0;
    std::string variant;
    StabilityReport pixel;
    StabilityReport image;
    KsReport ks_raw;          ///< final outputs against N(0,1)
    KsReport ks_standardized; ///< final outputs standardized by the learned base
    KsReport ks_pooled;       ///< standardized snapshots every diagnostics_every epochs
};

struct CompareOutcome {
    std::vector<CompareRun> runs; ///< seed-major, baseline before altub
    json report;
};

inline CompareOutcome cmd_compare(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.seeds.empty()) fail(ErrorKind::ConfigError, "compare needs at least one seed");
    const char* variants[] = {"baseline", "altub"};
    const std::size_t n = cfg.seeds.size() * 2;
    CompareOutcome res;
    res.runs = parallel_map<CompareRun>(n, [&](std::size_t i) {
        ExperimentConfig c = with_seed(cfg, cfg.seeds[i / 2]);
        c.train.stereotype_mode = false;
        c.train.altub_enabled = (i % 2) == 1;
        const Dataset ds = load_dataset(c);
        if (!has_both_classes(ds.test_image_labels))
            fail(ErrorKind::DegenerateLabels, "compare needs normal and anomalous test samples");
        const RunResult r = run_training(c, ds);
        if (!r.report.errors.empty()) fail(ErrorKind::NonFinite, r.report.errors.front());
        const Tensor4 z = forward(r.model, ds.train).z;
        return CompareRun{c.train.seed,       variants[i % 2],      r.pixel_stability,
                          r.image_stability, channel_ks_report(z), r.final_ks,
                          pool_ks_reports(r.ks_snapshots)};
    });

    json out_variants = json::object();
    for (const char* v : variants) {
        json runs = json::array();
        for (const auto& r : res.runs) {
            if (r.variant != v) continue;
            auto stats = [](const StabilityReport& s) {
                return json{{"mean", num(s.mean_auroc)}, {"std", num(s.std_auroc)}, {"best", num(s.best_auroc)}};
            };
            runs.push_back({{"seed", r.seed},
                            {"pixel_auroc", stats(r.pixel)},
                            {"image_auroc", stats(r.image)},
                            {"ks",
                             {{"raw_mean", r.ks_raw.mean},
                              {"standardized_mean", r.ks_standardized.mean},
                              {"pooled_mean", r.ks_pooled.mean},
                              {"pooled_ci95", r.ks_pooled.ci95_halfwidth}}}});
        }
        out_variants[v] = {{"runs", runs}};
    }
    res.report = {{"config", config::to_json(cfg)}, {"window", {{"start_epoch", cfg.window().start}, {"end_epoch", cfg.window().end}}},
                  {"variants", out_variants}};
    const fs::path out = cfg.out_dir;
    fs::create_directories(out);
    write_json(out / "compare.json", res.report);
    return res;
}

} // namespace altflow::cli
