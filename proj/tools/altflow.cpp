#include <altflow/commands.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace altflow;

struct Overrides {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    bool no_altub = false;
    bool stereotype = false;
    std::optional<std::size_t> freezing_interval;
    std::optional<double> eta2_max;
    std::vector<std::size_t> depth;
    std::optional<std::size_t> epochs;
    std::optional<std::string> features;
    std::optional<std::string> out;

    void add_to(CLI::App& app, bool multi_depth) {
        app.add_option("--config", config_path, "TOML or JSON experiment config");
        app.add_option("--seed", seed, "seed for data and initialization; replaces the seed list");
        app.add_flag("--no-altub", no_altub, "train the baseline with a fixed N(0, I) base");
        app.add_flag("--stereotype", stereotype, "learn the base jointly with the flow (implies --no-altub)");
        app.add_option("--freezing-interval", freezing_interval, "epochs between base-only updates");
        app.add_option("--eta2-max", eta2_max, "peak base learning rate");
        auto* d = app.add_option("--depth", depth, multi_depth ? "flow depths to sweep (repeatable)" : "coupling layers");
        if (!multi_depth) d->expected(1);
        app.add_option("--epochs", epochs, "training epochs");
        app.add_option("--features", features, "feature manifest; omit to use synthetic data");
        app.add_option("--out", out, "output directory");
    }

    ExperimentConfig resolve(bool multi_depth) const {
        ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : config::load(config_path);
        if (seed) {
            cfg = cli::with_seed(std::move(cfg), *seed);
            cfg.seeds = {*seed};
        }
        if (no_altub || stereotype) cfg.train.altub_enabled = false;
        if (stereotype) cfg.train.stereotype_mode = true;
        if (freezing_interval) cfg.train.freezing_interval = *freezing_interval;
        if (eta2_max) cfg.train.eta2_max = *eta2_max;
        if (!depth.empty()) {
            cfg.flow.depth = depth.front();
            if (multi_depth) cfg.depths = depth;
        }
        if (epochs) {
            cfg.train.epochs = *epochs;
            if (cfg.eval_window && cfg.eval_window->end >= *epochs) cfg.eval_window.reset();
        }
        if (features) cfg.features = *features;
        if (out) cfg.out_dir = *out;
        cfg.validate();
        return cfg;
    }
};

void print_stability(const char* label, const StabilityReport& s) {
    std::printf("%s auroc: mean %.4f  std %.4f  best %.4f  (epochs %zu-%zu)\n", label, s.mean_auroc, s.std_auroc,
                s.best_auroc, s.window.start, s.window.end);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"altflow: normalizing-flow anomaly detection with an alternating base update"};
    app.require_subcommand(1);

    Overrides o_train, o_eval, o_diag, o_sweep, o_cmp;
    auto* train = app.add_subcommand("train", "train one model and write its report and checkpoint");
    o_train.add_to(*train, false);

    auto* eval = app.add_subcommand("eval", "score checkpoints on a dataset");
    o_eval.add_to(*eval, false);
    std::vector<std::string> eval_ckpts;
    cli::EvalOptions eval_opt;
    eval->add_option("--checkpoint", eval_ckpts, "checkpoint files in epoch order");
    eval->add_option("--split", eval_opt.split, "test or train")->check(CLI::IsMember({"test", "train"}));
    eval->add_flag("--oracle", eval_opt.oracle, "score with the true synthetic density");

    auto* diag = app.add_subcommand("diagnose", "per-channel KS of the flow outputs");
    o_diag.add_to(*diag, false);
    std::string diag_ckpt;
    diag->add_option("--checkpoint", diag_ckpt, "checkpoint file")->required();

    auto* sweep = app.add_subcommand("sweep-depth", "train at several depths and tabulate NLL and KS");
    o_sweep.add_to(*sweep, true);

    auto* cmp = app.add_subcommand("compare", "baseline against AltUB over the seed list");
    o_cmp.add_to(*cmp, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return cli::kConfigError;
    }

    try {
        if (train->parsed()) {
            const auto res = cli::cmd_train(o_train.resolve(false));
            std::printf("final loss %.6f\n", res.run.report.epochs.back().loss);
            if (!std::isnan(res.run.pixel_stability.mean_auroc)) print_stability("pixel", res.run.pixel_stability);
            return res.exit_code;
        }
        if (eval->parsed()) {
            for (const auto& c : eval_ckpts) eval_opt.checkpoints.emplace_back(c);
            const auto res = cli::cmd_eval(o_eval.resolve(false), eval_opt);
            print_stability("pixel", res.pixel);
            print_stability("image", res.image);
            return cli::kOk;
        }
        if (diag->parsed()) {
            const auto d = cli::cmd_diagnose(o_diag.resolve(false), diag_ckpt);
            std::printf("ks raw %.4f  standardized %.4f  critical(5%%) %.4f\n", d.raw.mean, d.standardized.mean,
                        d.critical_value);
            return cli::kOk;
        }
        if (sweep->parsed()) {
            for (const auto& r : cli::cmd_sweep_depth(o_sweep.resolve(true)))
                std::printf("seed %llu depth %zu: nll %.4f ks %.4f\n", static_cast<unsigned long long>(r.seed), r.depth,
                            r.final_train_nll, r.mean_ks);
            return cli::kOk;
        }
        if (cmp->parsed()) {
            for (const auto& r : cli::cmd_compare(o_cmp.resolve(false)).runs) {
                std::printf("%-8s seed %llu  ", r.variant.c_str(), static_cast<unsigned long long>(r.seed));
                print_stability("pixel", r.pixel);
            }
            return cli::kOk;
        }
    } catch (const Error& e) {
        std::cerr << "altflow: " << e.what() << "\n";
        return cli::exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "altflow: %s\n", e.what());
        return cli::kDataError;
    }
    return cli::kOk;
}
