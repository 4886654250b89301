// Acceptance checks. Run with a criterion number (1-11) or with no argument for all.
// Prints one PASS/FAIL line per criterion and exits nonzero if any fails.

#include <altflow/commands.hpp>

#include <Eigen/Dense>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>

using namespace altflow;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

Tensor4 randn(Shape4 s, std::uint64_t seed, double scale = 1.0, double shift = 0.0) {
    Rng rng(seed);
    Tensor4 t = gaussian_sample(rng, s);
    for (auto& v : t.data()) v = shift + scale * v;
    return t;
}

double rel_err(double a, double b) {
    const double den = std::max(std::abs(a), std::abs(b));
    return den == 0.0 ? 0.0 : std::abs(a - b) / den;
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("altflow_acceptance_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

// 1. Flow parameter gradients against central differences.
Outcome flow_gradients() {
    double worst = 0.0;
    std::size_t checked = 0;
    const std::size_t shapes[][4] = {{2, 2, 2, 1}, {4, 2, 1, 1}, {3, 1, 2, 3}, {8, 1, 1, 3}};
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const auto& sh = shapes[seed];
        const std::size_t c = sh[0], h = sh[1], w = sh[2], depth = sh[3];
        const FlowModel m0 = FlowModel::random(c, depth, 2 * c, 100 + seed, 0.5);
        const BaseDistribution base(randn({1, c, h, w}, 200 + seed, 0.3), randn({1, c, h, w}, 300 + seed, 0.2));
        const Tensor4 x = randn({5, c, h, w}, 400 + seed);
        const auto g = loss_and_grads(m0, base, x).grad_theta;
        FlowModel m = m0;
        const double eps = 1e-6;
        for (std::size_t i = 0; i < m.parameter_count(); ++i) {
            const double p = m.parameters()[i];
            m.parameters()[i] = p + eps;
            const double lp = nll(m, base, x);
            m.parameters()[i] = p - eps;
            const double lm = nll(m, base, x);
            m.parameters()[i] = p;
            worst = std::max(worst, rel_err(g[i], (lp - lm) / (2 * eps)));
            ++checked;
        }
    }
    return {worst < 1e-4, fmt("%.0f parameters, max relative error %.2e (< 1e-4)", double(checked), worst)};
}

// 2. Base gradients against central differences, plus the closed-form case.
Outcome base_gradients() {
    double worst = 0.0;
    for (std::uint64_t t = 0; t < 100; ++t) {
        Rng rng(t);
        const std::size_t c = 1 + rng.below(3), h = 1 + rng.below(2), w = 1 + rng.below(2), n = 1 + rng.below(8);
        BaseDistribution base(randn({1, c, h, w}, 1000 + t), randn({1, c, h, w}, 2000 + t, 0.5));
        const Tensor4 z = randn({n, c, h, w}, 3000 + t, 1.5);
        const BaseGrads g = grad_psi(base, z);
        auto loss = [&] {
            double s = 0.0;
            for (double v : log_prob(base, z)) s -= v;
            return s / static_cast<double>(n);
        };
        // Five-point central stencil: O(eps^4) truncation keeps the oracle well below the tolerance.
        const double eps = 1e-3;
        for (std::size_t i = 0; i < base.dims(); ++i)
            for (int which = 0; which < 2; ++which) {
                Tensor4& p = which ? base.log_sigma() : base.mu();
                const double v = p[i];
                auto at = [&](double d) {
                    p[i] = v + d;
                    const double l = loss();
                    p[i] = v;
                    return l;
                };
                const double fd = (-at(2 * eps) + 8 * at(eps) - 8 * at(-eps) + at(-2 * eps)) / (12 * eps);
                worst = std::max(worst, rel_err(which ? g.log_sigma[i] : g.mu[i], fd));
            }
    }
    const BaseGrads one = grad_psi(BaseDistribution(1, 1, 1), Tensor4(Shape4{1, 1, 1, 1}, 1.5));
    const bool exact = one.mu[0] == -1.5 && one.log_sigma[0] == -1.25;
    return {worst < 1e-6 && exact, fmt("100 instances, max relative error %.2e (< 1e-6); closed form (%g, %g)", worst,
                                       one.mu[0], one.log_sigma[0])};
}

// 3. Invertibility, log-determinant against a dense Jacobian, exact identity init.
Outcome invertibility() {
    double inv_err = 0.0, ld_err = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const FlowModel m = FlowModel::random(4, 3, 8, seed, 0.6);
        const Tensor4 x = randn({6, 4, 3, 3}, 50 + seed, 2.0);
        inv_err = std::max(inv_err, max_abs_diff(inverse(m, forward(m, x).z).data(), x.data()));

        const FlowModel small = FlowModel::random(4, 3, 6, 70 + seed, 0.6);
        const Tensor4 x1 = randn({1, 4, 2, 1}, 90 + seed);
        const std::size_t d = x1.size();
        Eigen::MatrixXd J(d, d);
        const double eps = 1e-5;
        for (std::size_t j = 0; j < d; ++j) {
            Tensor4 xp = x1, xm = x1;
            xp[j] += eps;
            xm[j] -= eps;
            const Tensor4 zp = forward(small, xp).z, zm = forward(small, xm).z;
            for (std::size_t i = 0; i < d; ++i)
                J(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (zp[i] - zm[i]) / (2 * eps);
        }
        ld_err = std::max(ld_err, rel_err(std::exp(forward(small, x1).logdet[0]), J.determinant()));
    }
    bool identity = true;
    const Tensor4 x = randn({3, 4, 2, 2}, 7, 3.0);
    for (const FlowModel& m : {FlowModel(4, 3, 8), FlowModel::initialized(4, 3, 8, 25)}) {
        const FlowOutput out = forward(m, x);
        identity = identity && out.z == x;
        for (double v : out.logdet) identity = identity && v == 0.0;
    }
    return {inv_err < 1e-8 && ld_err < 1e-6 && identity,
            fmt("inverse error %.2e (< 1e-8), det relative error %.2e (< 1e-6), identity exact: %s", inv_err, ld_err) +
                (identity ? "yes" : "no")};
}

// 4. AUROC against O(P*N) pair counting; KS against a dense grid.
Outcome oracles() {
    std::size_t auroc_mismatch = 0;
    Rng rng(4);
    for (int t = 0; t < 1000; ++t) {
        const std::size_t n = 2 + rng.below(199);
        std::vector<double> s(n);
        std::vector<int> y(n);
        const bool ties = t % 2 == 0;
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = ties ? static_cast<double>(rng.below(10)) : rng.normal();
            y[i] = rng.uniform() < 0.3;
        }
        y[0] = 0;
        y[1] = 1;
        double wins = 0.0, pairs = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (y[i] == 1 && y[j] == 0) {
                    pairs += 1.0;
                    wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
                }
        if (auroc(s, y) != wins / pairs) ++auroc_mismatch;
    }

    std::size_t ks_bad = 0;
    double worst_gap = 0.0;
    const double lo = -9.0, hi = 9.0;
    const std::size_t points = 1'800'000;
    const double step = (hi - lo) / static_cast<double>(points);
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 5 + rng.below(196);
        std::vector<double> xs(n);
        const double shift = rng.uniform() - 0.5;
        for (auto& v : xs) v = shift + rng.normal();
        const double exact = ks_statistic(xs);
        std::sort(xs.begin(), xs.end());
        double grid = 0.0;
        std::size_t k = 0;
        for (std::size_t i = 0; i <= points; ++i) {
            const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points);
            while (k < n && xs[k] <= x) ++k;
            grid = std::max(grid, std::abs(static_cast<double>(k) / static_cast<double>(n) - normal_cdf(x)));
        }
        // Grid resolution: CDF change over one step plus the mass of samples sharing a cell.
        std::size_t crowd = 1;
        for (std::size_t i = 0, j = 0; i < n; ++i) {
            while (xs[i] - xs[j] > step) ++j;
            crowd = std::max(crowd, i - j + 1);
        }
        const double res = step * 0.3989422804014327 + static_cast<double>(crowd - 1) / static_cast<double>(n) + 1e-12;
        worst_gap = std::max(worst_gap, exact - grid);
        if (grid > exact + 1e-12 || exact - grid > res) ++ks_bad;
    }
    return {auroc_mismatch == 0 && ks_bad == 0,
            fmt("AUROC mismatches %.0f/1000, KS outside grid resolution %.0f/100 (largest gap %.1e)",
                double(auroc_mismatch), double(ks_bad), worst_gap)};
}

// 5. Forward/reverse KL identity on shared samples, and the closed-form case.
Outcome kl_identity() {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const FlowModel m = FlowModel::random(2, 2, 4, seed, 0.4);
        const BaseDistribution base(randn({1, 2, 1, 1}, 10 + seed, 0.5), randn({1, 2, 1, 1}, 20 + seed, 0.2));
        Rng rng(seed);
        const KlEstimate k = kl_identity_check(m, base, gaussian_sampler({1, 2, 1, 1}, 1.0, 0.7), 10000, rng);
        worst = std::max(worst, std::abs(k.kl_x - k.kl_z));
    }
    Rng rng(25);
    const KlEstimate k = kl_identity_check(FlowModel(1, 0, 1), BaseDistribution(1, 1, 1),
                                           gaussian_sampler({1, 1, 1, 1}, 2.0, 1.0), 100000, rng);
    const double z = std::abs(k.kl_x - 2.0) / k.stderr_x;
    return {worst < 1e-10 && z < 3.0,
            fmt("estimator gap %.1e (< 1e-10); closed form KL %.4f, %.2f standard errors from 2 (< 3)", worst, k.kl_x, z)};
}

// 6. Identity flow, learnable base, data N(2, 0.5^2).
Outcome mle_recovery() {
    Rng rng(25);
    const Tensor4 x = gaussian_sampler({1, 2, 1, 1}, 2.0, 0.5).sample(rng, 4096);
    FlowModel m(2, 0, 4);
    BaseDistribution base(2, 1, 1);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch_size = 256;
    fit(m, base, x, cfg);
    double mu_err = 0.0, sd_err = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
        mu_err = std::max(mu_err, std::abs(base.mu()[i] - 2.0));
        sd_err = std::max(sd_err, std::abs(std::exp(base.log_sigma()[i]) - 0.5));
    }
    return {mu_err < 0.1 && sd_err < 0.025,
            fmt("mu = %.4f, sigma = %.4f; worst |mu-2| %.4f (< 0.1)", base.mu()[0], std::exp(base.log_sigma()[0]), mu_err) +
                fmt(", worst |sigma-0.5| %.4f (< 0.025)", sd_err)};
}

cli::CompareOutcome default_compare(const std::string& tag) {
    ExperimentConfig cfg;
    cfg.out_dir = scratch(tag).string();
    return cli::cmd_compare(cfg);
}

// 7. Mean shift of the frozen-base flow, removed by AltUB.
Outcome mean_shift() {
    const auto res = default_compare("c7");
    int above_critical = 0, reduced = 0;
    std::ostringstream os;
    for (std::size_t s = 0; s + 1 < res.runs.size(); s += 2) {
        const auto& base = res.runs[s];
        const auto& alt = res.runs[s + 1];
        const double crit = ks_critical_value_5pct(base.ks_raw.n_samples);
        if (base.ks_raw.mean > crit) ++above_critical;
        if (alt.ks_standardized.mean <= 0.8 * base.ks_raw.mean) ++reduced;
        os << "seed " << base.seed << ": baseline raw KS " << fmt("%.4f", base.ks_raw.mean) << " (critical "
           << fmt("%.4f", crit) << "), AltUB standardized " << fmt("%.4f", alt.ks_standardized.mean) << "; ";
    }
    os << "above critical " << above_critical << "/3, >=20% lower " << reduced << "/3";
    return {above_critical == 3 && reduced >= 2, os.str()};
}

// 8. Stability of pixel AUROC over the final half of training.
Outcome stability_direction() {
    const auto res = default_compare("c8");
    int steadier = 0, not_worse = 0;
    std::ostringstream os;
    for (std::size_t s = 0; s + 1 < res.runs.size(); s += 2) {
        const auto& b = res.runs[s].pixel;
        const auto& a = res.runs[s + 1].pixel;
        if (a.std_auroc <= b.std_auroc) ++steadier;
        if (a.mean_auroc >= b.mean_auroc - 0.005) ++not_worse;
        os << "seed " << res.runs[s].seed << ": std " << fmt("%.5f vs %.5f", a.std_auroc, b.std_auroc) << ", mean "
           << fmt("%.4f vs %.4f", a.mean_auroc, b.mean_auroc) << "; ";
    }
    os << "AltUB std <= baseline " << steadier << "/3; mean within 0.005 " << not_worse << "/3";
    return {steadier >= 2 && not_worse >= 2, os.str()};
}

// 9. Deeper baseline flows fit better.
Outcome depth_trend() {
    ExperimentConfig cfg;
    cfg.train.altub_enabled = false;
    cfg.depths = {2, 8};
    cfg.out_dir = scratch("c9").string();
    const auto rows = cli::cmd_sweep_depth(cfg);
    int nll_better = 0, ks_better = 0;
    std::ostringstream os;
    for (std::size_t i = 0; i + 1 < rows.size(); i += 2) {
        const auto& d2 = rows[i];
        const auto& d8 = rows[i + 1];
        if (d8.final_train_nll < d2.final_train_nll) ++nll_better;
        if (d8.mean_ks < d2.mean_ks) ++ks_better;
        os << "seed " << d2.seed << ": NLL " << fmt("%.3f vs %.3f", d8.final_train_nll, d2.final_train_nll) << ", KS "
           << fmt("%.4f vs %.4f", d8.mean_ks, d2.mean_ks) << "; ";
    }
    os << "depth 8 lower NLL " << nll_better << "/3, lower KS " << ks_better << "/3";
    return {nll_better >= 2 && ks_better >= 2, os.str()};
}

// 10. Baseline leaves psi at zero and the two scores agree; schedule matches the mod rule.
Outcome baseline_and_schedule() {
    ExperimentConfig cfg;
    cfg.train.altub_enabled = false;
    cfg.train.epochs = 40;
    const Dataset ds = load_dataset(cfg);
    const RunResult r = run_training(cfg, ds);
    const bool psi_zero = r.base.is_standard();
    const Tensor4 z = forward(r.model, ds.test).z;
    const AnomalyResult fixed = score_map_fixed(z), learned = score_map_learned(z, r.base);
    const bool scores_equal = fixed.anomaly_map == learned.anomaly_map && fixed.image_scores == learned.image_scores;

    Rng rng(10);
    int schedule_ok = 0;
    const Tensor4 x = randn({4, 2, 1, 1}, 1, 0.5, 1.0);
    for (int t = 0; t < 200; ++t) {
        TrainConfig tc;
        tc.freezing_interval = 1 + rng.below(15);
        tc.warmup_epochs = rng.below(40);
        tc.epochs = 1 + rng.below(150);
        tc.batch_size = 4;
        std::vector<std::size_t> expect;
        for (std::size_t e = 0; e < tc.epochs; ++e)
            if (e % tc.freezing_interval == 0 && e >= tc.warmup_epochs) expect.push_back(e);
        FlowModel m(2, 0, 2);
        BaseDistribution b(2, 1, 1);
        std::vector<std::size_t> trained;
        for (const auto& rec : fit(m, b, x, tc).epochs)
            if (rec.kind == EpochKind::base_only) trained.push_back(rec.epoch);
        if (base_only_epochs(tc) == expect && trained == expect) ++schedule_ok;
    }
    return {psi_zero && scores_equal && schedule_ok == 200,
            std::string("psi bitwise zero: ") + (psi_zero ? "yes" : "no") + ", scores bitwise equal: " +
                (scores_equal ? "yes" : "no") + fmt(", schedule exact in %.0f/200 draws", schedule_ok)};
}

// 11. Byte-identical outputs from identical runs.
Outcome determinism() {
    std::vector<fs::path> dirs{scratch("c11a"), scratch("c11b")};
    for (const auto& d : dirs) {
        ExperimentConfig cfg;
        cfg.checkpoint_every = 50;
        cfg.out_dir = d.string();
        cli::cmd_train(cfg);
    }
    std::size_t compared = 0, differ = 0;
    for (const char* f : {"metrics.csv", "model.ckpt", "checkpoints/epoch_0049.ckpt", "checkpoints/epoch_0099.ckpt",
                          "checkpoints/epoch_0149.ckpt", "checkpoints/epoch_0199.ckpt"}) {
        ++compared;
        if (io::read_file(dirs[0] / f) != io::read_file(dirs[1] / f)) ++differ;
    }
    return {differ == 0, fmt("%.0f files compared, %.0f differ", double(compared), double(differ))};
}

struct Criterion {
    const char* name;
    double time_limit_s;
    std::function<Outcome()> run;
};

} // namespace

int main(int argc, char** argv) {
    const Criterion all[] = {
        {"flow gradients match finite differences", 10, flow_gradients},
        {"base gradients match finite differences", 1, base_gradients},
        {"invertibility and log-determinant", 10, invertibility},
        {"AUROC and KS oracles", 30, oracles},
        {"KL identity", 30, kl_identity},
        {"closed-form MLE recovery", 60, mle_recovery},
        {"mean-shift reproduction", 600, mean_shift},
        {"stability direction", 900, stability_direction},
        {"depth trends", 900, depth_trend},
        {"baseline equivalence and schedule exactness", 60, baseline_and_schedule},
        {"determinism", 120, determinism},
    };
    int first = 1, last = 11;
    if (argc > 1) {
        first = last = std::atoi(argv[1]);
        if (first < 1 || first > 11) {
            std::fprintf(stderr, "usage: acceptance [1-11]\n");
            return 2;
        }
    }
    int failures = 0;
    for (int i = first; i <= last; ++i) {
        const Criterion& c = all[i - 1];
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs < c.time_limit_s;
        const bool pass = o.pass && in_time;
        failures += !pass;
        std::printf("%s criterion %d (%s): %s [%.2fs, limit %.0fs]\n", pass ? "PASS" : "FAIL", i, c.name,
                    o.detail.c_str(), secs, c.time_limit_s);
        std::fflush(stdout);
    }
    return failures ? 1 : 0;
}
