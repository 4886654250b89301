#pragma once

#include <altflow/base.hpp>
#include <altflow/flow.hpp>
#include <altflow/io.hpp>
#include <altflow/numerics.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace altflow {

struct AnomalySpec {
    double patch_fraction = 0.5;  ///< fraction of channels perturbed inside the patch (at least one)
    double patch_magnitude = 2.0; ///< offset added to each perturbed channel, random sign per channel
    std::size_t patch_size = 2;   ///< square patch side, in feature-map pixels
};

struct SyntheticSpec {
    std::size_t channels = 4;
    std::size_t height = 4;
    std::size_t width = 4;
    double latent_mean = 2.0;
    double latent_std = 0.5;
    std::size_t warp_depth = 2;
    double warp_scale = 0.4; ///< std of the frozen random warp parameters
    AnomalySpec anomaly;
    std::size_t n_train_normal = 256;
    std::size_t n_test_normal = 32;
    std::size_t n_test_anomalous = 32;
    std::uint64_t seed = 25;

    Shape4 sample_shape(std::size_t batch = 1) const { return Shape4{batch, channels, height, width}; }

    void validate() const {
        auto bad = [](const std::string& m) { fail(ErrorKind::InvalidSpec, m); };
        if (channels == 0 || height == 0 || width == 0) bad("shape must be positive");
        if (!(latent_std > 0.0)) bad("latent_std must be positive");
        if (!(warp_scale >= 0.0)) bad("warp_scale must be non-negative");
        if (anomaly.patch_size == 0 || anomaly.patch_size > height || anomaly.patch_size > width)
            bad("patch_size must fit within (H, W)");
        if (!(anomaly.patch_fraction > 0.0 && anomaly.patch_fraction < 1.0)) bad("patch_fraction must lie in (0, 1)");
        if (!std::isfinite(anomaly.patch_magnitude)) bad("patch_magnitude must be finite");
        if (n_train_normal == 0) bad("need at least one training sample");
    }
};

struct Dataset {
    Tensor4 train;                     ///< normals only
    Tensor4 test;
    std::vector<int> test_image_labels; ///< 1 = anomalous
    Tensor4 test_pixel_masks;          ///< [B_test, 1, H, W], entries 0 or 1

    bool operator==(const Dataset&) const = default;
};

/// The frozen random coupling stack that shapes latents into features.
inline FlowModel make_warp(const SyntheticSpec& spec) {
    return FlowModel::random(spec.channels, spec.warp_depth, 2 * spec.channels, Rng(spec.seed).split(0x3A2F).next_u64(),
                             spec.warp_scale);
}

namespace detail {

enum class SampleRole : std::uint64_t { train = 1, test_normal = 2, test_anomalous = 3 };

inline Rng sample_stream(const SyntheticSpec& spec, SampleRole role, std::size_t index) {
    return Rng(spec.seed).split((static_cast<std::uint64_t>(role) << 40) | index);
}

inline Tensor4 latents(const SyntheticSpec& spec, SampleRole role, std::size_t count) {
    Tensor4 out(spec.sample_shape(count));
    const std::size_t d = spec.sample_shape().per_sample();
    for (std::size_t b = 0; b < count; ++b) {
        Rng rng = sample_stream(spec, role, b);
        for (std::size_t i = 0; i < d; ++i) out[b * d + i] = spec.latent_mean + spec.latent_std * rng.normal();
    }
    return out;
}

} // namespace detail

/// Normals are the warp applied to N(latent_mean, latent_std^2) latents.
/// Anomalous test samples get a square patch where a subset of channels is
/// offset by +-patch_magnitude; the pixel mask marks that patch.
inline Dataset generate(const SyntheticSpec& spec) {
    spec.validate();
    const FlowModel warp = make_warp(spec);
    using detail::SampleRole;
    Dataset ds;
    ds.train = forward(warp, detail::latents(spec, SampleRole::train, spec.n_train_normal)).z;

    const std::size_t nn = spec.n_test_normal, na = spec.n_test_anomalous;
    const Tensor4 normal = forward(warp, detail::latents(spec, SampleRole::test_normal, nn)).z;
    // Anomalous samples start from their own normal draw, then get the patch.
    Tensor4 anomalous = na ? forward(warp, detail::latents(spec, SampleRole::test_anomalous, na)).z : Tensor4{};

    std::vector<double> test(normal.data().begin(), normal.data().end());
    ds.test_pixel_masks = Tensor4(Shape4{nn + na, 1, spec.height, spec.width}, 0.0);
    ds.test_image_labels.assign(nn, 0);

    const auto& a = spec.anomaly;
    const std::size_t n_channels_hit = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(a.patch_fraction * static_cast<double>(spec.channels))));
    for (std::size_t j = 0; j < na; ++j) {
        Rng rng = detail::sample_stream(spec, SampleRole::test_anomalous, j).split(0xA11A);
        const std::size_t top = rng.below(spec.height - a.patch_size + 1);
        const std::size_t left = rng.below(spec.width - a.patch_size + 1);
        std::vector<std::size_t> chans(spec.channels);
        for (std::size_t c = 0; c < spec.channels; ++c) chans[c] = c;
        rng.shuffle(chans);
        for (std::size_t k = 0; k < n_channels_hit; ++k) {
            const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
            for (std::size_t h = top; h < top + a.patch_size; ++h)
                for (std::size_t w = left; w < left + a.patch_size; ++w) anomalous(j, chans[k], h, w) += sign * a.patch_magnitude;
        }
        for (std::size_t h = top; h < top + a.patch_size; ++h)
            for (std::size_t w = left; w < left + a.patch_size; ++w) ds.test_pixel_masks(nn + j, 0, h, w) = 1.0;
        ds.test_image_labels.push_back(1);
    }
    test.insert(test.end(), anomalous.data().begin(), anomalous.data().end());
    ds.test = Tensor4(spec.sample_shape(nn + na), std::move(test));
    return ds;
}

/// Per-pixel negative log-density under the true generative process; higher is
/// more anomalous. Shape [B, 1, H, W].
inline Tensor4 oracle_score_map(const SyntheticSpec& spec, const Tensor4& x) {
    const FlowModel warp = make_warp(spec);
    const Tensor4 u = inverse(warp, x);
    const Tensor4 ld = local_logdet(warp, u);
    const Shape4 s = x.shape();
    Tensor4 map(Shape4{s.b, 1, s.h, s.w});
    const double log_sd = std::log(spec.latent_std);
    for (std::size_t b = 0; b < s.b; ++b)
        for (std::size_t h = 0; h < s.h; ++h)
            for (std::size_t w = 0; w < s.w; ++w) {
                double lp = -ld(b, 0, h, w);
                for (std::size_t c = 0; c < s.c; ++c) {
                    const double v = (u(b, c, h, w) - spec.latent_mean) / spec.latent_std;
                    lp += -kHalfLog2Pi - log_sd - 0.5 * v * v;
                }
                map(b, 0, h, w) = -lp;
            }
    return map;
}

// ---------------------------------------------------------------------------
// Feature files: a manifest JSON naming the role of each file.

struct ManifestPaths {
    std::string train = "train.aft";
    std::string test = "test.aft";
    std::string test_labels = "test_labels.csv";
    std::string test_masks = "test_masks.aft";
};

/// Writes the four role files plus `manifest.json` into `dir`; returns the manifest path.
inline std::filesystem::path save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const ManifestPaths names;
    io::save_tensor(dir / names.train, ds.train);
    io::save_tensor(dir / names.test, ds.test);
    io::write_file(dir / names.test_labels, io::encode_labels_csv(ds.test_image_labels));
    io::save_tensor(dir / names.test_masks, ds.test_pixel_masks);
    const io::json manifest = {{"format", "altflow-features"},
                               {"version", 1},
                               {"train", names.train},
                               {"test", names.test},
                               {"test_labels", names.test_labels},
                               {"test_masks", names.test_masks}};
    const auto path = dir / "manifest.json";
    io::write_file(path, manifest.dump(2) + "\n");
    return path;
}

/// Loads a dataset from a manifest path (or a directory holding manifest.json).
inline Dataset load_features(const std::filesystem::path& path) {
    const auto manifest_path = std::filesystem::is_directory(path) ? path / "manifest.json" : path;
    const auto dir = manifest_path.parent_path();
    io::json m;
    try {
        m = io::json::parse(io::read_file(manifest_path));
    } catch (const io::json::exception& e) {
        fail(ErrorKind::FormatError, manifest_path.string() + ": manifest is not valid JSON (" + e.what() + ")");
    }
    auto role = [&](const char* key) -> std::filesystem::path {
        if (!m.contains(key) || !m[key].is_string()) return {};
        return dir / m[key].get<std::string>();
    };
    const auto train_p = role("train"), test_p = role("test"), labels_p = role("test_labels"), masks_p = role("test_masks");
    if (train_p.empty() || test_p.empty() || labels_p.empty())
        fail(ErrorKind::FormatError, "manifest must name train, test and test_labels files");

    Dataset ds;
    ds.train = io::load_tensor(train_p);
    ds.test = io::load_tensor(test_p);
    ds.test_image_labels = io::decode_labels_csv(io::read_file(labels_p), labels_p.string());
    if (masks_p.empty() || !std::filesystem::exists(masks_p))
        fail(ErrorKind::MissingMask, "manifest has no readable test_masks file");
    ds.test_pixel_masks = io::load_tensor(masks_p);

    const Shape4 tr = ds.train.shape(), te = ds.test.shape(), mk = ds.test_pixel_masks.shape();
    if (tr.c != te.c || tr.h != te.h || tr.w != te.w)
        fail(ErrorKind::FormatError, "train " + tr.str() + " and test " + te.str() + " feature shapes disagree");
    if (ds.test_image_labels.size() != te.b) fail(ErrorKind::FormatError, "label count differs from test batch size");
    if (mk != Shape4{te.b, 1, te.h, te.w}) fail(ErrorKind::FormatError, "mask shape must be [B_test, 1, H, W]");
    ensure_finite(ds.train, "load_features train");
    ensure_finite(ds.test, "load_features test");
    for (std::size_t b = 0; b < te.b; ++b) {
        bool any = false;
        for (std::size_t i = 0; i < te.h * te.w; ++i) {
            const double v = ds.test_pixel_masks[b * te.h * te.w + i];
            if (v != 0.0 && v != 1.0) fail(ErrorKind::FormatError, "mask values must be 0 or 1");
            any = any || v == 1.0;
        }
        if (ds.test_image_labels[b] == 1 && !any)
            fail(ErrorKind::MissingMask, "anomalous test sample " + std::to_string(b) + " has an empty mask");
        if (ds.test_image_labels[b] == 0 && any)
            fail(ErrorKind::FormatError, "normal test sample " + std::to_string(b) + " has a nonempty mask");
    }
    return ds;
}

} // namespace altflow
