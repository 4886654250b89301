#pragma once

#include <altflow/error.hpp>
#include <altflow/experiment.hpp>

#include <json.hpp>

#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>

namespace altflow::config {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// A small TOML reader: [table] / [a.b] headers, bare or quoted keys, basic
// strings, integers, floats, booleans and single-line arrays of those.
// That covers every field an experiment config has.

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

[[noreturn]] inline void bad(std::size_t line, const std::string& msg) {
    fail(ErrorKind::ConfigError, "line " + std::to_string(line) + ": " + msg);
}

/// Strips a trailing comment that is not inside a string.
inline std::string_view strip_comment(std::string_view s) {
    char quote = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (quote == 0 && (c == '"' || c == '\'')) {
            quote = c;
        } else if (c == quote && (c == '\'' || s[i - 1] != '\\')) {
            quote = 0;
        } else if (c == '#' && quote == 0) {
            return s.substr(0, i);
        }
    }
    return s;
}

inline json parse_scalar(std::string_view v, std::size_t line) {
    v = trim(v);
    if (v.empty()) bad(line, "missing value");
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"') bad(line, "unterminated string");
        std::string out;
        for (std::size_t i = 1; i + 1 < v.size(); ++i) {
            if (v[i] == '\\' && i + 2 < v.size()) {
                const char e = v[++i];
                out.push_back(e == 'n' ? '\n' : e == 't' ? '\t' : e);
            } else {
                out.push_back(v[i]);
            }
        }
        return out;
    }
    if (v.front() == '\'') {
        if (v.size() < 2 || v.back() != '\'') bad(line, "unterminated string");
        return std::string(v.substr(1, v.size() - 2));
    }
    if (v == "true") return true;
    if (v == "false") return false;
    std::string num;
    for (char c : v)
        if (c != '_') num.push_back(c);
    const bool is_float = num.find_first_of(".eE") != std::string::npos || num == "inf" || num == "nan";
    if (!is_float) {
        long long i = 0;
        const char* b = num.data() + (num.front() == '+' ? 1 : 0);
        const auto [p, ec] = std::from_chars(b, num.data() + num.size(), i);
        if (ec == std::errc() && p == num.data() + num.size()) {
            if (i >= 0) return static_cast<std::uint64_t>(i);
            return i;
        }
    }
    double d = 0.0;
    const char* b = num.data() + (num.front() == '+' ? 1 : 0);
    const auto [p, ec] = std::from_chars(b, num.data() + num.size(), d);
    if (ec != std::errc() || p != num.data() + num.size()) bad(line, "cannot parse value '" + std::string(v) + "'");
    return d;
}

inline json parse_value(std::string_view v, std::size_t line) {
    v = trim(v);
    if (!v.empty() && v.front() == '[') {
        if (v.back() != ']') bad(line, "arrays must close on the same line");
        json arr = json::array();
        std::string_view body = trim(v.substr(1, v.size() - 2));
        while (!body.empty()) {
            std::size_t cut = 0;
            char quote = 0;
            while (cut < body.size() && (quote != 0 || body[cut] != ',')) {
                if (quote == 0 && (body[cut] == '"' || body[cut] == '\'')) quote = body[cut];
                else if (body[cut] == quote) quote = 0;
                ++cut;
            }
            const auto item = trim(body.substr(0, cut));
            if (!item.empty()) arr.push_back(parse_scalar(item, line));
            body = cut < body.size() ? trim(body.substr(cut + 1)) : std::string_view{};
        }
        return arr;
    }
    return parse_scalar(v, line);
}

inline std::string parse_key(std::string_view k, std::size_t line) {
    k = trim(k);
    if (k.size() >= 2 && k.front() == '"' && k.back() == '"') return std::string(k.substr(1, k.size() - 2));
    if (k.empty()) bad(line, "empty key");
    for (char c : k)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) bad(line, "invalid key '" + std::string(k) + "'");
    return std::string(k);
}

} // namespace detail

/// Parses the TOML subset into a JSON object tree.
inline json parse_toml(std::string_view text) {
    json root = json::object();
    json* table = &root;
    std::istringstream in{std::string(text)};
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const auto s = detail::trim(detail::strip_comment(raw));
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']' || s.size() < 3) detail::bad(line, "malformed table header");
            table = &root;
            std::string_view path = s.substr(1, s.size() - 2);
            while (true) {
                const auto dot = path.find('.');
                const std::string key = detail::parse_key(path.substr(0, dot), line);
                json& next = (*table)[key];
                if (next.is_null()) next = json::object();
                if (!next.is_object()) detail::bad(line, "'" + key + "' is not a table");
                table = &next;
                if (dot == std::string_view::npos) break;
                path = path.substr(dot + 1);
            }
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string_view::npos) detail::bad(line, "expected key = value");
        const std::string key = detail::parse_key(s.substr(0, eq), line);
        if (table->contains(key)) detail::bad(line, "duplicate key '" + key + "'");
        (*table)[key] = detail::parse_value(s.substr(eq + 1), line);
    }
    return root;
}

// ---------------------------------------------------------------------------
// ExperimentConfig <-> JSON. The JSON form is also what reports echo.

inline json to_json(const ExperimentConfig& c) {
    const auto& d = c.synthetic;
    const auto& t = c.train;
    json j;
    j["out"] = c.out_dir;
    j["features"] = c.features;
    j["diagnostics_every"] = c.diagnostics_every;
    j["checkpoint_every"] = c.checkpoint_every;
    j["seeds"] = c.seeds;
    j["depths"] = c.depths;
    j["data"] = {{"channels", d.channels},
                 {"height", d.height},
                 {"width", d.width},
                 {"latent_mean", d.latent_mean},
                 {"latent_std", d.latent_std},
                 {"warp_depth", d.warp_depth},
                 {"warp_scale", d.warp_scale},
                 {"patch_fraction", d.anomaly.patch_fraction},
                 {"patch_magnitude", d.anomaly.patch_magnitude},
                 {"patch_size", d.anomaly.patch_size},
                 {"n_train_normal", d.n_train_normal},
                 {"n_test_normal", d.n_test_normal},
                 {"n_test_anomalous", d.n_test_anomalous},
                 {"seed", d.seed}};
    j["flow"] = {{"depth", c.flow.depth}, {"hidden_width", c.flow.hidden}};
    j["train"] = {{"eta1", t.eta1},
                  {"eta2_max", t.eta2_max},
                  {"freezing_interval", t.freezing_interval},
                  {"epochs", t.epochs},
                  {"batch_size", t.batch_size},
                  {"clip_norm", t.clip_norm},
                  {"warmup_epochs", t.warmup_epochs},
                  {"altub", t.altub_enabled},
                  {"stereotype", t.stereotype_mode},
                  {"seed", t.seed},
                  {"eta1_decay_gamma", t.eta1_decay_gamma},
                  {"eta1_decay_every", t.eta1_decay_every}};
    if (c.eval_window) j["eval"] = {{"window_start", c.eval_window->start}, {"window_end", c.eval_window->end}};
    return j;
}

namespace detail {

/// Reads the known keys of one table and rejects anything else.
class TableReader {
public:
    TableReader(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) fail(ErrorKind::ConfigError, "'" + name_ + "' must be a table");
    }

    template <class T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        const json& v = j_.at(key);
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw std::invalid_argument("expected a boolean");
                out = v.get<bool>();
            } else if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) throw std::invalid_argument("expected a number");
                out = v.get<double>();
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw std::invalid_argument("expected a string");
                out = v.get<std::string>();
            } else if constexpr (std::is_unsigned_v<T>) {
                if (!v.is_number_unsigned()) throw std::invalid_argument("expected a non-negative integer");
                out = v.get<T>();
            } else {
                out = v.get<T>();
            }
        } catch (const std::exception& e) {
            fail(ErrorKind::ConfigError, name_ + "." + key + ": " + e.what());
        }
    }

    bool has(const char* key) const { return j_.contains(key); }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k) && !v.is_object()) fail(ErrorKind::ConfigError, "unknown key '" + name_ + "." + k + "'");
    }

private:
    const json& j_;
    std::string name_;
    std::set<std::string> seen_;
};

} // namespace detail

inline ExperimentConfig from_json(const json& j, ExperimentConfig c = {}) {
    if (!j.is_object()) fail(ErrorKind::ConfigError, "config root must be a table");
    static const std::set<std::string> tables{"data", "flow", "train", "eval"};
    for (const auto& [k, v] : j.items())
        if (v.is_object() && !tables.count(k)) fail(ErrorKind::ConfigError, "unknown table '" + k + "'");

    detail::TableReader top(j, "config");
    std::uint64_t seed = 0;
    const bool has_seed = top.has("seed");
    top.read("seed", seed);
    if (has_seed) c.synthetic.seed = c.train.seed = seed;
    top.read("out", c.out_dir);
    top.read("features", c.features);
    top.read("diagnostics_every", c.diagnostics_every);
    top.read("checkpoint_every", c.checkpoint_every);
    top.read("seeds", c.seeds);
    top.read("depths", c.depths);
    top.finish();

    if (j.contains("data")) {
        auto& d = c.synthetic;
        detail::TableReader r(j.at("data"), "data");
        r.read("channels", d.channels);
        r.read("height", d.height);
        r.read("width", d.width);
        r.read("latent_mean", d.latent_mean);
        r.read("latent_std", d.latent_std);
        r.read("warp_depth", d.warp_depth);
        r.read("warp_scale", d.warp_scale);
        r.read("patch_fraction", d.anomaly.patch_fraction);
        r.read("patch_magnitude", d.anomaly.patch_magnitude);
        r.read("patch_size", d.anomaly.patch_size);
        r.read("n_train_normal", d.n_train_normal);
        r.read("n_test_normal", d.n_test_normal);
        r.read("n_test_anomalous", d.n_test_anomalous);
        r.read("seed", d.seed);
        r.finish();
    }
    if (j.contains("flow")) {
        detail::TableReader r(j.at("flow"), "flow");
        r.read("depth", c.flow.depth);
        r.read("hidden_width", c.flow.hidden);
        r.finish();
    }
    if (j.contains("train")) {
        auto& t = c.train;
        detail::TableReader r(j.at("train"), "train");
        r.read("eta1", t.eta1);
        r.read("eta2_max", t.eta2_max);
        r.read("freezing_interval", t.freezing_interval);
        r.read("epochs", t.epochs);
        r.read("batch_size", t.batch_size);
        r.read("clip_norm", t.clip_norm);
        r.read("warmup_epochs", t.warmup_epochs);
        r.read("altub", t.altub_enabled);
        r.read("stereotype", t.stereotype_mode);
        r.read("seed", t.seed);
        r.read("eta1_decay_gamma", t.eta1_decay_gamma);
        r.read("eta1_decay_every", t.eta1_decay_every);
        r.finish();
    }
    if (j.contains("eval")) {
        detail::TableReader r(j.at("eval"), "eval");
        EpochWindow w = c.window();
        r.read("window_start", w.start);
        r.read("window_end", w.end);
        r.finish();
        c.eval_window = w;
    }
    return c;
}

/// Loads a `.toml` file, or a `.json` file such as a report's config echo.
inline ExperimentConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::ConfigError, "cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    if (path.extension() == ".json") {
        try {
            return from_json(json::parse(text));
        } catch (const json::exception& e) {
            fail(ErrorKind::ConfigError, path.string() + ": " + e.what());
        }
    }
    return from_json(parse_toml(text));
}

} // namespace altflow::config
