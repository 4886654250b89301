#pragma once

#include <altflow/base.hpp>
#include <altflow/flow.hpp>
#include <altflow/numerics.hpp>

#include <json.hpp>

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace altflow::io {

using json = nlohmann::json;

inline constexpr std::string_view kTensorMagic = "AFTENSR1";
inline constexpr std::string_view kCheckpointMagic = "AFCKPT01";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(std::string_view in) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[i])) << (8 * i);
    return v;
}

inline void put_f64(std::string& out, std::span<const double> xs) {
    for (double x : xs) put_u64(out, std::bit_cast<std::uint64_t>(x));
}

inline std::vector<double> get_f64(std::string_view in, std::size_t count) {
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = std::bit_cast<double>(get_u64(in.substr(8 * i, 8)));
    return out;
}

/// magic | u64 LE header length | JSON header | payload
inline std::string frame(std::string_view magic, const json& header, std::span<const double> payload) {
    const std::string h = header.dump();
    std::string out(magic);
    put_u64(out, h.size());
    out += h;
    put_f64(out, payload);
    return out;
}

struct Frame {
    json header;
    std::string_view payload;
};

inline Frame unframe(std::string_view bytes, std::string_view magic, const std::string& what) {
    if (bytes.size() < magic.size() + 8 || bytes.substr(0, magic.size()) != magic)
        fail(ErrorKind::FormatError, what + ": bad magic");
    const std::uint64_t hlen = get_u64(bytes.substr(magic.size(), 8));
    const std::size_t body = magic.size() + 8;
    if (hlen > bytes.size() - body) fail(ErrorKind::FormatError, what + ": truncated header");
    Frame f;
    try {
        f.header = json::parse(bytes.substr(body, hlen));
    } catch (const json::exception& e) {
        fail(ErrorKind::FormatError, what + ": header is not valid JSON (" + e.what() + ")");
    }
    f.payload = bytes.substr(body + hlen);
    return f;
}

} // namespace detail

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::IoError, "short write to " + path.string());
}

// ---------------------------------------------------------------------------
// Tensor container

inline std::string encode_tensor(const Tensor4& t) {
    const Shape4& s = t.shape();
    json header = {{"dtype", "f64"}, {"shape", {s.b, s.c, s.h, s.w}}, {"endianness", "little"}};
    return detail::frame(kTensorMagic, header, t.data());
}

inline Tensor4 decode_tensor(std::string_view bytes, const std::string& what = "tensor") {
    const auto f = detail::unframe(bytes, kTensorMagic, what);
    const json& h = f.header;
    if (!h.is_object() || h.value("dtype", "") != "f64" || h.value("endianness", "") != "little")
        fail(ErrorKind::FormatError, what + ": header must declare dtype f64, little endian");
    if (!h.contains("shape") || !h["shape"].is_array() || h["shape"].size() != 4)
        fail(ErrorKind::FormatError, what + ": shape must have four entries");
    std::array<std::size_t, 4> dims{};
    for (std::size_t i = 0; i < 4; ++i) {
        if (!h["shape"][i].is_number_unsigned()) fail(ErrorKind::FormatError, what + ": shape entries must be unsigned");
        dims[i] = h["shape"][i].get<std::size_t>();
    }
    const Shape4 s{dims[0], dims[1], dims[2], dims[3]};
    if (f.payload.size() != 8 * s.size())
        fail(ErrorKind::FormatError, what + ": header declares " + std::to_string(s.size()) + " values but payload holds " +
                                         std::to_string(f.payload.size()) + " bytes");
    return Tensor4(s, detail::get_f64(f.payload, s.size()));
}

inline void save_tensor(const std::filesystem::path& path, const Tensor4& t) { write_file(path, encode_tensor(t)); }

inline Tensor4 load_tensor(const std::filesystem::path& path) { return decode_tensor(read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// Checkpoint: flow parameters, then mu, then log_sigma.

struct Checkpoint {
    FlowModel flow;
    BaseDistribution base;

    bool operator==(const Checkpoint&) const = default;
};

inline std::string encode_checkpoint(const FlowModel& flow, const BaseDistribution& base) {
    const Shape4 bs = base.sample_shape();
    if (bs.c != flow.channels()) fail(ErrorKind::ShapeMismatch, "checkpoint: base and flow channel counts differ");
    json header = {{"version", kCheckpointVersion},
                   {"C", flow.channels()},
                   {"depth", flow.depth()},
                   {"hidden_width", flow.hidden()},
                   {"parameter_count", flow.parameter_count()},
                   {"seed", flow.seed()},
                   {"H", bs.h},
                   {"W", bs.w},
                   {"base_parameter_count", 2 * base.dims()}};
    std::vector<double> blob(flow.parameters().begin(), flow.parameters().end());
    blob.insert(blob.end(), base.mu().data().begin(), base.mu().data().end());
    blob.insert(blob.end(), base.log_sigma().data().begin(), base.log_sigma().data().end());
    return detail::frame(kCheckpointMagic, header, blob);
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& what = "checkpoint") {
    const auto f = detail::unframe(bytes, kCheckpointMagic, what);
    const json& h = f.header;
    std::size_t c = 0, depth = 0, hidden = 0, count = 0, hh = 0, ww = 0, base_count = 0;
    std::uint64_t seed = 0;
    try {
        if (h.at("version").get<int>() != kCheckpointVersion) fail(ErrorKind::FormatError, what + ": unsupported version");
        c = h.at("C").get<std::size_t>();
        depth = h.at("depth").get<std::size_t>();
        hidden = h.at("hidden_width").get<std::size_t>();
        count = h.at("parameter_count").get<std::size_t>();
        seed = h.at("seed").get<std::uint64_t>();
        hh = h.at("H").get<std::size_t>();
        ww = h.at("W").get<std::size_t>();
        base_count = h.at("base_parameter_count").get<std::size_t>();
    } catch (const json::exception& e) {
        fail(ErrorKind::FormatError, what + ": incomplete header (" + e.what() + ")");
    }
    if (c == 0 || hh == 0 || ww == 0 || hidden == 0) fail(ErrorKind::FormatError, what + ": zero dimension in header");
    FlowModel flow(c, depth, hidden, seed);
    if (flow.parameter_count() != count)
        fail(ErrorKind::FormatError, what + ": parameter_count disagrees with the architecture");
    const std::size_t d = c * hh * ww;
    if (base_count != 2 * d) fail(ErrorKind::FormatError, what + ": base_parameter_count disagrees with C*H*W");
    if (f.payload.size() != 8 * (count + base_count)) fail(ErrorKind::FormatError, what + ": payload length mismatch");
    const std::vector<double> blob = detail::get_f64(f.payload, count + base_count);
    flow.set_parameters(std::span<const double>(blob).first(count));
    const Shape4 bs{1, c, hh, ww};
    Tensor4 mu(bs, std::vector<double>(blob.begin() + static_cast<std::ptrdiff_t>(count),
                                       blob.begin() + static_cast<std::ptrdiff_t>(count + d)));
    Tensor4 ls(bs, std::vector<double>(blob.begin() + static_cast<std::ptrdiff_t>(count + d), blob.end()));
    return Checkpoint{std::move(flow), BaseDistribution(std::move(mu), std::move(ls))};
}

inline void save_checkpoint(const std::filesystem::path& path, const FlowModel& flow, const BaseDistribution& base) {
    write_file(path, encode_checkpoint(flow, base));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// CSV helpers

/// Shortest round-trip decimal form; empty for NaN.
inline std::string format_real(double v) {
    if (std::isnan(v)) return "";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string encode_labels_csv(const std::vector<int>& labels) {
    std::string out = "sample_id,label\n";
    for (std::size_t i = 0; i < labels.size(); ++i) out += std::to_string(i) + "," + std::to_string(labels[i]) + "\n";
    return out;
}

inline std::vector<int> decode_labels_csv(std::string_view text, const std::string& what = "labels") {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || line.rfind("sample_id,label", 0) != 0)
        fail(ErrorKind::FormatError, what + ": missing 'sample_id,label' header");
    std::vector<int> labels;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) fail(ErrorKind::FormatError, what + ": malformed row '" + line + "'");
        std::size_t id = 0;
        int label = -1;
        try {
            id = std::stoul(line.substr(0, comma));
            label = std::stoi(line.substr(comma + 1));
        } catch (const std::exception&) {
            fail(ErrorKind::FormatError, what + ": malformed row '" + line + "'");
        }
        if (id != labels.size()) fail(ErrorKind::FormatError, what + ": sample ids must be 0..n-1 in order");
        if (label != 0 && label != 1) fail(ErrorKind::FormatError, what + ": labels must be 0 or 1");
        labels.push_back(label);
    }
    return labels;
}

inline std::string encode_scores_csv(const std::vector<double>& scores, const std::vector<int>& labels) {
    std::string out = "sample_id,score,label\n";
    for (std::size_t i = 0; i < scores.size(); ++i)
        out += std::to_string(i) + "," + format_real(scores[i]) + "," + (i < labels.size() ? std::to_string(labels[i]) : "") +
               "\n";
    return out;
}

} // namespace altflow::io
