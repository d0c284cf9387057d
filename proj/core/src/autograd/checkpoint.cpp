#include "caries/autograd/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "caries/error.hpp"

namespace caries::ag {

namespace {

constexpr std::size_t kAlign = 8;

void put_le_double(std::string& out, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

double get_le_double(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

}  // namespace

nlohmann::json adamw_hparams(const AdamWConfig& c) {
    return {{"name", "adamw"},           {"lr", c.lr},   {"beta1", c.beta1}, {"beta2", c.beta2},
            {"eps", c.eps}, {"weight_decay", c.weight_decay}};
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
    nlohmann::json header;
    header["format"] = "caries-ckpt";
    header["version"] = kCheckpointFormatVersion;
    header["payload_offset"] = 0;
    auto params = nlohmann::json::array();
    for (const auto& p : ckpt.params) params.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
    header["params"] = params;
    header["optimizer"] = ckpt.optimizer;
    header["meta"] = ckpt.meta;

    // The offset is part of the header, so iterate until its own digits settle.
    std::string text;
    std::size_t offset = 0;
    for (;;) {
        header["payload_offset"] = offset;
        text = header.dump();
        std::size_t needed = (text.size() + 1 + kAlign - 1) / kAlign * kAlign;
        if (needed == offset) break;
        offset = needed;
    }
    std::string out = text;
    out.append(offset - text.size() - 1, ' ');
    out.push_back('\n');
    for (const auto& p : ckpt.params)
        for (double v : p.tensor.data()) put_le_double(out, v);
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    const auto nl = bytes.find('\n');
    if (nl == std::string::npos) throw FormatError("checkpoint: missing header terminator");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(0, nl));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("checkpoint: bad header JSON: ") + e.what());
    }
    if (header.value("format", "") != "caries-ckpt") throw FormatError("checkpoint: unknown format tag");
    if (header.value("version", -1) != kCheckpointFormatVersion) {
        throw FormatError("checkpoint: unsupported version " + header.value("version", nlohmann::json()).dump());
    }
    const std::size_t offset = header.at("payload_offset").get<std::size_t>();
    Checkpoint ckpt;
    ckpt.optimizer = header.value("optimizer", nlohmann::json::object());
    ckpt.meta = header.value("meta", nlohmann::json::object());
    std::size_t pos = offset;
    const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
    for (const auto& entry : header.at("params")) {
        Shape shape = entry.at("shape").get<Shape>();
        const std::size_t n = numel_of(shape);
        if (pos + n * 8 > bytes.size()) throw FormatError("checkpoint: payload truncated");
        std::vector<double> values(n);
        for (std::size_t i = 0; i < n; ++i) values[i] = get_le_double(raw + pos + 8 * i);
        pos += n * 8;
        ckpt.params.push_back({entry.at("name").get<std::string>(), Tensor::from(std::move(shape), std::move(values))});
    }
    if (pos != bytes.size()) throw FormatError("checkpoint: trailing bytes after payload");
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write checkpoint " + path.string());
    const std::string bytes = encode_checkpoint(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_checkpoint(ss.str());
}

void restore_parameters(ParameterStore& store, const Checkpoint& ckpt, bool allow_missing) {
    for (auto& p : store.items()) {
        const Parameter* src = nullptr;
        for (const auto& q : ckpt.params)
            if (q.name == p.name) src = &q;
        if (!src) {
            if (allow_missing) continue;
            throw FormatError("checkpoint lacks parameter '" + p.name + "'");
        }
        if (src->tensor.shape() != p.tensor.shape()) {
            throw ShapeError("checkpoint parameter '" + p.name + "' has shape " + shape_str(src->tensor.shape()) +
                             ", model expects " + shape_str(p.tensor.shape()));
        }
        auto dst = p.tensor.mutable_data();
        std::copy(src->tensor.data().begin(), src->tensor.data().end(), dst.begin());
    }
}

}  // namespace caries::ag
