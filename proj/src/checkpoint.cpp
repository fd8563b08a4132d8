#include "fairspec/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include "fairspec/data.hpp"
#include "fairspec/error.hpp"

namespace fairspec {

namespace {

constexpr const char* kFormatName = "fairspec-checkpoint";

void append_le64(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
}

double read_le64(const std::uint8_t* p) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{p[b]} << (8 * b);
    return std::bit_cast<double>(bits);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Net& net, const nlohmann::json& provenance) {
    nlohmann::json header = {
        {"format", kFormatName},
        {"version", 1},
        {"dims", net.dims()},
        {"n", net.num_layers()},
        {"h", net.max_width()},
        {"d_y", net.output_dim()},
        {"seed", net.seed()},
    };
    if (!provenance.is_null()) header["provenance"] = provenance;
    const std::string text = header.dump();
    std::vector<std::uint8_t> out(text.begin(), text.end());
    out.push_back('\n');
    out.reserve(out.size() + 8 * net.parameter_count());
    for (const auto& w : net.layers())
        for (Eigen::Index i = 0; i < w.size(); ++i) append_le64(out, w.data()[i]);
    return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    const auto nl = std::find(bytes.begin(), bytes.end(), std::uint8_t{'\n'});
    if (nl == bytes.end()) throw FormatError("checkpoint: missing header terminator");
    Checkpoint ck;
    try {
        ck.header = nlohmann::json::parse(bytes.begin(), nl);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: bad header: ") + e.what());
    }
    if (ck.header.value("format", "") != kFormatName) throw FormatError("checkpoint: unknown format");
    const auto dims = ck.header.at("dims").get<std::vector<int>>();
    if (dims.size() < 2) throw FormatError("checkpoint: need at least two dims");

    const std::uint8_t* p = &*nl + 1;
    const std::uint8_t* end = bytes.data() + bytes.size();
    std::vector<MatrixXd> layers;
    for (std::size_t l = 1; l < dims.size(); ++l) {
        MatrixXd w(dims[l], dims[l - 1]);
        const auto need = static_cast<std::size_t>(w.size()) * 8;
        if (static_cast<std::size_t>(end - p) < need) throw TruncatedFile("checkpoint: weight block truncated");
        for (Eigen::Index i = 0; i < w.size(); ++i, p += 8) w.data()[i] = read_le64(p);
        layers.push_back(std::move(w));
    }
    if (p != end) throw FormatError("checkpoint: trailing bytes after weights");
    ck.net = Net(std::move(layers), ck.header.at("seed").get<std::uint64_t>());
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Net& net, const nlohmann::json& provenance) {
    write_file_bytes(path, encode_checkpoint(net, provenance));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace fairspec
