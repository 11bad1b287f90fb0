#include "dcolor/checkpoint.hpp"

#include "binary_io.hpp"
#include "dcolor/error.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace dcolor {

namespace {
constexpr std::string_view kMagic = "DCOLCKPT";
}

namespace detail {

std::string readFile(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PrerequisiteError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void writeFile(const std::string& path, const std::string& data) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error("write failed for '" + path + "'");
}

} // namespace detail

std::string encodeCheckpoint(const Checkpoint& ckpt) {
    detail::ByteWriter w;
    w.bytes(kMagic);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.bytes(name);
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (auto dim : t.shape()) w.u64(dim);
        for (double v : t.values()) w.f64(v);
    }
    w.u32(static_cast<std::uint32_t>(ckpt.metadata.size()));
    w.bytes(ckpt.metadata);
    return w.data();
}

Checkpoint decodeCheckpoint(std::string bytes, const std::string& source) {
    detail::ByteReader r(std::move(bytes), source);
    if (r.bytes(kMagic.size(), "magic") != kMagic) r.fail("bad checkpoint magic", 0);
    const std::size_t versionAt = r.offset();
    const auto version = r.u32("version");
    if (version != kCheckpointVersion) {
        r.fail("unsupported checkpoint version " + std::to_string(version), versionAt);
    }
    Checkpoint ckpt;
    const auto count = r.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto nameLen = r.u32("name length");
        std::string name = r.bytes(nameLen, "tensor name");
        const std::size_t rankAt = r.offset();
        const auto rank = r.u32("rank");
        if (rank == 0 || rank > 8) r.fail("invalid tensor rank " + std::to_string(rank), rankAt);
        Shape shape(rank);
        for (auto& dim : shape) {
            const std::size_t dimAt = r.offset();
            dim = r.u64("dimension");
            if (dim == 0) r.fail("zero tensor dimension", dimAt);
        }
        const std::size_t n = shapeSize(shape);
        if (n > r.remaining() / 8) r.fail("truncated file while reading tensor '" + name + "' data");
        std::vector<double> values(n);
        for (auto& v : values) v = r.f64("tensor data");
        if (!ckpt.tensors.emplace(name, Tensor(std::move(shape), std::move(values))).second) {
            r.fail("duplicate tensor name '" + name + "'");
        }
    }
    const auto metaLen = r.u32("metadata length");
    ckpt.metadata = r.bytes(metaLen, "metadata");
    if (!r.atEnd()) r.fail("trailing bytes after checkpoint payload");
    return ckpt;
}

void saveCheckpoint(const Checkpoint& ckpt, const std::string& path) {
    detail::writeFile(path, encodeCheckpoint(ckpt));
}

Checkpoint loadCheckpoint(const std::string& path) {
    return decodeCheckpoint(detail::readFile(path), path);
}

} // namespace dcolor
