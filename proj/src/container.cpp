#include "tsimpute/container.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace tsimpute {

namespace {

const std::array<std::uint32_t, 256>& crc_table() {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = c & 1 ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    return table;
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& buf, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
    return v;
}

std::uint64_t get_u64(const std::string& buf, std::size_t off) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
    return v;
}

}  // namespace

std::uint32_t crc32(const unsigned char* data, std::size_t n, std::uint32_t seed) {
    std::uint32_t c = seed ^ 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i) c = crc_table()[(c ^ data[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

void write_container(const std::string& path, const std::string& magic, const nlohmann::json& meta,
                     const std::vector<Blob>& blobs) {
    if (magic.size() != 4) throw CheckpointError("container: magic must be 4 bytes");

    nlohmann::json header;
    header["format_version"] = kContainerVersion;
    header["meta"] = meta;
    auto manifest = nlohmann::json::array();
    std::uint64_t offset = 0;  // in doubles, from payload start
    for (const Blob& b : blobs) {
        if (numel(b.shape) != b.data.size()) {
            throw CheckpointError("container: blob '" + b.name + "' shape/data mismatch");
        }
        manifest.push_back({{"name", b.name}, {"shape", b.shape}, {"offset", offset}});
        offset += b.data.size();
    }
    header["manifest"] = manifest;
    const std::string hjson = header.dump();

    std::string buf;
    buf += magic;
    put_u32(buf, kContainerVersion);
    put_u64(buf, hjson.size());
    buf += hjson;
    for (const Blob& b : blobs) {
        const std::size_t pos = buf.size();
        buf.resize(pos + b.data.size() * sizeof(double));
        std::memcpy(buf.data() + pos, b.data.data(), b.data.size() * sizeof(double));
    }
    put_u32(buf, crc32(reinterpret_cast<const unsigned char*>(buf.data()), buf.size()));

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("container: cannot open for writing: " + path);
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os) throw CheckpointError("container: write failed: " + path);
}

const Blob& Container::get(const std::string& name) const {
    auto it = blobs.find(name);
    if (it == blobs.end()) throw CheckpointError("container: missing blob '" + name + "'");
    return it->second;
}

Container read_container(const std::string& path, const std::string& magic) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("container: cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (buf.size() < 20) throw CheckpointError("container: file truncated: " + path);

    const std::uint32_t stored_crc = get_u32(buf, buf.size() - 4);
    const std::uint32_t computed =
        crc32(reinterpret_cast<const unsigned char*>(buf.data()), buf.size() - 4);
    if (stored_crc != computed) throw CheckpointError("container: checksum mismatch: " + path);

    if (buf.compare(0, 4, magic) != 0) {
        throw CheckpointError("container: wrong magic in " + path + " (expected " + magic + ")");
    }
    const std::uint32_t version = get_u32(buf, 4);
    if (version != kContainerVersion) {
        throw CheckpointError("container: unsupported format version " + std::to_string(version));
    }
    const std::uint64_t hlen = get_u64(buf, 8);
    if (16 + hlen + 4 > buf.size()) throw CheckpointError("container: header overruns file");
    nlohmann::json header = nlohmann::json::parse(buf.substr(16, hlen));

    Container c;
    c.meta = header.at("meta");
    const std::size_t payload_start = 16 + hlen;
    const std::size_t payload_doubles = (buf.size() - 4 - payload_start) / sizeof(double);
    for (const auto& entry : header.at("manifest")) {
        Blob b;
        b.name = entry.at("name").get<std::string>();
        b.shape = entry.at("shape").get<Shape>();
        const std::uint64_t off = entry.at("offset").get<std::uint64_t>();
        const std::size_t n = numel(b.shape);
        if (off + n > payload_doubles) {
            throw CheckpointError("container: blob '" + b.name + "' overruns payload");
        }
        b.data.resize(n);
        std::memcpy(b.data.data(), buf.data() + payload_start + off * sizeof(double),
                    n * sizeof(double));
        c.blobs.emplace(b.name, std::move(b));
    }
    return c;
}

}  // namespace tsimpute
