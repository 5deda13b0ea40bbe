#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsimpute/common.hpp"

// Versioned binary container: magic, format version, JSON header with a
// name -> shape/offset manifest, little-endian f64 payload, trailing CRC32.
namespace tsimpute {

struct Blob {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

inline constexpr std::uint32_t kContainerVersion = 1;

std::uint32_t crc32(const unsigned char* data, std::size_t n, std::uint32_t seed = 0);

void write_container(const std::string& path, const std::string& magic, const nlohmann::json& meta,
                     const std::vector<Blob>& blobs);

struct Container {
    nlohmann::json meta;
    std::map<std::string, Blob> blobs;

    const Blob& get(const std::string& name) const;
};

Container read_container(const std::string& path, const std::string& magic);

}  // namespace tsimpute
