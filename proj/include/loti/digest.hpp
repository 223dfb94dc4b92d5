#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>

namespace loti {

// FNV-1a, used for provenance fields in manifests and reports.
inline std::string fnv64_hex(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (std::uint8_t b : bytes) h = (h ^ b) * 1099511628211ull;
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string fnv64_hex(const std::string& s) {
    return fnv64_hex(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

}  // namespace loti
