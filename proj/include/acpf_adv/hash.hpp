#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace acpf_adv {

/// 64-bit FNV-1a, hex encoded. Used for provenance fingerprints only.
inline std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Fingerprint of a JSON value; object keys are sorted by nlohmann::json.
inline std::string json_hash(const nlohmann::json& j) { return fnv1a_hex(j.dump()); }

}  // namespace acpf_adv
