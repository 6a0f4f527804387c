#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace acuity {

// Keyed human-readable config: one "key = value" per line, '#' comments.
// Keys may repeat (used for per-variable declarations); order is preserved.
struct KeyedConfig {
    std::vector<std::pair<std::string, std::string>> entries;

    static KeyedConfig parse_file(const std::string& path);
    static KeyedConfig parse_text(const std::string& text, const std::string& origin);

    bool has(const std::string& key) const;
    std::string get(const std::string& key, const std::string& fallback) const;
    std::string require(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::string> all(const std::string& key) const;

    void set(const std::string& key, const std::string& value);  // replaces first match

    // throws ConfigError naming the first key not in the allowed list
    void require_known(std::span<const char* const> allowed) const;

    // stable text form used for config hashing
    std::string canonical_text() const;
    uint64_t hash() const;
};

}  // namespace acuity
