#include "acuity/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "acuity/util.hpp"

namespace acuity {

static std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

KeyedConfig KeyedConfig::parse_text(const std::string& text, const std::string& origin) {
    KeyedConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::string t = trim(line);
        if (t.empty()) continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got '" + t + "'");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        cfg.entries.emplace_back(std::move(key), std::move(value));
    }
    return cfg;
}

KeyedConfig KeyedConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str(), path);
}

bool KeyedConfig::has(const std::string& key) const {
    return std::any_of(entries.begin(), entries.end(),
                       [&](const auto& e) { return e.first == key; });
}

std::string KeyedConfig::get(const std::string& key, const std::string& fallback) const {
    for (const auto& e : entries)
        if (e.first == key) return e.second;
    return fallback;
}

std::string KeyedConfig::require(const std::string& key) const {
    for (const auto& e : entries)
        if (e.first == key) return e.second;
    throw ConfigError("missing required config key '" + key + "'");
}

double KeyedConfig::get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    try {
        return parse_double(get(key, ""), "config key '" + key + "'");
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
}

long long KeyedConfig::get_int(const std::string& key, long long fallback) const {
    if (!has(key)) return fallback;
    try {
        return parse_int(get(key, ""), "config key '" + key + "'");
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
}

bool KeyedConfig::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    std::string v = get(key, "");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<std::string> KeyedConfig::all(const std::string& key) const {
    std::vector<std::string> out;
    for (const auto& e : entries)
        if (e.first == key) out.push_back(e.second);
    return out;
}

void KeyedConfig::set(const std::string& key, const std::string& value) {
    for (auto& e : entries) {
        if (e.first == key) {
            e.second = value;
            return;
        }
    }
    entries.emplace_back(key, value);
}

void KeyedConfig::require_known(std::span<const char* const> allowed) const {
    for (const auto& e : entries) {
        bool known = std::any_of(allowed.begin(), allowed.end(),
                                 [&](const char* k) { return e.first == k; });
        if (!known) throw ConfigError("unknown config key '" + e.first + "'");
    }
}

std::string KeyedConfig::canonical_text() const {
    std::string out;
    for (const auto& e : entries) {
        out += e.first;
        out += '=';
        out += e.second;
        out += '\n';
    }
    return out;
}

uint64_t KeyedConfig::hash() const { return fnv1a64(canonical_text()); }

}  // namespace acuity
