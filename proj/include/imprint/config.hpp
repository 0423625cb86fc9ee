#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace imprint {

/// Key-value configuration with [section] headers, '#' comments, quoted or
/// bare values and [a, b] lists. Keys are addressed as "section.key".
/// Values keep their raw text; ${NAME} references to environment variables
/// are expanded only when a value is read, so secrets never reach manifests
/// or hashes.
class Config {
public:
    static Config parse(std::string_view text, const std::string& origin = "<config>");
    static Config load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    std::optional<std::string> get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    /// "[a, b]" or "a,b" → {"a", "b"}.
    std::vector<std::string> get_list(const std::string& key, std::vector<std::string> fallback = {}) const;

    /// Sets the raw value (used for command-line overrides).
    void set(const std::string& key, const std::string& raw);
    /// Keys directly below `section` (without the prefix), sorted.
    std::vector<std::string> keys_in(const std::string& section) const;
    /// Distinct section names that start with `prefix` (e.g. "provider." → "provider.x").
    std::vector<std::string> sections_with_prefix(const std::string& prefix) const;
    const std::map<std::string, std::string>& raw() const { return values_; }

    /// Sorted "key = raw" lines; stable input for hashing.
    std::string canonical() const;

private:
    std::map<std::string, std::string> values_;
};

/// Expands ${NAME}; an unset variable is a ConfigError naming it.
std::string expand_env(const std::string& raw);

} // namespace imprint
