#include "imprint/config.hpp"

#include "imprint/error.hpp"
#include "imprint/util.hpp"

#include <charconv>
#include <cstdlib>
#include <set>

namespace imprint {

namespace {

std::string unquote(const std::string& v) {
    if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') || (v.front() == '\'' && v.back() == '\'')))
        return v.substr(1, v.size() - 2);
    return v;
}

/// Drops a trailing "# comment" that is outside quotes.
std::string strip_comment(std::string_view line) {
    char quote = 0;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quote) {
            if (c == quote) quote = 0;
        } else if (c == '"' || c == '\'') {
            quote = c;
        } else if (c == '#') {
            return std::string(line.substr(0, i));
        }
    }
    return std::string(line);
}

} // namespace

std::string expand_env(const std::string& raw) {
    std::string out;
    std::size_t pos = 0;
    while (true) {
        const auto open = raw.find("${", pos);
        if (open == std::string::npos) {
            out.append(raw, pos, std::string::npos);
            return out;
        }
        const auto close = raw.find('}', open + 2);
        if (close == std::string::npos) throw ConfigError("unterminated ${ in '" + raw + "'");
        out.append(raw, pos, open - pos);
        const auto name = raw.substr(open + 2, close - open - 2);
        const char* v = std::getenv(name.c_str());
        if (!v) throw ConfigError("environment variable " + name + " is not set");
        out += v;
        pos = close + 1;
    }
}

Config Config::parse(std::string_view text, const std::string& origin) {
    Config cfg;
    std::string section;
    std::size_t line_no = 0;
    for (const auto& raw_line : split(text, '\n')) {
        ++line_no;
        const auto line = trim(strip_comment(raw_line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(origin + ":" + std::to_string(line_no) + ": malformed section header");
            section = trim(std::string_view(line).substr(1, line.size() - 2));
            if (section.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty section name");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
        const auto key = trim(std::string_view(line).substr(0, eq));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
        const auto full = section.empty() ? key : section + "." + key;
        cfg.values_[full] = trim(std::string_view(line).substr(eq + 1));
    }
    return cfg;
}

Config Config::load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
    return parse(read_file(path), path.string());
}

std::optional<std::string> Config::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return expand_env(unquote(it->second));
}

std::string Config::get_or(const std::string& key, const std::string& fallback) const { return get(key).value_or(fallback); }

double Config::get_double(const std::string& key, double fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    try {
        std::size_t used = 0;
        const double d = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument(*v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + *v + "'");
    }
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    std::int64_t out = 0;
    const auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || p != v->data() + v->size()) throw ConfigError(key + ": expected an integer, got '" + *v + "'");
    return out;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || p != v->data() + v->size())
        throw ConfigError(key + ": expected a non-negative integer, got '" + *v + "'");
    return out;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    const auto l = to_lower(*v);
    if (l == "true" || l == "1" || l == "yes" || l == "on") return true;
    if (l == "false" || l == "0" || l == "no" || l == "off") return false;
    throw ConfigError(key + ": expected true or false, got '" + *v + "'");
}

std::vector<std::string> Config::get_list(const std::string& key, std::vector<std::string> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    auto v = trim(it->second);
    if (!v.empty() && v.front() == '[') {
        if (v.back() != ']') throw ConfigError(key + ": unterminated list");
        v = v.substr(1, v.size() - 2);
    }
    std::vector<std::string> out;
    for (const auto& part : split(v, ',')) {
        const auto item = trim(part);
        if (!item.empty()) out.push_back(expand_env(unquote(item)));
    }
    return out;
}

void Config::set(const std::string& key, const std::string& raw) { values_[key] = raw; }

std::vector<std::string> Config::keys_in(const std::string& section) const {
    std::vector<std::string> out;
    const auto prefix = section + ".";
    for (const auto& [k, _] : values_)
        if (k.rfind(prefix, 0) == 0 && k.find('.', prefix.size()) == std::string::npos) out.push_back(k.substr(prefix.size()));
    return out;
}

std::vector<std::string> Config::sections_with_prefix(const std::string& prefix) const {
    std::set<std::string> out;
    for (const auto& [k, _] : values_) {
        if (k.rfind(prefix, 0) != 0) continue;
        const auto dot = k.rfind('.');
        if (dot != std::string::npos && dot >= prefix.size()) out.insert(k.substr(0, dot));
    }
    return {out.begin(), out.end()};
}

std::string Config::canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

} // namespace imprint
