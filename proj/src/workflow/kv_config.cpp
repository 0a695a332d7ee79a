#include "workflow/kv_config.hpp"

#include <charconv>
#include <sstream>

#include "common/binio.hpp"
#include "common/error.hpp"

namespace rawdiff {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const auto* end = text.data() + text.size();
    const auto [p, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || p != end)
        throw UsageError("setting '" + key + "': cannot parse '" + text + "' as a number");
    return v;
}

} // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& context) {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos)
            line.resize(hash);
        line = trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError(context + ":" + std::to_string(lineno) + ": expected 'key = value'");
        const auto key = trim(line.substr(0, eq));
        if (key.empty())
            throw UsageError(context + ":" + std::to_string(lineno) + ": empty key");
        cfg.set(key, trim(line.substr(eq + 1)));
    }
    return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
    const auto bytes = binio::read_file(path);
    return parse(std::string(bytes.begin(), bytes.end()), path);
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
    values_[key] = value;
}

void KeyValueConfig::merge(const KeyValueConfig& other) {
    for (const auto& [k, v] : other.values_)
        values_[k] = v;
}

std::string KeyValueConfig::str(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

std::string KeyValueConfig::required(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end() || it->second.empty())
        throw UsageError("missing required setting '" + key + "'");
    return it->second;
}

long KeyValueConfig::integer(const std::string& key, long fallback) const {
    return has(key) ? parse_number<long>(key, values_.at(key)) : fallback;
}

std::uint64_t KeyValueConfig::u64(const std::string& key, std::uint64_t fallback) const {
    return has(key) ? parse_number<std::uint64_t>(key, values_.at(key)) : fallback;
}

double KeyValueConfig::real(const std::string& key, double fallback) const {
    return has(key) ? parse_number<double>(key, values_.at(key)) : fallback;
}

bool KeyValueConfig::boolean(const std::string& key, bool fallback) const {
    if (!has(key))
        return fallback;
    const auto& v = values_.at(key);
    if (v == "1" || v == "true" || v == "yes" || v == "on")
        return true;
    if (v == "0" || v == "false" || v == "no" || v == "off")
        return false;
    throw UsageError("setting '" + key + "': expected a boolean, got '" + v + "'");
}

void KeyValueConfig::require_known(const std::set<std::string>& known, const std::string& context) const {
    for (const auto& [k, v] : values_)
        if (!known.count(k))
            throw UsageError(context + ": unknown setting '" + k + "'");
}

std::string KeyValueConfig::dump() const {
    std::string out;
    for (const auto& [k, v] : values_)
        out += k + " = " + v + "\n";
    return out;
}

} // namespace rawdiff
