#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

namespace rawdiff {

/// Flat `key = value` settings. Blank lines and text after '#' are ignored.
/// Later assignments replace earlier ones, which is how command-line flags
/// override a config file.
class KeyValueConfig {
public:
    static KeyValueConfig parse(const std::string& text, const std::string& context = "config");
    static KeyValueConfig load(const std::string& path);

    void set(const std::string& key, const std::string& value);
    void merge(const KeyValueConfig& other);
    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string str(const std::string& key, const std::string& fallback) const;
    std::string required(const std::string& key) const;
    long integer(const std::string& key, long fallback) const;
    std::uint64_t u64(const std::string& key, std::uint64_t fallback) const;
    double real(const std::string& key, double fallback) const;
    bool boolean(const std::string& key, bool fallback) const;

    /// Throws UsageError naming the first key outside `known`.
    void require_known(const std::set<std::string>& known, const std::string& context) const;

    /// Sorted `key = value` lines; parse(dump()) reproduces the config.
    std::string dump() const;
    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

} // namespace rawdiff
