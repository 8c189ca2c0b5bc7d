#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace mlmt::cli {

/// Bad configuration. The message starts with the offending key.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& key, const std::string& message);
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

/// Flat `dotted.key = value` settings. Later assignments win. Every typed
/// read records the value actually used (the default when unset), so
/// resolved_text() is a complete config that reproduces the run.
class Config {
public:
    static Config parse(const std::string& text, const std::string& origin = "<string>");
    static Config load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value);
    /// "key=value"
    void apply_override(const std::string& assignment);
    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback);
    std::optional<std::string> get_optional(const std::string& key);
    long long get_int(const std::string& key, long long fallback);
    std::uint64_t get_uint(const std::string& key, std::uint64_t fallback);
    double get_double(const std::string& key, double fallback);
    bool get_bool(const std::string& key, bool fallback);
    std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback);
    std::vector<long long> get_int_list(const std::string& key, const std::vector<long long>& fallback);
    std::vector<double> get_double_list(const std::string& key, const std::vector<double>& fallback);

    /// Throws ConfigError naming the first key that was set but never read.
    void check_unused() const;

    /// Sorted `key = value` lines of every value read.
    std::string resolved_text() const;

private:
    std::string note(const std::string& key, const std::string& value);

    std::map<std::string, std::string> values_;
    std::map<std::string, std::string> resolved_;
    std::set<std::string> read_;
};

std::string join(const std::vector<std::string>& parts, const std::string& sep = ",");

}  // namespace mlmt::cli
