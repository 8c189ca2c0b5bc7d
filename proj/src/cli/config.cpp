#include "mlmt/cli/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "mlmt/core/image_io.hpp"

namespace mlmt::cli {

ConfigError::ConfigError(const std::string& key, const std::string& message)
    : std::runtime_error(key + ": " + message), key_(key)
{
}

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

void check_key(const std::string& key, const std::string& where)
{
    const bool ok = !key.empty() && key.front() != '.' && key.back() != '.' &&
                    std::all_of(key.begin(), key.end(), [](unsigned char c) {
                        return std::islower(c) || std::isdigit(c) || c == '_' || c == '.';
                    });
    if (!ok) throw ConfigError(key.empty() ? "<empty>" : key, "invalid key" + (where.empty() ? "" : " at " + where));
}

std::vector<std::string> split_list(const std::string& v)
{
    std::vector<std::string> out;
    if (trim(v).empty()) return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& text, const char* what)
{
    T out{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, out);
    if (ec != std::errc() || ptr != end || text.empty()) throw ConfigError(key, "expected " + std::string(what) + ", got '" + text + "'");
    return out;
}

double parse_real(const std::string& key, const std::string& text)
{
    std::size_t used = 0;
    double out = 0;
    try {
        out = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size()) throw ConfigError(key, "expected a number, got '" + text + "'");
    return out;
}

}  // namespace

std::string join(const std::vector<std::string>& parts, const std::string& sep)
{
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
    return out;
}

Config Config::parse(const std::string& text, const std::string& origin)
{
    Config cfg;
    std::stringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const auto where = origin + ":" + std::to_string(lineno);
        if (eq == std::string::npos) throw ConfigError(line, "expected 'key = value' at " + where);
        const auto key = trim(line.substr(0, eq));
        check_key(key, where);
        cfg.values_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

Config Config::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot read '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

void Config::set(const std::string& key, const std::string& value)
{
    check_key(key, {});
    values_[key] = value;
}

void Config::apply_override(const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError(assignment, "override must look like key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string Config::note(const std::string& key, const std::string& value)
{
    read_.insert(key);
    resolved_[key] = value;
    return value;
}

std::optional<std::string> Config::get_optional(const std::string& key)
{
    read_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end() || it->second.empty()) return std::nullopt;
    return note(key, it->second);
}

std::string Config::get_string(const std::string& key, const std::string& fallback)
{
    auto it = values_.find(key);
    return note(key, it == values_.end() ? fallback : it->second);
}

long long Config::get_int(const std::string& key, long long fallback)
{
    auto it = values_.find(key);
    const auto v = it == values_.end() ? fallback : parse_number<long long>(key, it->second, "an integer");
    note(key, std::to_string(v));
    return v;
}

std::uint64_t Config::get_uint(const std::string& key, std::uint64_t fallback)
{
    auto it = values_.find(key);
    const auto v = it == values_.end() ? fallback : parse_number<std::uint64_t>(key, it->second, "an unsigned integer");
    note(key, std::to_string(v));
    return v;
}

double Config::get_double(const std::string& key, double fallback)
{
    auto it = values_.find(key);
    const auto v = it == values_.end() ? fallback : parse_real(key, it->second);
    note(key, core::format_real(v));
    return v;
}

bool Config::get_bool(const std::string& key, bool fallback)
{
    auto it = values_.find(key);
    bool v = fallback;
    if (it != values_.end()) {
        const auto& s = it->second;
        if (s == "true" || s == "1" || s == "yes" || s == "on") v = true;
        else if (s == "false" || s == "0" || s == "no" || s == "off") v = false;
        else throw ConfigError(key, "expected true or false, got '" + s + "'");
    }
    note(key, v ? "true" : "false");
    return v;
}

std::vector<std::string> Config::get_list(const std::string& key, const std::vector<std::string>& fallback)
{
    auto it = values_.find(key);
    const auto v = it == values_.end() ? fallback : split_list(it->second);
    note(key, join(v));
    return v;
}

std::vector<long long> Config::get_int_list(const std::string& key, const std::vector<long long>& fallback)
{
    auto it = values_.find(key);
    std::vector<long long> v = fallback;
    if (it != values_.end()) {
        v.clear();
        for (const auto& s : split_list(it->second)) v.push_back(parse_number<long long>(key, s, "an integer"));
    }
    std::vector<std::string> text;
    for (auto x : v) text.push_back(std::to_string(x));
    note(key, join(text));
    return v;
}

std::vector<double> Config::get_double_list(const std::string& key, const std::vector<double>& fallback)
{
    auto it = values_.find(key);
    std::vector<double> v = fallback;
    if (it != values_.end()) {
        v.clear();
        for (const auto& s : split_list(it->second)) v.push_back(parse_real(key, s));
    }
    std::vector<std::string> text;
    for (auto x : v) text.push_back(core::format_real(x));
    note(key, join(text));
    return v;
}

void Config::check_unused() const
{
    for (const auto& [key, value] : values_)
        if (!read_.count(key)) throw ConfigError(key, "unknown key for this command");
}

std::string Config::resolved_text() const
{
    std::string out;
    for (const auto& [key, value] : resolved_) out += key + " = " + value + "\n";
    return out;
}

}  // namespace mlmt::cli
