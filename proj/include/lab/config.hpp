#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lab {

// Raised for malformed config files or values; the CLI maps it to exit code 2.
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

/*
 * Plain-text key/value document:
 *
 *   # comment
 *   [section]
 *   key = value
 *
 * Keys outside a section, duplicate keys and malformed lines are errors.
 */
struct config_document {
    std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> sections;

    static config_document parse(const std::string& text, const std::string& origin = "<config>");
    static config_document load(const std::string& path);
    const std::vector<std::pair<std::string, std::string>>* find(const std::string& section) const;
};

enum class param_type { real, integer, text, real_list, text_list };

// Numeric values (and every entry of a real list) must lie in [lo, hi].
struct param_spec {
    std::string key;
    param_type type;
    std::string default_value;
    std::string help;
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
};

// Values for one section after defaults are applied and types checked.
class resolved_config {
public:
    resolved_config() = default;
    resolved_config(const std::vector<param_spec>& schema,
                    const std::vector<std::pair<std::string, std::string>>* overrides, const std::string& section);

    double real(const std::string& key) const;
    long integer(const std::string& key) const;
    std::uint64_t count(const std::string& key) const;  // integer >= 1
    const std::string& text(const std::string& key) const;
    std::vector<double> real_list(const std::string& key) const;
    std::vector<std::string> text_list(const std::string& key) const;

    // Key/value pairs in schema order, as written to the manifest.
    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

private:
    const std::string& raw(const std::string& key) const;
    std::vector<std::pair<std::string, std::string>> entries_;
    std::map<std::string, param_type> types_;
};

std::vector<std::string> split_list(const std::string& value);
std::string trim(const std::string& s);

}  // namespace lab
