#pragma once

// Minimal sectioned key/value text format shared by structure and scenario
// files:
//
//   # comment (also after values)
//   [section]
//   key = token token token
//
// Entries keep their order and source line so that validation errors can
// name the offending field.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace phdamp {

struct ConfigEntry {
    std::string key;
    std::string value;                ///< raw value text, trimmed
    std::vector<std::string> tokens;  ///< value split on whitespace
    std::size_t line = 0;
};

struct ConfigSection {
    std::string name;
    std::vector<ConfigEntry> entries;
    std::size_t line = 0;

    const ConfigEntry* find(std::string_view key) const;
    const ConfigEntry& require(std::string_view key) const;
};

class ConfigDocument {
public:
    static ConfigDocument parse(std::string_view text, std::string origin = "<string>");
    static ConfigDocument load(const std::string& path);

    const ConfigSection* find(std::string_view section) const;
    const ConfigSection& require(std::string_view section) const;
    const std::vector<ConfigSection>& sections() const { return sections_; }
    const std::string& origin() const { return origin_; }

    /// "origin:line: message" prefix for diagnostics.
    std::string where(std::size_t line) const;

private:
    std::vector<ConfigSection> sections_;
    std::string origin_;
};

// Token conversions; throw ConfigError naming `field` on failure.
double parse_double(const std::string& token, const std::string& field);
long parse_int(const std::string& token, const std::string& field);
bool parse_bool(const std::string& token, const std::string& field);

/// Parses a force value with an optional unit suffix ("100kN", "1e5 N", "2.5MN").
double parse_force(const std::string& text, const std::string& field);

/// Splits a comma separated list, trimming whitespace.
std::vector<std::string> split_list(std::string_view text);

std::string trim(std::string_view s);

/// Reads a whole file; throws ConfigError if it cannot be opened.
std::string read_text_file(const std::string& path);

}  // namespace phdamp
