#include "phdamp/config_text.hpp"

#include "phdamp/error.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace phdamp {

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

namespace {

std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    std::istringstream in{std::string(s)};
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

}  // namespace

std::vector<std::string> split_list(std::string_view text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t comma = text.find(',', start);
        const std::size_t end = comma == std::string_view::npos ? text.size() : comma;
        std::string item = trim(text.substr(start, end - start));
        if (!item.empty()) out.push_back(std::move(item));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

const ConfigEntry* ConfigSection::find(std::string_view key) const {
    for (const auto& e : entries)
        if (e.key == key) return &e;
    return nullptr;
}

const ConfigEntry& ConfigSection::require(std::string_view key) const {
    if (const auto* e = find(key)) return *e;
    throw ConfigError("section [" + name + "]: missing required key '" + std::string(key) + "'");
}

ConfigDocument ConfigDocument::parse(std::string_view text, std::string origin) {
    ConfigDocument doc;
    doc.origin_ = std::move(origin);
    std::istringstream in{std::string(text)};
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
        const std::string line = trim(raw);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3)
                throw ConfigError(doc.where(lineno) + ": malformed section header '" + line + "'");
            ConfigSection sec;
            sec.name = trim(std::string_view(line).substr(1, line.size() - 2));
            sec.line = lineno;
            doc.sections_.push_back(std::move(sec));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(doc.where(lineno) + ": expected 'key = value', got '" + line + "'");
        if (doc.sections_.empty())
            throw ConfigError(doc.where(lineno) + ": entry outside of any [section]");
        ConfigEntry entry;
        entry.key = trim(std::string_view(line).substr(0, eq));
        entry.value = trim(std::string_view(line).substr(eq + 1));
        entry.tokens = split_ws(entry.value);
        entry.line = lineno;
        if (entry.key.empty()) throw ConfigError(doc.where(lineno) + ": empty key");
        doc.sections_.back().entries.push_back(std::move(entry));
    }
    return doc;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

ConfigDocument ConfigDocument::load(const std::string& path) { return parse(read_text_file(path), path); }

const ConfigSection* ConfigDocument::find(std::string_view section) const {
    for (const auto& s : sections_)
        if (s.name == section) return &s;
    return nullptr;
}

const ConfigSection& ConfigDocument::require(std::string_view section) const {
    if (const auto* s = find(section)) return *s;
    throw ConfigError(origin_ + ": missing required section [" + std::string(section) + "]");
}

std::string ConfigDocument::where(std::size_t line) const {
    return origin_ + ":" + std::to_string(line);
}

double parse_double(const std::string& token, const std::string& field) {
    double v = 0.0;
    const char* first = token.data();
    const char* last = token.data() + token.size();
    if (!token.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || !std::isfinite(v))
        throw ConfigError(field + ": expected a finite number, got '" + token + "'");
    return v;
}

long parse_int(const std::string& token, const std::string& field) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || ptr != token.data() + token.size())
        throw ConfigError(field + ": expected an integer, got '" + token + "'");
    return v;
}

bool parse_bool(const std::string& token, const std::string& field) {
    if (token == "true" || token == "yes" || token == "1") return true;
    if (token == "false" || token == "no" || token == "0") return false;
    throw ConfigError(field + ": expected true/false, got '" + token + "'");
}

double parse_force(const std::string& text, const std::string& field) {
    std::string s;
    for (char c : text)
        if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(c);
    double scale = 1.0;
    auto strip = [&](std::string_view suffix, double factor) {
        if (s.size() > suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0) {
            s.erase(s.size() - suffix.size());
            scale = factor;
            return true;
        }
        return false;
    };
    strip("MN", 1e6) || strip("kN", 1e3) || strip("N", 1.0);
    return scale * parse_double(s, field);
}

}  // namespace phdamp
