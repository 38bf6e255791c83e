#include "lab/config.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace lab {

namespace {

bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (*first == '+') ++first;
    auto res = std::from_chars(first, last, out);
    return res.ec == std::errc() && res.ptr == last && std::isfinite(out);
}

bool parse_long(const std::string& s, long& out) {
    if (s.empty()) return false;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (*first == '+') ++first;
    auto res = std::from_chars(first, last, out);
    return res.ec == std::errc() && res.ptr == last;
}

bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    });
}

void check_value(const std::string& section, const param_spec& p, const std::string& value) {
    const std::string& key = p.key;
    auto fail = [&](const char* what) {
        throw config_error("[" + section + "] " + key + ": expected " + what + ", got '" + value + "'");
    };
    auto bounds = [&](double d) {
        if (d < p.lo || d > p.hi) {
            std::ostringstream os;
            os << "[" << section << "] " << key << ": value " << value << " outside [" << p.lo << ", " << p.hi << "]";
            throw config_error(os.str());
        }
    };
    switch (p.type) {
        case param_type::real: {
            double d;
            if (!parse_double(value, d)) fail("a real number");
            bounds(d);
            break;
        }
        case param_type::integer: {
            long l;
            if (!parse_long(value, l)) fail("an integer");
            bounds(static_cast<double>(l));
            break;
        }
        case param_type::text:
            if (value.empty()) fail("a nonempty string");
            break;
        case param_type::real_list: {
            auto items = split_list(value);
            if (items.empty()) fail("a comma-separated list of reals");
            for (const auto& it : items) {
                double d;
                if (!parse_double(it, d)) fail("a comma-separated list of reals");
                bounds(d);
            }
            break;
        }
        case param_type::text_list:
            if (split_list(value).empty()) fail("a comma-separated list");
            break;
    }
}

}  // namespace

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::string cur;
    std::stringstream ss(value);
    while (std::getline(ss, cur, ',')) {
        cur = trim(cur);
        if (cur.empty()) return {};
        out.push_back(cur);
    }
    return out;
}

config_document config_document::parse(const std::string& text, const std::string& origin) {
    config_document doc;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    std::set<std::string> seen_sections;
    std::set<std::string> seen_keys;
    auto where = [&] { return origin + ":" + std::to_string(lineno) + ": "; };
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw config_error(where() + "unterminated section header");
            std::string name = trim(line.substr(1, line.size() - 2));
            if (!valid_name(name)) throw config_error(where() + "invalid section name '" + name + "'");
            if (!seen_sections.insert(name).second) throw config_error(where() + "duplicate section [" + name + "]");
            doc.sections.push_back({name, {}});
            seen_keys.clear();
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) throw config_error(where() + "expected 'key = value'");
        if (doc.sections.empty()) throw config_error(where() + "key outside of any section");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (!valid_name(key)) throw config_error(where() + "invalid key '" + key + "'");
        if (!seen_keys.insert(key).second) throw config_error(where() + "duplicate key '" + key + "'");
        doc.sections.back().second.emplace_back(key, value);
    }
    return doc;
}

config_document config_document::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
}

const std::vector<std::pair<std::string, std::string>>* config_document::find(const std::string& section) const {
    for (const auto& s : sections)
        if (s.first == section) return &s.second;
    return nullptr;
}

resolved_config::resolved_config(const std::vector<param_spec>& schema,
                                 const std::vector<std::pair<std::string, std::string>>* overrides,
                                 const std::string& section) {
    std::map<std::string, std::string> given;
    if (overrides) {
        for (const auto& [k, v] : *overrides) {
            auto it = std::find_if(schema.begin(), schema.end(), [&](const param_spec& p) { return p.key == k; });
            if (it == schema.end()) throw config_error("[" + section + "] unknown key '" + k + "'");
            given[k] = v;
        }
    }
    for (const auto& p : schema) {
        auto it = given.find(p.key);
        std::string v = it == given.end() ? p.default_value : it->second;
        check_value(section, p, v);
        entries_.emplace_back(p.key, v);
        types_[p.key] = p.type;
    }
}

const std::string& resolved_config::raw(const std::string& key) const {
    for (const auto& e : entries_)
        if (e.first == key) return e.second;
    throw config_error("internal: no parameter '" + key + "'");
}

double resolved_config::real(const std::string& key) const {
    double d = 0.0;
    parse_double(raw(key), d);
    return d;
}

long resolved_config::integer(const std::string& key) const {
    long l = 0;
    parse_long(raw(key), l);
    return l;
}

std::uint64_t resolved_config::count(const std::string& key) const {
    long l = integer(key);
    if (l < 1) throw config_error(key + " must be a positive integer");
    return static_cast<std::uint64_t>(l);
}

const std::string& resolved_config::text(const std::string& key) const { return raw(key); }

std::vector<double> resolved_config::real_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& it : split_list(raw(key))) {
        double d = 0.0;
        parse_double(it, d);
        out.push_back(d);
    }
    return out;
}

std::vector<std::string> resolved_config::text_list(const std::string& key) const { return split_list(raw(key)); }

}  // namespace lab
