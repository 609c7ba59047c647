#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"

namespace afl {

/// Flat key-value configuration with [section] grouping. Keys are stored as
/// "section.key"; values stay strings until a typed getter parses them, so
/// error messages can name both the key and the offending text. dump()
/// emits a normalized copy whose reparse is identical, the round-trip that
/// makes resolved-config files reproducible.
class Config {
public:
    Config() = default;

    static Config parse(std::istream& is, const std::string& name) {
        Config c;
        std::string line, section;
        long lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto text = strip(line.substr(0, line.find_first_of("#;")));
            if (text.empty()) continue;
            if (text.front() == '[') {
                if (text.back() != ']' || text.size() < 3)
                    throw ValidationError(name + ":" + std::to_string(lineno) +
                                          ": malformed section header '" + text + "'");
                section = strip(text.substr(1, text.size() - 2));
                if (section.empty())
                    throw ValidationError(name + ":" + std::to_string(lineno) +
                                          ": empty section name");
                continue;
            }
            const auto eq = text.find('=');
            if (eq == std::string::npos)
                throw ValidationError(name + ":" + std::to_string(lineno) +
                                      ": expected 'key = value', got '" + text + "'");
            const auto key = strip(text.substr(0, eq));
            const auto value = strip(text.substr(eq + 1));
            if (key.empty())
                throw ValidationError(name + ":" + std::to_string(lineno) + ": empty key");
            const auto full = section.empty() ? key : section + "." + key;
            if (c.kv_.count(full))
                throw ValidationError(name + ":" + std::to_string(lineno) + ": duplicate key '" +
                                      full + "'");
            c.kv_[full] = value;
        }
        return c;
    }

    static Config parse_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw RuntimeError("config: cannot open '" + path + "'");
        return parse(is, path);
    }

    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }

    void unset(const std::string& key) { kv_.erase(key); }

    const std::map<std::string, std::string>& entries() const { return kv_; }

    std::string get_string(const std::string& key) const {
        const auto it = kv_.find(key);
        if (it == kv_.end()) throw ValidationError("config: missing key '" + key + "'");
        return it->second;
    }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        const auto it = kv_.find(key);
        return it == kv_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key) const { return to_double(key, get_string(key)); }
    double get_double(const std::string& key, double fallback) const {
        return has(key) ? get_double(key) : fallback;
    }

    long get_long(const std::string& key) const { return to_long(key, get_string(key)); }
    long get_long(const std::string& key, long fallback) const {
        return has(key) ? get_long(key) : fallback;
    }

    std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) const {
        if (!has(key)) return fallback;
        const auto v = get_string(key);
        try {
            std::size_t used = 0;
            const auto s = std::stoull(v, &used, 0);
            if (used != v.size()) throw std::invalid_argument(v);
            return s;
        } catch (const std::exception&) {
            throw ValidationError("config: key '" + key + "' is not a seed: '" + v + "'");
        }
    }

    bool get_bool(const std::string& key) const {
        const auto v = get_string(key);
        if (v == "true" || v == "on" || v == "yes" || v == "1") return true;
        if (v == "false" || v == "off" || v == "no" || v == "0") return false;
        throw ValidationError("config: key '" + key + "' is not a boolean: '" + v + "'");
    }
    bool get_bool(const std::string& key, bool fallback) const {
        return has(key) ? get_bool(key) : fallback;
    }

    /// Comma- or space-separated list of numbers.
    std::vector<double> get_doubles(const std::string& key) const {
        auto v = get_string(key);
        for (auto& ch : v)
            if (ch == ',') ch = ' ';
        std::istringstream is(v);
        std::vector<double> out;
        std::string tok;
        while (is >> tok) out.push_back(to_double(key, tok));
        if (out.empty()) throw ValidationError("config: key '" + key + "' holds no numbers");
        return out;
    }

    /// Normalized text: root-level keys first, then sectioned keys in map
    /// order under their headers. parse(dump()) reproduces the map exactly.
    /// Comment characters cannot appear in values; the parser strips them.
    std::string dump() const {
        std::ostringstream os;
        for (const auto& [full, value] : kv_)
            if (full.rfind('.') == std::string::npos) os << full << " = " << value << '\n';
        std::string section;
        bool in_sections = false;
        for (const auto& [full, value] : kv_) {
            const auto d = full.rfind('.');
            if (d == std::string::npos) continue;
            const auto sec = full.substr(0, d);
            if (sec != section || !in_sections) {
                os << (in_sections || os.tellp() > 0 ? "\n" : "") << '[' << sec << "]\n";
                section = sec;
                in_sections = true;
            }
            os << full.substr(d + 1) << " = " << value << '\n';
        }
        return os.str();
    }

private:
    static std::string strip(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return {};
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    static double to_double(const std::string& key, const std::string& v) {
        try {
            std::size_t used = 0;
            const double x = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw ValidationError("config: key '" + key + "' is not a number: '" + v + "'");
        }
    }

    static long to_long(const std::string& key, const std::string& v) {
        try {
            std::size_t used = 0;
            const long x = std::stol(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw ValidationError("config: key '" + key + "' is not an integer: '" + v + "'");
        }
    }

    std::map<std::string, std::string> kv_;
};

} // namespace afl
