#include "optshift/config.hpp"

#include <fstream>
#include <sstream>

#include "optshift/errors.hpp"

namespace optshift {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

KvConfig KvConfig::parse(std::istream& in, const std::string& origin) {
    KvConfig cfg;
    cfg.origin_ = origin;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string body = trim(line);
        if (body.empty()) continue;
        const std::size_t eq = body.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value",
                              lineno);
        }
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key", lineno);
        }
        cfg.values_[key] = value;
        cfg.lines_[key] = lineno;
    }
    return cfg;
}

KvConfig KvConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    return parse(in, path);
}

void KvConfig::set(const std::string& key, const std::string& value) {
    values_[key] = value;
    lines_.erase(key);
}

void KvConfig::set_kv(const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + assignment + "' is not key=value");
    }
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

bool KvConfig::has(const std::string& key) const { return values_.count(key) > 0; }

void KvConfig::fail(const std::string& key, const std::string& what) const {
    std::string msg = what + " for key '" + key + "'";
    const auto it = lines_.find(key);
    int line = -1;
    if (it != lines_.end()) {
        msg += " (" + origin_ + ":" + std::to_string(it->second) + ")";
        line = it->second;
    }
    throw ConfigError(msg, line, key);
}

std::string KvConfig::get_str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required key '" + key + "'", -1, key);
    return it->second;
}

std::string KvConfig::get_str(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double KvConfig::get_double(const std::string& key) const {
    const std::string raw = get_str(key);
    try {
        std::size_t used = 0;
        const double v = std::stod(raw, &used);
        if (used != raw.size()) fail(key, "trailing characters in number '" + raw + "'");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        fail(key, "invalid number '" + raw + "'");
    }
}

double KvConfig::get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

std::int64_t KvConfig::get_int(const std::string& key) const {
    const std::string raw = get_str(key);
    try {
        std::size_t used = 0;
        const std::int64_t v = std::stoll(raw, &used);
        if (used != raw.size()) fail(key, "trailing characters in integer '" + raw + "'");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        fail(key, "invalid integer '" + raw + "'");
    }
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t fallback) const {
    return has(key) ? get_int(key) : fallback;
}

std::uint64_t KvConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string raw = get_str(key);
    try {
        std::size_t used = 0;
        const std::uint64_t v = std::stoull(raw, &used);
        if (used != raw.size()) fail(key, "trailing characters in integer '" + raw + "'");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        fail(key, "invalid integer '" + raw + "'");
    }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string raw = get_str(key);
    if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
    if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
    fail(key, "invalid boolean '" + raw + "'");
}

std::vector<double> KvConfig::get_double_list(const std::string& key,
                                              const std::vector<double>& fallback) const {
    if (!has(key)) return fallback;
    const std::string raw = get_str(key);
    std::vector<double> out;
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const std::string t = trim(item);
        if (t.empty()) continue;
        try {
            out.push_back(std::stod(t));
        } catch (const std::exception&) {
            fail(key, "invalid list entry '" + t + "'");
        }
    }
    if (out.empty()) fail(key, "empty list");
    return out;
}

std::string KvConfig::canonical_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
    return os.str();
}

}  // namespace optshift
