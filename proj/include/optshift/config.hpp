#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace optshift {

// Flat key=value config with dotted namespaces (train.lr, sos.batch).
// '#' starts a comment; blank lines are ignored; later keys win.
class KvConfig {
public:
    static KvConfig parse(std::istream& in, const std::string& origin = "<stream>");
    static KvConfig parse_file(const std::string& path);

    void set(const std::string& key, const std::string& value);

    // Applies a "key=value" override, as given on the command line.
    void set_kv(const std::string& assignment);

    bool has(const std::string& key) const;

    std::string get_str(const std::string& key) const;
    std::string get_str(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_double_list(const std::string& key,
                                        const std::vector<double>& fallback) const;

    const std::map<std::string, std::string>& entries() const { return values_; }

    // Canonical "key = value" text, keys sorted; used for provenance hashing.
    std::string canonical_text() const;

private:
    std::map<std::string, std::string> values_;
    std::map<std::string, int> lines_;
    std::string origin_;

    [[noreturn]] void fail(const std::string& key, const std::string& what) const;
};

}  // namespace optshift
