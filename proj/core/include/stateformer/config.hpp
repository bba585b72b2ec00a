#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace stf {

// minimal TOML-style config: [section] headers, key = value lines, comments
// with '#'. Values are integers, floats, booleans, quoted strings, or flat
// integer arrays. Rendering is sorted and deterministic.
class ConfigFile {
public:
    static ConfigFile parse(const std::string& text);
    static ConfigFile load(const std::string& path);

    bool has(const std::string& sec, const std::string& key) const;

    // typed getters fall back to the default when the key is absent and
    // throw when the stored value has a different type
    int64_t get_int(const std::string& sec, const std::string& key, int64_t def) const;
    double get_double(const std::string& sec, const std::string& key, double def) const;
    bool get_bool(const std::string& sec, const std::string& key, bool def) const;
    std::string get_string(const std::string& sec, const std::string& key,
                           const std::string& def) const;
    std::vector<int64_t> get_int_list(const std::string& sec, const std::string& key,
                                      const std::vector<int64_t>& def) const;

    void set_int(const std::string& sec, const std::string& key, int64_t v);
    void set_double(const std::string& sec, const std::string& key, double v);
    void set_bool(const std::string& sec, const std::string& key, bool v);
    void set_string(const std::string& sec, const std::string& key, const std::string& v);
    void set_int_list(const std::string& sec, const std::string& key,
                      const std::vector<int64_t>& v);

    std::string render() const;
    void save(const std::string& path) const;

private:
    enum class Kind { integer, real, boolean, text, int_list };
    struct Value {
        Kind kind = Kind::integer;
        int64_t i = 0;
        double d = 0.0;
        bool b = false;
        std::string s;
        std::vector<int64_t> list;
    };
    const Value* find(const std::string& sec, const std::string& key) const;
    std::map<std::string, std::map<std::string, Value>> sections_;
};

}  // namespace stf
