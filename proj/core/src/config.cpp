#include "stateformer/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace stf {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0;
    size_t b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

// removes a trailing comment; '#' inside a quoted string does not count
std::string strip_comment(const std::string& line) {
    bool in_quote = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (c == '"') in_quote = !in_quote;
        if (c == '#' && !in_quote) return line.substr(0, i);
    }
    return line;
}

bool valid_key(const std::string& k) {
    if (k.empty()) return false;
    for (char c : k) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') return false;
    }
    return true;
}

bool looks_integer(const std::string& v) {
    size_t i = 0;
    if (i < v.size() && (v[i] == '+' || v[i] == '-')) ++i;
    if (i >= v.size()) return false;
    for (; i < v.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(v[i]))) return false;
    }
    return true;
}

int64_t parse_integer(const std::string& v, int line_no) {
    try {
        size_t used = 0;
        int64_t out = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return out;
    } catch (const std::exception&) {
        throw std::invalid_argument("config line " + std::to_string(line_no) +
                                    ": bad integer '" + v + "'");
    }
}

double parse_real(const std::string& v, int line_no) {
    try {
        size_t used = 0;
        double out = std::stod(v, &used);
        if (used != v.size() || !std::isfinite(out)) throw std::invalid_argument("trailing");
        return out;
    } catch (const std::exception&) {
        throw std::invalid_argument("config line " + std::to_string(line_no) +
                                    ": bad number '" + v + "'");
    }
}

std::string render_real(double d) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", d);
    std::string s(buf);
    // keep floats distinguishable from integers on re-parse
    if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
        s.find("inf") == std::string::npos && s.find("nan") == std::string::npos) {
        s += ".0";
    }
    return s;
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text) {
    ConfigFile cfg;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = trim(strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw std::invalid_argument("config line " + std::to_string(line_no) +
                                            ": unterminated section header");
            }
            section = trim(line.substr(1, line.size() - 2));
            if (!valid_key(section)) {
                throw std::invalid_argument("config line " + std::to_string(line_no) +
                                            ": bad section name");
            }
            cfg.sections_[section];
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (!valid_key(key)) {
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": bad key '" + key + "'");
        }
        if (val.empty()) {
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": empty value");
        }
        Value v;
        if (val.front() == '"') {
            if (val.size() < 2 || val.back() != '"') {
                throw std::invalid_argument("config line " + std::to_string(line_no) +
                                            ": unterminated string");
            }
            v.kind = Kind::text;
            v.s = val.substr(1, val.size() - 2);
        } else if (val == "true" || val == "false") {
            v.kind = Kind::boolean;
            v.b = (val == "true");
        } else if (val.front() == '[') {
            if (val.back() != ']') {
                throw std::invalid_argument("config line " + std::to_string(line_no) +
                                            ": unterminated array");
            }
            v.kind = Kind::int_list;
            std::string body = trim(val.substr(1, val.size() - 2));
            if (!body.empty()) {
                std::istringstream items(body);
                std::string item;
                while (std::getline(items, item, ',')) {
                    item = trim(item);
                    if (!looks_integer(item)) {
                        throw std::invalid_argument("config line " + std::to_string(line_no) +
                                                    ": arrays hold integers only");
                    }
                    v.list.push_back(parse_integer(item, line_no));
                }
            }
        } else if (looks_integer(val)) {
            v.kind = Kind::integer;
            v.i = parse_integer(val, line_no);
        } else {
            v.kind = Kind::real;
            v.d = parse_real(val, line_no);
        }
        cfg.sections_[section][key] = v;
    }
    return cfg;
}

ConfigFile ConfigFile::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

const ConfigFile::Value* ConfigFile::find(const std::string& sec, const std::string& key) const {
    auto s = sections_.find(sec);
    if (s == sections_.end()) return nullptr;
    auto k = s->second.find(key);
    if (k == s->second.end()) return nullptr;
    return &k->second;
}

bool ConfigFile::has(const std::string& sec, const std::string& key) const {
    return find(sec, key) != nullptr;
}

int64_t ConfigFile::get_int(const std::string& sec, const std::string& key, int64_t def) const {
    const Value* v = find(sec, key);
    if (!v) return def;
    if (v->kind != Kind::integer) {
        throw std::invalid_argument("config [" + sec + "] " + key + ": expected integer");
    }
    return v->i;
}

double ConfigFile::get_double(const std::string& sec, const std::string& key, double def) const {
    const Value* v = find(sec, key);
    if (!v) return def;
    if (v->kind == Kind::integer) return static_cast<double>(v->i);
    if (v->kind != Kind::real) {
        throw std::invalid_argument("config [" + sec + "] " + key + ": expected number");
    }
    return v->d;
}

bool ConfigFile::get_bool(const std::string& sec, const std::string& key, bool def) const {
    const Value* v = find(sec, key);
    if (!v) return def;
    if (v->kind != Kind::boolean) {
        throw std::invalid_argument("config [" + sec + "] " + key + ": expected true/false");
    }
    return v->b;
}

std::string ConfigFile::get_string(const std::string& sec, const std::string& key,
                                   const std::string& def) const {
    const Value* v = find(sec, key);
    if (!v) return def;
    if (v->kind != Kind::text) {
        throw std::invalid_argument("config [" + sec + "] " + key + ": expected string");
    }
    return v->s;
}

std::vector<int64_t> ConfigFile::get_int_list(const std::string& sec, const std::string& key,
                                              const std::vector<int64_t>& def) const {
    const Value* v = find(sec, key);
    if (!v) return def;
    if (v->kind != Kind::int_list) {
        throw std::invalid_argument("config [" + sec + "] " + key + ": expected integer array");
    }
    return v->list;
}

void ConfigFile::set_int(const std::string& sec, const std::string& key, int64_t v) {
    Value val;
    val.kind = Kind::integer;
    val.i = v;
    sections_[sec][key] = val;
}

void ConfigFile::set_double(const std::string& sec, const std::string& key, double v) {
    Value val;
    val.kind = Kind::real;
    val.d = v;
    sections_[sec][key] = val;
}

void ConfigFile::set_bool(const std::string& sec, const std::string& key, bool v) {
    Value val;
    val.kind = Kind::boolean;
    val.b = v;
    sections_[sec][key] = val;
}

void ConfigFile::set_string(const std::string& sec, const std::string& key,
                            const std::string& v) {
    Value val;
    val.kind = Kind::text;
    val.s = v;
    sections_[sec][key] = val;
}

void ConfigFile::set_int_list(const std::string& sec, const std::string& key,
                              const std::vector<int64_t>& v) {
    Value val;
    val.kind = Kind::int_list;
    val.list = v;
    sections_[sec][key] = val;
}

std::string ConfigFile::render() const {
    std::ostringstream out;
    bool first = true;
    for (const auto& [sec, entries] : sections_) {
        if (entries.empty() && sec.empty()) continue;
        if (!first) out << "\n";
        first = false;
        if (!sec.empty()) out << "[" << sec << "]\n";
        for (const auto& [key, v] : entries) {
            out << key << " = ";
            switch (v.kind) {
                case Kind::integer: out << v.i; break;
                case Kind::real: out << render_real(v.d); break;
                case Kind::boolean: out << (v.b ? "true" : "false"); break;
                case Kind::text: out << '"' << v.s << '"'; break;
                case Kind::int_list: {
                    out << "[";
                    for (size_t i = 0; i < v.list.size(); ++i) {
                        if (i) out << ", ";
                        out << v.list[i];
                    }
                    out << "]";
                    break;
                }
            }
            out << "\n";
        }
    }
    return out.str();
}

void ConfigFile::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config file: " + path);
    out << render();
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace stf
