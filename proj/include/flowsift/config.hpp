#pragma once

// Flat sectioned key=value config files. Defaults mirror the evaluation
// setup: idle 1 s, active 15 s, N_threshold 15, k 50, 16-bit indexes,
// alpha 0.5.

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "burst.hpp"
#include "distill.hpp"

namespace flowsift {

class Config {
public:
    Config() = default;

    static Config load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open config file: " + path);
        Config cfg;
        std::string line, section;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            std::string s = trim(line);
            if (s.empty() || s[0] == '#' || s[0] == ';') continue;
            if (s.front() == '[' && s.back() == ']') {
                section = trim(s.substr(1, s.size() - 2));
                continue;
            }
            auto eq = s.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                         ": expected key = value");
            cfg.values_[section + "." + trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
        }
        return cfg;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }
    uint64_t get_u64(const std::string& key, uint64_t fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : std::stoull(it->second);
    }
    int64_t get_i64(const std::string& key, int64_t fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : std::stoll(it->second);
    }
    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : std::stod(it->second);
    }
    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        return it->second == "true" || it->second == "1" || it->second == "yes";
    }
    // Comma-separated numeric list, e.g. profiler sweep values.
    template <typename T>
    std::vector<T> get_list(const std::string& key, std::vector<T> fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<T> out;
        std::stringstream ss(it->second);
        std::string tok;
        while (std::getline(ss, tok, ','))
            out.push_back(static_cast<T>(std::stod(trim(tok))));
        return out;
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

private:
    static std::string trim(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r");
        size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? "" : s.substr(a, b - a + 1);
    }

    std::map<std::string, std::string> values_;
};

inline BurstConfig burst_config_from(const Config& cfg) {
    BurstConfig bc;
    bc.delta_idle_ns = cfg.get_u64("burst.delta_idle_ns", 1'000'000'000ULL);
    bc.delta_active_ns = cfg.get_u64("burst.delta_active_ns", 15'000'000'000ULL);
    bc.n_threshold = uint32_t(cfg.get_u64("burst.n_threshold", 15));
    bc.time_mode = cfg.get("burst.time_mode", "exact64") == "truncated32"
                       ? TimeMode::truncated32
                       : TimeMode::exact64;
    bc.unit_ns = cfg.get_u64("burst.unit_ns", uint64_t(1) << 16);
    bc.validate();
    return bc;
}

inline BiHashConfig bihash_config_from(const Config& cfg) {
    BiHashConfig hc;
    hc.a1 = int(cfg.get_i64("hash.a1", 16));
    hc.a2 = int(cfg.get_i64("hash.a2", 16));
    hc.seed1 = cfg.get_u64("hash.seed1", hc.seed1);
    hc.seed2 = cfg.get_u64("hash.seed2", hc.seed2);
    hc.seed_id = cfg.get_u64("hash.seed_id", hc.seed_id);
    hc.validate();
    return hc;
}

inline FeatureSchema schema_from_config(const Config& cfg) {
    std::string name = cfg.get("features.set", "default8");
    if (name == "default8") return default_bl_schema();
    if (name == "hardware3") return small_bl_schema();
    throw std::runtime_error("unknown feature set: " + name +
                             " (expected default8 or hardware3)");
}

inline Combiner combiner_from(const Config& cfg) {
    std::string c = cfg.get("distill.combiner", "product");
    if (c == "product") return Combiner::product;
    if (c == "distilled_only") return Combiner::distilled_only;
    if (c == "iforest_only") return Combiner::iforest_only;
    throw std::runtime_error("unknown combiner: " + c);
}

}  // namespace flowsift
